#include "anatomatch/filters.hpp"

#include <algorithm>
#include <cmath>

namespace anatomatch {
namespace {

int64_t clampi(int64_t v, int64_t n) { return std::clamp<int64_t>(v, 0, n - 1); }

// 1D convolution along one axis with clamped indices.
ScalarVolume convolve_axis(const ScalarVolume& in, const std::vector<double>& k, int axis) {
  const Dims d = in.dims;
  ScalarVolume out(d, in.spacing);
  const int64_t r = static_cast<int64_t>(k.size() / 2);
  const int64_t n = axis == 0 ? d.z : axis == 1 ? d.y : d.x;
  const int64_t stride = axis == 0 ? d.y * d.x : axis == 1 ? d.x : 1;
  for (int64_t i = 0; i < d.count(); ++i) {
    const VoxelPoint p = d.unlinear(i);
    const int64_t pos = axis == 0 ? p.z : axis == 1 ? p.y : p.x;
    const int64_t base = i - pos * stride;
    double acc = 0;
    for (int64_t j = -r; j <= r; ++j)
      acc += k[static_cast<size_t>(j + r)] * in.data[static_cast<size_t>(base + clampi(pos + j, n) * stride)];
    out.data[static_cast<size_t>(i)] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0) return {1.0};
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  double sum = 0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<size_t>(i + r)];
  }
  for (double& v : k) v /= sum;
  return k;
}

ScalarVolume gaussian_blur(const ScalarVolume& in, double sigma) {
  if (sigma <= 0) return in;
  const auto k = gaussian_kernel(sigma);
  return convolve_axis(convolve_axis(convolve_axis(in, k, 0), k, 1), k, 2);
}

ScalarVolume gradient(const ScalarVolume& in, int axis) {
  require(axis >= 0 && axis < 3, "axis must be 0, 1 or 2");
  const Dims d = in.dims;
  ScalarVolume out(d, in.spacing);
  const int64_t n = axis == 0 ? d.z : axis == 1 ? d.y : d.x;
  const int64_t stride = axis == 0 ? d.y * d.x : axis == 1 ? d.x : 1;
  if (n == 1) return out;
  for (int64_t i = 0; i < d.count(); ++i) {
    const VoxelPoint p = d.unlinear(i);
    const int64_t pos = axis == 0 ? p.z : axis == 1 ? p.y : p.x;
    const int64_t lo = pos == 0 ? i : i - stride;
    const int64_t hi = pos == n - 1 ? i : i + stride;
    const double span = static_cast<double>((hi - lo) / stride);
    out.data[static_cast<size_t>(i)] =
        static_cast<float>((static_cast<double>(in.data[static_cast<size_t>(hi)]) - in.data[static_cast<size_t>(lo)]) / span);
  }
  return out;
}

namespace {

struct Corners {
  int64_t idx[8];
  double w[8];
};

Corners corners(const Dims& d, const Eigen::Vector3d& pos) {
  const double pz = std::clamp(pos[0], 0.0, static_cast<double>(d.z - 1));
  const double py = std::clamp(pos[1], 0.0, static_cast<double>(d.y - 1));
  const double px = std::clamp(pos[2], 0.0, static_cast<double>(d.x - 1));
  const int64_t z0 = static_cast<int64_t>(std::floor(pz)), y0 = static_cast<int64_t>(std::floor(py)),
                x0 = static_cast<int64_t>(std::floor(px));
  const int64_t z1 = std::min(z0 + 1, d.z - 1), y1 = std::min(y0 + 1, d.y - 1), x1 = std::min(x0 + 1, d.x - 1);
  const double fz = pz - z0, fy = py - y0, fx = px - x0;
  Corners c;
  int n = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int e = 0; e < 2; ++e) {
        c.idx[n] = d.linear({a ? z1 : z0, b ? y1 : y0, e ? x1 : x0});
        c.w[n] = (a ? fz : 1 - fz) * (b ? fy : 1 - fy) * (e ? fx : 1 - fx);
        ++n;
      }
  return c;
}

}  // namespace

double sample_trilinear(const ScalarVolume& v, const Eigen::Vector3d& pos) {
  const Corners c = corners(v.dims, pos);
  double acc = 0;
  for (int i = 0; i < 8; ++i) acc += c.w[i] * v.data[static_cast<size_t>(c.idx[i])];
  return acc;
}

void sample_trilinear(const EmbeddingVolume& v, const Eigen::Vector3d& pos, std::span<double> out) {
  require(static_cast<int>(out.size()) == v.channels(), "output span width mismatch");
  const Corners c = corners(v.dims(), pos);
  std::fill(out.begin(), out.end(), 0.0);
  for (int i = 0; i < 8; ++i) {
    auto src = v.at_linear(c.idx[i]);
    for (size_t k = 0; k < out.size(); ++k) out[k] += c.w[i] * src[k];
  }
}

}  // namespace anatomatch
