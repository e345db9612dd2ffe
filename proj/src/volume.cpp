#include "anatomatch/volume.hpp"

#include <cmath>
#include <utility>

namespace anatomatch {

void check_bounds(const Dims& dims, const VoxelPoint& p) {
  auto axis = [](const char* name, int64_t v, int64_t n) {
    if (v < 0 || v >= n)
      fail(ErrorKind::Bounds, std::string("point out of bounds on axis ") + name + ": " +
                                  std::to_string(v) + " not in [0, " + std::to_string(n) + ")");
  };
  axis("z", p.z, dims.z);
  axis("y", p.y, dims.y);
  axis("x", p.x, dims.x);
}

static void check_shape(const Dims& d, int channels) {
  require(d.z > 0 && d.y > 0 && d.x > 0, "volume dims must be strictly positive");
  require(channels > 0, "channel count must be strictly positive");
}

EmbeddingVolume::EmbeddingVolume(Dims dims, int channels, Spacing spacing, bool normalized)
    : dims_(dims), channels_(channels), spacing_(spacing), normalized_(normalized) {
  check_shape(dims, channels);
  data_.assign(static_cast<size_t>(dims.count() * channels), 0.0f);
}

EmbeddingVolume::EmbeddingVolume(Dims dims, int channels, Spacing spacing, std::vector<float> data,
                                 bool normalized)
    : dims_(dims), channels_(channels), spacing_(spacing), data_(std::move(data)),
      normalized_(normalized) {
  check_shape(dims, channels);
  if (static_cast<int64_t>(data_.size()) != dims.count() * channels)
    fail(ErrorKind::Length, "embedding data length does not match dims x channels");
}

std::span<const float> embedding_at(const EmbeddingVolume& vol, const VoxelPoint& p) {
  check_bounds(vol.dims(), p);
  return vol.at_linear(vol.dims().linear(p));
}

NormalizeResult normalize(const EmbeddingVolume& vol) {
  NormalizeResult r{vol, 0};
  const int64_t n = vol.dims().count();
  for (int64_t i = 0; i < n; ++i) {
    auto v = r.volume.at_linear(i);
    const double norm = std::sqrt(dot(v, v));
    if (norm == 0.0) {
      v[0] = 1.0f;
      ++r.zero_vectors;
      continue;
    }
    for (float& c : v) c = static_cast<float>(c / norm);
  }
  r.volume.set_normalized(true);
  return r;
}

bool is_unit_norm(const EmbeddingVolume& vol, double tol) {
  const int64_t n = vol.dims().count();
  for (int64_t i = 0; i < n; ++i) {
    auto v = vol.at_linear(i);
    if (std::abs(std::sqrt(dot(v, v)) - 1.0) > tol) return false;
  }
  return true;
}

EmbeddingVolume concat_unified(const EmbeddingVolume& app, const EmbeddingVolume& sem,
                               double weight) {
  require(weight > 0.0 && weight < 1.0, "unified weight must lie in (0, 1)");
  require(app.dims() == sem.dims(), "appearance and semantic dims differ");
  require(app.spacing() == sem.spacing(), "appearance and semantic spacing differ");
  require(app.normalized() && sem.normalized(), "concat_unified requires normalized inputs");

  const int ca = app.channels(), cs = sem.channels();
  const double wa = std::sqrt(weight), ws = std::sqrt(1.0 - weight);
  EmbeddingVolume out(app.dims(), ca + cs, app.spacing(), true);
  const int64_t n = app.dims().count();
  for (int64_t i = 0; i < n; ++i) {
    auto dst = out.at_linear(i);
    auto a = app.at_linear(i);
    auto s = sem.at_linear(i);
    for (int c = 0; c < ca; ++c) dst[c] = static_cast<float>(wa * a[c]);
    for (int c = 0; c < cs; ++c) dst[ca + c] = static_cast<float>(ws * s[c]);
  }
  return out;
}

LabelVolume::LabelVolume(Dims dims, int num_classes, Spacing spacing)
    : dims_(dims), num_classes_(num_classes), spacing_(spacing) {
  check_shape(dims, 1);
  require(num_classes >= 1 && num_classes <= 65536, "num_classes must be in [1, 65536]");
  data_.assign(static_cast<size_t>(dims.count()), 0);
}

LabelVolume::LabelVolume(Dims dims, int num_classes, Spacing spacing, std::vector<uint16_t> data)
    : dims_(dims), num_classes_(num_classes), spacing_(spacing), data_(std::move(data)) {
  check_shape(dims, 1);
  require(num_classes >= 1 && num_classes <= 65536, "num_classes must be in [1, 65536]");
  if (static_cast<int64_t>(data_.size()) != dims.count())
    fail(ErrorKind::Length, "label data length does not match dims");
  for (uint16_t l : data_)
    if (l >= num_classes) fail(ErrorKind::Validation, "label exceeds num_classes");
}

uint16_t LabelVolume::at(const VoxelPoint& p) const {
  check_bounds(dims_, p);
  return data_[dims_.linear(p)];
}

EmbeddingVolume as_embedding(const ScalarVolume& s) {
  return EmbeddingVolume(s.dims, 1, s.spacing, s.data, false);
}

ScalarVolume as_scalar(const EmbeddingVolume& v) {
  require(v.channels() == 1, "scalar view requires a single-channel volume");
  ScalarVolume s(v.dims(), v.spacing());
  auto d = v.data();
  s.data.assign(d.begin(), d.end());
  return s;
}

}  // namespace anatomatch
