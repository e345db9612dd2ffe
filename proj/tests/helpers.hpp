#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "anatomatch/volume.hpp"

namespace testutil {

using namespace anatomatch;

// Random unit vectors per voxel; pairwise distinct with probability one.
inline EmbeddingVolume random_unit_volume(Dims d, int channels, uint64_t seed, Spacing s = {}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  EmbeddingVolume v(d, channels, s, false);
  for (auto& x : v.data()) x = static_cast<float>(g(rng));
  return normalize(v).volume;
}

// Brute-force argmax with the same accumulation as the library's dot().
inline VoxelPoint brute_argmax(std::span<const float> t, const EmbeddingVolume& q) {
  double best = -1e300;
  int64_t arg = 0;
  for (int64_t i = 0; i < q.dims().count(); ++i) {
    const double s = dot(t, q.at_linear(i));
    if (s > best) {
      best = s;
      arg = i;
    }
  }
  return q.dims().unlinear(arg);
}

// X_B(p) = X_A(p - d), with voxels uncovered by the shift filled from fresh noise.
inline EmbeddingVolume translate(const EmbeddingVolume& a, VoxelPoint d, uint64_t seed) {
  EmbeddingVolume fill = random_unit_volume(a.dims(), a.channels(), seed, a.spacing());
  EmbeddingVolume b = fill;
  for (int64_t i = 0; i < a.dims().count(); ++i) {
    const VoxelPoint p = a.dims().unlinear(i);
    const VoxelPoint src{p.z - d.z, p.y - d.y, p.x - d.x};
    if (!a.dims().contains(src)) continue;
    const auto from = a.at_linear(a.dims().linear(src));
    std::copy(from.begin(), from.end(), b.at_linear(i).begin());
  }
  b.set_normalized(true);
  return b;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() /
           ("anatomatch_" + tag + "_" + std::to_string(rng() % 1000000000ULL));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace testutil
