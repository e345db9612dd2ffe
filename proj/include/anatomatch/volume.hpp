#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "anatomatch/error.hpp"

namespace anatomatch {

// Grid index, axis order (z, y, x).
struct VoxelPoint {
  int64_t z = 0, y = 0, x = 0;

  friend bool operator==(const VoxelPoint&, const VoxelPoint&) = default;
  friend auto operator<=>(const VoxelPoint&, const VoxelPoint&) = default;
};

// Millimetre coordinate, axis order (z, y, x). Origin at voxel (0,0,0).
struct PhysPoint {
  double z = 0, y = 0, x = 0;

  friend bool operator==(const PhysPoint&, const PhysPoint&) = default;
};

struct Dims {
  int64_t z = 1, y = 1, x = 1;

  int64_t count() const { return z * y * x; }
  bool contains(const VoxelPoint& p) const {
    return p.z >= 0 && p.y >= 0 && p.x >= 0 && p.z < z && p.y < y && p.x < x;
  }
  int64_t linear(const VoxelPoint& p) const { return (p.z * y + p.y) * x + p.x; }
  VoxelPoint unlinear(int64_t i) const { return {i / (y * x), (i / x) % y, i % x}; }

  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  double z = 2.0, y = 2.0, x = 2.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

inline PhysPoint to_phys(const VoxelPoint& p, const Spacing& s) {
  return {static_cast<double>(p.z) * s.z, static_cast<double>(p.y) * s.y,
          static_cast<double>(p.x) * s.x};
}

// Nearest voxel to a millimetre coordinate (round half away from zero).
inline VoxelPoint to_voxel(const PhysPoint& p, const Spacing& s) {
  return {std::llround(p.z / s.z), std::llround(p.y / s.y), std::llround(p.x / s.x)};
}

inline double distance(const PhysPoint& a, const PhysPoint& b) {
  const double dz = a.z - b.z, dy = a.y - b.y, dx = a.x - b.x;
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

// Throws a Bounds error naming the first offending axis.
void check_bounds(const Dims& dims, const VoxelPoint& p);

inline constexpr int kDefaultChannels = 128;

// Dense channel-last field of per-voxel vectors (float storage).
class EmbeddingVolume {
 public:
  EmbeddingVolume() = default;
  EmbeddingVolume(Dims dims, int channels, Spacing spacing = {}, bool normalized = false);
  EmbeddingVolume(Dims dims, int channels, Spacing spacing, std::vector<float> data,
                  bool normalized);

  const Dims& dims() const { return dims_; }
  int channels() const { return channels_; }
  const Spacing& spacing() const { return spacing_; }
  bool normalized() const { return normalized_; }
  void set_normalized(bool n) { normalized_ = n; }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  // Unchecked accessors by linear voxel index.
  std::span<const float> at_linear(int64_t i) const {
    return {data_.data() + i * channels_, static_cast<size_t>(channels_)};
  }
  std::span<float> at_linear(int64_t i) {
    return {data_.data() + i * channels_, static_cast<size_t>(channels_)};
  }

  friend bool operator==(const EmbeddingVolume&, const EmbeddingVolume&) = default;

 private:
  Dims dims_{};
  int channels_ = 0;
  Spacing spacing_{};
  std::vector<float> data_;
  bool normalized_ = false;
};

// Bounds-checked read of the vector stored at p.
std::span<const float> embedding_at(const EmbeddingVolume& vol, const VoxelPoint& p);

struct NormalizeResult {
  EmbeddingVolume volume;
  int64_t zero_vectors = 0;  // voxels that were all-zero and replaced by e1
};

NormalizeResult normalize(const EmbeddingVolume& vol);

// True if every voxel vector has unit L2 norm within tol.
bool is_unit_norm(const EmbeddingVolume& vol, double tol = 1e-4);

inline constexpr double kDefaultUnifiedWeight = 0.5;

// [sqrt(w) * app, sqrt(1 - w) * sem] per voxel; both inputs must be normalized.
EmbeddingVolume concat_unified(const EmbeddingVolume& app, const EmbeddingVolume& sem,
                               double weight = kDefaultUnifiedWeight);

// Per-voxel class IDs.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Dims dims, int num_classes, Spacing spacing = {});
  LabelVolume(Dims dims, int num_classes, Spacing spacing, std::vector<uint16_t> data);

  const Dims& dims() const { return dims_; }
  int num_classes() const { return num_classes_; }
  const Spacing& spacing() const { return spacing_; }
  std::span<const uint16_t> data() const { return data_; }
  std::span<uint16_t> data() { return data_; }

  uint16_t operator[](int64_t i) const { return data_[i]; }
  uint16_t& operator[](int64_t i) { return data_[i]; }
  uint16_t at(const VoxelPoint& p) const;

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  Dims dims_{};
  int num_classes_ = 1;
  Spacing spacing_{};
  std::vector<uint16_t> data_;
};

// Scalar intensity field (phantom images, similarity maps).
struct ScalarVolume {
  Dims dims{};
  Spacing spacing{};
  std::vector<float> data;

  ScalarVolume() = default;
  ScalarVolume(Dims d, Spacing s, float fill = 0.0f)
      : dims(d), spacing(s), data(static_cast<size_t>(d.count()), fill) {}

  float& operator[](int64_t i) { return data[i]; }
  float operator[](int64_t i) const { return data[i]; }

  friend bool operator==(const ScalarVolume&, const ScalarVolume&) = default;
};

// Single-channel, unnormalized embedding view of an intensity field (AEV storage).
EmbeddingVolume as_embedding(const ScalarVolume& s);
ScalarVolume as_scalar(const EmbeddingVolume& v);

// Inner product with 64-bit accumulation over float storage. The summation
// order is fixed so that results are identical on every call path.
inline double dot(std::span<const float> a, std::span<const float> b) {
  const size_t n = a.size();
  double acc[4] = {0, 0, 0, 0};
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc[0] += static_cast<double>(a[i]) * b[i];
    acc[1] += static_cast<double>(a[i + 1]) * b[i + 1];
    acc[2] += static_cast<double>(a[i + 2]) * b[i + 2];
    acc[3] += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) acc[0] += static_cast<double>(a[i]) * b[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

}  // namespace anatomatch
