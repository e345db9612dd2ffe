#pragma once

#include <optional>
#include <span>
#include <vector>

#include "anatomatch/volume.hpp"

namespace anatomatch {

// Inclusive voxel box. An unset box means the whole volume.
struct SearchRegion {
  std::optional<VoxelPoint> lo, hi;

  static SearchRegion whole() { return {}; }
  static SearchRegion box(VoxelPoint lo, VoxelPoint hi) { return {lo, hi}; }
};

// Region resolved against concrete dims: clipped, non-empty, inclusive.
struct Box {
  VoxelPoint lo, hi;

  Dims extent() const { return {hi.z - lo.z + 1, hi.y - lo.y + 1, hi.x - lo.x + 1}; }
  int64_t count() const { return extent().count(); }
  bool contains(const VoxelPoint& p) const {
    return p.z >= lo.z && p.y >= lo.y && p.x >= lo.x && p.z <= hi.z && p.y <= hi.y && p.x <= hi.x;
  }
};

// Intersects region with the volume; throws Validation if the result is empty.
Box resolve(const SearchRegion& region, const Dims& dims);

struct SimilarityMap {
  Box box;
  std::vector<double> scores;  // z-major over box

  double at(const VoxelPoint& p) const;
};

SimilarityMap similarity_map(std::span<const float> template_vec, const EmbeddingVolume& query,
                             const SearchRegion& region = SearchRegion::whole());

struct NNMatch {
  VoxelPoint point;
  double score = 0.0;

  friend bool operator==(const NNMatch&, const NNMatch&) = default;
};

// Argmax of the similarity map. Ties go to the smallest z-major linear index.
NNMatch nn_match_vector(std::span<const float> template_vec, const EmbeddingVolume& query,
                        const SearchRegion& region = SearchRegion::whole());

NNMatch nn_match(const EmbeddingVolume& templ, const VoxelPoint& t, const EmbeddingVolume& query,
                 const SearchRegion& region = SearchRegion::whole());

// Block-mean downsampling followed by renormalization; produces the coarse
// level consumed by coarse_to_fine_match.
EmbeddingVolume downsample(const EmbeddingVolume& fine, int factor);

struct CoarseToFineOptions {
  int top_k = 5;
  int window = 9;  // fine voxels per box edge
};

struct CoarseToFineMatch {
  NNMatch match;
  int factor = 1;
  std::vector<Box> searched;  // fine-level boxes that were scanned
};

// Picks the top_k coarse peaks for the coarse template vector, scans
// window-sized fine boxes centred on their upsampled positions and returns
// the best fine voxel (same tie rule as nn_match).
CoarseToFineMatch coarse_to_fine_match(const EmbeddingVolume& template_coarse,
                                       const EmbeddingVolume& template_fine, const VoxelPoint& t,
                                       const EmbeddingVolume& query_coarse,
                                       const EmbeddingVolume& query_fine,
                                       const CoarseToFineOptions& opts = {});

// Infers the integer downsample factor between two levels; throws on inconsistency.
int downsample_factor(const Dims& coarse, const Dims& fine);

}  // namespace anatomatch
