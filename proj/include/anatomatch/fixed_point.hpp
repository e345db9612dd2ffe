#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "anatomatch/similarity.hpp"
#include "anatomatch/volume.hpp"

namespace anatomatch {

// One application of the forward-backward map: t -> q (A to B), q -> next (B to A).
struct ForwardBackward {
  VoxelPoint next;
  VoxelPoint query;

  friend bool operator==(const ForwardBackward&, const ForwardBackward&) = default;
};

ForwardBackward forward_backward(const VoxelPoint& t, const EmbeddingVolume& a,
                                 const EmbeddingVolume& b);

// (t_i, q_i) with q_i = NN_B(t_i).
struct TracePair {
  VoxelPoint t;
  VoxelPoint q;

  friend bool operator==(const TracePair&, const TracePair&) = default;
};

struct FBTrace {
  VoxelPoint start;
  std::vector<TracePair> sequence;
  bool converged = false;
  bool cycle = false;  // a non-fixed point recurred
  int n_fix = 0;       // applications of f performed
  double offset = 0;   // |start - terminal.t| in voxels
  TracePair terminal;

  friend bool operator==(const FBTrace&, const FBTrace&) = default;
};

using ForwardBackwardFn = std::function<ForwardBackward(const VoxelPoint&)>;

inline constexpr int kDefaultMaxIter = 20;

// Applies step until t is mapped to itself, a previously visited point comes
// back (cycle, not converged), or max_iter applications have been made.
FBTrace iterate_to_fixed_point(const VoxelPoint& t0, const ForwardBackwardFn& step, int max_iter);

FBTrace iterate_to_fixed_point(const VoxelPoint& t0, const EmbeddingVolume& a,
                               const EmbeddingVolume& b, int max_iter = kDefaultMaxIter);

inline constexpr int kDefaultCube = 5;

// The L^3 cube centred on t0, clipped to dims, in z-major order.
std::vector<VoxelPoint> cube_points(const VoxelPoint& t0, const Dims& dims, int cube);

// One trace per cube voxel, z-major. All traces advance in lock-step rounds;
// forward-backward evaluations are shared between traces that meet.
std::vector<FBTrace> cube_fixed_points(const VoxelPoint& t0, const EmbeddingVolume& a,
                                       const EmbeddingVolume& b, int cube = kDefaultCube,
                                       int max_iter = kDefaultMaxIter);

inline constexpr double kDefaultTauDis = 2.0;

// Converged traces with offset < tau_dis, order preserved.
std::vector<FBTrace> filter_stable(std::span<const FBTrace> traces, double tau_dis);

// A fixed point f in A and its partner g in B (voxel coordinates).
struct PointPair {
  Eigen::Vector3d f;
  Eigen::Vector3d g;
};

std::vector<PointPair> terminal_pairs(std::span<const FBTrace> stable);

struct AffineEstimate {
  Eigen::Matrix3d A = Eigen::Matrix3d::Identity();
  Eigen::Vector3d f_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d g_mean = Eigen::Vector3d::Zero();
  int n_points = 0;
  int rank = 0;  // rank of the centred scatter matrix
  bool rank_deficient = false;
  double residual_rms = 0;
};

inline constexpr int kDefaultMinPoints = 4;

// Least squares on centroid-centred coordinates:
//   A = argmin sum |(g_k - g_mean) - A (f_k - f_mean)|^2
// Null directions of the scatter matrix are completed with the identity.
// Returns nullopt when fewer than min_points pairs are given.
std::optional<AffineEstimate> estimate_affine(std::span<const PointPair> pairs, int min_points);
std::optional<AffineEstimate> estimate_affine(std::span<const FBTrace> stable, int min_points);

// Mean over k of g_k + A (t0 - f_k).
Eigen::Vector3d predict_query(const Eigen::Vector3d& t0, std::span<const PointPair> pairs,
                              const Eigen::Matrix3d& A);
Eigen::Vector3d predict_query(const VoxelPoint& t0, std::span<const FBTrace> stable,
                              const AffineEstimate& affine);

enum class MatchMode { Nn, FixedPoint };

enum class MatchMethod { Nn, FixedPoint, FixedPointTranslation, FixedPointFallbackNn };

const char* to_string(MatchMode m);
const char* to_string(MatchMethod m);
MatchMode parse_match_mode(const std::string& s);

struct MatcherConfig {
  MatchMode mode = MatchMode::FixedPoint;
  int cube = kDefaultCube;
  double tau_dis = kDefaultTauDis;
  int max_iter = kDefaultMaxIter;
  int min_points = kDefaultMinPoints;
  bool keep_traces = false;

  void validate() const;
};

struct MatchResult {
  Eigen::Vector3d query_real = Eigen::Vector3d::Zero();  // voxel units, after clamping
  VoxelPoint query_voxel;
  PhysPoint query_mm;
  bool clamped = false;
  MatchMethod method = MatchMethod::Nn;
  double nn_score = 0;  // score of the plain NN match (nn modes)
  std::optional<AffineEstimate> affine;
  int n_traces = 0;
  int n_stable = 0;
  std::vector<FBTrace> traces;  // only with keep_traces
};

MatchResult match(const VoxelPoint& t, const EmbeddingVolume& a, const EmbeddingVolume& b,
                  const MatcherConfig& cfg = {});

inline Eigen::Vector3d to_vec(const VoxelPoint& p) {
  return {static_cast<double>(p.z), static_cast<double>(p.y), static_cast<double>(p.x)};
}

}  // namespace anatomatch
