#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "anatomatch/losses.hpp"
#include "anatomatch/phantom.hpp"
#include "anatomatch/volume.hpp"
#include "anatomatch/volume_io.hpp"

namespace anatomatch {

// Handcrafted per-voxel features standing in for a CNN backbone:
//   raw intensity, Gaussian smoothing at sigma 1/2/4 voxels, per-axis
//   gradients of the sigma-1 and sigma-4 smoothed images, local variance
//   (sigma 1) and a constant bias channel.
std::vector<std::string> feature_names();
int feature_count();

// F-channel, unnormalized volume with the same grid as the input.
EmbeddingVolume extract_features(const ScalarVolume& intensity);

// Linear map to C channels followed by per-voxel L2 normalization.
struct ProjectionHead {
  std::string name = "appearance";
  RowMatrix weights;  // C x F

  int in() const { return static_cast<int>(weights.cols()); }
  int out() const { return static_cast<int>(weights.rows()); }

  HeadWeights to_weights() const;
  static ProjectionHead from_weights(const HeadWeights& w);
};

inline constexpr int kToyEmbeddingChannels = 16;

// Weights ~ N(0, 1/F), stored at float precision so a head survives a save/load unchanged.
ProjectionHead init_head(const std::string& name, int in, int out, uint64_t seed);

EmbeddingVolume embed(const EmbeddingVolume& features, const ProjectionHead& head);

// Single-vector forward pass and the matching backward pass through the
// normalization: given dL/de, accumulates dL/dW.
struct HeadForward {
  Eigen::VectorXd pre;   // W f
  Eigen::VectorXd unit;  // pre / |pre|
};
HeadForward head_forward(const ProjectionHead& head, const Eigen::VectorXd& features);
void head_backward(const HeadForward& fwd, const Eigen::VectorXd& features,
                   const Eigen::VectorXd& grad_unit, RowMatrix& grad_weights);

struct TrainConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  int batch_size = 5;  // augmented pairs per step
  int steps = 500;
  double tau_app = kDefaultTemperature;
  double tau_sem = kDefaultTemperature;
  int n_pos = 16;        // positive pairs per augmented pair
  int n_candidates = 48; // negative candidates per anchor, from both views
  int n_hard = 8;
  int n_random = 8;
  int n_sem_per_class = 6;  // labeled samples per class per view
  int embed_channels = kToyEmbeddingChannels;
  int pool_size = 6;  // distinct augmented pairs drawn from
  double exclusion_vox = 2.0;  // negatives closer than this to the positive are skipped
  uint64_t seed = 0;
  PhantomConfig phantom{Dims{32, 32, 32}, Spacing{2, 2, 2}, 6, 8, 5.0, 9.0, 0.0, 0};
  AugmentRanges augment{15.0, 0.8, 1.2, 8.0, 0.02, 0.5};

  void validate() const;
};

// Augmented pair with both views' features precomputed.
struct TrainingView {
  AugmentedPair pair;
  EmbeddingVolume features_a, features_b;
};

TrainingView make_training_view(const AugmentedPair& pair);

// Feature-level batch: the trainer materializes embeddings from it with the
// current heads and routes loss gradients back to head weights.
struct TrainingSample {
  std::vector<VoxelPoint> anchor_voxels;     // view a
  std::vector<Eigen::Vector3d> positive_mm;  // view b, = truth(anchor)
  RowMatrix anchor_features;                 // n_pos x F
  RowMatrix positive_features;               // n_pos x F (trilinear at positive_mm)
  std::vector<RowMatrix> negative_features;  // per anchor, (n_hard + n_random) x F
  RowMatrix labeled_features;                // n x F
  std::vector<int> labels;                   // remapped to [0, num_classes)
  int num_classes = 0;
};

TrainingSample sample_training_batch(const TrainingView& view, const ProjectionHead& appearance,
                                     const TrainConfig& cfg, uint64_t seed);

PairBatch materialize_pairs(const TrainingSample& s, const ProjectionHead& appearance, double tau);
LabeledBatch materialize_labeled(const TrainingSample& s, const ProjectionHead& semantic, double tau);

struct SampleLoss {
  double appearance = 0;
  double semantic = 0;
  RowMatrix grad_appearance;  // C x F
  RowMatrix grad_semantic;
};

// Both losses for one sample plus their gradients w.r.t. head weights.
SampleLoss sample_loss(const TrainingSample& s, const ProjectionHead& appearance,
                       const ProjectionHead& semantic, const TrainConfig& cfg);

struct LossRecord {
  int step = 0;
  double total = 0;
  double appearance = 0;
  double semantic = 0;
};

struct TrainResult {
  ProjectionHead appearance;
  ProjectionHead semantic;
  std::vector<LossRecord> history;
  bool diverged = false;
};

// Momentum SGD (v <- mu v - lr g; w <- w + v) on the mean over the batch of
// appearance + semantic loss. Stops early, flagging divergence, on a
// non-finite loss.
TrainResult train(const TrainConfig& cfg);

std::string history_csv(const std::vector<LossRecord>& history);

}  // namespace anatomatch
