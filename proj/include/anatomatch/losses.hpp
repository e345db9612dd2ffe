#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace anatomatch {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kDefaultTemperature = 0.5;

// Positive pairs (rows of pos_a / pos_b) with a per-anchor negative set.
struct PairBatch {
  RowMatrix pos_a;                   // n_pos x C
  RowMatrix pos_b;                   // n_pos x C
  std::vector<RowMatrix> negatives;  // n_pos entries, each n_neg_i x C
  double temperature = kDefaultTemperature;

  void validate(double norm_tol = 1e-4) const;
};

struct PairBatchGrad {
  RowMatrix pos_a, pos_b;
  std::vector<RowMatrix> negatives;
};

struct InfoNceResult {
  double loss = 0;
  PairBatchGrad grad;
  int64_t similarity_evals = 0;
};

// Sum over anchors of -log softmax of the positive logit against the
// anchor's negatives, logits = dot / temperature.
InfoNceResult infonce_loss(const PairBatch& batch);

// Embeddings with class labels in [0, num_classes); every class must occur.
struct LabeledBatch {
  RowMatrix embeddings;  // n x C
  std::vector<int> labels;
  int num_classes = 1;
  double temperature = kDefaultTemperature;

  void validate(double norm_tol = 1e-4) const;
};

// Per-class means, K x C; not renormalized.
RowMatrix prototypes(const LabeledBatch& batch);

struct SupConResult {
  double loss = 0;
  RowMatrix grad;  // n x C
  int64_t similarity_evals = 0;
};

// Prototype-anchored contrastive loss: for class p with prototype c_p,
//   -1/n_p sum_i log( exp(c_p.x_i/T) / sum_a exp(c_p.x_a/T) )
// summed over classes. Gradients flow through the prototypes.
SupConResult prototypical_supcon_loss(const LabeledBatch& batch);

// Pairwise supervised contrastive loss (every anchor against every other
// sample), used as the quadratic-cost baseline. Requires n >= 2.
struct SupConReference {
  double loss = 0;
  int64_t similarity_evals = 0;
};
SupConReference supcon_reference_loss(const LabeledBatch& batch);

// n_hard most similar candidates (ties to the lower index), followed by
// n_random indices drawn uniformly from the rest and listed in ascending order.
std::vector<int> select_hard_negatives(const Eigen::VectorXd& anchor, const RowMatrix& candidates,
                                       int n_hard, int n_random, uint64_t seed);

// Numerically stable log(sum(exp(v))).
double log_sum_exp(const Eigen::VectorXd& v);

}  // namespace anatomatch
