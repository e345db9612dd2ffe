#include "anatomatch/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "anatomatch/error.hpp"

namespace anatomatch {
namespace {

void check_unit_rows(const RowMatrix& m, double tol, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    require(std::abs(m.row(i).norm() - 1.0) <= tol, std::string(what) + " rows must be unit norm");
}

void check_temperature(double t) { require(t > 0 && std::isfinite(t), "temperature must be > 0"); }

}  // namespace

double log_sum_exp(const Eigen::VectorXd& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  double s = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

void PairBatch::validate(double norm_tol) const {
  check_temperature(temperature);
  require(pos_a.rows() >= 1, "pair batch needs at least one positive pair");
  require(pos_a.rows() == pos_b.rows() && pos_a.cols() == pos_b.cols(),
          "positive pair matrices differ in shape");
  require(static_cast<Eigen::Index>(negatives.size()) == pos_a.rows(),
          "one negative set per anchor is required");
  for (const auto& n : negatives)
    require(n.rows() == 0 || n.cols() == pos_a.cols(), "negative embedding width mismatch");
  check_unit_rows(pos_a, norm_tol, "anchor");
  check_unit_rows(pos_b, norm_tol, "positive");
  for (const auto& n : negatives) check_unit_rows(n, norm_tol, "negative");
}

InfoNceResult infonce_loss(const PairBatch& batch) {
  // Norms are the caller's contract; only shapes and temperature are enforced here
  // so that finite-difference probes off the unit sphere stay admissible.
  batch.validate(std::numeric_limits<double>::infinity());
  const double inv_t = 1.0 / batch.temperature;
  const Eigen::Index n = batch.pos_a.rows();

  InfoNceResult r;
  r.grad.pos_a = RowMatrix::Zero(n, batch.pos_a.cols());
  r.grad.pos_b = RowMatrix::Zero(n, batch.pos_b.cols());
  r.grad.negatives.resize(static_cast<size_t>(n));

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto a = batch.pos_a.row(i);
    const auto b = batch.pos_b.row(i);
    const RowMatrix& neg = batch.negatives[static_cast<size_t>(i)];
    Eigen::VectorXd logits(neg.rows() + 1);
    logits[0] = a.dot(b) * inv_t;
    for (Eigen::Index j = 0; j < neg.rows(); ++j) logits[j + 1] = a.dot(neg.row(j)) * inv_t;
    r.similarity_evals += logits.size();

    const double lse = log_sum_exp(logits);
    r.loss += lse - logits[0];

    // d/dlogit = softmax - onehot(0)
    Eigen::VectorXd p = (logits.array() - lse).exp();
    p[0] -= 1.0;
    r.grad.pos_a.row(i) = p[0] * inv_t * b;
    r.grad.pos_b.row(i) = p[0] * inv_t * a;
    RowMatrix& gn = r.grad.negatives[static_cast<size_t>(i)];
    gn.resize(neg.rows(), batch.pos_a.cols());
    for (Eigen::Index j = 0; j < neg.rows(); ++j) {
      r.grad.pos_a.row(i) += p[j + 1] * inv_t * neg.row(j);
      gn.row(j) = p[j + 1] * inv_t * a;
    }
  }
  return r;
}

void LabeledBatch::validate(double norm_tol) const {
  check_temperature(temperature);
  require(num_classes >= 1, "num_classes must be >= 1");
  require(static_cast<Eigen::Index>(labels.size()) == embeddings.rows(),
          "label count differs from embedding rows");
  require(embeddings.rows() >= 1, "labeled batch is empty");
  std::vector<int> counts(static_cast<size_t>(num_classes), 0);
  for (int l : labels) {
    require(l >= 0 && l < num_classes, "label outside [0, num_classes)");
    ++counts[static_cast<size_t>(l)];
  }
  for (int p = 0; p < num_classes; ++p)
    require(counts[static_cast<size_t>(p)] > 0, "class " + std::to_string(p) + " has no members");
  check_unit_rows(embeddings, norm_tol, "embedding");
}

RowMatrix prototypes(const LabeledBatch& batch) {
  batch.validate(std::numeric_limits<double>::infinity());
  RowMatrix c = RowMatrix::Zero(batch.num_classes, batch.embeddings.cols());
  std::vector<int> counts(static_cast<size_t>(batch.num_classes), 0);
  for (size_t i = 0; i < batch.labels.size(); ++i) {
    c.row(batch.labels[i]) += batch.embeddings.row(static_cast<Eigen::Index>(i));
    ++counts[static_cast<size_t>(batch.labels[i])];
  }
  for (int p = 0; p < batch.num_classes; ++p) c.row(p) /= counts[static_cast<size_t>(p)];
  return c;
}

SupConResult prototypical_supcon_loss(const LabeledBatch& batch) {
  const RowMatrix c = prototypes(batch);
  const RowMatrix& x = batch.embeddings;
  const double inv_t = 1.0 / batch.temperature;
  const int k = batch.num_classes;
  const Eigen::Index n = x.rows();
  std::vector<int> counts(static_cast<size_t>(k), 0);
  for (int l : batch.labels) ++counts[static_cast<size_t>(l)];

  // logits(p, a) = c_p . x_a / T, the only similarities the loss needs.
  SupConResult r;
  RowMatrix logits(k, n);
  for (int p = 0; p < k; ++p)
    for (Eigen::Index a = 0; a < n; ++a) {
      logits(p, a) = c.row(p).dot(x.row(a)) * inv_t;
      ++r.similarity_evals;
    }
  r.grad = RowMatrix::Zero(n, x.cols());
  RowMatrix grad_c = RowMatrix::Zero(k, x.cols());

  for (int p = 0; p < k; ++p) {
    const Eigen::VectorXd row = logits.row(p).transpose();
    const double lse = log_sum_exp(row);
    double num = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (batch.labels[static_cast<size_t>(i)] == p) num += row[i];
    r.loss += lse - num / counts[static_cast<size_t>(p)];

    // Term depends on c_p through every logit of row p and on x_a directly.
    const Eigen::VectorXd w = (row.array() - lse).exp();
    for (Eigen::Index a = 0; a < n; ++a) {
      const double coeff = w[a] - (batch.labels[static_cast<size_t>(a)] == p
                                       ? 1.0 / counts[static_cast<size_t>(p)]
                                       : 0.0);
      r.grad.row(a) += coeff * inv_t * c.row(p);
      grad_c.row(p) += coeff * inv_t * x.row(a);
    }
  }
  // Chain through c_p = mean of class members.
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = batch.labels[static_cast<size_t>(i)];
    r.grad.row(i) += grad_c.row(p) / counts[static_cast<size_t>(p)];
  }
  return r;
}

SupConReference supcon_reference_loss(const LabeledBatch& batch) {
  batch.validate(std::numeric_limits<double>::infinity());
  const RowMatrix& x = batch.embeddings;
  const Eigen::Index n = x.rows();
  require(n >= 2, "pairwise SupCon needs at least two samples");
  const double inv_t = 1.0 / batch.temperature;

  SupConReference r;
  Eigen::VectorXd logits(n - 1);
  std::vector<Eigen::Index> others(static_cast<size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index m = 0;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a == i) continue;
      logits[m] = x.row(i).dot(x.row(a)) * inv_t;
      others[static_cast<size_t>(m)] = a;
      ++m;
    }
    r.similarity_evals += n - 1;
    const double lse = log_sum_exp(logits);
    double sum = 0;
    int positives = 0;
    for (Eigen::Index m2 = 0; m2 < n - 1; ++m2) {
      if (batch.labels[static_cast<size_t>(others[static_cast<size_t>(m2)])] ==
          batch.labels[static_cast<size_t>(i)]) {
        sum += logits[m2] - lse;
        ++positives;
      }
    }
    if (positives > 0) r.loss -= sum / positives;
  }
  return r;
}

std::vector<int> select_hard_negatives(const Eigen::VectorXd& anchor, const RowMatrix& candidates,
                                       int n_hard, int n_random, uint64_t seed) {
  const int m = static_cast<int>(candidates.rows());
  require(n_hard >= 0 && n_random >= 0, "negative counts must be non-negative");
  require(n_hard + n_random <= m, "requested more negatives than candidates");
  require(m == 0 || candidates.cols() == anchor.size(), "candidate width mismatch");

  const Eigen::VectorXd sim = candidates * anchor;
  std::vector<int> order(static_cast<size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + n_hard, order.end(), [&](int a, int b) {
    return sim[a] > sim[b] || (sim[a] == sim[b] && a < b);
  });

  std::vector<int> out(order.begin(), order.begin() + n_hard);
  std::vector<int> rest(order.begin() + n_hard, order.end());
  std::sort(rest.begin(), rest.end());
  std::mt19937_64 rng(seed);
  std::sample(rest.begin(), rest.end(), std::back_inserter(out), n_random, rng);
  return out;
}

}  // namespace anatomatch
