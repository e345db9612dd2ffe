#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "anatomatch/losses.hpp"
#include "anatomatch/error.hpp"

using namespace anatomatch;

namespace {

RowMatrix unit_rows(std::mt19937_64& rng, int n, int c) {
  std::normal_distribution<double> g(0.0, 1.0);
  RowMatrix m(n, c);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k) m(i, k) = g(rng);
    m.row(i).normalize();
  }
  return m;
}

template <class F>
double fd_rel_error(RowMatrix& m, const RowMatrix& analytic, F loss) {
  const double eps = 1e-5;
  RowMatrix num(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double keep = m.data()[i];
    m.data()[i] = keep + eps;
    const double up = loss();
    m.data()[i] = keep - eps;
    const double down = loss();
    m.data()[i] = keep;
    num.data()[i] = (up - down) / (2 * eps);
  }
  return (analytic - num).norm() / std::max(analytic.norm(), num.norm());
}

PairBatch random_pairs(std::mt19937_64& rng, int n_pos, int n_neg, int c) {
  PairBatch b;
  b.pos_a = unit_rows(rng, n_pos, c);
  b.pos_b = unit_rows(rng, n_pos, c);
  for (int i = 0; i < n_pos; ++i) b.negatives.push_back(unit_rows(rng, n_neg, c));
  return b;
}

LabeledBatch random_labeled(std::mt19937_64& rng, int n, int k, int c) {
  LabeledBatch b;
  b.embeddings = unit_rows(rng, n, c);
  b.num_classes = k;
  for (int i = 0; i < n; ++i) b.labels.push_back(i % k);
  std::shuffle(b.labels.begin(), b.labels.end(), rng);
  return b;
}

RowMatrix e(int n, int c, int axis) {
  RowMatrix m = RowMatrix::Zero(n, c);
  m.col(axis).setOnes();
  return m;
}

}  // namespace

TEST_CASE("InfoNCE closed forms") {
  PairBatch b;
  b.pos_a = e(1, 3, 0);
  b.pos_b = b.pos_a;
  b.negatives = {RowMatrix(0, 3)};
  CHECK(infonce_loss(b).loss == doctest::Approx(0.0));
  b.negatives = {e(1, 3, 0)};
  CHECK(std::abs(infonce_loss(b).loss - std::log(2.0)) < 1e-12);
  b.temperature = 0;
  CHECK_THROWS_AS(infonce_loss(b), Error);
  b.temperature = 0.5;
  b.negatives = {e(1, 4, 0)};
  CHECK_THROWS_AS(infonce_loss(b), Error);
}

TEST_CASE("InfoNCE gradient, permutation invariance, non-negativity") {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 10; ++k) {
    PairBatch b = random_pairs(rng, 4, 8, 16);
    const auto r = infonce_loss(b);
    auto loss = [&] { return infonce_loss(b).loss; };
    CHECK(fd_rel_error(b.pos_a, r.grad.pos_a, loss) < 1e-4);
    CHECK(fd_rel_error(b.pos_b, r.grad.pos_b, loss) < 1e-4);
    CHECK(fd_rel_error(b.negatives[2], r.grad.negatives[2], loss) < 1e-4);
    CHECK(r.similarity_evals == 4 * 9);

    PairBatch p = b;
    auto& neg = p.negatives[1];
    neg.row(0).swap(neg.row(5));
    neg.row(2).swap(neg.row(7));
    CHECK(std::abs(infonce_loss(p).loss - r.loss) < 1e-9);
  }
  // Positive logit maximal -> loss >= 0 (holds even with few negatives).
  for (int k = 0; k < 20; ++k) {
    PairBatch b = random_pairs(rng, 3, 1 + k % 4, 6);
    b.pos_b = b.pos_a;
    CHECK(infonce_loss(b).loss >= 0.0);
  }
}

TEST_CASE("prototypes") {
  LabeledBatch b;
  b.embeddings = RowMatrix::Zero(3, 4);
  b.embeddings(0, 0) = 1;
  b.embeddings(1, 1) = 1;
  b.embeddings(2, 2) = 1;
  b.labels = {0, 0, 1};
  b.num_classes = 2;
  const auto c = prototypes(b);
  CHECK(c(0, 0) == 0.5);
  CHECK(c(0, 1) == 0.5);
  CHECK(c(1, 2) == 1.0);

  std::mt19937_64 rng(2);
  const auto r = random_labeled(rng, 15, 3, 5);
  const auto pc = prototypes(r);
  for (int p = 0; p < 3; ++p) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(5);
    int n = 0;
    for (int i = 0; i < 15; ++i)
      if (r.labels[static_cast<size_t>(i)] == p) sum += r.embeddings.row(i), ++n;
    CHECK((pc.row(p) - sum / n).norm() < 1e-12);
  }
  b.labels = {0, 0, 0};
  CHECK_THROWS_AS(prototypes(b), Error);  // class 1 empty
}

TEST_CASE("prototypical SupCon closed forms and gradient") {
  for (int n : {1, 2, 10}) {
    LabeledBatch b;
    b.embeddings = e(n, 4, 2);
    b.labels.assign(static_cast<size_t>(n), 0);
    CHECK(std::abs(prototypical_supcon_loss(b).loss - std::log(static_cast<double>(n))) < 1e-9);
  }
  std::mt19937_64 rng(3);
  for (int k = 0; k < 10; ++k) {
    LabeledBatch b = random_labeled(rng, 12, 3, 8);
    const auto r = prototypical_supcon_loss(b);
    CHECK(fd_rel_error(b.embeddings, r.grad, [&] { return prototypical_supcon_loss(b).loss; }) < 1e-4);
    CHECK(r.similarity_evals == 12 * 3);

    // Permuting rows within a class leaves the loss unchanged.
    LabeledBatch p = b;
    int first = -1;
    for (int i = 0; i < 12; ++i)
      if (p.labels[static_cast<size_t>(i)] == 1) {
        if (first < 0) first = i;
        else {
          p.embeddings.row(first).swap(p.embeddings.row(i));
          break;
        }
      }
    CHECK(std::abs(prototypical_supcon_loss(p).loss - r.loss) < 1e-9);
  }
}

TEST_CASE("reference SupCon") {
  LabeledBatch b;
  b.embeddings = e(2, 3, 0);
  b.labels = {0, 0};
  // One other sample, which is a positive: -log(1) = 0; prototypical: log 2.
  CHECK(std::abs(supcon_reference_loss(b).loss) < 1e-12);
  CHECK(std::abs(prototypical_supcon_loss(b).loss - std::log(2.0)) < 1e-12);
  CHECK(supcon_reference_loss(b).similarity_evals == 2);

  std::mt19937_64 rng(4);
  const auto r64 = random_labeled(rng, 64, 4, 8), r128 = random_labeled(rng, 128, 4, 8);
  const auto ref64 = supcon_reference_loss(r64).similarity_evals, ref128 = supcon_reference_loss(r128).similarity_evals;
  const auto pro64 = prototypical_supcon_loss(r64).similarity_evals,
             pro128 = prototypical_supcon_loss(r128).similarity_evals;
  CHECK(ref64 == 64 * 63);
  CHECK(pro64 == 64 * 4);
  CHECK(static_cast<double>(ref128) / ref64 == doctest::Approx(4.0).epsilon(0.02));
  CHECK(pro128 == 2 * pro64);

  LabeledBatch one;
  one.embeddings = e(1, 3, 0);
  one.labels = {0};
  CHECK_THROWS_AS(supcon_reference_loss(one), Error);
}

TEST_CASE("descent on a separable batch") {
  for (double tau : {0.1, 0.5, 1.0}) {
    PairBatch b;
    std::mt19937_64 rng(7);
    b.pos_a = unit_rows(rng, 3, 4);
    b.pos_b = unit_rows(rng, 3, 4);
    for (int i = 0; i < 3; ++i) b.negatives.push_back(unit_rows(rng, 4, 4));
    b.temperature = tau;
    double prev = infonce_loss(b).loss;
    const double lr = 0.02 * tau;
    for (int s = 0; s < 50; ++s) {
      const auto r = infonce_loss(b);
      b.pos_a -= lr * r.grad.pos_a;
      b.pos_b -= lr * r.grad.pos_b;
      const double now = infonce_loss(b).loss;
      CHECK(now < prev);
      prev = now;
    }
  }

  std::mt19937_64 rng(8);
  LabeledBatch b = random_labeled(rng, 12, 3, 6);
  auto within = [&] {
    const auto c = prototypes(b);
    double s = 0;
    for (int i = 0; i < 12; ++i) s += c.row(b.labels[static_cast<size_t>(i)]).dot(b.embeddings.row(i));
    return s / 12;
  };
  double prev = prototypical_supcon_loss(b).loss;
  const double w0 = within();
  for (int s = 0; s < 200; ++s) {
    b.embeddings -= 0.01 * prototypical_supcon_loss(b).grad;
    const double now = prototypical_supcon_loss(b).loss;
    CHECK(now < prev);
    prev = now;
  }
  CHECK(within() > w0);
}

TEST_CASE("hard negative selection") {
  std::mt19937_64 rng(9);
  const RowMatrix cand = unit_rows(rng, 20, 5);
  const Eigen::VectorXd anchor = cand.row(7).transpose();
  const auto sel = select_hard_negatives(anchor, cand, 3, 4, 11);
  REQUIRE(sel.size() == 7u);
  CHECK(sel[0] == 7);

  const auto hard = select_hard_negatives(anchor, cand, 5, 0, 1);
  std::vector<int> idx(20);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) {
    return cand.row(x).dot(anchor) > cand.row(y).dot(anchor);
  });
  CHECK(hard == std::vector<int>(idx.begin(), idx.begin() + 5));

  auto all = select_hard_negatives(anchor, cand, 0, 20, 3);
  std::sort(all.begin(), all.end());
  std::vector<int> iota20(20);
  std::iota(iota20.begin(), iota20.end(), 0);
  CHECK(all == iota20);
  CHECK(select_hard_negatives(anchor, cand, 3, 4, 11) == sel);
  CHECK_THROWS_AS(select_hard_negatives(anchor, cand, 15, 6, 1), Error);

  // Ties go to the lower index.
  RowMatrix dup(4, 2);
  dup << 1, 0, 0, 1, 1, 0, 1, 0;
  CHECK(select_hard_negatives(Eigen::Vector2d(1, 0), dup, 2, 0, 0) == std::vector<int>{0, 2});
}
