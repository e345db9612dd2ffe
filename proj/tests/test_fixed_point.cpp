#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "anatomatch/fixed_point.hpp"
#include "anatomatch/parallel.hpp"
#include "anatomatch/phantom.hpp"
#include "helpers.hpp"

using namespace anatomatch;
using testutil::brute_argmax;
using testutil::random_unit_volume;

namespace {

std::vector<PointPair> affine_pairs(const Eigen::Matrix3d& m, const Eigen::Vector3d& b, int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-5, 5);
  std::vector<PointPair> out;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d f(u(rng), u(rng), u(rng));
    out.push_back({f, m * f + b});
  }
  return out;
}

Eigen::Matrix3d random_matrix(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  for (int i = 0; i < 9; ++i) m.data()[i] += u(rng);
  return m;
}

}  // namespace

TEST_CASE("forward_backward") {
  const auto a = random_unit_volume(Dims{6, 6, 6}, 4, 1);
  const auto r = forward_backward({2, 3, 1}, a, a);
  CHECK(r.next == VoxelPoint{2, 3, 1});
  CHECK(r.query == VoxelPoint{2, 3, 1});

  // Two-step oracle on unrelated volumes.
  for (uint64_t s = 0; s < 10; ++s) {
    const auto x = random_unit_volume(Dims{5, 6, 7}, 3, 100 + s);
    const auto y = random_unit_volume(Dims{7, 5, 6}, 3, 200 + s);
    const VoxelPoint t{static_cast<int64_t>(s % 5), 2, 3};
    const VoxelPoint q = brute_argmax(embedding_at(x, t), y);
    const VoxelPoint back = brute_argmax(embedding_at(y, q), x);
    CHECK(forward_backward(t, x, y) == ForwardBackward{back, q});
  }

  const auto b = testutil::translate(a, {1, 0, 2}, 9);
  const auto tr = forward_backward({2, 3, 1}, a, b);
  CHECK(tr.query == VoxelPoint{3, 3, 3});
  CHECK(tr.next == VoxelPoint{2, 3, 1});
}

TEST_CASE("iterate_to_fixed_point") {
  const auto a = random_unit_volume(Dims{6, 6, 6}, 4, 2);
  const auto self = iterate_to_fixed_point({1, 1, 1}, a, a);
  CHECK(self.converged);
  CHECK(self.n_fix == 1);
  CHECK(self.offset == 0.0);
  CHECK(!self.cycle);

  SUBCASE("injected two-cycle is detected and not converged") {
    const VoxelPoint ta{0, 0, 0}, tb{0, 0, 5};
    const ForwardBackwardFn step = [&](const VoxelPoint& t) {
      return ForwardBackward{t == ta ? tb : ta, {1, 1, 1}};
    };
    const auto tr = iterate_to_fixed_point(ta, step, 20);
    CHECK(!tr.converged);
    CHECK(tr.cycle);
    CHECK(tr.n_fix == 2);
    CHECK(tr.terminal.t == tb);
    CHECK(tr.offset == 5.0);
  }
  SUBCASE("max_iter cap") {
    const ForwardBackwardFn walk = [](const VoxelPoint& t) {
      return ForwardBackward{{t.z, t.y, t.x + 1}, t};
    };
    const auto tr = iterate_to_fixed_point({0, 0, 0}, walk, 5);
    CHECK(!tr.converged);
    CHECK(!tr.cycle);
    CHECK(tr.n_fix == 5);
    CHECK(tr.terminal.t == VoxelPoint{0, 0, 4});
    CHECK_THROWS_AS(iterate_to_fixed_point({0, 0, 0}, walk, 0), Error);
  }
  SUBCASE("converged traces re-verify; NN traces never cycle") {
    // Pair similarity is nondecreasing along an NN trace and the tie rule
    // makes indices nonincreasing, so revisiting without fixing is impossible.
    for (uint64_t s = 0; s < 20; ++s) {
      const auto x = random_unit_volume(Dims{5, 5, 5}, 3, 300 + s);
      const auto y = random_unit_volume(Dims{5, 5, 5}, 3, 400 + s);
      for (int64_t i = 0; i < 125; i += 11) {
        const auto tr = iterate_to_fixed_point(x.dims().unlinear(i), x, y, 50);
        CHECK(!tr.cycle);
        CHECK(tr.converged);
        CHECK(forward_backward(tr.terminal.t, x, y).next == tr.terminal.t);
        CHECK(tr.terminal.q == nn_match(x, tr.terminal.t, y).point);
      }
    }
  }
}

TEST_CASE("cube points and batched traces") {
  const Dims d{10, 10, 10};
  CHECK(cube_points({5, 5, 5}, d, 1).size() == 1u);
  CHECK(cube_points({5, 5, 5}, d, 5).size() == 125u);
  CHECK(cube_points({0, 0, 0}, d, 5).size() == 27u);
  const auto pts = cube_points({5, 5, 5}, d, 3);
  CHECK(std::is_sorted(pts.begin(), pts.end()));
  CHECK_THROWS_AS(cube_points({5, 5, 5}, d, 4), Error);

  const auto a = random_unit_volume(d, 4, 3);
  for (const auto& t : cube_fixed_points({5, 5, 5}, a, a, 5)) {
    CHECK(t.converged);
    CHECK(t.offset == 0.0);
  }

  const auto x = random_unit_volume(Dims{8, 8, 8}, 3, 31);
  const auto y = random_unit_volume(Dims{8, 8, 8}, 3, 32);
  const auto batched = cube_fixed_points({3, 4, 4}, x, y, 5, 20);
  const auto serial_pts = cube_points({3, 4, 4}, x.dims(), 5);
  REQUIRE(batched.size() == serial_pts.size());
  for (size_t i = 0; i < batched.size(); ++i) CHECK(batched[i] == iterate_to_fixed_point(serial_pts[i], x, y, 20));

  set_thread_count(1);
  const auto one = cube_fixed_points({3, 4, 4}, x, y, 5, 20);
  set_thread_count(3);
  const auto three = cube_fixed_points({3, 4, 4}, x, y, 5, 20);
  set_thread_count(0);
  CHECK(one == three);
}

TEST_CASE("filter_stable") {
  std::vector<FBTrace> t(4);
  t[0].converged = true, t[0].offset = 0;
  t[1].converged = true, t[1].offset = 1.5;
  t[2].converged = true, t[2].offset = 3.0;
  t[3].converged = false, t[3].offset = 0;
  t[1].start = {0, 0, 1};
  const auto s = filter_stable(t, 2.0);
  REQUIRE(s.size() == 2u);
  CHECK(s[1].start == VoxelPoint{0, 0, 1});
  CHECK_THROWS_AS(filter_stable(t, 0.0), Error);
}

TEST_CASE("estimate_affine") {
  const Eigen::Matrix3d m = random_matrix(5);
  const Eigen::Vector3d b(1.5, -2, 0.25);
  const auto pairs = affine_pairs(m, b, 10, 6);
  const auto est = estimate_affine(pairs, 4);
  REQUIRE(est);
  CHECK((est->A - m).norm() < 1e-6);
  CHECK(est->residual_rms < 1e-6);
  CHECK(est->rank == 3);
  CHECK(!est->rank_deficient);
  CHECK(est->n_points == 10);

  std::vector<PointPair> same(5, PointPair{Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(4, 5, 6)});
  const auto zero = estimate_affine(same, 4);
  REQUIRE(zero);
  CHECK(zero->A == Eigen::Matrix3d::Identity());
  CHECK(zero->rank_deficient);
  CHECK(zero->rank == 0);

  CHECK(!estimate_affine(std::span(pairs).first(2), 4));

  // Coplanar f (z = 0): in-plane columns recovered, normal direction identity.
  std::vector<PointPair> plane;
  for (const auto& p : pairs) {
    Eigen::Vector3d f = p.f;
    f[0] = 0;
    plane.push_back({f, m * f + b});
  }
  const auto pl = estimate_affine(plane, 4);
  REQUIRE(pl);
  CHECK(pl->rank == 2);
  CHECK(pl->rank_deficient);
  CHECK((pl->A.col(1) - m.col(1)).norm() < 1e-9);
  CHECK((pl->A.col(2) - m.col(2)).norm() < 1e-9);
  CHECK((pl->A.col(0) - Eigen::Vector3d::UnitX()).norm() < 1e-9);
}

TEST_CASE("predict_query") {
  const Eigen::Vector3d t0(1, 2, 3);
  const std::vector<PointPair> one{{t0, Eigen::Vector3d(7, 8, 9)}};
  CHECK(predict_query(t0, one, random_matrix(1)) == Eigen::Vector3d(7, 8, 9));

  const Eigen::Matrix3d m = random_matrix(8);
  const Eigen::Vector3d b(-1, 0.5, 2);
  const auto pairs = affine_pairs(m, b, 12, 9);
  const auto est = estimate_affine(pairs, 4);
  CHECK((predict_query(t0, pairs, est->A) - (m * t0 + b)).norm() < 1e-6);

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int k = 0; k < 50; ++k) {
    std::vector<PointPair> r(5 + k % 7);
    Eigen::Vector3d fm = Eigen::Vector3d::Zero(), gm = Eigen::Vector3d::Zero();
    for (auto& p : r) {
      p.f = Eigen::Vector3d(u(rng), u(rng), u(rng));
      p.g = Eigen::Vector3d(u(rng), u(rng), u(rng));
      fm += p.f / static_cast<double>(r.size());
      gm += p.g / static_cast<double>(r.size());
    }
    const Eigen::Matrix3d a = random_matrix(rng());
    const Eigen::Vector3d t(u(rng), u(rng), u(rng));
    CHECK((predict_query(t, r, a) - (gm + a * (t - fm))).norm() < 1e-9);
  }
  CHECK_THROWS_AS(predict_query(t0, std::vector<PointPair>{}, m), Error);
}

TEST_CASE("match: identity, translation, fallbacks, clamping") {
  const auto a = random_unit_volume(Dims{12, 12, 12}, 6, 50);
  const auto self = match({6, 6, 6}, a, a);
  CHECK(self.query_voxel == VoxelPoint{6, 6, 6});
  CHECK(self.method == MatchMethod::FixedPoint);
  CHECK(self.n_stable == 125);
  CHECK(self.query_mm == PhysPoint{12, 12, 12});
  CHECK(!self.clamped);

  const VoxelPoint d{1, -2, 3};
  const auto b = testutil::translate(a, d, 51);
  const auto tr = match({5, 6, 4}, a, b);
  CHECK(tr.query_real == Eigen::Vector3d(6, 4, 7));
  CHECK(tr.method == MatchMethod::FixedPoint);

  MatcherConfig nn;
  nn.mode = MatchMode::Nn;
  const auto nr = match({5, 6, 4}, a, b, nn);
  CHECK(nr.method == MatchMethod::Nn);
  CHECK(nr.query_voxel == VoxelPoint{6, 4, 7});

  SUBCASE("translation-only tier") {
    MatcherConfig c;
    c.min_points = 1000;
    const auto r = match({5, 6, 4}, a, b, c);
    CHECK(r.method == MatchMethod::FixedPointTranslation);
    CHECK(r.query_real == Eigen::Vector3d(6, 4, 7));
    CHECK(!r.affine);
  }
  SUBCASE("no stable points falls back to nn") {
    const auto y = random_unit_volume(Dims{12, 12, 12}, 6, 52);
    MatcherConfig c;
    c.cube = 1;
    c.tau_dis = 1e-9;
    bool seen = false;
    for (int64_t i = 0; i < a.dims().count() && !seen; i += 13) {
      const auto t = a.dims().unlinear(i);
      const auto r = match(t, a, y, c);
      if (r.n_stable != 0) continue;
      seen = true;
      CHECK(r.method == MatchMethod::FixedPointFallbackNn);
      CHECK(r.query_voxel == nn_match(a, t, y).point);
    }
    CHECK(seen);
  }
  SUBCASE("clamped prediction") {
    // Voxels whose shifted copy leaves b are made duplicates of a(0,0,0), so
    // their traces end far away at (0,0,0); only exact pairs stay stable.
    auto aa = a;
    const std::vector<float> v0(a.at_linear(0).begin(), a.at_linear(0).end());
    for (int64_t i = 0; i < aa.dims().count(); ++i)
      if (aa.dims().unlinear(i).x >= 9) std::copy(v0.begin(), v0.end(), aa.at_linear(i).begin());
    const auto c = testutil::translate(aa, {0, 0, 3}, 53);
    MatcherConfig cfg;
    cfg.cube = 9;
    const auto r = match({6, 6, 11}, aa, c, cfg);
    CHECK(r.method == MatchMethod::FixedPoint);
    CHECK(r.clamped);
    CHECK(r.query_voxel.x == 11);
    CHECK(r.query_real[2] == 11.0);
  }
  CHECK_THROWS_AS(match({12, 0, 0}, a, a), Error);
}

TEST_CASE("self matching and translation equivariance on random volumes") {
  for (uint64_t s = 0; s < 5; ++s) {
    const auto a = random_unit_volume(Dims{8, 8, 8}, 4, 600 + s);
    for (int64_t i = 0; i < a.dims().count(); i += 37) {
      const auto t = a.dims().unlinear(i);
      CHECK(match(t, a, a).query_voxel == t);
    }
    const auto b = testutil::translate(a, {0, 1, -1}, 700 + s);
    const VoxelPoint t{3, 3, 4};
    CHECK(match(t, a, b).query_real == Eigen::Vector3d(3, 4, 3));
  }
}

TEST_CASE("affine warp of a smooth field") {
  const Dims d{24, 24, 24};
  const Spacing sp{2, 2, 2};
  PositionalFieldSpec spec{32, 3.0, 77};
  AugmentParams p;
  p.rotation_deg = {6, -4, 5};
  p.scale = {1.05, 0.95, 1.0};
  p.translation_mm = {2, -3, 1};
  const TruthMap truth(p, d, sp);
  const auto a = positional_field(d, sp, spec);
  // b(y) = a(truth^-1(y)), evaluated analytically at the source position.
  const auto b = positional_field(d, sp, spec, [&](const Eigen::Vector3d& y_vox) {
    return truth.inverse(y_vox * 2.0) / 2.0;
  });
  for (const VoxelPoint t : {VoxelPoint{12, 12, 12}, VoxelPoint{10, 13, 11}, VoxelPoint{14, 9, 12}}) {
    const Eigen::Vector3d expect = truth.apply(to_vec(t) * 2.0) / 2.0;
    const auto fp = match(t, a, b);
    MatcherConfig nn;
    nn.mode = MatchMode::Nn;
    const auto nr = match(t, a, b, nn);
    CHECK(fp.method == MatchMethod::FixedPoint);
    CHECK((fp.query_real - expect).norm() < 0.5);
    CHECK((fp.query_real - expect).norm() <= (nr.query_real - expect).norm() + 1e-12);
  }
}
