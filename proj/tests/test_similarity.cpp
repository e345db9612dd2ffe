#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "anatomatch/parallel.hpp"
#include "anatomatch/similarity.hpp"
#include "helpers.hpp"

using namespace anatomatch;
using testutil::brute_argmax;
using testutil::random_unit_volume;

TEST_CASE("similarity map") {
  const auto q = random_unit_volume(Dims{6, 6, 6}, 5, 2);
  const auto t = q.at_linear(q.dims().linear({2, 3, 4}));
  const auto m = similarity_map(t, q);
  REQUIRE(m.scores.size() == 216u);
  for (int64_t i = 0; i < 216; ++i) CHECK(m.scores[static_cast<size_t>(i)] == dot(t, q.at_linear(i)));
  CHECK(m.at({2, 3, 4}) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(nn_match_vector(t, q).point == VoxelPoint{2, 3, 4});

  EmbeddingVolume ortho(Dims{3, 3, 3}, 2, {}, true);
  for (int64_t i = 0; i < 27; ++i) ortho.at_linear(i)[1] = 1;
  const float e1[2] = {1, 0};
  for (double s : similarity_map(e1, ortho).scores) CHECK(s == 0.0);

  const auto box = similarity_map(t, q, SearchRegion::box({1, 1, 1}, {3, 9, 2}));
  CHECK(box.box.hi.y == 5);
  CHECK(box.scores.size() == 3u * 5u * 2u);

  CHECK_THROWS_AS(similarity_map(t, random_unit_volume(Dims{2, 2, 2}, 4, 1)), Error);
  CHECK_THROWS_AS(similarity_map(t, q, SearchRegion::box({7, 0, 0}, {9, 2, 2})), Error);
  CHECK_THROWS_AS(similarity_map(t, q, SearchRegion::box({3, 0, 0}, {2, 2, 2})), Error);
}

TEST_CASE("nn_match: self, translation, ties") {
  const auto a = random_unit_volume(Dims{7, 6, 8}, 6, 9);
  for (int64_t i = 0; i < a.dims().count(); i += 5) {
    const auto p = a.dims().unlinear(i);
    const auto r = nn_match(a, p, a);
    CHECK(r.point == p);
    CHECK(r.score == doctest::Approx(1.0).epsilon(1e-6));
  }

  const auto b = testutil::translate(a, {0, 0, 3}, 77);
  CHECK(nn_match(a, {3, 2, 1}, b).point == VoxelPoint{3, 2, 4});

  EmbeddingVolume tie(Dims{2, 2, 2}, 2, {}, true);
  for (int64_t i = 0; i < 8; ++i) tie.at_linear(i)[1] = 1;
  tie.at_linear(6)[0] = 1, tie.at_linear(6)[1] = 0;
  tie.at_linear(3)[0] = 1, tie.at_linear(3)[1] = 0;
  const float e1[2] = {1, 0};
  CHECK(nn_match_vector(e1, tie).point == tie.dims().unlinear(3));
}

TEST_CASE("nn_match equals brute force, scale invariant, worker invariant") {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 30; ++k) {
    const Dims d{1 + static_cast<int64_t>(rng() % 9), 1 + static_cast<int64_t>(rng() % 9),
                 1 + static_cast<int64_t>(rng() % 9)};
    auto q = random_unit_volume(d, 1 + static_cast<int>(rng() % 6), rng());
    // Duplicate some vectors to force ties.
    for (int r = 0; r < 3 && d.count() > 1; ++r) {
      const auto from = q.at_linear(static_cast<int64_t>(rng() % d.count()));
      const auto to = q.at_linear(static_cast<int64_t>(rng() % d.count()));
      std::copy(from.begin(), from.end(), to.begin());
    }
    const auto t = q.at_linear(static_cast<int64_t>(rng() % d.count()));
    const auto nn = nn_match_vector(t, q);
    CHECK(nn.point == brute_argmax(t, q));
    CHECK(std::abs(nn.score) <= 1 + 1e-5);

    std::vector<float> scaled(t.begin(), t.end());
    for (auto& v : scaled) v *= 3.5f;
    CHECK(nn_match_vector(scaled, q).point == nn.point);

    set_thread_count(1);
    const auto one = nn_match_vector(t, q);
    set_thread_count(4);
    const auto four = nn_match_vector(t, q);
    set_thread_count(0);
    CHECK(one == four);
  }
}

TEST_CASE("downsample and factor") {
  const auto f = random_unit_volume(Dims{8, 7, 6}, 4, 3);
  const auto c = downsample(f, 2);
  CHECK(c.dims() == Dims{4, 4, 3});
  CHECK(is_unit_norm(c));
  CHECK(downsample_factor(c.dims(), f.dims()) == 2);
  CHECK_THROWS_AS(downsample_factor(Dims{3, 4, 3}, f.dims()), Error);
}

TEST_CASE("coarse_to_fine") {
  const auto a = random_unit_volume(Dims{12, 12, 12}, 8, 21);
  const auto b = random_unit_volume(Dims{12, 12, 12}, 8, 22);
  const auto ac = downsample(a, 2), bc = downsample(b, 2);
  const VoxelPoint t{5, 6, 7};

  SUBCASE("exhaustive limit equals nn_match") {
    const auto r = coarse_to_fine_match(ac, a, t, bc, b, {static_cast<int>(bc.dims().count()), 25});
    CHECK(r.match == nn_match(a, t, b));
  }
  SUBCASE("true match is the unique coarse peak") {
    // t's coarse block in a and one coarse block of b both hold t's vector.
    auto aa = a, bb = b;
    const std::vector<float> tv(a.at_linear(a.dims().linear(t)).begin(), a.at_linear(a.dims().linear(t)).end());
    for (int64_t z = 4; z < 6; ++z)
      for (int64_t y = 6; y < 8; ++y)
        for (int64_t x = 6; x < 8; ++x) {
          auto dst = aa.at_linear(aa.dims().linear({z, y, x}));
          std::copy(tv.begin(), tv.end(), dst.begin());
        }
    for (int64_t z = 8; z < 10; ++z)
      for (int64_t y = 2; y < 4; ++y)
        for (int64_t x = 4; x < 6; ++x) {
          auto dst = bb.at_linear(bb.dims().linear({z, y, x}));
          std::copy(tv.begin(), tv.end(), dst.begin());
        }
    const auto r = coarse_to_fine_match(downsample(aa, 2), aa, t, downsample(bb, 2), bb, {1, 5});
    CHECK(r.match == nn_match(aa, t, bb));
    CHECK(r.match.point == VoxelPoint{8, 2, 4});
  }
  SUBCASE("result lies in a searched box") {
    const auto r = coarse_to_fine_match(ac, a, t, bc, b, {1, 3});
    bool in_box = false;
    for (const auto& box : r.searched) in_box = in_box || box.contains(r.match.point);
    CHECK(in_box);
    CHECK(r.searched.size() == 1u);
  }
  CHECK_THROWS_AS(coarse_to_fine_match(ac, a, t, random_unit_volume(Dims{5, 5, 5}, 8, 1), b), Error);
}
