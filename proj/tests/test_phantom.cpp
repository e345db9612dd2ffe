#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>

#include "anatomatch/phantom.hpp"
#include "anatomatch/random.hpp"

using namespace anatomatch;

namespace {

PhantomConfig small_config(uint64_t seed) {
  PhantomConfig c;
  c.dims = {32, 32, 32};
  c.spacing = {2, 2, 2};
  c.num_classes = 6;
  c.n_structures = 6;
  c.radius_min_mm = 5;
  c.radius_max_mm = 8;
  c.seed = seed;
  return c;
}

Eigen::Vector3d v3(const PhysPoint& p) { return {p.z, p.y, p.x}; }

bool in_extent(const PhysPoint& p, const Dims& d, const Spacing& s) {
  return p.z >= 0 && p.y >= 0 && p.x >= 0 && p.z <= (d.z - 1) * s.z && p.y <= (d.y - 1) * s.y &&
         p.x <= (d.x - 1) * s.x;
}

}  // namespace

TEST_CASE("phantom generation is deterministic and labelled") {
  const auto a = generate_phantom(small_config(3));
  const auto b = generate_phantom(small_config(3));
  CHECK(a.intensity == b.intensity);
  CHECK(a.labels == b.labels);
  CHECK(a.labels.num_classes() == 7);
  CHECK(a.structures.size() == 6u);
  CHECK(!(generate_phantom(small_config(4)).intensity == a.intensity));

  auto none = small_config(1);
  none.n_structures = 0;
  const auto e = generate_phantom(none);
  for (auto l : e.labels.data()) CHECK(l == 0);

  auto packed = small_config(1);
  packed.n_structures = 500;
  CHECK_THROWS_AS(generate_phantom(packed), Error);
  packed.n_structures = -1;
  CHECK_THROWS_AS(generate_phantom(packed), Error);
}

TEST_CASE("classes 1 and 2 overlap in intensity") {
  auto cfg = small_config(5);
  cfg.dims = {40, 40, 40};
  cfg.n_structures = 12;
  cfg.noise_sigma = 0.02;
  const auto ph = generate_phantom(cfg);
  constexpr int kBins = 32;
  const double lo = 0.3, hi = 1.0;
  std::array<std::array<double, kBins>, 2> h{};
  std::array<double, 2> n{};
  for (int64_t i = 0; i < cfg.dims.count(); ++i) {
    const int c = ph.labels[i];
    if (c != 1 && c != 2) continue;
    int bin = static_cast<int>((ph.intensity[i] - lo) / (hi - lo) * kBins);
    bin = std::clamp(bin, 0, kBins - 1);
    h[static_cast<size_t>(c - 1)][static_cast<size_t>(bin)] += 1;
    n[static_cast<size_t>(c - 1)] += 1;
  }
  REQUIRE(n[0] > 0);
  REQUIRE(n[1] > 0);
  double bc = 0;
  for (int k = 0; k < kBins; ++k) bc += std::sqrt(h[0][static_cast<size_t>(k)] / n[0] * h[1][static_cast<size_t>(k)] / n[1]);
  CHECK(bc > 0.5);
  CHECK(class_intensity(1) == class_intensity(2));
}

TEST_CASE("augment identity and translation") {
  const auto ph = generate_phantom(small_config(7));
  AugmentParams id;
  const auto p = augment(ph, id);
  CHECK(p.view_b == ph.intensity);
  CHECK(p.labels_b == ph.labels);

  AugmentParams t;
  t.translation_mm = {4, -2, 6};  // whole voxels
  const auto q = augment(ph, t);
  const auto& d = ph.intensity.dims;
  int checked = 0;
  for (int64_t i = 0; i < d.count(); i += 3) {
    const auto v = d.unlinear(i);
    const VoxelPoint w{v.z + 2, v.y - 1, v.x + 3};
    if (!d.contains(w)) continue;
    CHECK(std::abs(q.view_b[d.linear(w)] - ph.intensity[i]) < 1e-5);
    CHECK(q.labels_b[d.linear(w)] == ph.labels[i]);
    ++checked;
  }
  CHECK(checked > 1000);
}

TEST_CASE("truth map matches the matrix form") {
  AugmentRanges r;
  const Dims d{32, 32, 32};
  const Spacing s{2, 2, 2};
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const auto params = sample_augment_params(r, seed);
    const TruthMap m(params, d, s);
    Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
    for (int k = 0; k < 3; ++k) S(k, k) = params.scale[static_cast<size_t>(k)];
    const Eigen::Matrix3d A = rotation_matrix(params.rotation_deg) * S;
    const Eigen::Vector3d c(31.0, 31.0, 31.0);
    const Eigen::Vector3d t(params.translation_mm[0], params.translation_mm[1], params.translation_mm[2]);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 62);
    for (int k = 0; k < 100; ++k) {
      const Eigen::Vector3d p(u(rng), u(rng), u(rng));
      CHECK((m.apply(p) - (A * (p - c) + c + t)).norm() < 1e-9);
      CHECK((m.inverse(m.apply(p)) - p).norm() < 1e-9);
    }
    CHECK(std::abs(rotation_matrix(params.rotation_deg).determinant() - 1) < 1e-12);
  }
}

TEST_CASE("Dirac impulse lands at the mapped location") {
  const Dims d{24, 24, 24};
  const Spacing s{2, 2, 2};
  AugmentRanges r;
  r.noise_sigma = 0;
  r.blur_sigma = 0;
  for (uint64_t seed = 0; seed < 6; ++seed) {
    const auto params = sample_augment_params(r, seed + 100);
    const TruthMap m(params, d, s);
    const VoxelPoint src{12, 11, 13};
    ScalarVolume v(d, s);
    v[d.linear(src)] = 1.0f;
    const auto w = warp_scalar(v, m);
    int64_t arg = 0;
    for (int64_t i = 1; i < d.count(); ++i)
      if (w[i] > w[arg]) arg = i;
    const auto got = d.unlinear(arg);
    const Eigen::Vector3d expect = m.apply(Eigen::Vector3d(24, 22, 26)) / 2.0;
    CHECK(std::abs(got.z - expect[0]) <= 1.0);
    CHECK(std::abs(got.y - expect[1]) <= 1.0);
    CHECK(std::abs(got.x - expect[2]) <= 1.0);
  }
}

TEST_CASE("corruption modes") {
  const auto ph = generate_phantom(small_config(9));
  const auto& st = ph.structures[0];
  Corruption c;
  c.center = st.center;
  c.radius_mm = st.radius_mm * 1.25;

  SUBCASE("erase keeps labels and changes structure voxels") {
    c.mode = CorruptionMode::EraseStructure;
    const auto r = corrupt(ph.intensity, ph.labels, c, 1);
    CHECK(r.labels == ph.labels);
    int changed = 0;
    for (int64_t i = 0; i < ph.intensity.dims.count(); ++i) {
      if (r.intensity[i] != ph.intensity[i]) {
        CHECK(ph.labels[i] != 0);
        ++changed;
      }
    }
    CHECK(changed > 0);
    CHECK(corrupt(ph.intensity, ph.labels, c, 1).intensity == r.intensity);
  }
  SUBCASE("intensity shift multiplies by the gain") {
    c.mode = CorruptionMode::IntensityShift;
    c.gain = 1.5;
    const auto r = corrupt(ph.intensity, ph.labels, c, 1);
    const auto& d = ph.intensity.dims;
    const auto idx = d.linear(to_voxel(st.center, ph.intensity.spacing));
    const double ratio = r.intensity[idx] / ph.intensity[idx];
    CHECK(std::abs(ratio - 1.5) <= 0.015);
    CHECK(r.labels == ph.labels);
  }
  SUBCASE("local deform moves the structure and records the bump") {
    c.mode = CorruptionMode::LocalDeform;
    c.amplitude_mm = 3;
    const auto r = corrupt(ph.intensity, ph.labels, c, 2);
    REQUIRE(r.deform.has_value());
    CHECK(!(r.intensity == ph.intensity));
  }
  SUBCASE("empty region is the identity") {
    for (auto m : {CorruptionMode::EraseStructure, CorruptionMode::IntensityShift, CorruptionMode::LocalDeform}) {
      c.mode = m;
      c.radius_mm = 0;
      const auto r = corrupt(ph.intensity, ph.labels, c, 3);
      CHECK(r.intensity == ph.intensity);
      CHECK(r.labels == ph.labels);
      CHECK(!r.deform);
    }
  }
  SUBCASE("centre outside the volume") {
    c.center = {-50, 0, 0};
    CHECK_THROWS_AS(corrupt(ph.intensity, ph.labels, c, 1), Error);
  }
  CHECK(parse_corruption_mode("intensity-shift") == CorruptionMode::IntensityShift);
  CHECK(std::string(to_string(CorruptionMode::LocalDeform)) == "local-deform");
  CHECK_THROWS_AS(parse_corruption_mode("melt"), Error);
}

TEST_CASE("correspondences stay in bounds and label centroids follow the truth map") {
  auto cfg = small_config(11);
  const auto ph = generate_phantom(cfg);
  AugmentRanges r;
  r.noise_sigma = 0;
  r.blur_sigma = 0;
  r.max_rotation_deg = 10;
  r.scale_min = 0.9;
  r.scale_max = 1.1;
  r.max_translation_mm = 4;
  const auto pair = augment(ph, sample_augment_params(r, 5));
  const auto set = sample_correspondences(pair, 1000, 6);
  REQUIRE(set.pairs.size() == 1000u);
  for (const auto& c : set.pairs) {
    CHECK(in_extent(c.truth_query_mm, cfg.dims, cfg.spacing));
    CHECK(in_extent(c.template_mm, cfg.dims, cfg.spacing));
    CHECK(c.radius_mm > 0);
  }
  const auto again = sample_correspondences(pair, 1000, 6);
  CHECK(again.pairs[17].template_mm == set.pairs[17].template_mm);

  // Each class appears once (6 structures, 6 classes), so classes identify structures.
  for (const auto& st : ph.structures) {
    const Eigen::Vector3d mapped = pair.truth.apply(v3(st.center));
    if (!in_extent({mapped[0], mapped[1], mapped[2]}, cfg.dims, cfg.spacing)) continue;
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    int64_t n = 0;
    bool touches_edge = false;
    for (int64_t i = 0; i < cfg.dims.count(); ++i) {
      if (pair.labels_b[i] != st.cls) continue;
      const auto v = cfg.dims.unlinear(i);
      touches_edge = touches_edge || v.z == 0 || v.y == 0 || v.x == 0 || v.z == 31 || v.y == 31 || v.x == 31;
      sum += Eigen::Vector3d(static_cast<double>(v.z), static_cast<double>(v.y), static_cast<double>(v.x));
      ++n;
    }
    if (n == 0 || touches_edge) continue;
    const Eigen::Vector3d centroid = sum / static_cast<double>(n);
    CHECK((centroid - mapped / 2.0).cwiseAbs().maxCoeff() <= 1.0);
  }
}

TEST_CASE("positional field is unit norm and smooth") {
  const auto f = positional_field({8, 8, 8}, {2, 2, 2}, {16, 2.0, 3});
  CHECK(f.channels() == 16);
  CHECK(is_unit_norm(f, 1e-5));
  const auto near = dot(f.at_linear(f.dims().linear({4, 4, 4})), f.at_linear(f.dims().linear({4, 4, 5})));
  const auto far = dot(f.at_linear(f.dims().linear({4, 4, 4})), f.at_linear(f.dims().linear({0, 0, 0})));
  CHECK(near > far);
}
