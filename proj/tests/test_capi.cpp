// Exercises the shared library through the C header only.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "anatomatch/anatomatch.h"

namespace fs = std::filesystem;

namespace {

struct Dir {
  fs::path path;
  Dir() {
    path = fs::temp_directory_path() / ("anatomatch_capi_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~Dir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const char* n) const { return (path / n).string(); }
};

std::vector<float> random_unit(int64_t voxels, int c, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> g(0, 1);
  std::vector<float> d(static_cast<size_t>(voxels * c));
  for (int64_t i = 0; i < voxels; ++i) {
    double n = 0;
    for (int k = 0; k < c; ++k) {
      float& x = d[static_cast<size_t>(i * c + k)];
      x = g(rng);
      n += static_cast<double>(x) * x;
    }
    for (int k = 0; k < c; ++k) d[static_cast<size_t>(i * c + k)] = static_cast<float>(d[static_cast<size_t>(i * c + k)] / std::sqrt(n));
  }
  return d;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  am_string_free(s);
  return out;
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(am_version()).size() > 0);
  CHECK(std::string(am_status_name(AM_OK)) == "ok");
  CHECK(std::string(am_status_name(AM_ERR_TRUNCATED)) == "truncated");
  CHECK(am_set_threads(-1) == AM_ERR_VALIDATION);
  CHECK(std::string(am_last_error()).size() > 0);
  CHECK(am_set_threads(0) == AM_OK);
}

TEST_CASE("volume lifecycle") {
  const int64_t dims[3] = {4, 5, 6};
  const double sp[3] = {2, 2, 2};
  const auto data = random_unit(120, 8, 1);
  am_volume* v = nullptr;
  REQUIRE(am_volume_create(dims, 8, sp, data.data(), 1, &v) == AM_OK);

  int64_t got[3];
  int ch = 0;
  CHECK(am_volume_dims(v, got, &ch) == AM_OK);
  CHECK(got[1] == 5);
  CHECK(ch == 8);
  CHECK(std::memcmp(am_volume_data(v), data.data(), data.size() * 4) == 0);

  float e[8];
  const int64_t p[3] = {1, 2, 3};
  CHECK(am_volume_at(v, p, e, 8) == AM_OK);
  CHECK(e[0] == data[static_cast<size_t>(((1 * 5 + 2) * 6 + 3) * 8)]);
  const int64_t bad[3] = {1, 5, 0};
  CHECK(am_volume_at(v, bad, e, 8) == AM_ERR_BOUNDS);
  CHECK(std::string(am_last_error()).find('y') != std::string::npos);
  CHECK(am_volume_at(v, p, e, 4) == AM_ERR_VALIDATION);

  Dir dir;
  CHECK(am_volume_write(v, (dir / "v.aev").c_str()) == AM_OK);
  am_volume* back = nullptr;
  REQUIRE(am_volume_read((dir / "v.aev").c_str(), &back) == AM_OK);
  CHECK(std::memcmp(am_volume_data(back), data.data(), data.size() * 4) == 0);

  am_volume* missing = nullptr;
  CHECK(am_volume_read((dir / "nope.aev").c_str(), &missing) == AM_ERR_IO);
  {
    FILE* f = std::fopen((dir / "short.aev").c_str(), "wb");
    std::fwrite("AEV1\x50", 1, 5, f);
    std::fclose(f);
  }
  CHECK(am_volume_read((dir / "short.aev").c_str(), &missing) == AM_ERR_TRUNCATED);
  {
    FILE* f = std::fopen((dir / "junk.aev").c_str(), "wb");
    std::fwrite("JUNKJUNKJUNK", 1, 12, f);
    std::fclose(f);
  }
  CHECK(am_volume_read((dir / "junk.aev").c_str(), &missing) == AM_ERR_FORMAT);

  std::vector<float> raw(120 * 8, 0.0f);
  raw[0] = 3;
  raw[1] = 4;
  am_volume* r = nullptr;
  REQUIRE(am_volume_create(dims, 8, sp, raw.data(), 0, &r) == AM_OK);
  am_volume* n = nullptr;
  int64_t zeros = 0;
  CHECK(am_volume_normalize(r, &n, &zeros) == AM_OK);
  CHECK(zeros == 119);
  CHECK(am_volume_data(n)[0] == doctest::Approx(0.6));
  am_volume* bogus = nullptr;
  CHECK(am_volume_create(dims, 8, sp, raw.data(), 1, &bogus) == AM_ERR_VALIDATION);

  am_volume* u = nullptr;
  CHECK(am_volume_concat(v, back, 0.5, &u) == AM_OK);
  CHECK(am_volume_dims(u, got, &ch) == AM_OK);
  CHECK(ch == 16);
  CHECK(am_volume_concat(v, r, 0.5, &u) == AM_ERR_VALIDATION);  // r is not normalized

  for (am_volume* x : {v, back, r, n, u}) am_volume_free(x);
  am_volume_free(nullptr);
}

TEST_CASE("matching through the C API") {
  const int64_t dims[3] = {6, 6, 6};
  const auto data = random_unit(216, 8, 2);
  am_volume* v = nullptr;
  REQUIRE(am_volume_create(dims, 8, nullptr, data.data(), 1, &v) == AM_OK);
  const int64_t p[3] = {2, 3, 4};
  char* out = nullptr;
  REQUIRE(am_match(v, v, p, R"({"mode":"nn"})", &out) == AM_OK);
  const std::string nn = take(out);
  CHECK(nn.find("\"query_voxel\": [\n    2,\n    3,\n    4\n  ]") != std::string::npos);
  REQUIRE(am_match(v, v, p, nullptr, &out) == AM_OK);
  const std::string fp = take(out);
  CHECK(fp.find("\"method\": \"fixedpoint\"") != std::string::npos);
  CHECK(am_match(v, v, p, R"({"cubee":3})", &out) == AM_ERR_VALIDATION);
  CHECK(am_match(v, v, p, "{not json", &out) == AM_ERR_VALIDATION);
  const int64_t far[3] = {0, 0, 6};
  CHECK(am_match(v, v, far, nullptr, &out) == AM_ERR_BOUNDS);
  CHECK(am_match(nullptr, v, p, nullptr, &out) == AM_ERR_VALIDATION);

  Dir dir;
  CHECK(am_volume_write(v, (dir / "v.aev").c_str()) == AM_OK);
  REQUIRE(am_match_files((dir / "v.aev").c_str(), (dir / "v.aev").c_str(), p, R"({"mode":"nn"})", &out) == AM_OK);
  CHECK(take(out).find("\"template_point\"") != std::string::npos);
  am_volume_free(v);
}

TEST_CASE("experiment entry points") {
  Dir dir;
  char* out = nullptr;
  const char* phantom = R"({"dims":[20,20,20],"num_classes":3,"n_structures":3,"radius_min_mm":4,"radius_max_mm":6,"seed":2})";
  REQUIRE(am_phantom_generate(phantom, dir.path.c_str(), &out) == AM_OK);
  CHECK(take(out).find("structures.json") != std::string::npos);
  am_labels* l = nullptr;
  REQUIRE(am_labels_read((dir / "labels.alv").c_str(), &l) == AM_OK);
  int64_t d[3];
  int k = 0;
  CHECK(am_labels_dims(l, d, &k) == AM_OK);
  CHECK(k == 4);
  CHECK(d[0] == 20);
  CHECK(am_labels_write(l, (dir / "copy.alv").c_str()) == AM_OK);
  am_labels_free(l);
  CHECK(am_phantom_generate(phantom, (dir / "missing").c_str(), &out) == AM_ERR_IO);

  const std::string pair = std::string(R"({"phantom":)") + phantom + R"(,"seed":4,"n_points":5})";
  REQUIRE(am_phantom_pair(pair.c_str(), dir.path.c_str(), &out) == AM_OK);
  take(out);

  const std::string corrupt = R"({"intensity":")" + (dir / "a.aev") + R"(","labels":")" + (dir / "a.alv") +
                              R"(","mode":"intensity-shift","center_voxel":[10,10,10],"radius_mm":6,"gain":1.5})";
  Dir cdir;
  REQUIRE(am_phantom_corrupt(corrupt.c_str(), cdir.path.c_str(), &out) == AM_OK);
  CHECK(take(out).find("\"gain\": 1.5") != std::string::npos);

  const std::string truth = R"({"pairs":[{"id":"0","truth_query":[1,2,3],"radius_mm":5}]})";
  const std::string pred = R"({"predictions":[{"id":"0","predicted_mm":[1,2,3]}]})";
  char* table = nullptr;
  REQUIRE(am_eval(pred.c_str(), truth.c_str(), &out, &table) == AM_OK);
  CHECK(take(out).find("\"cpm_at_radius\": 100.0") != std::string::npos);
  CHECK(take(table).find("CPM@10mm") != std::string::npos);
  CHECK(am_eval(R"({"predictions":[]})", truth.c_str(), &out, nullptr) == AM_ERR_VALIDATION);
  CHECK(am_eval_files((dir / "none.json").c_str(), (dir / "truth.json").c_str(), &out, nullptr) == AM_ERR_IO);

  REQUIRE(am_loss_check(0, 0, &out) == AM_OK);
  CHECK(take(out).find("\"all_passed\": true") != std::string::npos);

  Dir tdir;
  REQUIRE(am_train_toy(R"({"steps":0})", tdir.path.c_str(), &out) == AM_OK);
  take(out);
  CHECK(fs::exists(tdir.path / "semantic.aph"));
  CHECK(am_train_toy(R"({"steps":-1})", tdir.path.c_str(), &out) == AM_ERR_VALIDATION);
}
