// anatomatch command-line tool. Talks to the library exclusively through the C API.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "anatomatch/anatomatch.h"

using nlohmann::json;

namespace {

enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kValidation = 3, kIo = 4, kNumerical = 5 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(am_status s) {
  switch (s) {
    case AM_OK: return kOk;
    case AM_ERR_VALIDATION:
    case AM_ERR_BOUNDS: return kValidation;
    case AM_ERR_FORMAT:
    case AM_ERR_TRUNCATED:
    case AM_ERR_LENGTH:
    case AM_ERR_IO: return kIo;
    case AM_ERR_NUMERICAL: return kNumerical;
    case AM_ERR_INTERNAL: return kInternal;
  }
  return kInternal;
}

// Owns a string handed out by the library.
struct LibString {
  char* p = nullptr;
  ~LibString() { am_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct Failure {
  am_status status;
};

void check(am_status s) {
  if (s != AM_OK) throw Failure{s};
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!s.empty() && s.back() == ',') out.push_back("");
  return out;
}

template <class T>
std::vector<T> parse_triple(const std::string& s, const char* what) {
  const auto parts = split(s);
  if (parts.size() != 3) throw UsageError(std::string(what) + " must be three comma-separated values, got '" + s + "'");
  std::vector<T> out;
  for (const auto& p : parts) {
    size_t used = 0;
    try {
      if constexpr (std::is_integral_v<T>)
        out.push_back(static_cast<T>(std::stoll(p, &used)));
      else
        out.push_back(static_cast<T>(std::stod(p, &used)));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != p.size())
      throw UsageError(std::string(what) + ": '" + p + "' is not a valid number");
  }
  return out;
}

json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    std::exit(kIo);
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    std::cerr << "error: " << path << ": invalid JSON: " << e.what() << "\n";
    std::exit(kIo);
  }
}

std::optional<uint64_t> env_seed() {
  const char* s = std::getenv("ANATOMATCH_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw UsageError("ANATOMATCH_SEED must be a non-negative integer");
  return v;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out || !(out << text)) {
    std::cerr << "error: cannot write " << out_path << "\n";
    std::exit(kIo);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anatomatch: dense embedding correspondence with fixed-point matching"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "synthetic phantom volumes");
  phantom->require_subcommand(1);

  struct {
    uint64_t seed = 0;
    std::string dims = "64,64,64", spacing = "2,2,2", out;
    int classes = 6, structures = 10;
    double rmin = 6, rmax = 12, noise = 0;
  } gen;
  auto* gen_cmd = phantom->add_subcommand("gen", "generate one phantom");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--dims", gen.dims, "z,y,x voxels");
  gen_cmd->add_option("--spacing", gen.spacing, "z,y,x mm");
  gen_cmd->add_option("--classes", gen.classes);
  gen_cmd->add_option("--structures", gen.structures);
  gen_cmd->add_option("--radius-min", gen.rmin, "mm");
  gen_cmd->add_option("--radius-max", gen.rmax, "mm");
  gen_cmd->add_option("--noise", gen.noise);
  gen_cmd->add_option("--out", gen.out)->required();

  struct {
    uint64_t seed = 0;
    std::string config, dims, out;
    int points = 20;
  } pair;
  auto* pair_cmd = phantom->add_subcommand("pair", "phantom plus augmented view and ground truth");
  pair_cmd->add_option("--seed", pair.seed);
  pair_cmd->add_option("--config", pair.config, "JSON with phantom / params / ranges sections");
  pair_cmd->add_option("--dims", pair.dims, "z,y,x voxels");
  pair_cmd->add_option("--points", pair.points, "correspondences to sample");
  pair_cmd->add_option("--out", pair.out)->required();

  struct {
    uint64_t seed = 0;
    std::string intensity, labels, mode, center, center_mm, out;
    double radius = 0, gain = 1.5, amplitude = 2.0;
  } cor;
  auto* cor_cmd = phantom->add_subcommand("corrupt", "erase / intensity-shift / local-deform a region");
  cor_cmd->add_option("--intensity", cor.intensity)->required();
  cor_cmd->add_option("--labels", cor.labels)->required();
  cor_cmd->add_option("--mode", cor.mode, "erase-structure | intensity-shift | local-deform")->required();
  auto* c_vox = cor_cmd->add_option("--center", cor.center, "z,y,x voxels");
  auto* c_mm = cor_cmd->add_option("--center-mm", cor.center_mm, "z,y,x mm");
  c_vox->excludes(c_mm);
  cor_cmd->add_option("--radius-mm", cor.radius)->required();
  cor_cmd->add_option("--gain", cor.gain);
  cor_cmd->add_option("--amplitude-mm", cor.amplitude);
  cor_cmd->add_option("--seed", cor.seed);
  cor_cmd->add_option("--out", cor.out)->required();

  // match
  struct {
    std::string templ, query, point, mode = "fixedpoint", out;
    std::optional<int> cube, max_iter, min_points;
    std::optional<double> tau;
    bool traces = false;
  } m;
  auto* match_cmd = app.add_subcommand("match", "match a template point into a query volume");
  match_cmd->add_option("--template", m.templ)->required();
  match_cmd->add_option("--query", m.query)->required();
  match_cmd->add_option("--point", m.point, "z,y,x voxels")->required();
  match_cmd->add_option("--mode", m.mode, "nn | fixedpoint");
  match_cmd->add_option("--cube", m.cube, "odd cube edge L");
  match_cmd->add_option("--tau-dis", m.tau, "offset threshold, voxels");
  match_cmd->add_option("--max-iter", m.max_iter);
  match_cmd->add_option("--min-points", m.min_points);
  match_cmd->add_flag("--traces", m.traces, "include per-trace diagnostics");
  match_cmd->add_option("--out", m.out, "write the result here instead of stdout");

  // eval
  struct {
    std::string pred, truth, out;
  } ev;
  auto* eval_cmd = app.add_subcommand("eval", "CPM / MED summary of predictions");
  eval_cmd->add_option("--pred", ev.pred)->required();
  eval_cmd->add_option("--truth", ev.truth)->required();
  eval_cmd->add_option("--out", ev.out);

  // ablation
  struct {
    std::string config, out;
  } ab;
  auto* ab_cmd = app.add_subcommand("ablation", "four-row nn / semantic / fixed-point ablation");
  ab_cmd->add_option("--config", ab.config)->required();
  ab_cmd->add_option("--out", ab.out);

  // loss-check
  struct {
    uint64_t seed = 0;
    bool inject = false;
    std::string out;
  } lc;
  auto* lc_cmd = app.add_subcommand("loss-check", "gradient and closed-form checks of both losses");
  lc_cmd->add_option("--seed", lc.seed);
  lc_cmd->add_flag("--inject-wrong-gradient", lc.inject, "test hook: perturb analytic gradients");
  lc_cmd->add_option("--out", lc.out);

  // train-toy
  struct {
    std::string config, out;
  } tt;
  auto* tt_cmd = app.add_subcommand("train-toy", "train the toy projection heads");
  tt_cmd->add_option("--config", tt.config, "train config JSON (defaults when omitted)");
  tt_cmd->add_option("--out", tt.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    check(am_set_threads(threads));
    const std::optional<uint64_t> seed_override = env_seed();

    if (gen_cmd->parsed()) {
      const auto d = parse_triple<int64_t>(gen.dims, "--dims");
      const auto s = parse_triple<double>(gen.spacing, "--spacing");
      const json cfg = {{"dims", d},
                        {"spacing_mm", s},
                        {"num_classes", gen.classes},
                        {"n_structures", gen.structures},
                        {"radius_min_mm", gen.rmin},
                        {"radius_max_mm", gen.rmax},
                        {"noise_sigma", gen.noise},
                        {"seed", seed_override.value_or(gen.seed)}};
      LibString out;
      check(am_phantom_generate(cfg.dump().c_str(), gen.out.c_str(), &out.p));
      std::cout << out.str();
    } else if (pair_cmd->parsed()) {
      json cfg = pair.config.empty() ? json::object() : read_json(pair.config);
      if (!cfg.is_object()) throw UsageError("--config must hold a JSON object");
      if (!pair.dims.empty()) cfg["phantom"]["dims"] = parse_triple<int64_t>(pair.dims, "--dims");
      if (pair_cmd->count("--seed") || !cfg.contains("seed")) cfg["seed"] = pair.seed;
      if (seed_override) cfg["seed"] = *seed_override;
      if (pair_cmd->count("--points") || !cfg.contains("n_points")) cfg["n_points"] = pair.points;
      LibString out;
      check(am_phantom_pair(cfg.dump().c_str(), pair.out.c_str(), &out.p));
      std::cout << out.str();
    } else if (cor_cmd->parsed()) {
      json cfg = {{"intensity", cor.intensity},
                  {"labels", cor.labels},
                  {"mode", cor.mode},
                  {"radius_mm", cor.radius},
                  {"gain", cor.gain},
                  {"amplitude_mm", cor.amplitude},
                  {"seed", seed_override.value_or(cor.seed)}};
      if (!cor.center.empty()) cfg["center_voxel"] = parse_triple<int64_t>(cor.center, "--center");
      else if (!cor.center_mm.empty()) cfg["center_mm"] = parse_triple<double>(cor.center_mm, "--center-mm");
      else throw UsageError("one of --center or --center-mm is required");
      LibString out;
      check(am_phantom_corrupt(cfg.dump().c_str(), cor.out.c_str(), &out.p));
      std::cout << out.str();
    } else if (match_cmd->parsed()) {
      const auto p = parse_triple<int64_t>(m.point, "--point");
      if (m.mode != "nn" && m.mode != "fixedpoint") throw UsageError("--mode must be nn or fixedpoint");
      json cfg = {{"mode", m.mode}, {"keep_traces", m.traces}};
      if (m.cube) cfg["cube"] = *m.cube;
      if (m.tau) cfg["tau_dis"] = *m.tau;
      if (m.max_iter) cfg["max_iter"] = *m.max_iter;
      if (m.min_points) cfg["min_points"] = *m.min_points;
      const int64_t point[3] = {p[0], p[1], p[2]};
      LibString out;
      check(am_match_files(m.templ.c_str(), m.query.c_str(), point, cfg.dump().c_str(), &out.p));
      emit(out.str(), m.out);
    } else if (eval_cmd->parsed()) {
      LibString out, table;
      check(am_eval_files(ev.pred.c_str(), ev.truth.c_str(), &out.p, &table.p));
      emit(out.str(), ev.out);
      std::cerr << table.str();
    } else if (ab_cmd->parsed()) {
      json cfg = read_json(ab.config);
      if (!cfg.is_object()) throw UsageError("--config must hold a JSON object");
      if (seed_override) {
        cfg["seed"] = *seed_override;
        if (cfg.contains("train") && cfg["train"].is_object()) cfg["train"]["seed"] = *seed_override;
      }
      LibString out, table;
      check(am_ablation(cfg.dump().c_str(), &out.p, &table.p));
      emit(out.str(), ab.out);
      std::cerr << table.str();
    } else if (lc_cmd->parsed()) {
      LibString out;
      check(am_loss_check(seed_override.value_or(lc.seed), lc.inject ? 1 : 0, &out.p));
      emit(out.str(), lc.out);
      if (!json::parse(out.str()).value("all_passed", false)) {
        std::cerr << "loss-check: one or more checks failed\n";
        return kNumerical;
      }
    } else if (tt_cmd->parsed()) {
      json cfg = tt.config.empty() ? json::object() : read_json(tt.config);
      if (!cfg.is_object()) throw UsageError("--config must hold a JSON object");
      if (seed_override) cfg["seed"] = *seed_override;
      LibString out;
      check(am_train_toy(cfg.dump().c_str(), tt.out.c_str(), &out.p));
      std::cout << out.str();
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const Failure& f) {
    std::cerr << "error (" << am_status_name(f.status) << "): " << am_last_error() << "\n";
    return exit_code(f.status);
  }
  return kOk;
}
