#include "anatomatch/commands.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "anatomatch/parallel.hpp"
#include "anatomatch/random.hpp"

namespace anatomatch::commands {
namespace {

void require_dir(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(ErrorKind::Io, "output directory does not exist: " + dir.string());
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

json files_json(const fs::path& dir, std::initializer_list<const char*> names) {
  json out = json::array();
  for (const char* n : names) out.push_back((dir / n).string());
  return out;
}

EmbeddingVolume require_unit(EmbeddingVolume v, const char* what) {
  if (!v.normalized()) {
    require(is_unit_norm(v), std::string(what) + " is not a normalized embedding volume");
    v.set_normalized(true);
  }
  return v;
}

Eigen::Vector3d vec(const PhysPoint& p) { return {p.z, p.y, p.x}; }

bool inside(const Eigen::Vector3d& mm, const Dims& d, const Spacing& s) {
  return mm[0] >= 0 && mm[1] >= 0 && mm[2] >= 0 && mm[0] <= (d.z - 1) * s.z &&
         mm[1] <= (d.y - 1) * s.y && mm[2] <= (d.x - 1) * s.x;
}

}  // namespace

json read_json_file(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Format, path.string() + ": invalid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------- phantom

json phantom_gen(const PhantomConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  require_dir(out_dir);
  const Phantom ph = generate_phantom(cfg);
  write_volume(as_embedding(ph.intensity), out_dir / "intensity.aev");
  write_volume(ph.labels, out_dir / "labels.alv");
  json structures = json::array();
  for (const auto& s : ph.structures) structures.push_back(to_json(s));
  write_json(out_dir / "structures.json", {{"structures", structures}});
  return {{"command", "phantom gen"},
          {"config", to_json(cfg)},
          {"seed", cfg.seed},
          {"n_structures", ph.structures.size()},
          {"files", files_json(out_dir, {"intensity.aev", "labels.alv", "structures.json"})}};
}

json phantom_pair(const PairOptions& opt, const fs::path& out_dir) {
  PhantomConfig pc = opt.phantom;
  pc.seed = opt.seed;
  pc.validate();
  opt.ranges.validate();
  if (opt.params) opt.params->validate();
  require(opt.n_points >= 1, "n_points must be >= 1");
  require_dir(out_dir);

  const Phantom ph = generate_phantom(pc);
  const AugmentParams params = opt.params ? *opt.params : sample_augment_params(opt.ranges, mix_seed(opt.seed, 1));
  const AugmentedPair pair = augment(ph, params);
  const CorrespondenceSet set = sample_correspondences(pair, opt.n_points, mix_seed(opt.seed, 2));
  const json truth = correspondence_json(set, pair.truth);

  write_volume(as_embedding(pair.view_a), out_dir / "a.aev");
  write_volume(pair.labels_a, out_dir / "a.alv");
  write_volume(as_embedding(pair.view_b), out_dir / "b.aev");
  write_volume(pair.labels_b, out_dir / "b.alv");
  write_json(out_dir / "truth.json", truth);
  return {{"command", "phantom pair"},
          {"phantom", to_json(pc)},
          {"seed", opt.seed},
          {"augment", to_json(params)},
          {"transform", truth["transform"]},
          {"n_points", opt.n_points},
          {"files", files_json(out_dir, {"a.aev", "a.alv", "b.aev", "b.alv", "truth.json"})}};
}

json phantom_corrupt(const CorruptOptions& opt, const fs::path& out_dir) {
  require_dir(out_dir);
  const EmbeddingVolume in = read_embedding_volume(opt.intensity);
  require(in.channels() == 1, "corruption input must be a single-channel intensity volume");
  const LabelVolume labels = read_label_volume(opt.labels);
  const CorruptResult r = corrupt(as_scalar(in), labels, opt.corruption, opt.seed);
  write_volume(as_embedding(r.intensity), out_dir / "intensity.aev");
  write_volume(r.labels, out_dir / "labels.alv");
  json report = {{"command", "phantom corrupt"},
                 {"mode", to_string(opt.corruption.mode)},
                 {"center_mm", to_json(opt.corruption.center)},
                 {"radius_mm", opt.corruption.radius_mm},
                 {"seed", opt.seed},
                 {"files", files_json(out_dir, {"intensity.aev", "labels.alv"})}};
  if (opt.corruption.mode == CorruptionMode::IntensityShift) report["gain"] = opt.corruption.gain;
  if (r.deform) {
    const json d = {{"center_mm", to_json(r.deform->center)},
                    {"sigma_mm", r.deform->sigma_mm},
                    {"amplitude_mm", r.deform->amplitude_mm}};
    write_json(out_dir / "deform.json", d);
    report["deform"] = d;
    report["files"].push_back((out_dir / "deform.json").string());
  }
  return report;
}

// ---------------------------------------------------------------- match / eval

json match_files(const fs::path& templ, const fs::path& query, const VoxelPoint& point,
                 const MatcherConfig& cfg) {
  cfg.validate();
  const EmbeddingVolume a = require_unit(read_embedding_volume(templ), "template");
  const EmbeddingVolume b = require_unit(read_embedding_volume(query), "query");
  const MatchResult r = match(point, a, b, cfg);
  json j = to_json(r, b.spacing());
  j["template_point"] = to_json(point);
  j["config"] = to_json(cfg);
  return j;
}

EvalReport eval(const json& predictions, const json& truth) {
  const auto records = join_predictions(predictions, truth);
  const EvalSummary s = summarize(records);
  return {{{"summary", to_json(s)}}, summary_table({{"predictions", s}})};
}

// ---------------------------------------------------------------- ablation

void AblationConfig::validate() const {
  require(n_pairs >= 1, "n_pairs must be >= 1");
  require(points_per_pair >= 1, "points_per_pair must be >= 1");
  require(points_on_corrupted >= 0 && points_on_corrupted <= points_per_pair,
          "points_on_corrupted must be within [0, points_per_pair]");
  require(corruption_radius_scale > 0, "corruption_radius_scale must be > 0");
  require(shift_gain > 0, "shift_gain must be > 0");
  require(deform_amplitude_mm >= 0, "deform_amplitude_mm must be >= 0");
  require(unified_weight > 0 && unified_weight < 1, "unified_weight must be in (0, 1)");
  phantom.validate();
  augment.validate();
  matcher.validate();
  require(appearance_head.has_value() == semantic_head.has_value(),
          "give both head files or neither");
  require(appearance_head || train, "ablation needs either head files or a train section");
  if (train) train->validate();
}

AblationConfig ablation_config_from_json(const json& j) {
  check_keys(j, {"seed", "n_pairs", "points_per_pair", "points_on_corrupted", "phantom", "augment",
                 "corruption", "corruption_radius_scale", "shift_gain", "deform_amplitude_mm",
                 "unified_weight", "matcher", "train", "heads"},
             "ablation config");
  AblationConfig c;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    } catch (const json::exception&) {
      fail(ErrorKind::Validation, std::string("ablation field '") + key + "' has the wrong type");
    }
  };
  get("seed", c.seed);
  get("n_pairs", c.n_pairs);
  get("points_per_pair", c.points_per_pair);
  get("points_on_corrupted", c.points_on_corrupted);
  get("corruption", c.corruption);
  get("corruption_radius_scale", c.corruption_radius_scale);
  get("shift_gain", c.shift_gain);
  get("deform_amplitude_mm", c.deform_amplitude_mm);
  get("unified_weight", c.unified_weight);
  if (j.contains("phantom")) c.phantom = phantom_config_from_json(j["phantom"], c.phantom);
  if (j.contains("augment")) c.augment = augment_ranges_from_json(j["augment"], c.augment);
  if (j.contains("matcher")) c.matcher = matcher_config_from_json(j["matcher"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("heads")) {
    const json& h = j["heads"];
    check_keys(h, {"appearance", "semantic"}, "heads");
    require(h.contains("appearance") && h["appearance"].is_string() && h.contains("semantic") &&
                h["semantic"].is_string(),
            "heads needs 'appearance' and 'semantic' paths");
    c.appearance_head = h["appearance"].get<std::string>();
    c.semantic_head = h["semantic"].get<std::string>();
  }
  c.validate();
  return c;
}

json to_json(const AblationConfig& c) {
  json j = {{"seed", c.seed},
            {"n_pairs", c.n_pairs},
            {"points_per_pair", c.points_per_pair},
            {"points_on_corrupted", c.points_on_corrupted},
            {"phantom", anatomatch::to_json(c.phantom)},
            {"augment", anatomatch::to_json(c.augment)},
            {"corruption", c.corruption},
            {"corruption_radius_scale", c.corruption_radius_scale},
            {"shift_gain", c.shift_gain},
            {"deform_amplitude_mm", c.deform_amplitude_mm},
            {"unified_weight", c.unified_weight},
            {"matcher", anatomatch::to_json(c.matcher)}};
  if (c.train) j["train"] = anatomatch::to_json(*c.train);
  if (c.appearance_head)
    j["heads"] = {{"appearance", c.appearance_head->string()}, {"semantic", c.semantic_head->string()}};
  return j;
}

namespace {

constexpr const char* kRowNames[4] = {"nn", "nn+semantic", "fixedpoint", "fixedpoint+semantic"};

struct PointOutcome {
  std::string id, tag, mode;
  PhysPoint template_mm, truth_mm;
  double radius_mm = 0;
  std::array<MatchResult, 4> results;
};

std::vector<PointOutcome> run_ablation_pair(const AblationConfig& cfg, const ProjectionHead& app,
                                            const ProjectionHead& sem, int index) {
  const uint64_t base = mix_seed(cfg.seed, 1000 + static_cast<uint64_t>(index));
  PhantomConfig pc = cfg.phantom;
  pc.seed = mix_seed(base, 1);
  const Phantom ph = generate_phantom(pc);
  AugmentedPair pair = augment(ph, sample_augment_params(cfg.augment, mix_seed(base, 2)));

  static constexpr const char* kModes[4] = {"none", "erase-structure", "intensity-shift", "local-deform"};
  const int mode = cfg.corruption ? index % 4 : 0;
  std::mt19937_64 rng(mix_seed(base, 3));

  // Target structure: its centre must map into view b so the corruption lands on it.
  const Dims& d = pair.view_a.dims;
  const Spacing& s = pair.view_a.spacing;
  std::vector<size_t> eligible;
  for (size_t k = 0; k < pair.structures.size(); ++k) {
    const VoxelPoint c = to_voxel(pair.structures[k].center, s);
    if (d.contains(c) && pair.overlap[static_cast<size_t>(d.linear(c))]) eligible.push_back(k);
  }
  std::optional<Structure> target;
  if (!eligible.empty())
    target = pair.structures[eligible[std::uniform_int_distribution<size_t>(0, eligible.size() - 1)(rng)]];

  if (mode != 0 && target) {
    Corruption c;
    c.mode = static_cast<CorruptionMode>(mode - 1);
    const Eigen::Vector3d centre_b = pair.truth.apply(vec(target->center));
    c.center = {centre_b[0], centre_b[1], centre_b[2]};
    c.radius_mm = cfg.corruption_radius_scale * target->radius_mm *
                  std::cbrt(pair.truth.linear().determinant());
    c.gain = cfg.shift_gain;
    c.amplitude_mm = cfg.deform_amplitude_mm;
    if (inside(centre_b, pair.view_b.dims, pair.view_b.spacing))
      pair = corrupt_pair(pair, c, mix_seed(base, 4));
  }

  CorrespondenceSet points;
  const int n_target = target ? cfg.points_on_corrupted : 0;
  if (n_target > 0) {
    AugmentedPair only = pair;
    only.structures = {*target};
    try {
      points = sample_correspondences(only, n_target, mix_seed(base, 5));
    } catch (const Error&) {
      points.pairs.clear();
    }
  }
  const int rest = cfg.points_per_pair - static_cast<int>(points.pairs.size());
  if (rest > 0) {
    const auto more = sample_correspondences(pair, rest, mix_seed(base, 6));
    points.pairs.insert(points.pairs.end(), more.pairs.begin(), more.pairs.end());
  }

  const EmbeddingVolume fa = extract_features(pair.view_a);
  const EmbeddingVolume fb = extract_features(pair.view_b);
  const EmbeddingVolume app_a = embed(fa, app), app_b = embed(fb, app);
  const EmbeddingVolume uni_a = concat_unified(app_a, embed(fa, sem), cfg.unified_weight);
  const EmbeddingVolume uni_b = concat_unified(app_b, embed(fb, sem), cfg.unified_weight);

  MatcherConfig nn_cfg = cfg.matcher, fp_cfg = cfg.matcher;
  nn_cfg.mode = MatchMode::Nn;
  fp_cfg.mode = MatchMode::FixedPoint;
  nn_cfg.keep_traces = fp_cfg.keep_traces = false;

  std::vector<PointOutcome> out;
  for (size_t j = 0; j < points.pairs.size(); ++j) {
    const Correspondence& c = points.pairs[j];
    PointOutcome o;
    o.id = std::to_string(index) + "-" + std::to_string(j);
    o.tag = c.tag;
    o.mode = kModes[mode];
    o.template_mm = c.template_mm;
    o.truth_mm = c.truth_query_mm;
    o.radius_mm = c.radius_mm;
    const VoxelPoint t = to_voxel(c.template_mm, s);
    o.results[0] = match(t, app_a, app_b, nn_cfg);
    o.results[1] = match(t, uni_a, uni_b, nn_cfg);
    o.results[2] = match(t, app_a, app_b, fp_cfg);
    o.results[3] = match(t, uni_a, uni_b, fp_cfg);
    out.push_back(std::move(o));
  }
  return out;
}

json check_json(bool passed, bool strict) { return {{"passed", passed}, {"strict", strict}}; }

}  // namespace

AblationReport ablation(const AblationConfig& cfg) {
  cfg.validate();
  ProjectionHead app, sem;
  json training;
  if (cfg.appearance_head) {
    app = ProjectionHead::from_weights(read_head(*cfg.appearance_head));
    sem = ProjectionHead::from_weights(read_head(*cfg.semantic_head));
    require(app.in() == feature_count() && sem.in() == feature_count(),
            "head input width does not match the feature extractor");
    training = {{"source", "files"}};
  } else {
    const TrainResult tr = train(*cfg.train);
    if (tr.diverged) fail(ErrorKind::Numerical, "toy training diverged");
    app = tr.appearance;
    sem = tr.semantic;
    training = {{"source", "trained"}, {"steps", tr.history.size()}};
    if (!tr.history.empty()) {
      training["initial_loss"] = tr.history.front().total;
      training["final_loss"] = tr.history.back().total;
    }
  }

  std::vector<std::vector<PointOutcome>> per_pair(static_cast<size_t>(cfg.n_pairs));
  parallel_for(cfg.n_pairs, [&](int64_t i) {
    per_pair[static_cast<size_t>(i)] = run_ablation_pair(cfg, app, sem, static_cast<int>(i));
  });

  std::array<std::vector<EvalRecord>, 4> records;
  json points = json::array();
  for (const auto& pp : per_pair)
    for (const auto& o : pp) {
      json preds = json::object();
      for (int r = 0; r < 4; ++r) {
        const auto& m = o.results[static_cast<size_t>(r)];
        records[static_cast<size_t>(r)].push_back({o.id, m.query_mm, o.truth_mm, o.radius_mm, kRowNames[r]});
        preds[kRowNames[r]] = {{"predicted_mm", to_json(m.query_mm)},
                               {"method", to_string(m.method)},
                               {"error_mm", distance(m.query_mm, o.truth_mm)}};
      }
      points.push_back({{"id", o.id},
                        {"tag", o.tag},
                        {"corruption", o.mode},
                        {"template_mm", to_json(o.template_mm)},
                        {"truth_mm", to_json(o.truth_mm)},
                        {"radius_mm", o.radius_mm},
                        {"predictions", preds}});
    }

  std::vector<std::pair<std::string, EvalSummary>> rows;
  json rows_json = json::array();
  for (int r = 0; r < 4; ++r) {
    const EvalSummary s = summarize(records[static_cast<size_t>(r)]);
    rows.emplace_back(kRowNames[r], s);
    rows_json.push_back({{"method", kRowNames[r]}, {"summary", to_json(s)}});
  }

  // Per corruption mode CPM@Radius, for diagnosis.
  json by_mode = json::object();
  for (const char* mode : {"none", "erase-structure", "intensity-shift", "local-deform"}) {
    json m = json::object();
    for (int r = 0; r < 4; ++r) {
      std::vector<EvalRecord> sub;
      size_t k = 0;
      for (const auto& pp : per_pair)
        for (const auto& o : pp) {
          if (o.mode == mode) sub.push_back(records[static_cast<size_t>(r)][k]);
          ++k;
        }
      if (!sub.empty()) m[kRowNames[r]] = cpm(sub, std::nullopt);
    }
    if (!m.empty()) by_mode[mode] = m;
  }

  const double nn = rows[0].second.cpm_at_radius, nns = rows[1].second.cpm_at_radius;
  const double fp = rows[2].second.cpm_at_radius, fps = rows[3].second.cpm_at_radius;
  const double best = std::max({nn, nns, fp, fps});
  json checks = {
      {"a_fixedpoint_ge_nn", check_json(fp >= nn, fp > nn)},
      {"b_semantic_ge_appearance", check_json(nns >= nn && fps >= fp, nns > nn && fps > fp)},
      {"c_combined_is_max", check_json(fps >= best, fps > std::max({nn, nns, fp}))},
      {"d_combined_med_le_nn", check_json(rows[3].second.med.mean <= rows[0].second.med.mean,
                                          rows[3].second.med.mean < rows[0].second.med.mean)}};
  bool all = true;
  for (const auto& [k, v] : checks.items()) all = all && v["passed"].get<bool>();

  const std::string table = summary_table(rows);
  json report = {{"config", to_json(cfg)},
                 {"training", training},
                 {"n_records", records[0].size()},
                 {"rows", rows_json},
                 {"cpm_at_radius_by_corruption", by_mode},
                 {"checks", checks},
                 {"all_checks_passed", all},
                 {"table", table},
                 {"points", points}};
  return {report, table};
}

// ---------------------------------------------------------------- loss check

namespace {

RowMatrix random_unit_rows(std::mt19937_64& rng, int n, int c) {
  std::normal_distribution<double> g(0.0, 1.0);
  RowMatrix m(n, c);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k) m(i, k) = g(rng);
    m.row(i).normalize();
  }
  return m;
}

double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& f) {
  const double denom = std::max({a.norm(), f.norm(), 1e-300});
  return (a - f).norm() / denom;
}

constexpr double kFdEps = 1e-5;
constexpr double kFdTol = 1e-4;

// Central differences of loss() over every entry of m.
template <class Loss>
Eigen::VectorXd fd_gradient(RowMatrix& m, Loss loss) {
  Eigen::VectorXd g(m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    const double keep = v;
    v = keep + kFdEps;
    const double up = loss();
    v = keep - kFdEps;
    const double down = loss();
    v = keep;
    g[i] = (up - down) / (2 * kFdEps);
  }
  return g;
}

Eigen::VectorXd flat(const RowMatrix& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

}  // namespace

json loss_check(const LossCheckOptions& opt) {
  require(opt.batches >= 1, "batches must be >= 1");
  json checks = json::array();
  bool all = true;
  auto record = [&](const std::string& name, bool passed, json detail) {
    all = all && passed;
    checks.push_back({{"name", name}, {"passed", passed}, {"detail", std::move(detail)}});
  };

  // Finite-difference checks, one seeded stream per batch.
  std::vector<double> info_err(static_cast<size_t>(opt.batches)), sup_err(static_cast<size_t>(opt.batches));
  parallel_for(opt.batches, [&](int64_t b) {
    std::mt19937_64 rng(mix_seed(opt.seed, 500 + static_cast<uint64_t>(b)));
    PairBatch pb;
    pb.pos_a = random_unit_rows(rng, 4, 16);
    pb.pos_b = random_unit_rows(rng, 4, 16);
    for (int i = 0; i < 4; ++i) pb.negatives.push_back(random_unit_rows(rng, 8, 16));
    const auto res = infonce_loss(pb);
    Eigen::VectorXd analytic(0), numeric(0);
    auto append = [](Eigen::VectorXd& into, const Eigen::VectorXd& v) {
      Eigen::VectorXd t(into.size() + v.size());
      t << into, v;
      into = t;
    };
    auto loss = [&] { return infonce_loss(pb).loss; };
    append(analytic, flat(res.grad.pos_a));
    append(numeric, fd_gradient(pb.pos_a, loss));
    append(analytic, flat(res.grad.pos_b));
    append(numeric, fd_gradient(pb.pos_b, loss));
    for (int i = 0; i < 4; ++i) {
      append(analytic, flat(res.grad.negatives[static_cast<size_t>(i)]));
      append(numeric, fd_gradient(pb.negatives[static_cast<size_t>(i)], loss));
    }
    if (opt.inject_wrong_gradient) analytic *= 1.01;
    info_err[static_cast<size_t>(b)] = rel_error(analytic, numeric);

    LabeledBatch lb;
    lb.embeddings = random_unit_rows(rng, 12, 8);
    lb.num_classes = 3;
    for (int i = 0; i < 12; ++i) lb.labels.push_back(i % 3);
    std::shuffle(lb.labels.begin(), lb.labels.end(), rng);
    Eigen::VectorXd sa = flat(prototypical_supcon_loss(lb).grad);
    if (opt.inject_wrong_gradient) sa *= 1.01;
    const Eigen::VectorXd sn = fd_gradient(lb.embeddings, [&] { return prototypical_supcon_loss(lb).loss; });
    sup_err[static_cast<size_t>(b)] = rel_error(sa, sn);
  });
  const double info_max = *std::max_element(info_err.begin(), info_err.end());
  const double sup_max = *std::max_element(sup_err.begin(), sup_err.end());
  record("infonce_gradient_fd", info_max < kFdTol,
         {{"batches", opt.batches}, {"max_rel_error", info_max}, {"tolerance", kFdTol}, {"eps", kFdEps}});
  record("supcon_gradient_fd", sup_max < kFdTol,
         {{"batches", opt.batches}, {"max_rel_error", sup_max}, {"tolerance", kFdTol}, {"eps", kFdEps}});

  // Closed forms.
  {
    PairBatch pb;
    pb.pos_a = RowMatrix::Zero(1, 2);
    pb.pos_a(0, 0) = 1;
    pb.pos_b = pb.pos_a;
    pb.negatives = {pb.pos_a};
    const double v = infonce_loss(pb).loss;
    record("infonce_symmetric_log2", std::abs(v - std::log(2.0)) <= 1e-9,
           {{"value", v}, {"expected", std::log(2.0)}});
    pb.negatives = {RowMatrix(0, 2)};
    const double z = infonce_loss(pb).loss;
    record("infonce_single_pair_zero", std::abs(z) <= 1e-9, {{"value", z}, {"expected", 0.0}});
  }
  for (int n : {1, 2, 10}) {
    LabeledBatch lb;
    lb.embeddings = RowMatrix::Zero(n, 4);
    lb.embeddings.col(1).setOnes();
    lb.labels.assign(static_cast<size_t>(n), 0);
    const double v = prototypical_supcon_loss(lb).loss;
    const double e = std::log(static_cast<double>(n));
    record("supcon_identical_log_n=" + std::to_string(n), std::abs(v - e) <= 1e-9,
           {{"value", v}, {"expected", e}});
  }

  // Counted similarity evaluations.
  json table = json::array();
  bool counts_ok = true;
  for (int n : {32, 64, 128}) {
    const int k = 4;
    std::mt19937_64 rng(mix_seed(opt.seed, 900 + static_cast<uint64_t>(n)));
    LabeledBatch lb;
    lb.embeddings = random_unit_rows(rng, n, 16);
    lb.num_classes = k;
    for (int i = 0; i < n; ++i) lb.labels.push_back(i % k);
    const int64_t proto = prototypical_supcon_loss(lb).similarity_evals;
    const int64_t ref = supcon_reference_loss(lb).similarity_evals;
    const int64_t e_proto = static_cast<int64_t>(n) * k, e_ref = static_cast<int64_t>(n) * (n - 1);
    counts_ok = counts_ok && proto == e_proto && ref == e_ref;
    table.push_back({{"n", n},
                     {"K", k},
                     {"prototypical_evals", proto},
                     {"n_times_K", e_proto},
                     {"reference_evals", ref},
                     {"n_times_n_minus_1", e_ref}});
  }
  record("complexity_counts", counts_ok, {{"table", table}});

  return {{"seed", opt.seed},
          {"inject_wrong_gradient", opt.inject_wrong_gradient},
          {"checks", checks},
          {"complexity", table},
          {"all_passed", all}};
}

// ---------------------------------------------------------------- training

json train_toy(const TrainConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  require_dir(out_dir);
  const TrainResult r = train(cfg);
  write_text_file(out_dir / "loss_history.csv", history_csv(r.history));
  if (r.diverged)
    fail(ErrorKind::Numerical, "training diverged at step " + std::to_string(r.history.back().step));
  write_head(r.appearance.to_weights(), out_dir / "appearance.aph");
  write_head(r.semantic.to_weights(), out_dir / "semantic.aph");

  json report = {{"command", "train-toy"},
                 {"config", to_json(cfg)},
                 {"steps_run", r.history.size()},
                 {"files", files_json(out_dir, {"appearance.aph", "semantic.aph", "loss_history.csv"})}};
  if (!r.history.empty()) {
    // Initial = loss at the initial weights; final = mean over the last steps,
    // since single-batch losses are noisy.
    const size_t w = std::min<size_t>(20, r.history.size());
    double last = 0;
    for (size_t i = r.history.size() - w; i < r.history.size(); ++i)
      last += r.history[i].total / static_cast<double>(w);
    const double first = r.history.front().total;
    report["initial_loss"] = first;
    report["final_loss"] = r.history.back().total;
    report["final_window"] = w;
    report["final_window_mean"] = last;
    report["relative_decrease"] = first != 0 ? (first - last) / first : 0.0;
  }
  return report;
}

}  // namespace anatomatch::commands
