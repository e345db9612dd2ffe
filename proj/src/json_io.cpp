#include "anatomatch/json_io.hpp"

#include <map>
#include <set>

namespace anatomatch {
namespace {

template <class T>
T get_or(const json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Validation, std::string("field '") + key + "' has the wrong type");
  }
}

template <class T>
T get_req(const json& j, const char* key, const char* what) {
  if (!j.is_object() || !j.contains(key))
    fail(ErrorKind::Validation, std::string(what) + ": missing field '" + key + "'");
  return get_or<T>(j, key, T{});
}

std::array<double, 3> triple(const json& j, const char* key, std::array<double, 3> fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = get_or<std::vector<double>>(j, key, {});
  require(v.size() == 3, std::string("field '") + key + "' must have three entries");
  return {v[0], v[1], v[2]};
}

}  // namespace

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  require(j.is_object(), std::string(what) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    require(ok, std::string(what) + ": unknown key '" + k + "'");
  }
}

json to_json(const VoxelPoint& p) { return json::array({p.z, p.y, p.x}); }
json to_json(const PhysPoint& p) { return json::array({p.z, p.y, p.x}); }

PhysPoint phys_from_json(const json& j, const char* what) {
  require(j.is_array() && j.size() == 3, std::string(what) + " must be [z, y, x]");
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  } catch (const json::exception&) {
    fail(ErrorKind::Validation, std::string(what) + " must hold numbers");
  }
}

VoxelPoint voxel_from_json(const json& j, const char* what) {
  require(j.is_array() && j.size() == 3, std::string(what) + " must be [z, y, x]");
  for (const auto& v : j) require(v.is_number_integer(), std::string(what) + " must hold integers");
  return {j[0].get<int64_t>(), j[1].get<int64_t>(), j[2].get<int64_t>()};
}

json to_json(const MatcherConfig& c) {
  return {{"mode", to_string(c.mode)}, {"cube", c.cube},         {"tau_dis", c.tau_dis},
          {"max_iter", c.max_iter},    {"min_points", c.min_points}};
}

MatcherConfig matcher_config_from_json(const json& j) {
  check_keys(j, {"mode", "cube", "tau_dis", "max_iter", "min_points", "keep_traces"}, "matcher config");
  MatcherConfig c;
  c.mode = parse_match_mode(get_or<std::string>(j, "mode", to_string(c.mode)));
  c.cube = get_or(j, "cube", c.cube);
  c.tau_dis = get_or(j, "tau_dis", c.tau_dis);
  c.max_iter = get_or(j, "max_iter", c.max_iter);
  c.min_points = get_or(j, "min_points", c.min_points);
  c.keep_traces = get_or(j, "keep_traces", c.keep_traces);
  c.validate();
  return c;
}

json to_json(const MatchResult& r, const Spacing& s) {
  json j = {{"query_voxel", to_json(r.query_voxel)},
            {"query_real_voxel", json::array({r.query_real[0], r.query_real[1], r.query_real[2]})},
            {"query_mm", to_json(r.query_mm)},
            {"spacing_mm", json::array({s.z, s.y, s.x})},
            {"clamped", r.clamped},
            {"method", to_string(r.method)},
            {"n_traces", r.n_traces},
            {"n_stable", r.n_stable}};
  if (r.method == MatchMethod::Nn || r.method == MatchMethod::FixedPointFallbackNn)
    j["nn_score"] = r.nn_score;
  if (r.affine) {
    const auto& a = *r.affine;
    json rows = json::array();
    for (int i = 0; i < 3; ++i) rows.push_back(json::array({a.A(i, 0), a.A(i, 1), a.A(i, 2)}));
    j["affine"] = {{"A", rows},
                   {"f_mean", json::array({a.f_mean[0], a.f_mean[1], a.f_mean[2]})},
                   {"g_mean", json::array({a.g_mean[0], a.g_mean[1], a.g_mean[2]})},
                   {"n_points", a.n_points},
                   {"rank", a.rank},
                   {"rank_deficient", a.rank_deficient},
                   {"residual_rms", a.residual_rms}};
  }
  if (!r.traces.empty()) {
    json traces = json::array();
    for (const auto& t : r.traces)
      traces.push_back({{"start", to_json(t.start)},
                        {"terminal_t", to_json(t.terminal.t)},
                        {"terminal_q", to_json(t.terminal.q)},
                        {"converged", t.converged},
                        {"cycle", t.cycle},
                        {"n_fix", t.n_fix},
                        {"offset", t.offset}});
    j["traces"] = traces;
  }
  return j;
}

json to_json(const PhantomConfig& c) {
  return {{"dims", json::array({c.dims.z, c.dims.y, c.dims.x})},
          {"spacing_mm", json::array({c.spacing.z, c.spacing.y, c.spacing.x})},
          {"num_classes", c.num_classes},
          {"n_structures", c.n_structures},
          {"radius_min_mm", c.radius_min_mm},
          {"radius_max_mm", c.radius_max_mm},
          {"noise_sigma", c.noise_sigma},
          {"seed", c.seed}};
}

PhantomConfig phantom_config_from_json(const json& j, PhantomConfig c) {
  check_keys(j, {"dims", "spacing_mm", "num_classes", "n_structures", "radius_min_mm", "radius_max_mm",
                 "noise_sigma", "seed"},
             "phantom config");
  if (j.contains("dims")) {
    const auto d = get_or<std::vector<int64_t>>(j, "dims", {});
    require(d.size() == 3, "dims must have three entries");
    c.dims = {d[0], d[1], d[2]};
  }
  const auto sp = triple(j, "spacing_mm", {c.spacing.z, c.spacing.y, c.spacing.x});
  c.spacing = {sp[0], sp[1], sp[2]};
  c.num_classes = get_or(j, "num_classes", c.num_classes);
  c.n_structures = get_or(j, "n_structures", c.n_structures);
  c.radius_min_mm = get_or(j, "radius_min_mm", c.radius_min_mm);
  c.radius_max_mm = get_or(j, "radius_max_mm", c.radius_max_mm);
  c.noise_sigma = get_or(j, "noise_sigma", c.noise_sigma);
  c.seed = get_or(j, "seed", c.seed);
  c.validate();
  return c;
}

json to_json(const AugmentParams& p) {
  return {{"rotation_deg", p.rotation_deg}, {"scale", p.scale},           {"translation_mm", p.translation_mm},
          {"noise_sigma", p.noise_sigma},   {"blur_sigma", p.blur_sigma}, {"noise_seed", p.noise_seed}};
}

AugmentParams augment_params_from_json(const json& j) {
  check_keys(j, {"rotation_deg", "scale", "translation_mm", "noise_sigma", "blur_sigma", "noise_seed"},
             "augment params");
  AugmentParams p;
  p.rotation_deg = triple(j, "rotation_deg", p.rotation_deg);
  p.scale = triple(j, "scale", p.scale);
  p.translation_mm = triple(j, "translation_mm", p.translation_mm);
  p.noise_sigma = get_or(j, "noise_sigma", p.noise_sigma);
  p.blur_sigma = get_or(j, "blur_sigma", p.blur_sigma);
  p.noise_seed = get_or(j, "noise_seed", p.noise_seed);
  p.validate();
  return p;
}

json to_json(const AugmentRanges& r) {
  return {{"max_rotation_deg", r.max_rotation_deg}, {"scale_min", r.scale_min},
          {"scale_max", r.scale_max},               {"max_translation_mm", r.max_translation_mm},
          {"noise_sigma", r.noise_sigma},           {"blur_sigma", r.blur_sigma}};
}

AugmentRanges augment_ranges_from_json(const json& j, AugmentRanges r) {
  check_keys(j, {"max_rotation_deg", "scale_min", "scale_max", "max_translation_mm", "noise_sigma", "blur_sigma"},
             "augment ranges");
  r.max_rotation_deg = get_or(j, "max_rotation_deg", r.max_rotation_deg);
  r.scale_min = get_or(j, "scale_min", r.scale_min);
  r.scale_max = get_or(j, "scale_max", r.scale_max);
  r.max_translation_mm = get_or(j, "max_translation_mm", r.max_translation_mm);
  r.noise_sigma = get_or(j, "noise_sigma", r.noise_sigma);
  r.blur_sigma = get_or(j, "blur_sigma", r.blur_sigma);
  r.validate();
  return r;
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"tau_app", c.tau_app},
          {"tau_sem", c.tau_sem},
          {"n_pos", c.n_pos},
          {"n_candidates", c.n_candidates},
          {"n_hard", c.n_hard},
          {"n_random", c.n_random},
          {"n_sem_per_class", c.n_sem_per_class},
          {"embed_channels", c.embed_channels},
          {"pool_size", c.pool_size},
          {"exclusion_vox", c.exclusion_vox},
          {"seed", c.seed},
          {"phantom", to_json(c.phantom)},
          {"augment", to_json(c.augment)}};
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j, {"learning_rate", "momentum", "batch_size", "steps", "tau_app", "tau_sem", "n_pos",
                 "n_candidates", "n_hard", "n_random", "n_sem_per_class", "embed_channels", "pool_size",
                 "exclusion_vox", "seed", "phantom", "augment"},
             "train config");
  TrainConfig c;
  c.learning_rate = get_or(j, "learning_rate", c.learning_rate);
  c.momentum = get_or(j, "momentum", c.momentum);
  c.batch_size = get_or(j, "batch_size", c.batch_size);
  c.steps = get_or(j, "steps", c.steps);
  c.tau_app = get_or(j, "tau_app", c.tau_app);
  c.tau_sem = get_or(j, "tau_sem", c.tau_sem);
  c.n_pos = get_or(j, "n_pos", c.n_pos);
  c.n_candidates = get_or(j, "n_candidates", c.n_candidates);
  c.n_hard = get_or(j, "n_hard", c.n_hard);
  c.n_random = get_or(j, "n_random", c.n_random);
  c.n_sem_per_class = get_or(j, "n_sem_per_class", c.n_sem_per_class);
  c.embed_channels = get_or(j, "embed_channels", c.embed_channels);
  c.pool_size = get_or(j, "pool_size", c.pool_size);
  c.exclusion_vox = get_or(j, "exclusion_vox", c.exclusion_vox);
  c.seed = get_or(j, "seed", c.seed);
  if (j.contains("phantom")) c.phantom = phantom_config_from_json(j.at("phantom"), c.phantom);
  if (j.contains("augment")) c.augment = augment_ranges_from_json(j.at("augment"), c.augment);
  c.validate();
  return c;
}

json to_json(const Structure& s) {
  return {{"id", s.id},
          {"class", s.cls},
          {"center_mm", to_json(s.center)},
          {"radius_mm", s.radius_mm},
          {"semi_axes_mm", s.semi_axes_mm}};
}

json correspondence_json(const CorrespondenceSet& set, const TruthMap& truth) {
  json pairs = json::array();
  for (size_t i = 0; i < set.pairs.size(); ++i) {
    const auto& c = set.pairs[i];
    pairs.push_back({{"id", std::to_string(i)},
                     {"template", to_json(c.template_mm)},
                     {"truth_query", to_json(c.truth_query_mm)},
                     {"radius_mm", c.radius_mm},
                     {"tag", c.tag}});
  }
  const auto& p = truth.params();
  json transform = {{"rotation_deg", p.rotation_deg},
                    {"scale", p.scale},
                    {"translation_mm", p.translation_mm}};
  if (!truth.deforms().empty()) {
    json deforms = json::array();
    for (const auto& d : truth.deforms())
      deforms.push_back(
          {{"center_mm", to_json(d.center)}, {"sigma_mm", d.sigma_mm}, {"amplitude_mm", d.amplitude_mm}});
    transform["deforms"] = deforms;
  }
  return {{"pairs", pairs}, {"transform", transform}};
}

json to_json(const EvalSummary& s) {
  auto ms = [](const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}}; };
  return {{"n", s.n},
          {"cpm_at_10mm", s.cpm_at_10mm},
          {"cpm_at_radius", s.cpm_at_radius},
          {"med", ms(s.med)},
          {"med_x", ms(s.med_x)},
          {"med_y", ms(s.med_y)},
          {"med_z", ms(s.med_z)},
          {"std_kind", "population"}};
}

std::vector<EvalRecord> join_predictions(const json& predictions, const json& truth) {
  require(truth.is_object() && truth.contains("pairs") && truth["pairs"].is_array(),
          "truth document needs a 'pairs' array");
  require(predictions.is_object() && predictions.contains("predictions") && predictions["predictions"].is_array(),
          "predictions document needs a 'predictions' array");

  std::map<std::string, PhysPoint> pred;
  std::map<std::string, std::string> method;
  for (const auto& p : predictions["predictions"]) {
    const auto id = get_req<std::string>(p, "id", "prediction");
    require(!pred.contains(id), "duplicate prediction id '" + id + "'");
    require(p.contains("predicted_mm"), "prediction '" + id + "' lacks predicted_mm");
    pred[id] = phys_from_json(p["predicted_mm"], "predicted_mm");
    method[id] = get_or<std::string>(p, "method", "");
  }

  std::vector<EvalRecord> records;
  std::set<std::string> seen;
  const auto& pairs = truth["pairs"];
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& t = pairs[i];
    const std::string id = get_or<std::string>(t, "id", std::to_string(i));
    require(seen.insert(id).second, "duplicate truth id '" + id + "'");
    const auto it = pred.find(id);
    require(it != pred.end(), "no prediction for truth id '" + id + "'");
    require(t.contains("truth_query"), "truth pair '" + id + "' lacks truth_query");
    EvalRecord r;
    r.id = id;
    r.predicted = it->second;
    r.truth = phys_from_json(t["truth_query"], "truth_query");
    r.radius_mm = get_req<double>(t, "radius_mm", "truth pair");
    r.method = method[id];
    records.push_back(std::move(r));
  }
  require(pred.size() == seen.size(), "predictions contain ids absent from the truth set");
  return records;
}

}  // namespace anatomatch
