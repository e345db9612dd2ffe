#include "anatomatch/anatomatch.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "anatomatch/commands.hpp"
#include "anatomatch/parallel.hpp"

struct am_volume {
  anatomatch::EmbeddingVolume v;
};
struct am_labels {
  anatomatch::LabelVolume v;
};

namespace {

using namespace anatomatch;
namespace cmd = anatomatch::commands;

thread_local std::string t_last_error;

am_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::Validation: return AM_ERR_VALIDATION;
    case ErrorKind::Bounds: return AM_ERR_BOUNDS;
    case ErrorKind::Format: return AM_ERR_FORMAT;
    case ErrorKind::Truncated: return AM_ERR_TRUNCATED;
    case ErrorKind::Length: return AM_ERR_LENGTH;
    case ErrorKind::Io: return AM_ERR_IO;
    case ErrorKind::Numerical: return AM_ERR_NUMERICAL;
  }
  return AM_ERR_INTERNAL;
}

template <class F>
am_status guarded(F&& f) {
  try {
    f();
    t_last_error.clear();
    return AM_OK;
  } catch (const Error& e) {
    t_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    t_last_error = "out of memory";
    return AM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return AM_ERR_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void need(const void* p, const char* what) {
  if (!p) fail(ErrorKind::Validation, std::string(what) + " must not be NULL");
}

json parse(const char* text, const char* what) {
  if (!text || !*text) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Validation, std::string(what) + " is not valid JSON: " + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

VoxelPoint point_of(const int64_t p[3]) { return {p[0], p[1], p[2]}; }

cmd::PairOptions pair_options(const json& j) {
  check_keys(j, {"phantom", "seed", "n_points", "params", "ranges"}, "pair config");
  cmd::PairOptions o;
  if (j.contains("phantom")) o.phantom = phantom_config_from_json(j["phantom"], o.phantom);
  if (j.contains("params")) o.params = augment_params_from_json(j["params"]);
  if (j.contains("ranges")) o.ranges = augment_ranges_from_json(j["ranges"], o.ranges);
  try {
    o.seed = j.value("seed", o.seed);
    o.n_points = j.value("n_points", o.n_points);
  } catch (const json::exception&) {
    fail(ErrorKind::Validation, "pair config: seed and n_points must be integers");
  }
  require(o.n_points >= 1, "n_points must be >= 1");
  return o;
}

cmd::CorruptOptions corrupt_options(const json& j) {
  check_keys(j, {"intensity", "labels", "mode", "center_mm", "center_voxel", "radius_mm", "gain",
                 "amplitude_mm", "seed"},
             "corrupt config");
  cmd::CorruptOptions o;
  require(j.contains("intensity") && j["intensity"].is_string(), "corrupt config needs 'intensity'");
  require(j.contains("labels") && j["labels"].is_string(), "corrupt config needs 'labels'");
  o.intensity = j["intensity"].get<std::string>();
  o.labels = j["labels"].get<std::string>();
  require(j.contains("mode") && j["mode"].is_string(), "corrupt config needs 'mode'");
  o.corruption.mode = parse_corruption_mode(j["mode"].get<std::string>());
  require(j.contains("center_mm") != j.contains("center_voxel"),
          "corrupt config needs exactly one of center_mm, center_voxel");
  if (j.contains("center_mm")) {
    o.corruption.center = phys_from_json(j["center_mm"], "center_mm");
  } else {
    o.corruption.center = {};  // resolved against the volume spacing below
  }
  try {
    o.corruption.radius_mm = j.value("radius_mm", 0.0);
    o.corruption.gain = j.value("gain", o.corruption.gain);
    o.corruption.amplitude_mm = j.value("amplitude_mm", o.corruption.amplitude_mm);
    o.seed = j.value("seed", o.seed);
  } catch (const json::exception&) {
    fail(ErrorKind::Validation, "corrupt config: numeric field has the wrong type");
  }
  require(o.corruption.radius_mm >= 0, "radius_mm must be >= 0");
  require(o.corruption.gain > 0, "gain must be > 0");
  require(o.corruption.amplitude_mm >= 0, "amplitude_mm must be >= 0");
  return o;
}

}  // namespace

extern "C" {

const char* am_version(void) { return "0.1.0"; }
const char* am_last_error(void) { return t_last_error.c_str(); }

const char* am_status_name(am_status s) {
  switch (s) {
    case AM_OK: return "ok";
    case AM_ERR_VALIDATION: return "validation";
    case AM_ERR_BOUNDS: return "bounds";
    case AM_ERR_FORMAT: return "format";
    case AM_ERR_TRUNCATED: return "truncated";
    case AM_ERR_LENGTH: return "length";
    case AM_ERR_IO: return "io";
    case AM_ERR_NUMERICAL: return "numerical";
    case AM_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void am_string_free(char* s) { std::free(s); }

am_status am_set_threads(int n) {
  return guarded([&] {
    require(n >= 0, "thread count must be >= 0");
    set_thread_count(n);
  });
}

am_status am_volume_create(const int64_t dims[3], int channels, const double spacing_mm[3],
                           const float* data, int normalized, am_volume** out) {
  return guarded([&] {
    need(dims, "dims");
    need(out, "out");
    const Spacing s = spacing_mm ? Spacing{spacing_mm[0], spacing_mm[1], spacing_mm[2]} : Spacing{};
    const Dims d{dims[0], dims[1], dims[2]};
    EmbeddingVolume v(d, channels, s, normalized != 0);
    if (data) std::memcpy(v.data().data(), data, v.data().size() * sizeof(float));
    if (normalized) require(is_unit_norm(v), "data flagged normalized is not unit norm");
    *out = new am_volume{std::move(v)};
  });
}

am_status am_volume_read(const char* path, am_volume** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new am_volume{read_embedding_volume(path)};
  });
}

am_status am_volume_write(const am_volume* v, const char* path) {
  return guarded([&] {
    need(v, "volume");
    need(path, "path");
    write_volume(v->v, path);
  });
}

am_status am_volume_normalize(const am_volume* v, am_volume** out, int64_t* zero_vectors) {
  return guarded([&] {
    need(v, "volume");
    need(out, "out");
    NormalizeResult r = normalize(v->v);
    if (zero_vectors) *zero_vectors = r.zero_vectors;
    *out = new am_volume{std::move(r.volume)};
  });
}

am_status am_volume_concat(const am_volume* app, const am_volume* sem, double weight, am_volume** out) {
  return guarded([&] {
    need(app, "appearance volume");
    need(sem, "semantic volume");
    need(out, "out");
    *out = new am_volume{concat_unified(app->v, sem->v, weight)};
  });
}

am_status am_volume_dims(const am_volume* v, int64_t dims[3], int* channels) {
  return guarded([&] {
    need(v, "volume");
    if (dims) {
      dims[0] = v->v.dims().z;
      dims[1] = v->v.dims().y;
      dims[2] = v->v.dims().x;
    }
    if (channels) *channels = v->v.channels();
  });
}

am_status am_volume_at(const am_volume* v, const int64_t point[3], float* out, int capacity) {
  return guarded([&] {
    need(v, "volume");
    need(point, "point");
    need(out, "out");
    const auto e = embedding_at(v->v, point_of(point));
    require(capacity >= static_cast<int>(e.size()), "output buffer too small");
    std::memcpy(out, e.data(), e.size() * sizeof(float));
  });
}

const float* am_volume_data(const am_volume* v) { return v ? v->v.data().data() : nullptr; }
void am_volume_free(am_volume* v) { delete v; }

am_status am_labels_read(const char* path, am_labels** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new am_labels{read_label_volume(path)};
  });
}

am_status am_labels_write(const am_labels* l, const char* path) {
  return guarded([&] {
    need(l, "labels");
    need(path, "path");
    write_volume(l->v, path);
  });
}

am_status am_labels_dims(const am_labels* l, int64_t dims[3], int* num_classes) {
  return guarded([&] {
    need(l, "labels");
    if (dims) {
      dims[0] = l->v.dims().z;
      dims[1] = l->v.dims().y;
      dims[2] = l->v.dims().x;
    }
    if (num_classes) *num_classes = l->v.num_classes();
  });
}

void am_labels_free(am_labels* l) { delete l; }

am_status am_match(const am_volume* templ, const am_volume* query, const int64_t point[3],
                   const char* config_json, char** result_json) {
  return guarded([&] {
    need(templ, "template");
    need(query, "query");
    need(point, "point");
    need(result_json, "result_json");
    const MatcherConfig cfg = matcher_config_from_json(parse(config_json, "matcher config"));
    const MatchResult r = match(point_of(point), templ->v, query->v, cfg);
    json j = to_json(r, query->v.spacing());
    j["template_point"] = to_json(point_of(point));
    j["config"] = to_json(cfg);
    *result_json = dup(dump(j));
  });
}

am_status am_match_files(const char* template_path, const char* query_path, const int64_t point[3],
                         const char* config_json, char** result_json) {
  return guarded([&] {
    need(template_path, "template path");
    need(query_path, "query path");
    need(point, "point");
    need(result_json, "result_json");
    const MatcherConfig cfg = matcher_config_from_json(parse(config_json, "matcher config"));
    *result_json = dup(dump(cmd::match_files(template_path, query_path, point_of(point), cfg)));
  });
}

am_status am_phantom_generate(const char* config_json, const char* out_dir, char** manifest_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    need(manifest_json, "manifest_json");
    const PhantomConfig cfg = phantom_config_from_json(parse(config_json, "phantom config"));
    *manifest_json = dup(dump(cmd::phantom_gen(cfg, out_dir)));
  });
}

am_status am_phantom_pair(const char* config_json, const char* out_dir, char** manifest_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    need(manifest_json, "manifest_json");
    const auto opt = pair_options(parse(config_json, "pair config"));
    *manifest_json = dup(dump(cmd::phantom_pair(opt, out_dir)));
  });
}

am_status am_phantom_corrupt(const char* config_json, const char* out_dir, char** manifest_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    need(manifest_json, "manifest_json");
    const json j = parse(config_json, "corrupt config");
    auto opt = corrupt_options(j);
    if (j.contains("center_voxel")) {
      const VoxelPoint p = voxel_from_json(j["center_voxel"], "center_voxel");
      const Spacing s = read_embedding_volume(opt.intensity).spacing();
      opt.corruption.center = to_phys(p, s);
    }
    *manifest_json = dup(dump(cmd::phantom_corrupt(opt, out_dir)));
  });
}

am_status am_eval(const char* predictions_json, const char* truth_json, char** summary_json, char** table) {
  return guarded([&] {
    need(predictions_json, "predictions");
    need(truth_json, "truth");
    need(summary_json, "summary_json");
    const auto r = cmd::eval(parse(predictions_json, "predictions"), parse(truth_json, "truth"));
    char* t = table ? dup(r.table) : nullptr;
    *summary_json = dup(dump(r.summary));
    if (table) *table = t;
  });
}

am_status am_eval_files(const char* predictions_path, const char* truth_path, char** summary_json,
                        char** table) {
  return guarded([&] {
    need(predictions_path, "predictions path");
    need(truth_path, "truth path");
    need(summary_json, "summary_json");
    const json p = cmd::read_json_file(predictions_path);
    const json t = cmd::read_json_file(truth_path);
    const auto r = cmd::eval(p, t);
    char* tab = table ? dup(r.table) : nullptr;
    *summary_json = dup(dump(r.summary));
    if (table) *table = tab;
  });
}

am_status am_ablation(const char* config_json, char** report_json, char** table) {
  return guarded([&] {
    need(report_json, "report_json");
    const auto cfg = cmd::ablation_config_from_json(parse(config_json, "ablation config"));
    const auto r = cmd::ablation(cfg);
    char* t = table ? dup(r.table) : nullptr;
    *report_json = dup(dump(r.report));
    if (table) *table = t;
  });
}

am_status am_loss_check(uint64_t seed, int inject_wrong_gradient, char** report_json) {
  return guarded([&] {
    need(report_json, "report_json");
    cmd::LossCheckOptions opt;
    opt.seed = seed;
    opt.inject_wrong_gradient = inject_wrong_gradient != 0;
    *report_json = dup(dump(cmd::loss_check(opt)));
  });
}

am_status am_train_toy(const char* config_json, const char* out_dir, char** report_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    need(report_json, "report_json");
    const TrainConfig cfg = train_config_from_json(parse(config_json, "train config"));
    *report_json = dup(dump(cmd::train_toy(cfg, out_dir)));
  });
}

}  // extern "C"
