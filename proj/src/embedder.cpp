#include "anatomatch/embedder.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "anatomatch/filters.hpp"
#include "anatomatch/fixed_point.hpp"
#include "anatomatch/parallel.hpp"
#include "anatomatch/random.hpp"

namespace anatomatch {
namespace {

// Fixed per-channel gains bringing every feature to roughly unit range on phantoms.
constexpr double kGradientGain = 5.0;
constexpr double kVarianceGain = 20.0;

Eigen::VectorXd feature_vector(const EmbeddingVolume& f, int64_t i) {
  auto v = f.at_linear(i);
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (size_t k = 0; k < v.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[k];
  return out;
}

Eigen::VectorXd feature_at(const EmbeddingVolume& f, const Eigen::Vector3d& voxel_pos) {
  Eigen::VectorXd out(f.channels());
  sample_trilinear(f, voxel_pos, std::span<double>(out.data(), static_cast<size_t>(out.size())));
  return out;
}

}  // namespace

std::vector<std::string> feature_names() {
  return {"raw",       "smooth_s1", "smooth_s2", "smooth_s4", "grad_z_s1", "grad_y_s1",
          "grad_x_s1", "grad_z_s4", "grad_y_s4", "grad_x_s4", "variance_s1", "bias"};
}

int feature_count() { return static_cast<int>(feature_names().size()); }

EmbeddingVolume extract_features(const ScalarVolume& in) {
  const int f = feature_count();
  const ScalarVolume s1 = gaussian_blur(in, 1.0);
  const ScalarVolume s2 = gaussian_blur(in, 2.0);
  const ScalarVolume s4 = gaussian_blur(in, 4.0);
  ScalarVolume sq(in.dims, in.spacing);
  for (size_t i = 0; i < in.data.size(); ++i)
    sq.data[i] = static_cast<float>(static_cast<double>(in.data[i]) * in.data[i]);
  const ScalarVolume sq1 = gaussian_blur(sq, 1.0);

  std::vector<ScalarVolume> channels;
  channels.reserve(static_cast<size_t>(f));
  channels.push_back(in);
  channels.push_back(s1);
  channels.push_back(s2);
  channels.push_back(s4);
  for (int ax = 0; ax < 3; ++ax) channels.push_back(gradient(s1, ax));
  for (int ax = 0; ax < 3; ++ax) channels.push_back(gradient(s4, ax));

  EmbeddingVolume out(in.dims, f, in.spacing, false);
  for (int64_t i = 0; i < in.dims.count(); ++i) {
    auto v = out.at_linear(i);
    for (int c = 0; c < 10; ++c) {
      const double gain = c >= 4 ? kGradientGain : 1.0;
      v[static_cast<size_t>(c)] = static_cast<float>(gain * channels[static_cast<size_t>(c)][i]);
    }
    const double mean = s1[i];
    v[10] = static_cast<float>(kVarianceGain * std::max(0.0, sq1[i] - mean * mean));
    v[11] = 1.0f;
  }
  return out;
}

HeadWeights ProjectionHead::to_weights() const {
  HeadWeights h;
  h.head = name;
  h.in = in();
  h.out = out();
  h.weights.resize(static_cast<size_t>(weights.size()));
  for (Eigen::Index r = 0; r < weights.rows(); ++r)
    for (Eigen::Index c = 0; c < weights.cols(); ++c)
      h.weights[static_cast<size_t>(r * weights.cols() + c)] = static_cast<float>(weights(r, c));
  return h;
}

ProjectionHead ProjectionHead::from_weights(const HeadWeights& w) {
  require(w.in > 0 && w.out > 0 && w.weights.size() == static_cast<size_t>(w.in) * w.out,
          "head weights have an inconsistent shape");
  ProjectionHead h;
  h.name = w.head;
  h.weights.resize(w.out, w.in);
  for (int r = 0; r < w.out; ++r)
    for (int c = 0; c < w.in; ++c) h.weights(r, c) = w.weights[static_cast<size_t>(r * w.in + c)];
  return h;
}

ProjectionHead init_head(const std::string& name, int in, int out, uint64_t seed) {
  require(in > 0 && out > 0, "head shape must be positive");
  std::mt19937_64 rng(mix_seed(seed, 50));
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  ProjectionHead h;
  h.name = name;
  h.weights.resize(out, in);
  for (Eigen::Index i = 0; i < h.weights.size(); ++i)
    h.weights.data()[i] = static_cast<double>(static_cast<float>(n(rng)));
  return h;
}

EmbeddingVolume embed(const EmbeddingVolume& features, const ProjectionHead& head) {
  require(features.channels() == head.in(), "feature channels do not match head input width");
  const int c = head.out();
  const int f = head.in();
  EmbeddingVolume out(features.dims(), c, features.spacing(), true);
  parallel_chunks(features.dims().count(), 2048, [&](int64_t b, int64_t e) {
    Eigen::VectorXd y(c);
    for (int64_t i = b; i < e; ++i) {
      auto src = features.at_linear(i);
      for (int r = 0; r < c; ++r) {
        double acc = 0;
        for (int k = 0; k < f; ++k) acc += head.weights(r, k) * src[static_cast<size_t>(k)];
        y[r] = acc;
      }
      const double norm = y.norm();
      auto dst = out.at_linear(i);
      if (norm == 0.0) {
        std::fill(dst.begin(), dst.end(), 0.0f);
        dst[0] = 1.0f;
        continue;
      }
      for (int r = 0; r < c; ++r) dst[static_cast<size_t>(r)] = static_cast<float>(y[r] / norm);
    }
  });
  return out;
}

HeadForward head_forward(const ProjectionHead& head, const Eigen::VectorXd& features) {
  HeadForward fwd;
  fwd.pre = head.weights * features;
  const double norm = fwd.pre.norm();
  if (norm == 0.0) {
    fwd.unit = Eigen::VectorXd::Zero(fwd.pre.size());
    fwd.unit[0] = 1.0;
  } else {
    fwd.unit = fwd.pre / norm;
  }
  return fwd;
}

void head_backward(const HeadForward& fwd, const Eigen::VectorXd& features,
                   const Eigen::VectorXd& grad_unit, RowMatrix& grad_weights) {
  const double norm = fwd.pre.norm();
  if (norm == 0.0) return;
  // d(y/|y|)/dy = (I - u u^T) / |y|
  const Eigen::VectorXd grad_pre = (grad_unit - fwd.unit * fwd.unit.dot(grad_unit)) / norm;
  grad_weights.noalias() += grad_pre * features.transpose();
}

void TrainConfig::validate() const {
  require(learning_rate >= 0 && std::isfinite(learning_rate), "learning rate must be >= 0");
  require(momentum >= 0 && momentum < 1, "momentum must be in [0, 1)");
  require(batch_size >= 1, "batch size must be >= 1");
  require(steps >= 0, "steps must be >= 0");
  require(tau_app > 0 && tau_sem > 0, "temperatures must be > 0");
  require(n_pos >= 1, "n_pos must be >= 1");
  require(n_hard >= 0 && n_random >= 0 && n_hard + n_random <= n_candidates,
          "n_hard + n_random must not exceed n_candidates");
  require(n_sem_per_class >= 1, "n_sem_per_class must be >= 1");
  require(embed_channels >= 1, "embed_channels must be >= 1");
  require(pool_size >= 1, "pool_size must be >= 1");
  require(exclusion_vox >= 0, "exclusion radius must be >= 0");
  phantom.validate();
  augment.validate();
}

TrainingView make_training_view(const AugmentedPair& pair) {
  return {pair, extract_features(pair.view_a), extract_features(pair.view_b)};
}

TrainingSample sample_training_batch(const TrainingView& view, const ProjectionHead& appearance,
                                     const TrainConfig& cfg, uint64_t seed) {
  const AugmentedPair& pair = view.pair;
  const Dims& da = pair.view_a.dims;
  const Dims& db = pair.view_b.dims;
  const Spacing& sb = pair.view_b.spacing;
  const Spacing& sa = pair.view_a.spacing;
  const Eigen::Vector3d spacing_b(sb.z, sb.y, sb.x);
  const int f = view.features_a.channels();

  std::vector<int64_t> overlap;
  for (int64_t i = 0; i < da.count(); ++i)
    if (pair.overlap[static_cast<size_t>(i)]) overlap.push_back(i);
  require(!overlap.empty(), "augmented pair has no overlap to sample positives from");

  std::mt19937_64 rng(mix_seed(seed, 60));
  auto pick = [&](int64_t n) { return std::uniform_int_distribution<int64_t>(0, n - 1)(rng); };

  TrainingSample s;
  s.anchor_features.resize(cfg.n_pos, f);
  s.positive_features.resize(cfg.n_pos, f);
  for (int i = 0; i < cfg.n_pos; ++i) {
    const int64_t idx = overlap[static_cast<size_t>(pick(static_cast<int64_t>(overlap.size())))];
    const VoxelPoint pa = da.unlinear(idx);
    const Eigen::Vector3d pb = pair.truth.apply(Eigen::Vector3d(pa.z * sa.z, pa.y * sa.y, pa.x * sa.x));
    s.anchor_voxels.push_back(pa);
    s.positive_mm.push_back(pb);
    s.anchor_features.row(i) = feature_vector(view.features_a, idx).transpose();
    s.positive_features.row(i) = feature_at(view.features_b, pb.cwiseQuotient(spacing_b)).transpose();
  }

  // Negatives: random voxels from both views away from the positive location,
  // then hard-negative selection against the current appearance embedding.
  for (int i = 0; i < cfg.n_pos; ++i) {
    const Eigen::Vector3d pa = to_vec(s.anchor_voxels[static_cast<size_t>(i)]);
    const Eigen::Vector3d pb = s.positive_mm[static_cast<size_t>(i)].cwiseQuotient(spacing_b);
    RowMatrix cand(cfg.n_candidates, f);
    int filled = 0;
    for (int guard = 0; filled < cfg.n_candidates && guard < 100 * cfg.n_candidates; ++guard) {
      const bool from_a = filled % 2 == 0;
      const Dims& d = from_a ? da : db;
      const VoxelPoint p = d.unlinear(pick(d.count()));
      if ((to_vec(p) - (from_a ? pa : pb)).norm() < cfg.exclusion_vox) continue;
      cand.row(filled++) =
          feature_vector(from_a ? view.features_a : view.features_b, d.linear(p)).transpose();
    }
    require(filled == cfg.n_candidates, "could not draw enough negative candidates");
    RowMatrix cand_emb(cfg.n_candidates, appearance.out());
    for (int j = 0; j < cfg.n_candidates; ++j)
      cand_emb.row(j) = head_forward(appearance, cand.row(j).transpose()).unit.transpose();
    const Eigen::VectorXd anchor = head_forward(appearance, s.anchor_features.row(i).transpose()).unit;
    const auto chosen = select_hard_negatives(anchor, cand_emb, cfg.n_hard, cfg.n_random,
                                              mix_seed(seed, 1000 + static_cast<uint64_t>(i)));
    RowMatrix neg(static_cast<Eigen::Index>(chosen.size()), f);
    for (size_t j = 0; j < chosen.size(); ++j) neg.row(static_cast<Eigen::Index>(j)) = cand.row(chosen[j]);
    s.negative_features.push_back(std::move(neg));
  }

  // Labeled samples: n_sem_per_class voxels per class present, from each view.
  const int k_all = pair.labels_a.num_classes();
  std::vector<std::vector<int64_t>> by_class_a(static_cast<size_t>(k_all)), by_class_b(static_cast<size_t>(k_all));
  for (int64_t i = 0; i < da.count(); ++i) by_class_a[pair.labels_a[i]].push_back(i);
  for (int64_t i = 0; i < db.count(); ++i) by_class_b[pair.labels_b[i]].push_back(i);
  std::vector<int> remap(static_cast<size_t>(k_all), -1);
  std::vector<std::pair<int64_t, bool>> picks;  // (voxel, from_a)
  std::vector<int> labels;
  for (int c = 0; c < k_all; ++c) {
    const auto& ca = by_class_a[static_cast<size_t>(c)];
    const auto& cb = by_class_b[static_cast<size_t>(c)];
    if (ca.empty() && cb.empty()) continue;
    remap[static_cast<size_t>(c)] = s.num_classes++;
    for (int j = 0; j < cfg.n_sem_per_class; ++j) {
      if (!ca.empty()) {
        picks.emplace_back(ca[static_cast<size_t>(pick(static_cast<int64_t>(ca.size())))], true);
        labels.push_back(remap[static_cast<size_t>(c)]);
      }
      if (!cb.empty()) {
        picks.emplace_back(cb[static_cast<size_t>(pick(static_cast<int64_t>(cb.size())))], false);
        labels.push_back(remap[static_cast<size_t>(c)]);
      }
    }
  }
  s.labeled_features.resize(static_cast<Eigen::Index>(picks.size()), f);
  for (size_t j = 0; j < picks.size(); ++j)
    s.labeled_features.row(static_cast<Eigen::Index>(j)) =
        feature_vector(picks[j].second ? view.features_a : view.features_b, picks[j].first).transpose();
  s.labels = std::move(labels);
  return s;
}

PairBatch materialize_pairs(const TrainingSample& s, const ProjectionHead& appearance, double tau) {
  PairBatch b;
  b.temperature = tau;
  const Eigen::Index n = s.anchor_features.rows();
  b.pos_a.resize(n, appearance.out());
  b.pos_b.resize(n, appearance.out());
  for (Eigen::Index i = 0; i < n; ++i) {
    b.pos_a.row(i) = head_forward(appearance, s.anchor_features.row(i).transpose()).unit.transpose();
    b.pos_b.row(i) = head_forward(appearance, s.positive_features.row(i).transpose()).unit.transpose();
    const RowMatrix& nf = s.negative_features[static_cast<size_t>(i)];
    RowMatrix ne(nf.rows(), appearance.out());
    for (Eigen::Index j = 0; j < nf.rows(); ++j)
      ne.row(j) = head_forward(appearance, nf.row(j).transpose()).unit.transpose();
    b.negatives.push_back(std::move(ne));
  }
  return b;
}

LabeledBatch materialize_labeled(const TrainingSample& s, const ProjectionHead& semantic, double tau) {
  LabeledBatch b;
  b.temperature = tau;
  b.num_classes = s.num_classes;
  b.labels = s.labels;
  b.embeddings.resize(s.labeled_features.rows(), semantic.out());
  for (Eigen::Index i = 0; i < s.labeled_features.rows(); ++i)
    b.embeddings.row(i) = head_forward(semantic, s.labeled_features.row(i).transpose()).unit.transpose();
  return b;
}

SampleLoss sample_loss(const TrainingSample& s, const ProjectionHead& appearance,
                       const ProjectionHead& semantic, const TrainConfig& cfg) {
  SampleLoss out;
  out.grad_appearance = RowMatrix::Zero(appearance.out(), appearance.in());
  out.grad_semantic = RowMatrix::Zero(semantic.out(), semantic.in());

  const PairBatch pb = materialize_pairs(s, appearance, cfg.tau_app);
  const InfoNceResult app = infonce_loss(pb);
  out.appearance = app.loss;
  auto back_app = [&](const Eigen::VectorXd& feat, const Eigen::VectorXd& g) {
    head_backward(head_forward(appearance, feat), feat, g, out.grad_appearance);
  };
  for (Eigen::Index i = 0; i < s.anchor_features.rows(); ++i) {
    back_app(s.anchor_features.row(i).transpose(), app.grad.pos_a.row(i).transpose());
    back_app(s.positive_features.row(i).transpose(), app.grad.pos_b.row(i).transpose());
    const RowMatrix& nf = s.negative_features[static_cast<size_t>(i)];
    const RowMatrix& ng = app.grad.negatives[static_cast<size_t>(i)];
    for (Eigen::Index j = 0; j < nf.rows(); ++j) back_app(nf.row(j).transpose(), ng.row(j).transpose());
  }

  const LabeledBatch lb = materialize_labeled(s, semantic, cfg.tau_sem);
  const SupConResult sem = prototypical_supcon_loss(lb);
  out.semantic = sem.loss;
  for (Eigen::Index i = 0; i < s.labeled_features.rows(); ++i) {
    const Eigen::VectorXd feat = s.labeled_features.row(i).transpose();
    head_backward(head_forward(semantic, feat), feat, sem.grad.row(i).transpose(), out.grad_semantic);
  }
  return out;
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const int f = feature_count();
  TrainResult r;
  r.appearance = init_head("appearance", f, cfg.embed_channels, mix_seed(cfg.seed, 1));
  r.semantic = init_head("semantic", f, cfg.embed_channels, mix_seed(cfg.seed, 2));
  if (cfg.steps == 0) return r;

  std::vector<TrainingView> pool(static_cast<size_t>(cfg.pool_size));
  parallel_for(cfg.pool_size, [&](int64_t i) {
    PhantomConfig pc = cfg.phantom;
    pc.seed = mix_seed(cfg.seed, 100 + static_cast<uint64_t>(i));
    const Phantom ph = generate_phantom(pc);
    const AugmentParams ap = sample_augment_params(cfg.augment, mix_seed(cfg.seed, 200 + static_cast<uint64_t>(i)));
    pool[static_cast<size_t>(i)] = make_training_view(augment(ph, ap));
  });

  RowMatrix vel_app = RowMatrix::Zero(r.appearance.out(), f);
  RowMatrix vel_sem = RowMatrix::Zero(r.semantic.out(), f);
  std::mt19937_64 rng(mix_seed(cfg.seed, 3));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<size_t> members(static_cast<size_t>(cfg.batch_size));
    for (auto& m : members) m = std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng);
    const uint64_t step_seed = mix_seed(cfg.seed, 10000 + static_cast<uint64_t>(step));

    std::vector<SampleLoss> losses(members.size());
    parallel_for(static_cast<int64_t>(members.size()), [&](int64_t b) {
      const auto s = sample_training_batch(pool[members[static_cast<size_t>(b)]], r.appearance, cfg,
                                           mix_seed(step_seed, static_cast<uint64_t>(b)));
      losses[static_cast<size_t>(b)] = sample_loss(s, r.appearance, r.semantic, cfg);
    });

    LossRecord rec{step, 0, 0, 0};
    RowMatrix g_app = RowMatrix::Zero(r.appearance.out(), f);
    RowMatrix g_sem = RowMatrix::Zero(r.semantic.out(), f);
    const double inv_b = 1.0 / static_cast<double>(members.size());
    for (const auto& l : losses) {
      rec.appearance += l.appearance * inv_b;
      rec.semantic += l.semantic * inv_b;
      g_app += l.grad_appearance * inv_b;
      g_sem += l.grad_semantic * inv_b;
    }
    rec.total = rec.appearance + rec.semantic;
    r.history.push_back(rec);
    if (!std::isfinite(rec.total) || !g_app.allFinite() || !g_sem.allFinite()) {
      r.diverged = true;
      break;
    }
    vel_app = cfg.momentum * vel_app - cfg.learning_rate * g_app;
    vel_sem = cfg.momentum * vel_sem - cfg.learning_rate * g_sem;
    r.appearance.weights += vel_app;
    r.semantic.weights += vel_sem;
  }
  // Heads are persisted as float32; keep the in-memory result identical to a reload.
  r.appearance.weights = r.appearance.weights.cast<float>().cast<double>();
  r.semantic.weights = r.semantic.weights.cast<float>().cast<double>();
  return r;
}

std::string history_csv(const std::vector<LossRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "step,total,appearance,semantic\n";
  for (const auto& h : history)
    os << h.step << ',' << h.total << ',' << h.appearance << ',' << h.semantic << '\n';
  return os.str();
}

}  // namespace anatomatch
