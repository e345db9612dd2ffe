#include "anatomatch/fixed_point.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "anatomatch/parallel.hpp"

namespace anatomatch {
namespace {

// Incremental construction of one FBTrace; shared by the single-trace and the
// batched cube iteration so both follow exactly the same stopping rules.
class TraceBuilder {
 public:
  TraceBuilder(const VoxelPoint& t0, int max_iter) : max_iter_(max_iter) {
    trace_.start = t0;
    trace_.terminal = {t0, t0};
    seen_.push_back(t0);
  }

  const VoxelPoint& current() const { return current_t(); }
  bool done() const { return done_; }

  // Feeds f(current). Returns true once the trace has terminated.
  bool advance(const ForwardBackward& r) {
    const VoxelPoint t = current_t();
    trace_.sequence.push_back({t, r.query});
    trace_.terminal = {t, r.query};
    trace_.n_fix = static_cast<int>(trace_.sequence.size());
    if (r.next == t) {
      trace_.converged = true;
      return finish();
    }
    if (std::find(seen_.begin(), seen_.end(), r.next) != seen_.end()) {
      trace_.cycle = true;
      return finish();
    }
    if (trace_.n_fix >= max_iter_) return finish();
    seen_.push_back(r.next);
    return false;
  }

  FBTrace take() { return std::move(trace_); }

 private:
  const VoxelPoint& current_t() const { return seen_.back(); }

  bool finish() {
    const Eigen::Vector3d d = to_vec(trace_.start) - to_vec(trace_.terminal.t);
    trace_.offset = d.norm();
    done_ = true;
    return true;
  }

  FBTrace trace_;
  std::vector<VoxelPoint> seen_;
  int max_iter_;
  bool done_ = false;
};

void check_pair(const EmbeddingVolume& a, const EmbeddingVolume& b) {
  require(a.channels() == b.channels(), "template and query volumes have different channel counts");
}

}  // namespace

ForwardBackward forward_backward(const VoxelPoint& t, const EmbeddingVolume& a,
                                 const EmbeddingVolume& b) {
  check_pair(a, b);
  const NNMatch q = nn_match(a, t, b);
  const NNMatch back = nn_match(b, q.point, a);
  return {back.point, q.point};
}

FBTrace iterate_to_fixed_point(const VoxelPoint& t0, const ForwardBackwardFn& step, int max_iter) {
  require(max_iter >= 1, "max_iter must be >= 1");
  TraceBuilder tb(t0, max_iter);
  while (!tb.advance(step(tb.current()))) {
  }
  return tb.take();
}

FBTrace iterate_to_fixed_point(const VoxelPoint& t0, const EmbeddingVolume& a,
                               const EmbeddingVolume& b, int max_iter) {
  check_bounds(a.dims(), t0);
  check_pair(a, b);
  return iterate_to_fixed_point(
      t0, [&](const VoxelPoint& t) { return forward_backward(t, a, b); }, max_iter);
}

std::vector<VoxelPoint> cube_points(const VoxelPoint& t0, const Dims& dims, int cube) {
  require(cube >= 1 && cube % 2 == 1, "cube size L must be odd and >= 1");
  const int64_t h = cube / 2;
  std::vector<VoxelPoint> pts;
  for (int64_t z = std::max<int64_t>(0, t0.z - h); z <= std::min(dims.z - 1, t0.z + h); ++z)
    for (int64_t y = std::max<int64_t>(0, t0.y - h); y <= std::min(dims.y - 1, t0.y + h); ++y)
      for (int64_t x = std::max<int64_t>(0, t0.x - h); x <= std::min(dims.x - 1, t0.x + h); ++x)
        pts.push_back({z, y, x});
  return pts;
}

std::vector<FBTrace> cube_fixed_points(const VoxelPoint& t0, const EmbeddingVolume& a,
                                       const EmbeddingVolume& b, int cube, int max_iter) {
  require(max_iter >= 1, "max_iter must be >= 1");
  check_bounds(a.dims(), t0);
  check_pair(a, b);

  std::vector<TraceBuilder> builders;
  for (const VoxelPoint& p : cube_points(t0, a.dims(), cube)) builders.emplace_back(p, max_iter);

  std::unordered_map<int64_t, ForwardBackward> cache;
  const Dims& da = a.dims();
  for (;;) {
    std::vector<VoxelPoint> pending;
    for (const auto& tb : builders) {
      if (tb.done()) continue;
      const int64_t key = da.linear(tb.current());
      if (!cache.contains(key) &&
          std::find(pending.begin(), pending.end(), tb.current()) == pending.end())
        pending.push_back(tb.current());
    }
    if (pending.empty()) break;

    std::vector<ForwardBackward> results(pending.size());
    parallel_for(static_cast<int64_t>(pending.size()),
                 [&](int64_t i) { results[i] = forward_backward(pending[i], a, b); });
    for (size_t i = 0; i < pending.size(); ++i) cache.emplace(da.linear(pending[i]), results[i]);

    for (auto& tb : builders)
      if (!tb.done()) tb.advance(cache.at(da.linear(tb.current())));
  }

  std::vector<FBTrace> traces;
  traces.reserve(builders.size());
  for (auto& tb : builders) traces.push_back(tb.take());
  return traces;
}

std::vector<FBTrace> filter_stable(std::span<const FBTrace> traces, double tau_dis) {
  require(tau_dis > 0, "tau_dis must be > 0");
  std::vector<FBTrace> out;
  for (const auto& t : traces)
    if (t.converged && t.offset < tau_dis) out.push_back(t);
  return out;
}

std::vector<PointPair> terminal_pairs(std::span<const FBTrace> stable) {
  std::vector<PointPair> pairs;
  pairs.reserve(stable.size());
  for (const auto& t : stable) pairs.push_back({to_vec(t.terminal.t), to_vec(t.terminal.q)});
  return pairs;
}

std::optional<AffineEstimate> estimate_affine(std::span<const PointPair> pairs, int min_points) {
  require(min_points >= 1, "min_points must be >= 1");
  if (static_cast<int>(pairs.size()) < min_points || pairs.empty()) return std::nullopt;

  AffineEstimate est;
  est.n_points = static_cast<int>(pairs.size());
  for (const auto& p : pairs) {
    est.f_mean += p.f;
    est.g_mean += p.g;
  }
  est.f_mean /= static_cast<double>(pairs.size());
  est.g_mean /= static_cast<double>(pairs.size());

  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
  for (const auto& p : pairs) {
    const Eigen::Vector3d fc = p.f - est.f_mean;
    const Eigen::Vector3d gc = p.g - est.g_mean;
    scatter += fc * fc.transpose();
    cross += gc * fc.transpose();
  }

  // Pseudo-inverse through the symmetric eigendecomposition of the scatter.
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  const Eigen::Vector3d lambda = eig.eigenvalues();
  const Eigen::Matrix3d V = eig.eigenvectors();
  const double tol = 1e-10 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
  Eigen::Matrix3d pinv = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d null_proj = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d v = V.col(i);
    if (lambda[i] > tol) {
      pinv += v * v.transpose() / lambda[i];
      ++est.rank;
    } else {
      null_proj += v * v.transpose();
    }
  }
  est.rank_deficient = est.rank < 3;
  est.A = est.rank == 0 ? Eigen::Matrix3d::Identity() : Eigen::Matrix3d(cross * pinv + null_proj);

  double ss = 0;
  for (const auto& p : pairs)
    ss += ((p.g - est.g_mean) - est.A * (p.f - est.f_mean)).squaredNorm();
  est.residual_rms = std::sqrt(ss / static_cast<double>(pairs.size()));
  return est;
}

std::optional<AffineEstimate> estimate_affine(std::span<const FBTrace> stable, int min_points) {
  const auto pairs = terminal_pairs(stable);
  return estimate_affine(std::span<const PointPair>(pairs), min_points);
}

Eigen::Vector3d predict_query(const Eigen::Vector3d& t0, std::span<const PointPair> pairs,
                              const Eigen::Matrix3d& A) {
  require(!pairs.empty(), "prediction needs at least one stable point");
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& p : pairs) sum += p.g + A * (t0 - p.f);
  return sum / static_cast<double>(pairs.size());
}

Eigen::Vector3d predict_query(const VoxelPoint& t0, std::span<const FBTrace> stable,
                              const AffineEstimate& affine) {
  const auto pairs = terminal_pairs(stable);
  return predict_query(to_vec(t0), std::span<const PointPair>(pairs), affine.A);
}

const char* to_string(MatchMode m) { return m == MatchMode::Nn ? "nn" : "fixedpoint"; }

const char* to_string(MatchMethod m) {
  switch (m) {
    case MatchMethod::Nn: return "nn";
    case MatchMethod::FixedPoint: return "fixedpoint";
    case MatchMethod::FixedPointTranslation: return "fixedpoint-translation";
    case MatchMethod::FixedPointFallbackNn: return "fixedpoint-fallback-nn";
  }
  return "unknown";
}

MatchMode parse_match_mode(const std::string& s) {
  if (s == "nn") return MatchMode::Nn;
  if (s == "fixedpoint") return MatchMode::FixedPoint;
  fail(ErrorKind::Validation, "unknown match mode '" + s + "' (expected nn or fixedpoint)");
}

void MatcherConfig::validate() const {
  require(cube >= 1 && cube % 2 == 1, "cube size L must be odd and >= 1");
  require(tau_dis > 0 && std::isfinite(tau_dis), "tau_dis must be a positive number");
  require(max_iter >= 1, "max_iter must be >= 1");
  require(min_points >= 1, "min_points must be >= 1");
}

MatchResult match(const VoxelPoint& t, const EmbeddingVolume& a, const EmbeddingVolume& b,
                  const MatcherConfig& cfg) {
  cfg.validate();
  check_bounds(a.dims(), t);
  check_pair(a, b);

  MatchResult r;
  Eigen::Vector3d pred;
  auto plain_nn = [&] {
    const NNMatch m = nn_match(a, t, b);
    r.nn_score = m.score;
    return to_vec(m.point);
  };

  if (cfg.mode == MatchMode::Nn) {
    r.method = MatchMethod::Nn;
    pred = plain_nn();
  } else {
    auto traces = cube_fixed_points(t, a, b, cfg.cube, cfg.max_iter);
    r.n_traces = static_cast<int>(traces.size());
    const auto stable = filter_stable(traces, cfg.tau_dis);
    r.n_stable = static_cast<int>(stable.size());
    const auto pairs = terminal_pairs(stable);
    if (pairs.empty()) {
      r.method = MatchMethod::FixedPointFallbackNn;
      pred = plain_nn();
    } else if (auto est = estimate_affine(std::span<const PointPair>(pairs), cfg.min_points)) {
      r.method = MatchMethod::FixedPoint;
      pred = predict_query(to_vec(t), pairs, est->A);
      r.affine = *est;
    } else {
      r.method = MatchMethod::FixedPointTranslation;
      pred = predict_query(to_vec(t), pairs, Eigen::Matrix3d::Identity());
    }
    if (cfg.keep_traces) r.traces = std::move(traces);
  }

  const Dims& d = b.dims();
  const Eigen::Vector3d hi(static_cast<double>(d.z - 1), static_cast<double>(d.y - 1),
                           static_cast<double>(d.x - 1));
  const Eigen::Vector3d clamped = pred.cwiseMax(Eigen::Vector3d::Zero()).cwiseMin(hi);
  r.clamped = clamped != pred;
  r.query_real = clamped;
  r.query_voxel = {std::llround(clamped[0]), std::llround(clamped[1]), std::llround(clamped[2])};
  const Spacing& s = b.spacing();
  r.query_mm = {clamped[0] * s.z, clamped[1] * s.y, clamped[2] * s.x};
  return r;
}

}  // namespace anatomatch
