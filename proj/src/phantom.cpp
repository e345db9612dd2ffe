#include "anatomatch/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "anatomatch/filters.hpp"
#include "anatomatch/random.hpp"

namespace anatomatch {
namespace {

Eigen::Vector3d vec(const PhysPoint& p) { return {p.z, p.y, p.x}; }
PhysPoint phys(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
Eigen::Vector3d spacing_vec(const Spacing& s) { return {s.z, s.y, s.x}; }

Eigen::Vector3d to_vec(const VoxelPoint& p) {
  return {static_cast<double>(p.z), static_cast<double>(p.y), static_cast<double>(p.x)};
}

Eigen::Vector3d voxel_mm(const Dims& d, const Spacing& s, int64_t i) {
  return to_vec(d.unlinear(i)).cwiseProduct(spacing_vec(s));
}

bool inside_extent(const Eigen::Vector3d& mm, const Dims& d, const Spacing& s) {
  return mm[0] >= 0 && mm[1] >= 0 && mm[2] >= 0 && mm[0] <= (d.z - 1) * s.z &&
         mm[1] <= (d.y - 1) * s.y && mm[2] <= (d.x - 1) * s.x;
}

void add_noise(ScalarVolume& v, double sigma, uint64_t seed) {
  if (sigma <= 0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (float& x : v.data) x = static_cast<float>(x + n(rng));
}

struct BackgroundTexture {
  std::array<Eigen::Vector3d, 6> freq;
  std::array<double, 6> phase;

  explicit BackgroundTexture(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    for (size_t k = 0; k < freq.size(); ++k) {
      Eigen::Vector3d dir(n(rng), n(rng), n(rng));
      dir.normalize();
      const double wavelength = 16.0 + 32.0 * u(rng);
      freq[k] = dir * (2.0 * std::numbers::pi / wavelength);
      phase[k] = 2.0 * std::numbers::pi * u(rng);
    }
  }

  double operator()(const Eigen::Vector3d& mm) const {
    double v = 0.2;
    for (size_t k = 0; k < freq.size(); ++k) v += 0.04 * std::cos(freq[k].dot(mm) + phase[k]);
    return v;
  }
};

// Radial profile and class texture of a structure at mm position p.
double structure_value(const Structure& s, const Eigen::Vector3d& p, double rho) {
  const double inner = std::min(rho, 1.0);
  const double wavelength = 6.0 + 2.0 * ((s.cls == 2 ? 1 : s.cls) % 3);
  const double texture = 0.02 * std::cos(2.0 * std::numbers::pi * (p[0] + p[1] + p[2]) / wavelength);
  return class_intensity(s.cls) + 0.12 * (1.0 - inner * inner) + texture;
}

}  // namespace

double class_intensity(int cls) {
  static constexpr double table[] = {0.2, 0.6, 0.6, 0.85, 0.4, 1.0, 0.72};
  if (cls >= 0 && cls < 7) return table[cls];
  const double g = cls * 0.6180339887498949;
  return 0.45 + 0.5 * (g - std::floor(g));
}

double ellipsoid_radius(const Structure& s, const PhysPoint& p) {
  const double dz = (p.z - s.center.z) / s.semi_axes_mm[0];
  const double dy = (p.y - s.center.y) / s.semi_axes_mm[1];
  const double dx = (p.x - s.center.x) / s.semi_axes_mm[2];
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

void PhantomConfig::validate() const {
  require(dims.z > 0 && dims.y > 0 && dims.x > 0, "phantom dims must be positive");
  require(spacing.z > 0 && spacing.y > 0 && spacing.x > 0, "phantom spacing must be positive");
  require(num_classes >= 1 && num_classes < 65535, "num_classes must be in [1, 65534]");
  require(n_structures >= 0, "n_structures must be >= 0");
  require(radius_min_mm > 0 && radius_max_mm >= radius_min_mm, "invalid radius range");
  require(noise_sigma >= 0, "noise_sigma must be >= 0");
}

Phantom generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(cfg.seed, 0));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Vector3d extent((cfg.dims.z - 1) * cfg.spacing.z, (cfg.dims.y - 1) * cfg.spacing.y,
                               (cfg.dims.x - 1) * cfg.spacing.x);
  const double margin = std::max({cfg.spacing.z, cfg.spacing.y, cfg.spacing.x});

  std::vector<int> classes(static_cast<size_t>(cfg.n_structures));
  for (int i = 0; i < cfg.n_structures; ++i) classes[static_cast<size_t>(i)] = 1 + i % cfg.num_classes;
  std::shuffle(classes.begin(), classes.end(), rng);

  Phantom ph;
  constexpr int kAttempts = 500;
  for (int i = 0; i < cfg.n_structures; ++i) {
    Structure s;
    s.id = i + 1;
    s.cls = classes[static_cast<size_t>(i)];
    s.radius_mm = cfg.radius_min_mm + (cfg.radius_max_mm - cfg.radius_min_mm) * u(rng);
    for (double& a : s.semi_axes_mm) a = s.radius_mm * (0.8 + 0.4 * u(rng));
    const double reach = *std::max_element(s.semi_axes_mm.begin(), s.semi_axes_mm.end());
    bool placed = false;
    for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
      Eigen::Vector3d c;
      bool fits = true;
      for (int ax = 0; ax < 3; ++ax) {
        const double lo = s.semi_axes_mm[static_cast<size_t>(ax)] + margin;
        const double hi = extent[ax] - lo;
        if (hi < lo) {
          fits = false;
          break;
        }
        c[ax] = lo + (hi - lo) * u(rng);
      }
      if (!fits) break;
      placed = std::all_of(ph.structures.begin(), ph.structures.end(), [&](const Structure& o) {
        const double other = *std::max_element(o.semi_axes_mm.begin(), o.semi_axes_mm.end());
        return (c - vec(o.center)).norm() > reach + other + margin;
      });
      if (placed) s.center = phys(c);
    }
    if (!placed)
      fail(ErrorKind::Validation, "cannot pack structure " + std::to_string(s.id) +
                                      " into the phantom volume; reduce count or radii");
    ph.structures.push_back(s);
  }

  const BackgroundTexture bg(rng);
  ph.intensity = ScalarVolume(cfg.dims, cfg.spacing);
  ph.labels = LabelVolume(cfg.dims, cfg.num_classes + 1, cfg.spacing);
  for (int64_t i = 0; i < cfg.dims.count(); ++i) {
    const Eigen::Vector3d p = voxel_mm(cfg.dims, cfg.spacing, i);
    double value = bg(p);
    for (const Structure& s : ph.structures) {
      const double rho = ellipsoid_radius(s, phys(p));
      if (rho > 2.0) continue;
      // Soft boundary over roughly 1.5 mm.
      const double w = 1.0 / (1.0 + std::exp((rho - 1.0) * s.radius_mm / 1.5));
      value = (1.0 - w) * value + w * structure_value(s, p, rho);
      if (rho <= 1.0) ph.labels[i] = static_cast<uint16_t>(s.cls);
    }
    ph.intensity[i] = static_cast<float>(value);
  }
  add_noise(ph.intensity, cfg.noise_sigma, mix_seed(cfg.seed, 1));
  return ph;
}

Eigen::Vector3d BumpDeform::displacement(const Eigen::Vector3d& x) const {
  const double r2 = (x - vec(center)).squaredNorm();
  const double w = std::exp(-r2 / (2.0 * sigma_mm * sigma_mm));
  return w * Eigen::Vector3d(amplitude_mm[0], amplitude_mm[1], amplitude_mm[2]);
}

void AugmentParams::validate() const {
  for (double r : rotation_deg) require(std::abs(r) <= 15.0 + 1e-9, "rotation must be within +-15 deg");
  for (double s : scale) require(s >= 0.8 - 1e-12 && s <= 1.2 + 1e-12, "scale must lie in [0.8, 1.2]");
  for (double t : translation_mm) require(std::isfinite(t), "translation must be finite");
  require(noise_sigma >= 0 && blur_sigma >= 0, "noise and blur sigma must be >= 0");
}

void AugmentRanges::validate() const {
  require(max_rotation_deg >= 0 && max_rotation_deg <= 15.0, "max rotation must be in [0, 15] deg");
  require(scale_min >= 0.8 && scale_max <= 1.2 && scale_min <= scale_max,
          "scale range must lie within [0.8, 1.2]");
  require(max_translation_mm >= 0, "max translation must be >= 0");
  require(noise_sigma >= 0 && blur_sigma >= 0, "noise and blur sigma must be >= 0");
}

Eigen::Matrix3d rotation_matrix(const std::array<double, 3>& deg) {
  const double k = std::numbers::pi / 180.0;
  const double az = deg[0] * k, ay = deg[1] * k, ax = deg[2] * k;
  Eigen::Matrix3d rz, ry, rx;
  // Coordinates are (z, y, x); rotation "about z" mixes y and x.
  rz << 1, 0, 0, 0, std::cos(az), -std::sin(az), 0, std::sin(az), std::cos(az);
  ry << std::cos(ay), 0, std::sin(ay), 0, 1, 0, -std::sin(ay), 0, std::cos(ay);
  rx << std::cos(ax), -std::sin(ax), 0, std::sin(ax), std::cos(ax), 0, 0, 0, 1;
  return rz * ry * rx;
}

TruthMap::TruthMap(const AugmentParams& params, const Dims& dims, const Spacing& spacing)
    : params_(params) {
  params.validate();
  linear_ = rotation_matrix(params.rotation_deg) *
            Eigen::Vector3d(params.scale[0], params.scale[1], params.scale[2]).asDiagonal();
  linear_inv_ = linear_.inverse();
  centre_ = Eigen::Vector3d((dims.z - 1) * spacing.z, (dims.y - 1) * spacing.y,
                            (dims.x - 1) * spacing.x) / 2.0;
}

Eigen::Vector3d TruthMap::apply(const Eigen::Vector3d& a) const {
  const Eigen::Vector3d t(params_.translation_mm[0], params_.translation_mm[1],
                          params_.translation_mm[2]);
  Eigen::Vector3d x = linear_ * (a - centre_) + centre_ + t;
  for (const auto& d : deforms_) x += d.displacement(x);
  return x;
}

Eigen::Vector3d TruthMap::inverse(const Eigen::Vector3d& b) const {
  Eigen::Vector3d y = b;
  for (auto it = deforms_.rbegin(); it != deforms_.rend(); ++it) {
    // x + d(x) = y, solved by the contraction x <- y - d(x).
    Eigen::Vector3d x = y;
    for (int k = 0; k < 200; ++k) {
      const Eigen::Vector3d next = y - it->displacement(x);
      const double step = (next - x).norm();
      x = next;
      if (step < 1e-13) break;
    }
    y = x;
  }
  const Eigen::Vector3d t(params_.translation_mm[0], params_.translation_mm[1],
                          params_.translation_mm[2]);
  return linear_inv_ * (y - centre_ - t) + centre_;
}

PhysPoint TruthMap::apply(const PhysPoint& a) const { return phys(apply(vec(a))); }

AugmentParams sample_augment_params(const AugmentRanges& r, uint64_t seed) {
  r.validate();
  std::mt19937_64 rng(mix_seed(seed, 10));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  AugmentParams p;
  for (double& a : p.rotation_deg) a = r.max_rotation_deg * u(rng);
  for (double& s : p.scale) s = r.scale_min + (r.scale_max - r.scale_min) * (0.5 + 0.5 * u(rng));
  for (double& t : p.translation_mm) t = r.max_translation_mm * u(rng);
  p.noise_sigma = r.noise_sigma;
  p.blur_sigma = r.blur_sigma;
  p.noise_seed = mix_seed(seed, 11);
  return p;
}

ScalarVolume warp_scalar(const ScalarVolume& src, const TruthMap& map) {
  ScalarVolume out(src.dims, src.spacing);
  const Eigen::Vector3d sp = spacing_vec(src.spacing);
  for (int64_t i = 0; i < src.dims.count(); ++i) {
    const Eigen::Vector3d a = map.inverse(voxel_mm(src.dims, src.spacing, i));
    out[i] = static_cast<float>(sample_trilinear(src, a.cwiseQuotient(sp)));
  }
  return out;
}

namespace {

LabelVolume warp_labels(const LabelVolume& src, const TruthMap& map) {
  LabelVolume out(src.dims(), src.num_classes(), src.spacing());
  const Eigen::Vector3d sp = spacing_vec(src.spacing());
  for (int64_t i = 0; i < src.dims().count(); ++i) {
    const Eigen::Vector3d a = map.inverse(voxel_mm(src.dims(), src.spacing(), i)).cwiseQuotient(sp);
    const VoxelPoint p{std::llround(a[0]), std::llround(a[1]), std::llround(a[2])};
    out[i] = src.dims().contains(p) ? src[src.dims().linear(p)] : 0;
  }
  return out;
}

std::vector<uint8_t> overlap_mask(const Dims& d, const Spacing& s, const TruthMap& map) {
  std::vector<uint8_t> m(static_cast<size_t>(d.count()));
  for (int64_t i = 0; i < d.count(); ++i)
    m[static_cast<size_t>(i)] = inside_extent(map.apply(voxel_mm(d, s, i)), d, s) ? 1 : 0;
  return m;
}

}  // namespace

AugmentedPair augment(const Phantom& ph, const AugmentParams& params) {
  params.validate();
  AugmentedPair pair;
  const Dims& d = ph.intensity.dims;
  const Spacing& s = ph.intensity.spacing;
  pair.truth = TruthMap(params, d, s);
  pair.structures = ph.structures;
  pair.view_a = ph.intensity;
  pair.labels_a = ph.labels;
  add_noise(pair.view_a, params.noise_sigma, mix_seed(params.noise_seed, 1));
  pair.view_b = gaussian_blur(warp_scalar(ph.intensity, pair.truth), params.blur_sigma);
  add_noise(pair.view_b, params.noise_sigma, mix_seed(params.noise_seed, 2));
  pair.labels_b = warp_labels(ph.labels, pair.truth);
  pair.overlap = overlap_mask(d, s, pair.truth);
  return pair;
}

const char* to_string(CorruptionMode m) {
  switch (m) {
    case CorruptionMode::EraseStructure: return "erase-structure";
    case CorruptionMode::IntensityShift: return "intensity-shift";
    case CorruptionMode::LocalDeform: return "local-deform";
  }
  return "unknown";
}

CorruptionMode parse_corruption_mode(const std::string& s) {
  if (s == "erase-structure") return CorruptionMode::EraseStructure;
  if (s == "intensity-shift") return CorruptionMode::IntensityShift;
  if (s == "local-deform") return CorruptionMode::LocalDeform;
  fail(ErrorKind::Validation, "unknown corruption mode '" + s + "'");
}

CorruptResult corrupt(const ScalarVolume& intensity, const LabelVolume& labels, const Corruption& c,
                      uint64_t seed) {
  require(intensity.dims == labels.dims(), "intensity and label dims differ");
  const Dims& d = intensity.dims;
  const Spacing& s = intensity.spacing;
  const Eigen::Vector3d centre = vec(c.center);
  if (!inside_extent(centre, d, s)) fail(ErrorKind::Bounds, "corruption region centre is outside the volume");
  require(c.radius_mm >= 0, "corruption radius must be >= 0");

  CorruptResult r{intensity, labels, std::nullopt};
  if (c.radius_mm == 0) return r;

  std::mt19937_64 rng(mix_seed(seed, 20));
  switch (c.mode) {
    case CorruptionMode::EraseStructure: {
      double sum = 0, sq = 0;
      int64_t n = 0;
      for (int64_t i = 0; i < d.count(); ++i) {
        if (labels[i] != 0) continue;
        sum += intensity[i];
        sq += static_cast<double>(intensity[i]) * intensity[i];
        ++n;
      }
      const double mean = n ? sum / n : 0.0;
      const double sd = n ? std::sqrt(std::max(0.0, sq / n - mean * mean)) : 0.0;
      std::normal_distribution<double> bg(mean, sd > 0 ? sd : 1e-12);
      for (int64_t i = 0; i < d.count(); ++i) {
        if (labels[i] == 0 || (voxel_mm(d, s, i) - centre).norm() > c.radius_mm) continue;
        r.intensity[i] = static_cast<float>(bg(rng));
      }
      break;
    }
    case CorruptionMode::IntensityShift: {
      require(c.gain > 0, "intensity gain must be > 0");
      for (int64_t i = 0; i < d.count(); ++i)
        if ((voxel_mm(d, s, i) - centre).norm() <= c.radius_mm)
          r.intensity[i] = static_cast<float>(c.gain * intensity[i]);
      break;
    }
    case CorruptionMode::LocalDeform: {
      require(c.amplitude_mm >= 0, "deformation amplitude must be >= 0");
      BumpDeform bump;
      bump.center = c.center;
      bump.sigma_mm = c.radius_mm / 2.0;
      // Keep |grad d| < 1 so the bump stays invertible.
      const double amp = std::min(c.amplitude_mm, 0.5 * bump.sigma_mm);
      std::normal_distribution<double> n(0.0, 1.0);
      Eigen::Vector3d dir(n(rng), n(rng), n(rng));
      dir.normalize();
      bump.amplitude_mm = {amp * dir[0], amp * dir[1], amp * dir[2]};
      AugmentParams identity;
      TruthMap map(identity, d, s);
      map.add_deform(bump);
      r.intensity = warp_scalar(intensity, map);
      r.labels = warp_labels(labels, map);
      r.deform = bump;
      break;
    }
  }
  return r;
}

AugmentedPair corrupt_pair(const AugmentedPair& pair, const Corruption& c, uint64_t seed) {
  AugmentedPair out = pair;
  CorruptResult r = corrupt(pair.view_b, pair.labels_b, c, seed);
  out.view_b = std::move(r.intensity);
  out.labels_b = std::move(r.labels);
  if (r.deform) {
    out.truth.add_deform(*r.deform);
    out.overlap = overlap_mask(pair.view_a.dims, pair.view_a.spacing, out.truth);
  }
  return out;
}

CorrespondenceSet sample_correspondences(const AugmentedPair& pair, int n, uint64_t seed) {
  require(n >= 1, "need at least one correspondence");
  const Dims& d = pair.view_a.dims;
  const Spacing& s = pair.view_a.spacing;

  std::vector<std::vector<int64_t>> candidates(pair.structures.size());
  for (int64_t i = 0; i < d.count(); ++i) {
    if (!pair.overlap[static_cast<size_t>(i)]) continue;
    const PhysPoint p = phys(voxel_mm(d, s, i));
    for (size_t k = 0; k < pair.structures.size(); ++k)
      if (ellipsoid_radius(pair.structures[k], p) <= 1.0) candidates[k].push_back(i);
  }
  std::vector<size_t> usable;
  for (size_t k = 0; k < candidates.size(); ++k)
    if (!candidates[k].empty()) usable.push_back(k);
  if (usable.empty()) fail(ErrorKind::Validation, "overlap contains no structure voxels to sample");

  std::mt19937_64 rng(mix_seed(seed, 30));
  CorrespondenceSet set;
  for (int j = 0; j < n; ++j) {
    const size_t k = usable[std::uniform_int_distribution<size_t>(0, usable.size() - 1)(rng)];
    const auto& cand = candidates[k];
    const int64_t i = cand[std::uniform_int_distribution<size_t>(0, cand.size() - 1)(rng)];
    const Structure& st = pair.structures[k];
    Correspondence c;
    c.template_mm = phys(voxel_mm(d, s, i));
    c.truth_query_mm = pair.truth.apply(c.template_mm);
    c.radius_mm = st.radius_mm;
    c.tag = "s" + std::to_string(st.id) + "/c" + std::to_string(st.cls);
    set.pairs.push_back(std::move(c));
  }
  return set;
}

EmbeddingVolume positional_field(const Dims& dims, const Spacing& spacing,
                                 const PositionalFieldSpec& spec) {
  return positional_field(dims, spacing, spec, [](const Eigen::Vector3d& p) { return p; });
}

EmbeddingVolume positional_field(
    const Dims& dims, const Spacing& spacing, const PositionalFieldSpec& spec,
    const std::function<Eigen::Vector3d(const Eigen::Vector3d&)>& source_of) {
  require(spec.channels >= 2 && spec.channels % 2 == 0, "positional field needs an even channel count");
  require(spec.length_scale_vox > 0, "length scale must be > 0");
  const int m = spec.channels / 2;
  std::mt19937_64 rng(mix_seed(spec.seed, 40));
  std::normal_distribution<double> n(0.0, 1.0 / spec.length_scale_vox);
  std::vector<Eigen::Vector3d> freq(static_cast<size_t>(m));
  for (auto& f : freq) f = Eigen::Vector3d(n(rng), n(rng), n(rng));

  EmbeddingVolume out(dims, spec.channels, spacing, true);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  for (int64_t i = 0; i < dims.count(); ++i) {
    const Eigen::Vector3d u = source_of(to_vec(dims.unlinear(i)));
    auto v = out.at_linear(i);
    for (int k = 0; k < m; ++k) {
      const double phase = freq[static_cast<size_t>(k)].dot(u);
      v[static_cast<size_t>(2 * k)] = static_cast<float>(scale * std::cos(phase));
      v[static_cast<size_t>(2 * k + 1)] = static_cast<float>(scale * std::sin(phase));
    }
  }
  return out;
}

}  // namespace anatomatch
