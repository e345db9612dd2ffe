#pragma once

#include <array>
#include <functional>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "anatomatch/volume.hpp"

namespace anatomatch {

// Axis-aligned ellipsoidal blob. Label = cls (1..K); 0 is background.
struct Structure {
  int id = 0;
  int cls = 1;
  PhysPoint center;
  double radius_mm = 0;                  // nominal radius, used for CPM@Radius
  std::array<double, 3> semi_axes_mm{};  // z, y, x
};

struct PhantomConfig {
  Dims dims{64, 64, 64};
  Spacing spacing{2.0, 2.0, 2.0};
  int num_classes = 6;  // structure classes, background excluded
  int n_structures = 10;
  double radius_min_mm = 6.0;
  double radius_max_mm = 12.0;
  double noise_sigma = 0.0;
  uint64_t seed = 0;

  void validate() const;
};

struct Phantom {
  ScalarVolume intensity;
  LabelVolume labels;  // num_classes = K + 1
  std::vector<Structure> structures;
};

Phantom generate_phantom(const PhantomConfig& cfg);

// Class-level intensity means; classes 1 and 2 share theirs.
double class_intensity(int cls);

// Normalized ellipsoid radius of p w.r.t. s (<= 1 inside).
double ellipsoid_radius(const Structure& s, const PhysPoint& p);

// Gaussian bump displacement x -> x + amplitude * exp(-|x - c|^2 / (2 sigma^2)), in mm.
struct BumpDeform {
  PhysPoint center;
  double sigma_mm = 1.0;
  std::array<double, 3> amplitude_mm{};

  Eigen::Vector3d displacement(const Eigen::Vector3d& x_mm) const;
};

struct AugmentParams {
  std::array<double, 3> rotation_deg{0, 0, 0};  // about z, y, x
  std::array<double, 3> scale{1, 1, 1};
  std::array<double, 3> translation_mm{0, 0, 0};
  double noise_sigma = 0.0;
  double blur_sigma = 0.0;  // voxels, applied to view b
  uint64_t noise_seed = 0;

  void validate() const;
};

// Analytic map from view-a millimetres to view-b millimetres:
//   p_b = D( R S (p_a - c) + c + t ),  D = composition of bump deformations.
class TruthMap {
 public:
  TruthMap() = default;
  TruthMap(const AugmentParams& params, const Dims& dims, const Spacing& spacing);

  const AugmentParams& params() const { return params_; }
  const Eigen::Matrix3d& linear() const { return linear_; }
  const Eigen::Vector3d& centre() const { return centre_; }
  const std::vector<BumpDeform>& deforms() const { return deforms_; }
  void add_deform(const BumpDeform& d) { deforms_.push_back(d); }

  Eigen::Vector3d apply(const Eigen::Vector3d& a_mm) const;
  Eigen::Vector3d inverse(const Eigen::Vector3d& b_mm) const;
  PhysPoint apply(const PhysPoint& a) const;

 private:
  AugmentParams params_;
  Eigen::Matrix3d linear_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d linear_inv_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d centre_ = Eigen::Vector3d::Zero();
  std::vector<BumpDeform> deforms_;
};

// Rotation R = Rz * Ry * Rx acting on (z, y, x) column vectors.
Eigen::Matrix3d rotation_matrix(const std::array<double, 3>& rotation_deg);

struct AugmentedPair {
  ScalarVolume view_a, view_b;
  LabelVolume labels_a, labels_b;
  TruthMap truth;
  std::vector<uint8_t> overlap;  // over view-a voxels: truth(p) inside view b
  std::vector<Structure> structures;  // in view-a coordinates
};

struct AugmentRanges {
  double max_rotation_deg = 15.0;
  double scale_min = 0.8, scale_max = 1.2;
  double max_translation_mm = 8.0;
  double noise_sigma = 0.02;
  double blur_sigma = 0.5;

  void validate() const;
};

AugmentParams sample_augment_params(const AugmentRanges& ranges, uint64_t seed);

// view_b(y) = view_a(truth^-1(y)) by trilinear interpolation, then blur and
// noise; labels by nearest neighbour. view_a receives independent noise.
AugmentedPair augment(const Phantom& phantom, const AugmentParams& params);

// Resamples src so that out(y) = src(map^-1(y)); used for Dirac checks.
ScalarVolume warp_scalar(const ScalarVolume& src, const TruthMap& map);

enum class CorruptionMode { EraseStructure, IntensityShift, LocalDeform };

const char* to_string(CorruptionMode m);
CorruptionMode parse_corruption_mode(const std::string& s);

struct Corruption {
  CorruptionMode mode = CorruptionMode::EraseStructure;
  PhysPoint center;       // mm
  double radius_mm = 0;   // 0 = empty region
  double gain = 1.5;      // intensity-shift
  double amplitude_mm = 2.0;  // local-deform displacement magnitude
};

struct CorruptResult {
  ScalarVolume intensity;
  LabelVolume labels;
  std::optional<BumpDeform> deform;  // local-deform only
};

CorruptResult corrupt(const ScalarVolume& intensity, const LabelVolume& labels, const Corruption& c,
                      uint64_t seed);

// Applies the corruption to view b and keeps the truth map consistent.
AugmentedPair corrupt_pair(const AugmentedPair& pair, const Corruption& c, uint64_t seed);

struct Correspondence {
  PhysPoint template_mm;    // voxel centre in view a
  PhysPoint truth_query_mm;
  double radius_mm = 0;
  std::string tag;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
};

CorrespondenceSet sample_correspondences(const AugmentedPair& pair, int n, uint64_t seed);

// Smooth, locally distinct unit-vector field built from random Fourier
// features of position: v(p) = [cos(w_k . u), sin(w_k . u)] / sqrt(M), where
// u = source_of(p) in voxels. Dot products approximate a Gaussian kernel of
// width length_scale_vox in u.
struct PositionalFieldSpec {
  int channels = 32;  // even
  double length_scale_vox = 2.0;
  uint64_t seed = 0;
};

EmbeddingVolume positional_field(const Dims& dims, const Spacing& spacing,
                                 const PositionalFieldSpec& spec);

// Field sampled at source_of(p) for every voxel p of dims.
EmbeddingVolume positional_field(const Dims& dims, const Spacing& spacing,
                                 const PositionalFieldSpec& spec,
                                 const std::function<Eigen::Vector3d(const Eigen::Vector3d&)>& source_of);

}  // namespace anatomatch
