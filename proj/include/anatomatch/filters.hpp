#pragma once

#include <vector>

#include <Eigen/Dense>

#include "anatomatch/volume.hpp"

namespace anatomatch {

// Normalized Gaussian taps, radius ceil(3 sigma). sigma <= 0 gives {1}.
std::vector<double> gaussian_kernel(double sigma_vox);

// Separable Gaussian smoothing with clamp-to-edge padding.
ScalarVolume gaussian_blur(const ScalarVolume& in, double sigma_vox);

// Central difference along one axis (0 = z, 1 = y, 2 = x), one-sided at borders,
// in intensity per voxel.
ScalarVolume gradient(const ScalarVolume& in, int axis);

// Trilinear interpolation at a continuous voxel position, clamp-to-edge.
double sample_trilinear(const ScalarVolume& v, const Eigen::Vector3d& pos);

// Same for every channel of an embedding volume (no renormalization).
void sample_trilinear(const EmbeddingVolume& v, const Eigen::Vector3d& pos, std::span<double> out);

}  // namespace anatomatch
