#pragma once

#include <span>
#include <vector>

#include "yoda/volume.hpp"

namespace yoda {

enum class Boundary {
  replicate,    ///< clamp sample positions to the raster edge
  renormalize,  ///< drop out-of-raster taps and renormalise the remaining weights
};

/// Normalised 1D Gaussian taps of length 2*radius+1.
std::vector<double> gaussian_kernel(double sigma, int radius);

/// Separable 3D Gaussian filter over a double raster laid out like Volume.
std::vector<double> gaussian_filter(std::span<const double> data, const Dims& dims, double sigma, int radius,
                                    Boundary boundary);

Volume gaussian_filter(const Volume& v, double sigma, int radius, Boundary boundary);

}  // namespace yoda
