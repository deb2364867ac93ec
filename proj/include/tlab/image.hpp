#pragma once

#include <string>

#include "tlab/tensor.hpp"

namespace tlab {

// Binary PPM (P6, maxval 255). Tensors are [3,H,W] with values in [0,1];
// writing clamps out-of-range values.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

}  // namespace tlab
