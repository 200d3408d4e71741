#pragma once

#include <string>

#include "soapkd/tensor.hpp"

namespace soapkd {

// 8-bit RGB PNG. Pixels are {3, H, W} in [0, 1]; writing quantizes with
// round(v * 255). Output bytes depend only on pixel values.
void write_png(const std::string& path, const Tensorf& image);
Tensorf read_png(const std::string& path);

}  // namespace soapkd
