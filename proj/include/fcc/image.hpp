#pragma once

#include <string>

#include "fcc/tensor.hpp"

namespace fcc {

inline constexpr std::int64_t kImageSize = 224;

// Decode PNG/JPEG, pad to square with white borders (content centered),
// bilinear-resize to 224x224, scale to [0,1]. Channel order RGB, layout CHW.
// Grayscale inputs are replicated to 3 channels.
Tensor load_image(const std::string& path);

// Same geometry pipeline on an in-memory [3,H,W] RGB tensor in [0,1].
// A 224x224 input passes through unchanged.
Tensor preprocess_image(const Tensor& chw);

// Write a [3,H,W] RGB tensor in [0,1] as PNG.
void write_png(const std::string& path, const Tensor& chw);

}  // namespace fcc
