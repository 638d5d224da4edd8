#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rin/tensor.hpp"

namespace rin {

// Byte for a value in [-1,1]: round((v+1)*127.5), clamped to [0,255].
uint8_t quantize_unit(double v);

// Binary P6 bytes for an {h, w, c} tensor of values in [-1,1]. One channel
// is replicated to gray; two channels leave blue dark; three map directly.
std::vector<uint8_t> encode_ppm(const Tensor& img);

// Binary P5 (grayscale) bytes for an {h, w} tensor of values in [0,1].
std::vector<uint8_t> encode_pgm(const Tensor& img);

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
void write_ppm(const std::string& path, const Tensor& img);

}  // namespace rin
