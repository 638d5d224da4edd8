#include "rin/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rin/error.hpp"

namespace rin {

uint8_t quantize_unit(double v) {
  const double b = std::round((v + 1.0) * 127.5);
  return static_cast<uint8_t>(std::clamp(b, 0.0, 255.0));
}

namespace {

void append_header(std::vector<uint8_t>& out, const char* magic, int64_t w,
                   int64_t h) {
  const std::string head = std::string(magic) + "\n" + std::to_string(w) +
                           " " + std::to_string(h) + "\n255\n";
  out.insert(out.end(), head.begin(), head.end());
}

}  // namespace

std::vector<uint8_t> encode_ppm(const Tensor& img) {
  if (!img.defined() || img.rank() != 3)
    throw ContractError("encode_ppm: want {h, w, c}");
  const int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (c < 1 || c > 3)
    throw ContractError("encode_ppm: " + std::to_string(c) + " channels");
  std::vector<uint8_t> out;
  out.reserve(static_cast<size_t>(h * w * 3) + 32);
  append_header(out, "P6", w, h);
  for (int64_t p = 0; p < h * w; ++p)
    for (int64_t k = 0; k < 3; ++k) {
      double v = -1.0;  // channels beyond the data stay dark
      if (c == 1) v = img.at(p);
      else if (k < c) v = img.at(p * c + k);
      out.push_back(quantize_unit(v));
    }
  return out;
}

std::vector<uint8_t> encode_pgm(const Tensor& img) {
  if (!img.defined() || img.rank() != 2)
    throw ContractError("encode_pgm: want {h, w}");
  const int64_t h = img.dim(0), w = img.dim(1);
  std::vector<uint8_t> out;
  out.reserve(static_cast<size_t>(h * w) + 32);
  append_header(out, "P5", w, h);
  for (int64_t p = 0; p < h * w; ++p) {
    const double v = std::clamp(img.at(p), 0.0, 1.0);
    out.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
  }
  return out;
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path);
}

void write_ppm(const std::string& path, const Tensor& img) {
  write_bytes(path, encode_ppm(img));
}

}  // namespace rin
