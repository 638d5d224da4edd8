#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rin/tensor.hpp"

namespace rin {

// Everything a resumed run needs, bit for bit.
struct TrainState {
  std::string config_text;  // canonical run configuration
  uint64_t step = 0;        // updates completed
  uint64_t seed = 0;
  std::vector<std::pair<std::string, Tensor>> params;
  int64_t lamb_steps = 0;
  std::vector<std::pair<std::string, Tensor>> lamb_m, lamb_v;
  std::vector<std::pair<std::string, Tensor>> ema;
};

// Little-endian container: magic "RINCKPT1", config digest, step, then
// tagged sections CFG0 (config text), PRM0/LMB0/EMA0 (named tensors, each
// u32 name length + name + u8 dtype + u8 rank + u64 dims + raw values) and
// RNG0 (seed). Round trips bitwise.
void save_checkpoint(const std::string& path, const TrainState& state);

// Throws FormatError on bad magic, truncation, or malformed records.
TrainState load_checkpoint(const std::string& path);

// Digest stored in the file header, without decoding the tensor payload.
uint64_t checkpoint_digest(const std::string& path);

// Standalone named-tensor container from the same record codec, magic
// "RINTENS1". Used for raw analysis dumps.
void save_named_tensors(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_named_tensors(
    const std::string& path);

}  // namespace rin
