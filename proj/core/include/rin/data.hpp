#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "rin/tensor.hpp"

namespace rin {

enum class DatasetKind {
  kGaussian,
  kCheckerboard2d,
  kGradientImages,
  kCifar10,
  kToyVideo,
};

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kGaussian;
  Shape shape;        // per-example, channels last; empty picks the kind default
  std::string path;   // cifar10 record file
  bool clip = true;   // gaussian: clip to +-3 sigma then rescale into [-1,1]
  bool hflip = false; // mirror augmentation; doubles the index space
  int64_t examples = 0;  // synthetic size override; 0 keeps the kind default

  Shape resolved_shape() const;  // shape with the kind default applied
  void validate() const;         // throws ConfigError
};

struct Example {
  Tensor x;
  std::optional<int> label;
};

// Deterministic, randomly accessible example source. example(i) depends only
// on (spec, seed, i), so batch composition alone fixes a training run.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual int64_t size() const = 0;
  virtual Shape example_shape() const = 0;
  virtual Example example(int64_t index) const = 0;
};

std::unique_ptr<Dataset> make_dataset(const DatasetSpec& spec, uint64_t seed,
                                      Dtype dtype = Dtype::f32);

// 3073-byte records: label byte then 32x32 red, green, blue planes.
// Pixels map to [-1,1] via v/127.5 - 1. Throws FormatError with the record
// index on truncation or an out-of-range label.
std::unique_ptr<Dataset> load_cifar10(const std::string& path,
                                      Dtype dtype = Dtype::f32);

const char* dataset_kind_name(DatasetKind kind);
DatasetKind dataset_kind_from_name(const std::string& name);

}  // namespace rin
