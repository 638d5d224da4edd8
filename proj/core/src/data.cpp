#include "rin/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <utility>
#include <vector>

#include "rin/error.hpp"
#include "rin/rng.hpp"

namespace rin {

namespace {

constexpr int64_t kSynthSize = 1 << 20;

Shape default_shape(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kGaussian:
    case DatasetKind::kCheckerboard2d:
    case DatasetKind::kGradientImages:
      return {8, 8, 2};
    case DatasetKind::kCifar10:
      return {32, 32, 3};
    case DatasetKind::kToyVideo:
      return {4, 16, 16, 3};
  }
  throw ConfigError("dataset: unknown kind");
}

}  // namespace

Shape DatasetSpec::resolved_shape() const {
  return shape.empty() ? default_shape(kind) : shape;
}

void DatasetSpec::validate() const {
  const Shape s = resolved_shape();
  for (int64_t e : s)
    if (e <= 0) throw ConfigError("dataset: non-positive extent in shape");
  if (examples < 0) throw ConfigError("dataset: negative example count");
  switch (kind) {
    case DatasetKind::kGaussian:
      break;
    case DatasetKind::kCheckerboard2d:
      if (s.size() != 3 || s[2] != 2)
        throw ConfigError("dataset: checkerboard2d wants {h, w, 2}, got " +
                          shape_str(s));
      break;
    case DatasetKind::kGradientImages:
      if (s.size() != 3)
        throw ConfigError("dataset: gradient-images wants {h, w, c}, got " +
                          shape_str(s));
      if (s[0] < 2 || s[1] < 2)
        throw ConfigError("dataset: gradient-images need h, w >= 2");
      break;
    case DatasetKind::kCifar10:
      if (path.empty()) throw ConfigError("dataset: cifar10 needs a path");
      if (s != Shape{32, 32, 3})
        throw ConfigError("dataset: cifar10 records are {32, 32, 3}");
      break;
    case DatasetKind::kToyVideo:
      if (s.size() != 4 || s[3] != 3)
        throw ConfigError("dataset: toy-video wants {frames, h, w, 3}, got " +
                          shape_str(s));
      if (s[1] < 4 || s[2] < 4)
        throw ConfigError("dataset: toy-video frames need h, w >= 4");
      break;
  }
}

namespace {

class GaussianData : public Dataset {
 public:
  GaussianData(Shape shape, bool clip, int64_t n, uint64_t seed, Dtype dtype)
      : shape_(std::move(shape)), clip_(clip), n_(n), seed_(seed),
        dtype_(dtype) {}
  int64_t size() const override { return n_; }
  Shape example_shape() const override { return shape_; }
  Example example(int64_t index) const override {
    const int64_t count = shape_numel(shape_);
    std::vector<double> v(static_cast<size_t>(count));
    for (int64_t j = 0; j < count; ++j) {
      double z = rng::normal(seed_, RngStream::kDataset,
                             static_cast<uint64_t>(index),
                             static_cast<uint64_t>(j));
      if (clip_) z = std::clamp(z, -3.0, 3.0) / 3.0;
      v[static_cast<size_t>(j)] = z;
    }
    return {Tensor::from_span(shape_, v, dtype_), std::nullopt};
  }

 private:
  Shape shape_;
  bool clip_;
  int64_t n_;
  uint64_t seed_;
  Dtype dtype_;
};

// Point sets on the even-parity cells of an h x w board. Channel 0 holds the
// points (+1 occupied, -1 empty), channel 1 the fixed parity mask.
class CheckerboardData : public Dataset {
 public:
  CheckerboardData(Shape shape, int64_t n, uint64_t seed, Dtype dtype)
      : shape_(std::move(shape)), n_(n), seed_(seed), dtype_(dtype) {
    for (int64_t y = 0; y < shape_[0]; ++y)
      for (int64_t x = 0; x < shape_[1]; ++x)
        if ((x + y) % 2 == 0) even_cells_.push_back(y * shape_[1] + x);
  }
  int64_t size() const override { return n_; }
  Shape example_shape() const override { return shape_; }
  Example example(int64_t index) const override {
    const int64_t h = shape_[0], w = shape_[1];
    std::vector<double> v(static_cast<size_t>(h * w * 2));
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        v[static_cast<size_t>((y * w + x) * 2)] = -1.0;
        v[static_cast<size_t>((y * w + x) * 2 + 1)] =
            (x + y) % 2 == 0 ? 1.0 : -1.0;
      }
    const int64_t points = h;
    for (int64_t p = 0; p < points; ++p) {
      const double u = rng::uniform(seed_, RngStream::kDataset,
                                    static_cast<uint64_t>(index),
                                    static_cast<uint64_t>(p));
      const auto pick = std::min<size_t>(
          even_cells_.size() - 1,
          static_cast<size_t>(u * static_cast<double>(even_cells_.size())));
      v[static_cast<size_t>(even_cells_[pick] * 2)] = 1.0;
    }
    return {Tensor::from_span(shape_, v, dtype_), std::nullopt};
  }

 private:
  Shape shape_;
  int64_t n_;
  uint64_t seed_;
  Dtype dtype_;
  std::vector<int64_t> even_cells_;
};

// Four smooth ramps; the index picks the direction and each further channel
// rotates it by one. Values span [-1,1] and the family is fixed, so a small
// model can be driven to memorize it.
class GradientData : public Dataset {
 public:
  GradientData(Shape shape, int64_t n, Dtype dtype)
      : shape_(std::move(shape)), n_(n), dtype_(dtype) {}
  int64_t size() const override { return n_; }
  Shape example_shape() const override { return shape_; }
  Example example(int64_t index) const override {
    const int64_t h = shape_[0], w = shape_[1], c = shape_[2];
    std::vector<double> v(static_cast<size_t>(h * w * c));
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t k = 0; k < c; ++k)
          v[static_cast<size_t>((y * w + x) * c + k)] =
              ramp((index + k) % 4, x, y, w, h);
    return {Tensor::from_span(shape_, v, dtype_), std::nullopt};
  }

 private:
  static double ramp(int64_t dir, int64_t x, int64_t y, int64_t w, int64_t h) {
    const double fx = static_cast<double>(x) / static_cast<double>(w - 1);
    const double fy = static_cast<double>(y) / static_cast<double>(h - 1);
    switch (dir) {
      case 0: return 2.0 * fx - 1.0;
      case 1: return 2.0 * fy - 1.0;
      case 2: return fx + fy - 1.0;
      default: return fx - fy;
    }
  }

  Shape shape_;
  int64_t n_;
  Dtype dtype_;
};

// A 4x4 bright square on a dark background; frame k sits k pixels to the
// right of the start cell, wrapping at the border. Frame 0 doubles as the
// context frame for prediction runs.
class ToyVideoData : public Dataset {
 public:
  ToyVideoData(Shape shape, int64_t n, uint64_t seed, Dtype dtype)
      : shape_(std::move(shape)), n_(n), seed_(seed), dtype_(dtype) {}
  int64_t size() const override { return n_; }
  Shape example_shape() const override { return shape_; }
  Example example(int64_t index) const override {
    const int64_t f = shape_[0], h = shape_[1], w = shape_[2];
    const int64_t x0 = static_cast<int64_t>(
        rng::uniform(seed_, RngStream::kDataset, static_cast<uint64_t>(index),
                     0) *
        static_cast<double>(w));
    const int64_t y0 = static_cast<int64_t>(
        rng::uniform(seed_, RngStream::kDataset, static_cast<uint64_t>(index),
                     1) *
        static_cast<double>(h));
    std::vector<double> v(static_cast<size_t>(shape_numel(shape_)), -1.0);
    for (int64_t k = 0; k < f; ++k)
      for (int64_t dy = 0; dy < 4; ++dy)
        for (int64_t dx = 0; dx < 4; ++dx) {
          const int64_t y = (y0 + dy) % h;
          const int64_t x = (x0 + k + dx) % w;
          for (int64_t c = 0; c < 3; ++c)
            v[static_cast<size_t>((((k * h) + y) * w + x) * 3 + c)] = 1.0;
        }
    return {Tensor::from_span(shape_, v, dtype_), std::nullopt};
  }

 private:
  Shape shape_;
  int64_t n_;
  uint64_t seed_;
  Dtype dtype_;
};

class Cifar10Data : public Dataset {
 public:
  Cifar10Data(std::string path, Dtype dtype) : dtype_(dtype) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cifar10: cannot open " + path);
    bytes_.assign(std::istreambuf_iterator<char>(in),
                  std::istreambuf_iterator<char>());
    if (bytes_.empty()) throw FormatError("cifar10: empty file " + path);
    if (bytes_.size() % kRecord != 0)
      throw FormatError("cifar10: truncated record " +
                        std::to_string(bytes_.size() / kRecord) + " in " +
                        path + " (" + std::to_string(bytes_.size() % kRecord) +
                        " trailing bytes)");
    records_ = static_cast<int64_t>(bytes_.size() / kRecord);
    for (int64_t i = 0; i < records_; ++i) {
      const uint8_t label = bytes_[static_cast<size_t>(i) * kRecord];
      if (label >= 10)
        throw FormatError("cifar10: record " + std::to_string(i) +
                          " has label " + std::to_string(label));
    }
  }
  int64_t size() const override { return records_; }
  Shape example_shape() const override { return {32, 32, 3}; }
  Example example(int64_t index) const override {
    if (index < 0 || index >= records_)
      throw ContractError("cifar10: record index " + std::to_string(index) +
                          " out of range");
    const uint8_t* rec = bytes_.data() + static_cast<size_t>(index) * kRecord;
    std::vector<double> v(32 * 32 * 3);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t p = 0; p < 32 * 32; ++p)
        v[static_cast<size_t>(p * 3 + c)] =
            static_cast<double>(rec[1 + c * 32 * 32 + p]) / 127.5 - 1.0;
    return {Tensor::from_span({32, 32, 3}, v, dtype_),
            static_cast<int>(rec[0])};
  }

 private:
  static constexpr size_t kRecord = 3073;
  std::vector<uint8_t> bytes_;
  int64_t records_ = 0;
  Dtype dtype_;
};

// Doubles the index space: even indices pass through, odd ones mirror the
// width axis.
class HflipData : public Dataset {
 public:
  explicit HflipData(std::unique_ptr<Dataset> base) : base_(std::move(base)) {}
  int64_t size() const override { return 2 * base_->size(); }
  Shape example_shape() const override { return base_->example_shape(); }
  Example example(int64_t index) const override {
    Example e = base_->example(index / 2);
    if (index % 2 == 0) return e;
    const Shape& s = e.x.shape();
    const int64_t w_axis = static_cast<int64_t>(s.size()) - 2;
    int64_t outer = 1, w = s[static_cast<size_t>(w_axis)], inner = s.back();
    for (int64_t i = 0; i < w_axis; ++i) outer *= s[static_cast<size_t>(i)];
    std::vector<double> v(static_cast<size_t>(e.x.numel()));
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t i = 0; i < inner; ++i)
          v[static_cast<size_t>((o * w + x) * inner + i)] =
              e.x.at((o * w + (w - 1 - x)) * inner + i);
    return {Tensor::from_span(s, v, e.x.dtype()), e.label};
  }

 private:
  std::unique_ptr<Dataset> base_;
};

}  // namespace

std::unique_ptr<Dataset> load_cifar10(const std::string& path, Dtype dtype) {
  return std::make_unique<Cifar10Data>(path, dtype);
}

std::unique_ptr<Dataset> make_dataset(const DatasetSpec& spec, uint64_t seed,
                                      Dtype dtype) {
  spec.validate();
  const Shape s = spec.resolved_shape();
  const int64_t n = spec.examples > 0 ? spec.examples : kSynthSize;
  std::unique_ptr<Dataset> d;
  switch (spec.kind) {
    case DatasetKind::kGaussian:
      d = std::make_unique<GaussianData>(s, spec.clip, n, seed, dtype);
      break;
    case DatasetKind::kCheckerboard2d:
      d = std::make_unique<CheckerboardData>(s, n, seed, dtype);
      break;
    case DatasetKind::kGradientImages:
      d = std::make_unique<GradientData>(
          s, spec.examples > 0 ? spec.examples : 4, dtype);
      break;
    case DatasetKind::kCifar10:
      d = load_cifar10(spec.path, dtype);
      break;
    case DatasetKind::kToyVideo:
      d = std::make_unique<ToyVideoData>(s, n, seed, dtype);
      break;
  }
  if (spec.hflip) d = std::make_unique<HflipData>(std::move(d));
  return d;
}

const char* dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kGaussian: return "gaussian";
    case DatasetKind::kCheckerboard2d: return "checkerboard2d";
    case DatasetKind::kGradientImages: return "gradient-images";
    case DatasetKind::kCifar10: return "cifar10";
    case DatasetKind::kToyVideo: return "toy-video";
  }
  return "?";
}

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "gaussian") return DatasetKind::kGaussian;
  if (name == "checkerboard2d") return DatasetKind::kCheckerboard2d;
  if (name == "gradient-images") return DatasetKind::kGradientImages;
  if (name == "cifar10") return DatasetKind::kCifar10;
  if (name == "toy-video") return DatasetKind::kToyVideo;
  throw ConfigError("dataset: unknown kind '" + name + "'");
}

}  // namespace rin
