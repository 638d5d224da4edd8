#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rin/error.hpp"
#include "rin/rng.hpp"

namespace rin {

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

inline constexpr size_t dtype_size(Dtype d) {
  return d == Dtype::f32 ? sizeof(float) : sizeof(double);
}
const char* dtype_name(Dtype d);

using Shape = std::vector<int64_t>;
int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct Node;
struct Storage;
}  // namespace detail

// Dense tensor handle with reverse-mode autodiff. A Tensor is a shared
// reference to a graph node; ops record parents and a backward closure on a
// tape ordered by creation. Values are immutable once another op has consumed
// them; the one sanctioned exception is the optimizer updating leaf storage
// in place between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dtype = Dtype::f32);
  static Tensor full(Shape shape, double value, Dtype dtype = Dtype::f32);
  static Tensor scalar(double value, Dtype dtype = Dtype::f32);
  static Tensor from_span(Shape shape, std::span<const double> values,
                          Dtype dtype = Dtype::f32);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int64_t dim(int axis) const;  // negative axis counts from the back
  int64_t numel() const;
  Dtype dtype() const;

  double at(int64_t flat_index) const;
  double item() const;  // scalar tensors only
  std::vector<double> to_vector() const;

  template <typename T>
  std::span<const T> data() const;
  // Writable view of leaf storage; the optimizer's entry point.
  template <typename T>
  std::span<T> mutable_data();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);  // leaves only

  // Same storage, detached from the graph (no parents, no grad).
  Tensor detached() const;
  // Deep copy of the values, detached.
  Tensor clone() const;
  // Converting copy, detached.
  Tensor astype(Dtype target) const;

  const detail::Node* node() const { return n_.get(); }

 private:
  friend Tensor wrap_node(std::shared_ptr<detail::Node> n);
  std::shared_ptr<detail::Node> n_;
};

// While alive, ops do not record the graph; forwards under this guard
// produce constants. Used for sampling and the self-conditioning
// estimation pass.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// Gradient map produced by backward(): leaf node -> accumulated gradient.
class Gradients {
 public:
  bool contains(const Tensor& leaf) const;
  // Gradient for a requires-grad leaf; zeros if the leaf was never reached
  // (an empty sum of path contributions).
  Tensor at(const Tensor& leaf) const;
  size_t leaf_count() const { return leaves_; }
  // Interior nodes whose backward rule fired; each exactly once.
  uint64_t nodes_visited() const { return visited_; }

 private:
  friend Gradients backward(const Tensor& loss);
  std::vector<std::pair<const detail::Node*, Tensor>> grads_;
  size_t leaves_ = 0;
  uint64_t visited_ = 0;
};

// Reverse-mode sweep from a scalar loss. Walks the tape in reverse creation
// order, visiting each reachable node once; accumulation order is fixed, so
// single-threaded runs are bitwise reproducible.
Gradients backward(const Tensor& loss);

// ---- ops ----

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);        // same shape
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise, same shape
Tensor add_bias(const Tensor& a, const Tensor& bias);  // bias over last axis
Tensor scale(const Tensor& a, double c);

// a [.., M, K] x b [.., K, N]. Batch dims must match exactly, or b may be
// rank-2 and is then shared across a's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a, const std::vector<int>& perm);
Tensor reshape(const Tensor& a, Shape target);  // one dim may be -1
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);

Tensor softmax(const Tensor& a, int axis);  // max-subtracted, overflow-safe
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);  // normalizes the last axis
Tensor gelu(const Tensor& a);          // exact x * Phi(x)
Tensor mean_all(const Tensor& a);      // scalar mean over all elements

Tensor stop_gradient(const Tensor& a);

// Channels-last patch folding: [s1,..,sk, C] -> [s1/b1,..,sk/bk, prod(b)*C].
// Within a patch the flattening order is (offsets.., channel), row-major, so
// each output vector is the patch sub-array laid out contiguously.
Tensor space_to_depth(const Tensor& a, const std::vector<int>& blocks);
Tensor depth_to_space(const Tensor& a, const std::vector<int>& blocks);

struct AttentionParams {
  Tensor wq, bq;  // [dq, dq], [dq]
  Tensor wk, bk;  // [dkv, dq], [dq]
  Tensor wv, bv;  // [dkv, dq], [dq]
  Tensor wo, bo;  // [dq, dq], [dq]
};

// Multi-head attention, queries [tq, dq] against keys/values [tkv, dkv].
// All projections land on the query width; logits are scaled by
// 1/sqrt(dq/heads). Query-side normalization is the caller's business.
// If attn_out is non-null it receives the post-softmax map [heads, tq, tkv].
Tensor multihead_attention(const Tensor& q, const Tensor& kv, int heads,
                           const AttentionParams& p, Tensor* attn_out = nullptr);

// ---- leaf initializers ----

Tensor normal_init(Shape shape, uint64_t seed, RngStream stream, uint64_t key,
                   Dtype dtype);
// Normal(0, scale^2) resampled into |v| <= 2*scale.
Tensor truncated_normal_init(Shape shape, double scale, uint64_t seed,
                             RngStream stream, uint64_t key, Dtype dtype);

// Worker pool size used by the heavy kernels; reads RIN_THREADS once
// (default 1). Any value keeps results bitwise identical: parallel loops
// only ever split output rows, never reduction order.
int thread_count();

}  // namespace rin
