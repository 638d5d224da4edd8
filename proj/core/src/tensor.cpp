#include "rin/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <numbers>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace rin {

const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Storage {
  Dtype dtype = Dtype::f32;
  Shape shape;
  int64_t count = 0;
  std::vector<std::byte> bytes;

  template <class T>
  std::span<T> as() {
    return {reinterpret_cast<T*>(bytes.data()), static_cast<size_t>(count)};
  }
  template <class T>
  std::span<const T> as() const {
    return {reinterpret_cast<const T*>(bytes.data()),
            static_cast<size_t>(count)};
  }
  double get(int64_t i) const {
    return dtype == Dtype::f32 ? static_cast<double>(as<float>()[i])
                               : as<double>()[i];
  }
  void set(int64_t i, double v) {
    if (dtype == Dtype::f32)
      as<float>()[i] = static_cast<float>(v);
    else
      as<double>()[i] = v;
  }
};

using StoragePtr = std::shared_ptr<Storage>;

StoragePtr make_storage(Shape shape, Dtype dt) {
  for (int64_t d : shape)
    if (d < 1)
      throw ContractError("tensor shape " + shape_str(shape) +
                          " has a nonpositive extent");
  auto s = std::make_shared<Storage>();
  s->dtype = dt;
  s->count = shape_numel(shape);
  s->shape = std::move(shape);
  s->bytes.assign(static_cast<size_t>(s->count) * dtype_size(dt),
                  std::byte{0});
  return s;
}

using BackwardFn =
    std::function<void(const Storage& gout, const std::vector<Storage*>&)>;

struct Node {
  StoragePtr value;
  bool requires_grad = false;
  bool leaf = true;
  uint64_t seq = 0;
  std::vector<Tensor> parents;
  BackwardFn backward;
  const char* op = "leaf";
};

namespace {

std::atomic<uint64_t> g_seq{0};
thread_local bool g_grad_enabled = true;

uint64_t next_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed); }

[[noreturn]] void undefined_fail(const char* op) {
  throw ContractError(std::string(op) + ": undefined tensor operand");
}

}  // namespace
}  // namespace detail

using detail::Node;
using detail::Storage;
using detail::StoragePtr;

Tensor wrap_node(std::shared_ptr<Node> n) {
  Tensor t;
  t.n_ = std::move(n);
  return t;
}

namespace {

Tensor make_leaf(StoragePtr value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->seq = detail::next_seq();
  return wrap_node(n);
}

// Records an op node. The backward closure is only materialized when grads
// are enabled and some parent needs them; sampling pays no tape cost.
template <class BwFactory>
Tensor make_op(const char* op, StoragePtr value, std::vector<Tensor> parents,
               BwFactory&& bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->leaf = false;
  n->op = op;
  n->seq = detail::next_seq();
  if (detail::g_grad_enabled) {
    bool any = false;
    for (const Tensor& p : parents)
      if (p.requires_grad()) {
        any = true;
        break;
      }
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward = bw();
    }
  }
  return wrap_node(n);
}

const Storage& val(const Tensor& t) { return *t.node()->value; }

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) detail::undefined_fail(op);
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ContractError(std::string(op) + ": mixed dtypes " +
                        dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

template <class F>
void dispatch(Dtype dt, F&& f) {
  if (dt == Dtype::f32)
    f(float{});
  else
    f(double{});
}

int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ContractError(std::string(op) + ": axis " + std::to_string(axis) +
                        " out of range for rank " + std::to_string(rank));
  return a;
}

// ---- worker pool ----

template <class F>
void pfor(int64_t n, F&& body) {  // body(begin, end)
  const int tc = thread_count();
  if (tc <= 1 || n < 2) {
    body(0, n);
    return;
  }
  const int workers = static_cast<int>(std::min<int64_t>(tc, n));
  const int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> ts;
  ts.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int64_t b = w * chunk;
    const int64_t e = std::min<int64_t>(n, b + chunk);
    if (b >= e) break;
    ts.emplace_back([&body, b, e] { body(b, e); });
  }
  for (auto& t : ts) t.join();
}

// ---- matmul kernels; all accumulate into out ----

template <class T>
void mm_nn_acc(const T* a, const T* b, T* out, int64_t M, int64_t K,
               int64_t N) {
  pfor(M, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* ai = a + i * K;
      T* oi = out + i * N;
      for (int64_t k = 0; k < K; ++k) {
        const T aik = ai[k];
        const T* bk = b + k * N;
        for (int64_t j = 0; j < N; ++j) oi[j] += aik * bk[j];
      }
    }
  });
}

// out[i,j] += sum_k x[i,k] * y[j,k]
template <class T>
void mm_nt_acc(const T* x, const T* y, T* out, int64_t M, int64_t K,
               int64_t N) {
  pfor(M, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* xi = x + i * K;
      T* oi = out + i * N;
      for (int64_t j = 0; j < N; ++j) {
        const T* yj = y + j * K;
        T acc = 0;
        for (int64_t k = 0; k < K; ++k) acc += xi[k] * yj[k];
        oi[j] += acc;
      }
    }
  });
}

// out[i,j] += sum_k x[k,i] * y[k,j]
template <class T>
void mm_tn_acc(const T* x, const T* y, T* out, int64_t M, int64_t K,
               int64_t N) {
  pfor(M, [=](int64_t i0, int64_t i1) {
    for (int64_t k = 0; k < K; ++k) {
      const T* xk = x + k * M;
      const T* yk = y + k * N;
      for (int64_t i = i0; i < i1; ++i) {
        const T xki = xk[i];
        T* oi = out + i * N;
        for (int64_t j = 0; j < N; ++j) oi[j] += xki * yk[j];
      }
    }
  });
}

}  // namespace

int thread_count() {
  static const int n = [] {
    if (const char* env = std::getenv("RIN_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    return 1;
  }();
  return n;
}

// ---- Tensor methods ----

Tensor Tensor::zeros(Shape shape, Dtype dtype) {
  return make_leaf(detail::make_storage(std::move(shape), dtype));
}

Tensor Tensor::full(Shape shape, double value, Dtype dtype) {
  auto s = detail::make_storage(std::move(shape), dtype);
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : s->as<T>()) v = static_cast<T>(value);
  });
  return make_leaf(std::move(s));
}

Tensor Tensor::scalar(double value, Dtype dtype) {
  return full({}, value, dtype);
}

Tensor Tensor::from_span(Shape shape, std::span<const double> values,
                         Dtype dtype) {
  auto s = detail::make_storage(std::move(shape), dtype);
  if (s->count != static_cast<int64_t>(values.size()))
    throw ShapeError("from_span: " + shape_str(s->shape) + " wants " +
                     std::to_string(s->count) + " values, got " +
                     std::to_string(values.size()));
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto dst = s->as<T>();
    for (int64_t i = 0; i < s->count; ++i)
      dst[i] = static_cast<T>(values[i]);
  });
  return make_leaf(std::move(s));
}

const Shape& Tensor::shape() const {
  if (!defined()) detail::undefined_fail("shape");
  return n_->value->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int64_t Tensor::dim(int axis) const {
  const Shape& s = shape();
  const int a = normalize_axis(axis, static_cast<int>(s.size()), "dim");
  return s[a];
}

int64_t Tensor::numel() const {
  if (!defined()) detail::undefined_fail("numel");
  return n_->value->count;
}

Dtype Tensor::dtype() const {
  if (!defined()) detail::undefined_fail("dtype");
  return n_->value->dtype;
}

double Tensor::at(int64_t flat_index) const {
  if (!defined()) detail::undefined_fail("at");
  if (flat_index < 0 || flat_index >= numel())
    throw ContractError("at: index " + std::to_string(flat_index) +
                        " out of range for " + std::to_string(numel()));
  return n_->value->get(flat_index);
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item: tensor has " + std::to_string(numel()) +
                        " elements");
  return n_->value->get(0);
}

std::vector<double> Tensor::to_vector() const {
  if (!defined()) detail::undefined_fail("to_vector");
  std::vector<double> out(static_cast<size_t>(numel()));
  for (int64_t i = 0; i < numel(); ++i) out[i] = n_->value->get(i);
  return out;
}

template <typename T>
std::span<const T> Tensor::data() const {
  if (!defined()) detail::undefined_fail("data");
  if ((std::is_same_v<T, float> && dtype() != Dtype::f32) ||
      (std::is_same_v<T, double> && dtype() != Dtype::f64))
    throw ContractError(std::string("data: tensor is ") + dtype_name(dtype()));
  return n_->value->as<T>();
}

template <typename T>
std::span<T> Tensor::mutable_data() {
  if (!defined()) detail::undefined_fail("mutable_data");
  if (!n_->leaf)
    throw ContractError("mutable_data: only leaf tensors may be written");
  if ((std::is_same_v<T, float> && dtype() != Dtype::f32) ||
      (std::is_same_v<T, double> && dtype() != Dtype::f64))
    throw ContractError(std::string("mutable_data: tensor is ") +
                        dtype_name(dtype()));
  return n_->value->as<T>();
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

bool Tensor::requires_grad() const { return defined() && n_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  if (!defined()) detail::undefined_fail("set_requires_grad");
  if (!n_->leaf)
    throw ContractError("set_requires_grad: only valid on leaf tensors");
  n_->requires_grad = v;
  return *this;
}

Tensor Tensor::detached() const {
  if (!defined()) detail::undefined_fail("detached");
  auto n = std::make_shared<Node>();
  n->value = n_->value;  // shares storage
  n->seq = detail::next_seq();
  return wrap_node(n);
}

Tensor Tensor::clone() const {
  if (!defined()) detail::undefined_fail("clone");
  auto s = std::make_shared<Storage>(*n_->value);
  return make_leaf(std::move(s));
}

Tensor Tensor::astype(Dtype target) const {
  if (!defined()) detail::undefined_fail("astype");
  if (target == dtype()) return clone();
  auto s = detail::make_storage(shape(), target);
  for (int64_t i = 0; i < numel(); ++i) s->set(i, n_->value->get(i));
  return make_leaf(std::move(s));
}

NoGradGuard::NoGradGuard() : prev_(detail::g_grad_enabled) {
  detail::g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }
bool grad_enabled() { return detail::g_grad_enabled; }

// ---- elementwise ops ----

namespace {

enum class BinKind { kAdd, kSub, kMul };

Tensor binary_same_shape(const char* op, BinKind kind, const Tensor& a,
                         const Tensor& b) {
  check_defined(a, op);
  check_defined(b, op);
  check_same_dtype(a, b, op);
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
  auto out = detail::make_storage(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    auto y = val(b).as<T>();
    auto o = out->as<T>();
    switch (kind) {
      case BinKind::kAdd:
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
        break;
      case BinKind::kSub:
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
        break;
      case BinKind::kMul:
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
        break;
    }
  });
  return make_op(op, std::move(out), {a, b}, [&] {
    detail::BackwardFn fn;
    switch (kind) {
      case BinKind::kAdd:
        fn = [dt = a.dtype()](const Storage& g,
                              const std::vector<Storage*>& pg) {
          dispatch(dt, [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.as<T>();
            for (int p = 0; p < 2; ++p)
              if (pg[p]) {
                auto d = pg[p]->as<T>();
                for (size_t i = 0; i < gs.size(); ++i) d[i] += gs[i];
              }
          });
        };
        break;
      case BinKind::kSub:
        fn = [dt = a.dtype()](const Storage& g,
                              const std::vector<Storage*>& pg) {
          dispatch(dt, [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.as<T>();
            if (pg[0]) {
              auto d = pg[0]->as<T>();
              for (size_t i = 0; i < gs.size(); ++i) d[i] += gs[i];
            }
            if (pg[1]) {
              auto d = pg[1]->as<T>();
              for (size_t i = 0; i < gs.size(); ++i) d[i] -= gs[i];
            }
          });
        };
        break;
      case BinKind::kMul:
        fn = [a, b](const Storage& g, const std::vector<Storage*>& pg) {
          dispatch(a.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.as<T>();
            auto x = val(a).as<T>();
            auto y = val(b).as<T>();
            if (pg[0]) {
              auto d = pg[0]->as<T>();
              for (size_t i = 0; i < gs.size(); ++i) d[i] += gs[i] * y[i];
            }
            if (pg[1]) {
              auto d = pg[1]->as<T>();
              for (size_t i = 0; i < gs.size(); ++i) d[i] += gs[i] * x[i];
            }
          });
        };
        break;
    }
    return fn;
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape("add", BinKind::kAdd, a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape("sub", BinKind::kSub, a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape("mul", BinKind::kMul, a, b);
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const char* op = "add_bias";
  check_defined(a, op);
  check_defined(bias, op);
  check_same_dtype(a, bias, op);
  if (a.rank() < 1 || bias.rank() != 1 || bias.dim(0) != a.dim(-1))
    shape_fail(op, a.shape(), bias.shape());
  const int64_t cols = a.dim(-1);
  const int64_t rows = a.numel() / cols;
  auto out = detail::make_storage(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    auto bv = val(bias).as<T>();
    auto o = out->as<T>();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c)
        o[r * cols + c] = x[r * cols + c] + bv[c];
  });
  return make_op(op, std::move(out), {a, bias}, [&] {
    return detail::BackwardFn(
        [dt = a.dtype(), rows, cols](const Storage& g,
                                     const std::vector<Storage*>& pg) {
          dispatch(dt, [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.as<T>();
            if (pg[0]) {
              auto d = pg[0]->as<T>();
              for (size_t i = 0; i < gs.size(); ++i) d[i] += gs[i];
            }
            if (pg[1]) {
              auto d = pg[1]->as<T>();
              for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c) d[c] += gs[r * cols + c];
            }
          });
        });
  });
}

Tensor scale(const Tensor& a, double c) {
  check_defined(a, "scale");
  auto out = detail::make_storage(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    auto o = out->as<T>();
    const T cc = static_cast<T>(c);
    for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * cc;
  });
  return make_op("scale", std::move(out), {a}, [&] {
    return detail::BackwardFn(
        [dt = a.dtype(), c](const Storage& g, const std::vector<Storage*>& pg) {
          if (!pg[0]) return;
          dispatch(dt, [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.as<T>();
            auto d = pg[0]->as<T>();
            const T cc = static_cast<T>(c);
            for (size_t i = 0; i < gs.size(); ++i) d[i] += gs[i] * cc;
          });
        });
  });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  const char* op = "matmul";
  check_defined(a, op);
  check_defined(b, op);
  check_same_dtype(a, b, op);
  if (a.rank() < 2 || b.rank() < 2) shape_fail(op, a.shape(), b.shape());
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const int64_t M = sa[sa.size() - 2], K = sa[sa.size() - 1];
  const int64_t Kb = sb[sb.size() - 2], N = sb[sb.size() - 1];
  if (K != Kb) shape_fail(op, sa, sb);
  const bool shared_b = b.rank() == 2;
  if (!shared_b && a.rank() != b.rank()) shape_fail(op, sa, sb);
  if (!shared_b &&
      !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2))
    shape_fail(op, sa, sb);
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];

  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(M);
  out_shape.push_back(N);
  auto out = detail::make_storage(std::move(out_shape), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* ap = val(a).as<T>().data();
    const T* bp = val(b).as<T>().data();
    T* op_ = out->as<T>().data();
    for (int64_t g = 0; g < batch; ++g)
      mm_nn_acc(ap + g * M * K, shared_b ? bp : bp + g * K * N,
                op_ + g * M * N, M, K, N);
  });
  return make_op(op, std::move(out), {a, b}, [&] {
    return detail::BackwardFn([a, b, M, K, N, batch, shared_b](
                                  const Storage& g,
                                  const std::vector<Storage*>& pg) {
      dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* gp = g.as<T>().data();
        const T* ap = val(a).as<T>().data();
        const T* bp = val(b).as<T>().data();
        for (int64_t i = 0; i < batch; ++i) {
          const T* gi = gp + i * M * N;
          const T* bi = shared_b ? bp : bp + i * K * N;
          if (pg[0])  // dA[M,K] += g . B^T
            mm_nt_acc(gi, bi, pg[0]->as<T>().data() + i * M * K, M, N, K);
          if (pg[1])  // dB[K,N] += A^T . g
            mm_tn_acc(ap + i * M * K, gi,
                      shared_b ? pg[1]->as<T>().data()
                               : pg[1]->as<T>().data() + i * K * N,
                      K, M, N);
        }
      });
    });
  });
}

// ---- layout ops ----

Tensor transpose(const Tensor& a, const std::vector<int>& perm) {
  const char* op = "transpose";
  check_defined(a, op);
  const int r = a.rank();
  if (static_cast<int>(perm.size()) != r)
    throw ContractError("transpose: permutation size " +
                        std::to_string(perm.size()) + " vs rank " +
                        std::to_string(r));
  std::vector<bool> hit(r, false);
  for (int p : perm) {
    if (p < 0 || p >= r || hit[p])
      throw ContractError("transpose: invalid permutation");
    hit[p] = true;
  }
  const Shape& in = a.shape();
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = in[perm[i]];

  // out strides expressed against input axes: walking the input linearly,
  // each input axis advances the output index by ostride[perm^-1].
  std::vector<int64_t> ostride(r, 1);
  for (int i = r - 2; i >= 0; --i)
    ostride[i] = ostride[i + 1] * out_shape[i + 1];
  std::vector<int64_t> step(r);  // per input axis
  for (int i = 0; i < r; ++i) step[perm[i]] = ostride[i];

  auto out = detail::make_storage(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    auto o = out->as<T>();
    std::vector<int64_t> idx(r, 0);
    int64_t oi = 0;
    for (int64_t ii = 0; ii < a.numel(); ++ii) {
      o[oi] = x[ii];
      for (int ax = r - 1; ax >= 0; --ax) {
        oi += step[ax];
        if (++idx[ax] < in[ax]) break;
        oi -= step[ax] * in[ax];
        idx[ax] = 0;
      }
    }
  });
  return make_op(op, std::move(out), {a}, [&] {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
    return detail::BackwardFn(
        [a, inv](const Storage& g, const std::vector<Storage*>& pg) {
          if (!pg[0]) return;
          // transpose the gradient back with the inverse permutation
          const int r = static_cast<int>(inv.size());
          const Shape& gin = g.shape;
          std::vector<int64_t> ostride(r, 1);
          const Shape& pshape = pg[0]->shape;
          for (int i = r - 2; i >= 0; --i)
            ostride[i] = ostride[i + 1] * pshape[i + 1];
          std::vector<int64_t> step(r);
          for (int i = 0; i < r; ++i) step[inv[i]] = ostride[i];
          dispatch(g.dtype, [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.as<T>();
            auto d = pg[0]->as<T>();
            std::vector<int64_t> idx(r, 0);
            int64_t oi = 0;
            for (int64_t ii = 0; ii < g.count; ++ii) {
              d[oi] += gs[ii];
              for (int ax = r - 1; ax >= 0; --ax) {
                oi += step[ax];
                if (++idx[ax] < gin[ax]) break;
                oi -= step[ax] * gin[ax];
                idx[ax] = 0;
              }
            }
          });
        });
  });
}

Tensor reshape(const Tensor& a, Shape target) {
  check_defined(a, "reshape");
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] == -1) {
      if (infer >= 0) throw ContractError("reshape: more than one -1");
      infer = static_cast<int>(i);
    } else {
      known *= target[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known != 0)
      shape_fail("reshape", a.shape(), target);
    target[infer] = a.numel() / known;
    known *= target[infer];
  }
  if (known != a.numel()) shape_fail("reshape", a.shape(), target);
  auto out = detail::make_storage(std::move(target), a.dtype());
  std::memcpy(out->bytes.data(), val(a).bytes.data(), out->bytes.size());
  return make_op("reshape", std::move(out), {a}, [&] {
    return detail::BackwardFn(
        [dt = a.dtype()](const Storage& g, const std::vector<Storage*>& pg) {
          if (!pg[0]) return;
          dispatch(dt, [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.as<T>();
            auto d = pg[0]->as<T>();
            for (size_t i = 0; i < gs.size(); ++i) d[i] += gs[i];
          });
        });
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  const char* op = "concat";
  if (parts.empty()) throw ContractError("concat: no operands");
  for (const Tensor& p : parts) check_defined(p, op);
  const int r = parts[0].rank();
  const int ax = normalize_axis(axis, r, op);
  Shape out_shape = parts[0].shape();
  int64_t total_ax = 0;
  for (const Tensor& p : parts) {
    check_same_dtype(parts[0], p, op);
    if (p.rank() != r) shape_fail(op, parts[0].shape(), p.shape());
    for (int i = 0; i < r; ++i)
      if (i != ax && p.shape()[i] != out_shape[i])
        shape_fail(op, parts[0].shape(), p.shape());
    total_ax += p.shape()[ax];
  }
  out_shape[ax] = total_ax;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= out_shape[i];
  for (int i = ax + 1; i < r; ++i) inner *= out_shape[i];

  auto out = detail::make_storage(out_shape, parts[0].dtype());
  std::vector<int64_t> spans(parts.size());
  for (size_t p = 0; p < parts.size(); ++p)
    spans[p] = parts[p].shape()[ax] * inner;
  dispatch(parts[0].dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto o = out->as<T>();
    const int64_t row = total_ax * inner;
    for (size_t p = 0; p < parts.size(); ++p) {
      int64_t off = 0;
      for (size_t q = 0; q < p; ++q) off += spans[q];
      auto x = val(parts[p]).as<T>();
      for (int64_t g = 0; g < outer; ++g)
        std::memcpy(o.data() + g * row + off, x.data() + g * spans[p],
                    spans[p] * sizeof(T));
    }
  });
  return make_op(op, std::move(out), std::vector<Tensor>(parts), [&] {
    return detail::BackwardFn([spans, outer, total_ax, inner,
                               dt = parts[0].dtype()](
                                  const Storage& g,
                                  const std::vector<Storage*>& pg) {
      dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.as<T>();
        const int64_t row = total_ax * inner;
        int64_t off = 0;
        for (size_t p = 0; p < pg.size(); ++p) {
          if (pg[p]) {
            auto d = pg[p]->as<T>();
            for (int64_t r_ = 0; r_ < outer; ++r_)
              for (int64_t i = 0; i < spans[p]; ++i)
                d[r_ * spans[p] + i] += gs[r_ * row + off + i];
          }
          off += spans[p];
        }
      });
    });
  });
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  const char* op = "slice";
  check_defined(a, op);
  const int r = a.rank();
  const int ax = normalize_axis(axis, r, op);
  const Shape& in = a.shape();
  if (start < 0 || len < 0 || start + len > in[ax])
    throw ContractError("slice: range [" + std::to_string(start) + "," +
                        std::to_string(start + len) + ") exceeds axis size " +
                        std::to_string(in[ax]));
  Shape out_shape = in;
  out_shape[ax] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= in[i];
  for (int i = ax + 1; i < r; ++i) inner *= in[i];

  auto out = detail::make_storage(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    auto o = out->as<T>();
    for (int64_t g = 0; g < outer; ++g)
      std::memcpy(o.data() + g * len * inner,
                  x.data() + (g * in[ax] + start) * inner,
                  len * inner * sizeof(T));
  });
  return make_op(op, std::move(out), {a}, [&] {
    return detail::BackwardFn(
        [outer, inner, len, start, axis_len = in[ax], dt = a.dtype()](
            const Storage& g, const std::vector<Storage*>& pg) {
          if (!pg[0]) return;
          dispatch(dt, [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.as<T>();
            auto d = pg[0]->as<T>();
            for (int64_t r_ = 0; r_ < outer; ++r_)
              for (int64_t i = 0; i < len * inner; ++i)
                d[(r_ * axis_len + start) * inner + i] +=
                    gs[r_ * len * inner + i];
          });
        });
  });
}

// ---- normalization / activation ----

Tensor softmax(const Tensor& a, int axis) {
  const char* op = "softmax";
  check_defined(a, op);
  const int ax = normalize_axis(axis, a.rank(), op);
  const Shape& in = a.shape();
  const int64_t L = in[ax];
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= in[i];
  for (int i = ax + 1; i < static_cast<int>(in.size()); ++i) inner *= in[i];

  auto out = detail::make_storage(in, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    auto o = out->as<T>();
    for (int64_t g = 0; g < outer; ++g)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = g * L * inner + i;
        T mx = x[base];
        for (int64_t l = 1; l < L; ++l)
          mx = std::max(mx, x[base + l * inner]);
        double denom = 0;
        for (int64_t l = 0; l < L; ++l) {
          const double e = std::exp(static_cast<double>(x[base + l * inner] - mx));
          o[base + l * inner] = static_cast<T>(e);
          denom += e;
        }
        const double inv = 1.0 / denom;
        for (int64_t l = 0; l < L; ++l)
          o[base + l * inner] = static_cast<T>(
              static_cast<double>(o[base + l * inner]) * inv);
      }
  });
  StoragePtr out_keep = out;  // backward needs the output itself
  return make_op(op, std::move(out), {a}, [&] {
    return detail::BackwardFn(
        [out_keep, outer, inner, L](const Storage& g,
                                    const std::vector<Storage*>& pg) {
          if (!pg[0]) return;
          dispatch(out_keep->dtype, [&](auto tag) {
            using T = decltype(tag);
            auto y = out_keep->as<T>();
            auto gs = g.as<T>();
            auto d = pg[0]->as<T>();
            for (int64_t r_ = 0; r_ < outer; ++r_)
              for (int64_t i = 0; i < inner; ++i) {
                const int64_t base = r_ * L * inner + i;
                double dot = 0;
                for (int64_t l = 0; l < L; ++l)
                  dot += static_cast<double>(gs[base + l * inner]) *
                         static_cast<double>(y[base + l * inner]);
                for (int64_t l = 0; l < L; ++l) {
                  const int64_t k = base + l * inner;
                  d[k] += static_cast<T>(
                      static_cast<double>(y[k]) *
                      (static_cast<double>(gs[k]) - dot));
                }
              }
          });
        });
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const char* op = "layer_norm";
  check_defined(a, op);
  check_defined(gain, op);
  check_defined(bias, op);
  check_same_dtype(a, gain, op);
  check_same_dtype(a, bias, op);
  const int64_t N = a.dim(-1);
  if (gain.rank() != 1 || gain.dim(0) != N)
    shape_fail(op, a.shape(), gain.shape());
  if (bias.rank() != 1 || bias.dim(0) != N)
    shape_fail(op, a.shape(), bias.shape());
  const int64_t rows = a.numel() / N;

  auto out = detail::make_storage(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    auto gv = val(gain).as<T>();
    auto bv = val(bias).as<T>();
    auto o = out->as<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = x.data() + r * N;
      double mu = 0;
      for (int64_t c = 0; c < N; ++c) mu += xr[c];
      mu /= N;
      double var = 0;
      for (int64_t c = 0; c < N; ++c) {
        const double dv = xr[c] - mu;
        var += dv * dv;
      }
      var /= N;
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int64_t c = 0; c < N; ++c)
        o[r * N + c] = static_cast<T>(
            (xr[c] - mu) * inv * static_cast<double>(gv[c]) +
            static_cast<double>(bv[c]));
    }
  });
  return make_op(op, std::move(out), {a, gain, bias}, [&] {
    return detail::BackwardFn([a, gain, rows, N, eps](
                                  const Storage& g,
                                  const std::vector<Storage*>& pg) {
      dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = val(a).as<T>();
        auto gv = val(gain).as<T>();
        auto gs = g.as<T>();
        for (int64_t r = 0; r < rows; ++r) {
          const T* xr = x.data() + r * N;
          const T* gr = gs.data() + r * N;
          double mu = 0;
          for (int64_t c = 0; c < N; ++c) mu += xr[c];
          mu /= N;
          double var = 0;
          for (int64_t c = 0; c < N; ++c) {
            const double dv = xr[c] - mu;
            var += dv * dv;
          }
          var /= N;
          const double inv = 1.0 / std::sqrt(var + eps);
          // sums over the row for the input gradient
          double s1 = 0, s2 = 0;
          for (int64_t c = 0; c < N; ++c) {
            const double xh = (xr[c] - mu) * inv;
            const double gx = static_cast<double>(gr[c]) *
                              static_cast<double>(gv[c]);
            s1 += gx;
            s2 += gx * xh;
          }
          if (pg[0]) {
            auto d = pg[0]->as<T>();
            for (int64_t c = 0; c < N; ++c) {
              const double xh = (xr[c] - mu) * inv;
              const double gx = static_cast<double>(gr[c]) *
                                static_cast<double>(gv[c]);
              d[r * N + c] +=
                  static_cast<T>(inv * (gx - (s1 + xh * s2) / N));
            }
          }
          if (pg[1]) {
            auto d = pg[1]->as<T>();
            for (int64_t c = 0; c < N; ++c) {
              const double xh = (xr[c] - mu) * inv;
              d[c] += static_cast<T>(static_cast<double>(gr[c]) * xh);
            }
          }
          if (pg[2]) {
            auto d = pg[2]->as<T>();
            for (int64_t c = 0; c < N; ++c) d[c] += gr[c];
          }
        }
      });
    });
  });
}

Tensor gelu(const Tensor& a) {
  check_defined(a, "gelu");
  auto out = detail::make_storage(a.shape(), a.dtype());
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    auto o = out->as<T>();
    for (size_t i = 0; i < o.size(); ++i) {
      const double xd = x[i];
      o[i] = static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * kInvSqrt2)));
    }
  });
  return make_op("gelu", std::move(out), {a}, [&] {
    return detail::BackwardFn([a](const Storage& g,
                                  const std::vector<Storage*>& pg) {
      if (!pg[0]) return;
      constexpr double kInvSqrt2Pi = 0.3989422804014326779;
      dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = val(a).as<T>();
        auto gs = g.as<T>();
        auto d = pg[0]->as<T>();
        for (size_t i = 0; i < gs.size(); ++i) {
          const double xd = x[i];
          const double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
          d[i] += static_cast<T>(static_cast<double>(gs[i]) *
                                 (cdf + xd * pdf));
        }
      });
    });
  });
}

Tensor mean_all(const Tensor& a) {
  check_defined(a, "mean_all");
  if (a.numel() == 0) throw ContractError("mean_all: empty tensor");
  auto out = detail::make_storage(Shape{}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    double acc = 0;
    for (size_t i = 0; i < x.size(); ++i) acc += x[i];
    out->as<T>()[0] = static_cast<T>(acc / static_cast<double>(x.size()));
  });
  return make_op("mean_all", std::move(out), {a}, [&] {
    return detail::BackwardFn(
        [n = a.numel(), dt = a.dtype()](const Storage& g,
                                        const std::vector<Storage*>& pg) {
          if (!pg[0]) return;
          dispatch(dt, [&](auto tag) {
            using T = decltype(tag);
            const T gv = static_cast<T>(
                static_cast<double>(g.as<T>()[0]) / static_cast<double>(n));
            auto d = pg[0]->as<T>();
            for (auto& v : d) v += gv;
          });
        });
  });
}

Tensor stop_gradient(const Tensor& a) {
  check_defined(a, "stop_gradient");
  // Shares storage; drops all graph linkage, so upstream nodes are
  // unreachable from any loss built on top of this.
  auto n = std::make_shared<Node>();
  n->value = a.node()->value;
  n->leaf = false;
  n->op = "stop_gradient";
  n->seq = detail::next_seq();
  return wrap_node(n);
}

// ---- patch folding ----

namespace {

// Gather by a precomputed bijection: out[i] = in[map[i]].
Tensor gather_op(const char* op, const Tensor& a, Shape out_shape,
                 std::shared_ptr<std::vector<int64_t>> map) {
  auto out = detail::make_storage(std::move(out_shape), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = val(a).as<T>();
    auto o = out->as<T>();
    const auto& m = *map;
    for (size_t i = 0; i < o.size(); ++i) o[i] = x[m[i]];
  });
  return make_op(op, std::move(out), {a}, [&] {
    return detail::BackwardFn(
        [map, dt = a.dtype()](const Storage& g,
                              const std::vector<Storage*>& pg) {
          if (!pg[0]) return;
          dispatch(dt, [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.as<T>();
            auto d = pg[0]->as<T>();
            const auto& m = *map;
            for (size_t i = 0; i < gs.size(); ++i) d[m[i]] += gs[i];
          });
        });
  });
}

void check_blocks(const char* op, const Tensor& a,
                  const std::vector<int>& blocks) {
  const int spatial = static_cast<int>(blocks.size());
  if (a.rank() != spatial + 1)
    throw ContractError(std::string(op) + ": tensor rank " +
                        std::to_string(a.rank()) + " wants " +
                        std::to_string(spatial) + " spatial axes + channels");
  for (int b : blocks)
    if (b < 1) throw ContractError(std::string(op) + ": block size < 1");
}

}  // namespace

Tensor space_to_depth(const Tensor& a, const std::vector<int>& blocks) {
  const char* op = "space_to_depth";
  check_defined(a, op);
  check_blocks(op, a, blocks);
  const Shape& in = a.shape();
  const int k = static_cast<int>(blocks.size());
  const int64_t C = in[k];
  Shape grid(k);
  int64_t pvol = C;
  for (int i = 0; i < k; ++i) {
    if (in[i] % blocks[i] != 0)
      throw ShapeError(std::string(op) + ": axis " + std::to_string(i) +
                       " size " + std::to_string(in[i]) +
                       " not divisible by block " + std::to_string(blocks[i]));
    grid[i] = in[i] / blocks[i];
    pvol *= blocks[i];
  }
  Shape out_shape = grid;
  out_shape.push_back(pvol);

  // in strides
  std::vector<int64_t> istr(k + 1, 1);
  for (int i = k - 1; i >= 0; --i) istr[i] = istr[i + 1] * in[i + 1];

  auto map = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(shape_numel(out_shape)));
  std::vector<int64_t> q(k, 0);  // grid cell
  size_t w = 0;
  do {
    int64_t cell_base = 0;
    for (int i = 0; i < k; ++i) cell_base += q[i] * blocks[i] * istr[i];
    // patch interior: offsets row-major, channel fastest
    std::vector<int64_t> o(k, 0);
    do {
      int64_t src = cell_base;
      for (int i = 0; i < k; ++i) src += o[i] * istr[i];
      for (int64_t c = 0; c < C; ++c) (*map)[w++] = src + c;
      // advance offsets
      int ax = k - 1;
      for (; ax >= 0; --ax) {
        if (++o[ax] < blocks[ax]) break;
        o[ax] = 0;
      }
      if (ax < 0) break;
    } while (true);
    int ax = k - 1;
    for (; ax >= 0; --ax) {
      if (++q[ax] < grid[ax]) break;
      q[ax] = 0;
    }
    if (ax < 0) break;
  } while (true);
  assert(w == map->size());
  return gather_op(op, a, std::move(out_shape), std::move(map));
}

Tensor depth_to_space(const Tensor& a, const std::vector<int>& blocks) {
  const char* op = "depth_to_space";
  check_defined(a, op);
  check_blocks(op, a, blocks);
  const Shape& in = a.shape();
  const int k = static_cast<int>(blocks.size());
  int64_t bvol = 1;
  for (int b : blocks) bvol *= b;
  if (in[k] % bvol != 0)
    throw ShapeError(std::string(op) + ": channel axis " +
                     std::to_string(in[k]) + " not divisible by block volume " +
                     std::to_string(bvol));
  const int64_t C = in[k] / bvol;
  Shape out_shape(k + 1);
  for (int i = 0; i < k; ++i) out_shape[i] = in[i] * blocks[i];
  out_shape[k] = C;

  // Build the inverse of the space_to_depth map: walk the packed layout and
  // compute, for every packed element, its spatial position.
  std::vector<int64_t> ostr(k + 1, 1);
  for (int i = k - 1; i >= 0; --i) ostr[i] = ostr[i + 1] * out_shape[i + 1];

  auto map = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(a.numel()));
  // out[i] = in[map[i]] wants map indexed by OUTPUT position.
  std::vector<int64_t> q(k, 0);
  int64_t src = 0;
  do {
    std::vector<int64_t> o(k, 0);
    do {
      int64_t dst = 0;
      for (int i = 0; i < k; ++i) dst += (q[i] * blocks[i] + o[i]) * ostr[i];
      for (int64_t c = 0; c < C; ++c) (*map)[dst + c] = src++;
      int ax = k - 1;
      for (; ax >= 0; --ax) {
        if (++o[ax] < blocks[ax]) break;
        o[ax] = 0;
      }
      if (ax < 0) break;
    } while (true);
    int ax = k - 1;
    for (; ax >= 0; --ax) {
      if (++q[ax] < (in[ax])) break;
      q[ax] = 0;
    }
    if (ax < 0) break;
  } while (true);
  assert(src == a.numel());
  return gather_op(op, a, std::move(out_shape), std::move(map));
}

// ---- attention ----

Tensor multihead_attention(const Tensor& q, const Tensor& kv, int heads,
                           const AttentionParams& p, Tensor* attn_out) {
  const char* op = "multihead_attention";
  check_defined(q, op);
  check_defined(kv, op);
  if (q.rank() != 2 || kv.rank() != 2) shape_fail(op, q.shape(), kv.shape());
  const int64_t tq = q.dim(0), dq = q.dim(1);
  const int64_t tkv = kv.dim(0), dkv = kv.dim(1);
  if (heads < 1 || dq % heads != 0)
    throw ConfigError("multihead_attention: width " + std::to_string(dq) +
                      " not divisible by " + std::to_string(heads) + " heads");
  if (p.wq.dim(0) != dq || p.wk.dim(0) != dkv || p.wv.dim(0) != dkv ||
      p.wq.dim(1) != dq || p.wk.dim(1) != dq || p.wv.dim(1) != dq ||
      p.wo.dim(0) != dq || p.wo.dim(1) != dq)
    throw ShapeError("multihead_attention: projection shapes do not match " +
                     shape_str(q.shape()) + " x " + shape_str(kv.shape()));
  const int64_t hd = dq / heads;

  Tensor qp = add_bias(matmul(q, p.wq), p.bq);
  Tensor kp = add_bias(matmul(kv, p.wk), p.bk);
  Tensor vp = add_bias(matmul(kv, p.wv), p.bv);
  auto heads_first = [&](const Tensor& t, int64_t tokens) {
    return transpose(reshape(t, {tokens, heads, hd}), {1, 0, 2});
  };
  Tensor qh = heads_first(qp, tq);
  Tensor kh = heads_first(kp, tkv);
  Tensor vh = heads_first(vp, tkv);
  Tensor logits = scale(matmul(qh, transpose(kh, {0, 2, 1})),
                        1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor attn = softmax(logits, 2);  // [heads, tq, tkv]
  if (attn_out) *attn_out = attn;
  Tensor mixed = matmul(attn, vh);  // [heads, tq, hd]
  Tensor merged = reshape(transpose(mixed, {1, 0, 2}), {tq, dq});
  return add_bias(matmul(merged, p.wo), p.bo);
}

// ---- backward ----

Gradients backward(const Tensor& loss) {
  if (!loss.defined()) detail::undefined_fail("backward");
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " +
                        shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw ContractError("backward: loss does not depend on any parameter");

  // Reachable requires-grad subgraph.
  std::vector<const Node*> nodes;
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack{loss.node()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const Tensor& p : n->parents)
      if (p.requires_grad() && seen.insert(p.node()).second)
        stack.push_back(p.node());
  }
  // Creation order is topological: consumers always come after producers.
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  std::unordered_map<const Node*, StoragePtr> bufs;
  {
    auto seed = detail::make_storage(loss.shape(), loss.dtype());
    seed->set(0, 1.0);
    bufs[loss.node()] = std::move(seed);
  }

  Gradients result;
  std::vector<Storage*> pgrads;
  for (const Node* n : nodes) {
    auto it = bufs.find(n);
    if (it == bufs.end()) continue;  // no gradient flowed here
    if (n->leaf || !n->backward) continue;
    pgrads.clear();
    for (const Tensor& p : n->parents) {
      if (p.requires_grad()) {
        auto& buf = bufs[p.node()];
        if (!buf) buf = detail::make_storage(p.shape(), p.dtype());
        pgrads.push_back(buf.get());
      } else {
        pgrads.push_back(nullptr);
      }
    }
    n->backward(*it->second, pgrads);
    ++result.visited_;
    bufs.erase(it);  // interior grads are dead once propagated
  }

  for (const Node* n : nodes) {
    if (!n->leaf) continue;
    auto it = bufs.find(n);
    StoragePtr g = it != bufs.end()
                       ? it->second
                       : detail::make_storage(n->value->shape, n->value->dtype);
    result.grads_.emplace_back(n, make_leaf(std::move(g)));
    ++result.leaves_;
  }
  return result;
}

bool Gradients::contains(const Tensor& leaf) const {
  for (const auto& [n, g] : grads_)
    if (n == leaf.node()) return true;
  return false;
}

Tensor Gradients::at(const Tensor& leaf) const {
  if (!leaf.defined()) detail::undefined_fail("Gradients::at");
  for (const auto& [n, g] : grads_)
    if (n == leaf.node()) return g;
  if (!leaf.requires_grad())
    throw ContractError("Gradients::at: tensor does not require gradients");
  // Leaf never reached by the sweep: gradient is an empty sum.
  return Tensor::zeros(leaf.shape(), leaf.dtype());
}

// ---- leaf initializers ----

Tensor normal_init(Shape shape, uint64_t seed, RngStream stream, uint64_t key,
                   Dtype dtype) {
  auto s = detail::make_storage(std::move(shape), dtype);
  for (int64_t i = 0; i < s->count; ++i)
    s->set(i, rng::normal(seed, stream, key, static_cast<uint64_t>(i)));
  return make_leaf(std::move(s));
}

Tensor truncated_normal_init(Shape shape, double scale, uint64_t seed,
                             RngStream stream, uint64_t key, Dtype dtype) {
  auto s = detail::make_storage(std::move(shape), dtype);
  for (int64_t i = 0; i < s->count; ++i)
    s->set(i, rng::truncated_normal(seed, stream, key,
                                    static_cast<uint64_t>(i), scale));
  return make_leaf(std::move(s));
}

}  // namespace rin
