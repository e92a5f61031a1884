#pragma once

#include <cmath>
#include <cstring>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>

#include "warptrack/alloc_stats.hpp"
#include "warptrack/common.hpp"
#include "warptrack/rng.hpp"

namespace warptrack {

namespace detail {

// Owned, 64-byte aligned, accounted storage.
template <typename S>
class Buffer {
 public:
  Buffer() = default;
  explicit Buffer(int64_t count, bool zero_fill = true) { allocate(count, zero_fill); }
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;
  Buffer(Buffer&& o) noexcept : p_(o.p_), n_(o.n_) { o.p_ = nullptr, o.n_ = 0; }
  Buffer& operator=(Buffer&& o) noexcept {
    if (this != &o) {
      release();
      p_ = o.p_, n_ = o.n_;
      o.p_ = nullptr, o.n_ = 0;
    }
    return *this;
  }
  ~Buffer() { release(); }

  void allocate(int64_t count, bool zero_fill) {
    release();
    n_ = count;
    if (count > 0) {
      p_ = static_cast<S*>(::operator new(size_t(count) * sizeof(S), std::align_val_t(64)));
      alloc_note_alloc(count * int64_t(sizeof(S)));
      if (zero_fill) std::memset(p_, 0, size_t(count) * sizeof(S));
    }
  }
  void release() {
    if (p_) {
      ::operator delete(p_, std::align_val_t(64));
      alloc_note_free(n_ * int64_t(sizeof(S)));
    }
    p_ = nullptr, n_ = 0;
  }
  bool empty() const { return p_ == nullptr; }
  int64_t size() const { return n_; }
  S* data() { return p_; }
  const S* data() const { return p_; }

 private:
  S* p_ = nullptr;
  int64_t n_ = 0;
};

template <typename S>
struct TensorNode {
  Shape shape;
  Buffer<S> value;
  Buffer<S> grad;  // allocated lazily, zero-initialized
  bool requires_grad = false;
  bool tape_output = false;
  uint64_t tape_epoch = 0;
};

}  // namespace detail

// Dense row-major tensor with reverse-mode gradients. Handle semantics: copies
// share the underlying node (like the reference-counted tensors in mainstream
// frameworks); use clone() for a deep copy.
template <typename S>
class Tensor {
 public:
  using Node = detail::TensorNode<S>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false) : n_(std::make_shared<Node>()) {
    n_->shape = std::move(shape);
    check_dim(numel_of(n_->shape) >= 0, "tensor extents must be non-negative");
    n_->value.allocate(numel_of(n_->shape), true);
    n_->requires_grad = requires_grad;
  }

  static Tensor from_data(Shape shape, const std::vector<S>& data, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    check_dim(int64_t(data.size()) == t.numel(), "from_data: data length " + std::to_string(data.size()) +
                                                     " does not match shape " + shape_str(t.shape()));
    std::memcpy(t.data(), data.data(), size_t(t.numel()) * sizeof(S));
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) { return Tensor(std::move(shape), requires_grad); }

  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    S* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = v;
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) { return full({}, v, requires_grad); }

  static Tensor uniform(Shape shape, Rng& rng, S lo, S hi, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    S* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = S(rng.uniform(double(lo), double(hi)));
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, S stddev = S(1), bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    S* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = S(rng.normal() * double(stddev));
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return int(n_->shape.size()); }
  int64_t extent(int i) const { return n_->shape.at(size_t(i)); }
  int64_t numel() const { return n_ ? numel_of(n_->shape) : 0; }

  // Handle semantics: constness of the handle does not propagate to the node.
  S* data() const { return n_->value.data(); }

  S item() const {
    check_dim(numel() == 1, "item(): tensor has " + std::to_string(numel()) + " elements");
    return data()[0];
  }

  bool requires_grad() const { return n_ && n_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return n_ && !n_->grad.empty(); }
  // Grad accumulator, allocated (zeroed) on first touch.
  S* grad() const {
    if (n_->grad.empty()) n_->grad.allocate(numel(), true);
    return n_->grad.data();
  }
  const S* grad_cdata() const { return n_->grad.data(); }
  void zero_grad() const {
    if (has_grad()) std::memset(n_->grad.data(), 0, size_t(numel()) * sizeof(S));
  }

  Tensor clone() const {
    Tensor t(shape(), requires_grad());
    std::memcpy(t.data(), data(), size_t(numel()) * sizeof(S));
    return t;
  }

  // Same values, no grad tracking, fresh node.
  Tensor detach() const {
    Tensor t(shape(), false);
    std::memcpy(t.data(), data(), size_t(numel()) * sizeof(S));
    return t;
  }

  bool all_finite() const {
    const S* p = data();
    for (int64_t i = 0; i < numel(); ++i)
      if (!std::isfinite(double(p[i]))) return false;
    return true;
  }

  bool same_node(const Tensor& o) const { return n_ == o.n_; }
  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

template <typename TO, typename FROM>
Tensor<TO> cast(const Tensor<FROM>& x) {
  Tensor<TO> out(x.shape(), false);
  const FROM* a = x.data();
  TO* b = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) b[i] = TO(a[i]);
  return out;
}

// --- WTT1 tensor container ------------------------------------------------
// magic "WTTENSR1" | u32 LE header length | JSON {"dtype":"f32le","shape":[..]}
// | row-major little-endian f32 payload.
void write_wtt1(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_wtt1(std::istream& is, int64_t stream_base_offset = 0);
void save_tensor(const std::string& path, const Tensor<float>& t);
Tensor<float> load_tensor(const std::string& path);

// Atomic file write: temp file in the same directory + rename.
void atomic_write_file(const std::string& path, const std::string& bytes);

}  // namespace warptrack
