#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "warptrack/tensor.hpp"

namespace warptrack {

// Minimal owning type-erased callable. Hand-rolled (rather than
// std::function) so op bodies with capturing lambdas can be explicitly
// instantiated per scalar type.
class ErasedFn {
 public:
  ErasedFn() = default;
  ErasedFn(void (*call)(void*), void (*destroy)(void*), void* state) : call_(call), destroy_(destroy), state_(state) {}
  ErasedFn(const ErasedFn&) = delete;
  ErasedFn& operator=(const ErasedFn&) = delete;
  ErasedFn(ErasedFn&& o) noexcept : call_(o.call_), destroy_(o.destroy_), state_(o.state_) { o.state_ = nullptr; }
  ErasedFn& operator=(ErasedFn&& o) noexcept {
    if (this != &o) {
      reset();
      call_ = o.call_, destroy_ = o.destroy_, state_ = o.state_;
      o.state_ = nullptr;
    }
    return *this;
  }
  ~ErasedFn() { reset(); }
  void operator()() const { call_(state_); }

 private:
  void reset() {
    if (state_) destroy_(state_);
    state_ = nullptr;
  }
  void (*call_)(void*) = nullptr;
  void (*destroy_)(void*) = nullptr;
  void* state_ = nullptr;
};

namespace detail {
template <typename F>
void call_as(void* p) {
  (*static_cast<F*>(p))();
}
template <typename F>
void destroy_as(void* p) {
  delete static_cast<F*>(p);
}
}  // namespace detail

template <typename F>
ErasedFn erase_fn(F&& f) {
  using T = std::decay_t<F>;
  return ErasedFn(&detail::call_as<T>, &detail::destroy_as<T>, new T(std::forward<F>(f)));
}

// Records primitive ops in execution order; backward() replays them in
// reverse. One tape per evaluation; a thread-local stack makes the innermost
// tape current, so concurrent evaluations on different threads do not
// interact. A NoGradGuard pushes a null entry to disable recording.
template <typename S>
class Tape {
 public:
  Tape() : epoch_(next_epoch()++) { stack().push_back(this); }
  ~Tape() { stack().pop_back(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return stack().empty() ? nullptr : stack().back(); }
  static void push_null() { stack().push_back(nullptr); }
  static void pop_null() { stack().pop_back(); }

  void record(std::shared_ptr<detail::TensorNode<S>> output, ErasedFn backward_fn) {
    output->tape_output = true;
    output->tape_epoch = epoch_;
    entries_.push_back({std::move(output), std::move(backward_fn)});
  }

  size_t size() const { return entries_.size(); }
  uint64_t epoch() const { return epoch_; }

  // Repeated calls accumulate into leaf grads; intermediate grads are reset
  // each time so the replay starts clean.
  void run_backward(const Tensor<S>& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.node() || !loss.node()->tape_output || loss.node()->tape_epoch != epoch_)
      throw std::invalid_argument("backward: loss was not produced on the live tape");
    for (auto& e : entries_) {
      auto& g = e.output->grad;
      if (!g.empty()) std::memset(g.data(), 0, size_t(g.size()) * sizeof(S));
    }
    Tensor<S> l = loss;
    l.grad()[0] += S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward_fn();
  }

 private:
  struct Entry {
    std::shared_ptr<detail::TensorNode<S>> output;
    ErasedFn backward_fn;
  };

  static std::vector<Tape*>& stack() {
    thread_local std::vector<Tape*> s;
    return s;
  }
  static uint64_t& next_epoch() {
    thread_local uint64_t e = 1;
    return e;
  }

  std::vector<Entry> entries_;
  uint64_t epoch_;
};

// Disables recording while alive (pushes a null tape).
template <typename S>
class NoGradGuard {
 public:
  NoGradGuard() { Tape<S>::push_null(); }
  ~NoGradGuard() { Tape<S>::pop_null(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
void backward(const Tensor<S>& loss) {
  Tape<S>* t = Tape<S>::current();
  if (!t) throw std::invalid_argument("backward: no live tape");
  t->run_backward(loss);
}

}  // namespace warptrack
