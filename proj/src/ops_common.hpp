#pragma once

#include <Eigen/Dense>
#include <initializer_list>

#include "warptrack/ops.hpp"

namespace warptrack {
namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<RowMat<S>>;
template <typename S>
using CMapM = Eigen::Map<const RowMat<S>>;
template <typename S>
using OStrideMapM = Eigen::Map<RowMat<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using COStrideMapM = Eigen::Map<const RowMat<S>, 0, Eigen::OuterStride<>>;

template <typename S>
inline bool rec_needed(std::initializer_list<const Tensor<S>*> ins) {
  if (!Tape<S>::current()) return false;
  for (const Tensor<S>* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename S, typename F>
inline void record(Tensor<S>& out, F&& fn) {
  Tape<S>::current()->record(out.node(), erase_fn(std::forward<F>(fn)));
}

// Grad of an op output; null means no contribution flowed back.
template <typename S>
inline const S* out_grad(const Tensor<S>& t) {
  return t.node()->grad.data();
}

}  // namespace detail
}  // namespace warptrack
