#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "mionet/errors.hpp"

namespace mionet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense multi-way array of doubles, stored flat in row-major order
/// (last index fastest).
class Tensor {
 public:
  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape product " +
                           std::to_string(checked_size(shape_)));
    }
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::size_t size() const { return data_.size(); }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  double& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

 private:
  static std::size_t checked_size(const std::vector<int>& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must be non-empty");
    std::size_t n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] < 1) {
        throw DimensionError("tensor shape entry " + std::to_string(i) +
                             " must be >= 1, got " + std::to_string(shape[i]));
      }
      n *= static_cast<std::size_t>(shape[i]);
    }
    return n;
  }

  std::size_t offset(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) {
      throw DimensionError("index rank " + std::to_string(idx.size()) +
                           " does not match tensor rank " + std::to_string(ndim()));
    }
    std::size_t off = 0;
    int axis = 0;
    for (int i : idx) {
      off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
      ++axis;
    }
    return off;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

/// Rank-p CP representation of an (n+1)-way tensor: factor i has one column
/// per rank-1 term.
struct CPFactors {
  int rank = 0;
  std::vector<Mat> factors;  // factor i: dim_i x rank
};

namespace detail {

// Contracts the first axis of a flat row-major block of shape
// (shape[axis], tail) against alpha, in place of a fresh buffer.
inline void contract_first_axis(const std::vector<double>& in, int lead,
                                std::size_t tail, const Vec& alpha,
                                std::vector<double>& out) {
  out.assign(tail, 0.0);
  Eigen::Map<Vec> o(out.data(), static_cast<Eigen::Index>(tail));
  for (int j = 0; j < lead; ++j) {
    Eigen::Map<const Vec> block(in.data() + static_cast<std::size_t>(j) * tail,
                                static_cast<Eigen::Index>(tail));
    o += alpha[j] * block;
  }
}

inline void check_slot(const Tensor& t, const std::vector<Vec>& alphas, int slot) {
  if (alphas[static_cast<std::size_t>(slot)].size() != t.dim(slot)) {
    throw DimensionError(
        "contraction slot " + std::to_string(slot) + ": vector length " +
        std::to_string(alphas[static_cast<std::size_t>(slot)].size()) +
        " does not match tensor dimension " + std::to_string(t.dim(slot)));
  }
}

}  // namespace detail

/// u<alpha_1, ..., alpha_n>: full multilinear contraction of an n-way tensor
/// against one vector per mode. Computed by sequential mode-wise contraction,
/// O(prod shape) total work.
inline double contract_multilinear(const Tensor& u, const std::vector<Vec>& alphas) {
  if (static_cast<int>(alphas.size()) != u.ndim()) {
    throw DimensionError("expected " + std::to_string(u.ndim()) +
                         " contraction vectors, got " + std::to_string(alphas.size()));
  }
  for (int i = 0; i < u.ndim(); ++i) detail::check_slot(u, alphas, i);

  std::vector<double> cur = u.data();
  std::size_t tail = u.size();
  std::vector<double> next;
  for (int axis = 0; axis < u.ndim(); ++axis) {
    const int lead = u.dim(axis);
    tail /= static_cast<std::size_t>(lead);
    detail::contract_first_axis(cur, lead, tail, alphas[static_cast<std::size_t>(axis)], next);
    cur.swap(next);
  }
  return cur[0];
}

/// Contracts the leading n modes of an (n+1)-way tensor W with shape
/// (p_1, ..., p_n, r); returns the length-r vector whose k-th entry is the
/// multilinear contraction of the k-th slice of the last axis.
inline Vec contract_to_vector(const Tensor& w, const std::vector<Vec>& alphas) {
  if (static_cast<int>(alphas.size()) != w.ndim() - 1) {
    throw DimensionError("expected " + std::to_string(w.ndim() - 1) +
                         " contraction vectors, got " + std::to_string(alphas.size()));
  }
  for (int i = 0; i + 1 < w.ndim(); ++i) detail::check_slot(w, alphas, i);

  std::vector<double> cur = w.data();
  std::size_t tail = w.size();
  std::vector<double> next;
  for (int axis = 0; axis + 1 < w.ndim(); ++axis) {
    const int lead = w.dim(axis);
    tail /= static_cast<std::size_t>(lead);
    detail::contract_first_axis(cur, lead, tail, alphas[static_cast<std::size_t>(axis)], next);
    cur.swap(next);
  }
  return Eigen::Map<const Vec>(cur.data(), static_cast<Eigen::Index>(tail));
}

/// Sum over components of the elementwise product of k equal-length vectors:
/// the combination step of the low-rank architecture.
inline double hadamard_sum(const std::vector<Vec>& vs) {
  if (vs.empty()) throw DimensionError("hadamard_sum needs at least one vector");
  const Eigen::Index p = vs.front().size();
  for (std::size_t i = 1; i < vs.size(); ++i) {
    if (vs[i].size() != p) {
      throw DimensionError("hadamard_sum slot " + std::to_string(i) + ": length " +
                           std::to_string(vs[i].size()) + " != " + std::to_string(p));
    }
  }
  Vec prod = vs.front();
  for (std::size_t i = 1; i < vs.size(); ++i) prod.array() *= vs[i].array();
  return prod.sum();
}

/// Expands a CP representation into the dense tensor
/// sum_j a^1_j (x) ... (x) a^m_j.
inline Tensor cp_expand(const CPFactors& f, const std::vector<int>& shape) {
  if (f.factors.size() != shape.size()) {
    throw DimensionError("cp_expand: " + std::to_string(f.factors.size()) +
                         " factors for rank-" + std::to_string(shape.size()) + " shape");
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (f.factors[i].rows() != shape[i]) {
      throw DimensionError("cp_expand factor " + std::to_string(i) + ": " +
                           std::to_string(f.factors[i].rows()) + " rows, shape wants " +
                           std::to_string(shape[i]));
    }
    if (f.factors[i].cols() != f.rank) {
      throw DimensionError("cp_expand factor " + std::to_string(i) +
                           ": column count != rank");
    }
  }

  Tensor out(shape);
  std::vector<int> idx(shape.size(), 0);
  const std::size_t total = out.size();
  for (std::size_t flat = 0; flat < total; ++flat) {
    double s = 0.0;
    for (int j = 0; j < f.rank; ++j) {
      double term = 1.0;
      for (std::size_t ax = 0; ax < shape.size(); ++ax) term *= f.factors[ax](idx[ax], j);
      s += term;
    }
    out.data()[flat] = s;
    for (int ax = static_cast<int>(shape.size()) - 1; ax >= 0; --ax) {
      if (++idx[static_cast<std::size_t>(ax)] < shape[static_cast<std::size_t>(ax)]) break;
      idx[static_cast<std::size_t>(ax)] = 0;
    }
  }
  return out;
}

}  // namespace mionet
