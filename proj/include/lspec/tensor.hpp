#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lspec {

using Eigen::Index;

// Rows are per-position channel vectors; row-major keeps channels contiguous.
template <class Scalar>
using PositionMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TensorDims {
  Index t = 0;
  Index h = 0;
  Index w = 0;
  Index c = 0;

  Index positions() const { return t * h * w; }
  Index size() const { return t * h * w * c; }
  bool operator==(const TensorDims&) const = default;

  std::string str() const {
    return std::to_string(t) + "x" + std::to_string(h) + "x" +
           std::to_string(w) + "x" + std::to_string(c);
  }
};

inline void check_dims(const TensorDims& d) {
  if (d.t < 1 || d.h < 1 || d.w < 1 || d.c < 1)
    throw std::invalid_argument("tensor dims must all be >= 1, got " + d.str());
}

// Deterministic pairwise (tree) reduction; association is fixed by n alone.
template <class Term>
double pairwise_sum(Index lo, Index hi, Term&& term) {
  if (hi - lo <= 32) {
    double s = 0.0;
    for (Index i = lo; i < hi; ++i) s += term(i);
    return s;
  }
  const Index mid = lo + (hi - lo) / 2;
  return pairwise_sum(lo, mid, term) + pairwise_sum(mid, hi, term);
}

// 4-D latent block, time x height x width x channel, T outermost, C innermost.
template <class Scalar>
class LatentTensor {
 public:
  LatentTensor() = default;

  explicit LatentTensor(const TensorDims& dims) : dims_(dims) {
    check_dims(dims);
    mat_ = PositionMatrix<Scalar>::Zero(dims.positions(), dims.c);
  }

  LatentTensor(const TensorDims& dims, PositionMatrix<Scalar> mat)
      : dims_(dims), mat_(std::move(mat)) {
    check_dims(dims);
    if (mat_.rows() != dims_.positions() || mat_.cols() != dims_.c)
      throw std::invalid_argument("data shape does not match dims " + dims.str());
  }

  const TensorDims& dims() const { return dims_; }
  const PositionMatrix<Scalar>& mat() const { return mat_; }
  PositionMatrix<Scalar>& mat() { return mat_; }

  Index pos_index(Index t, Index h, Index w) const {
    return (t * dims_.h + h) * dims_.w + w;
  }

  Scalar operator()(Index t, Index h, Index w, Index c) const {
    return mat_(pos_index(t, h, w), c);
  }
  Scalar& operator()(Index t, Index h, Index w, Index c) {
    return mat_(pos_index(t, h, w), c);
  }

  const Scalar* data() const { return mat_.data(); }
  Scalar* data() { return mat_.data(); }

  template <class Other>
  LatentTensor<Other> cast() const {
    return LatentTensor<Other>(dims_, mat_.template cast<Other>());
  }

  void require_finite(const std::string& what) const {
    for (Index p = 0; p < mat_.rows(); ++p) {
      for (Index c = 0; c < mat_.cols(); ++c) {
        if (!std::isfinite(static_cast<double>(mat_(p, c)))) {
          const Index t = p / (dims_.h * dims_.w);
          const Index h = (p / dims_.w) % dims_.h;
          const Index w = p % dims_.w;
          throw std::invalid_argument(
              what + ": non-finite value at (t=" + std::to_string(t) +
              ", h=" + std::to_string(h) + ", w=" + std::to_string(w) +
              ", c=" + std::to_string(c) + ")");
        }
      }
    }
  }

 private:
  TensorDims dims_;
  PositionMatrix<Scalar> mat_;
};

// Ordered list of same-shaped tensors.
template <class Scalar>
class LatentBatch {
 public:
  LatentBatch() = default;

  explicit LatentBatch(std::vector<LatentTensor<Scalar>> items)
      : items_(std::move(items)) {
    if (items_.empty()) throw std::invalid_argument("batch must be nonempty");
    for (const auto& item : items_) {
      if (!(item.dims() == items_.front().dims()))
        throw std::invalid_argument("batch items must share dims");
    }
  }

  static LatentBatch single(LatentTensor<Scalar> t) {
    std::vector<LatentTensor<Scalar>> v;
    v.push_back(std::move(t));
    return LatentBatch(std::move(v));
  }

  Index size() const { return static_cast<Index>(items_.size()); }
  const TensorDims& dims() const { return items_.front().dims(); }
  Index total_positions() const { return size() * dims().positions(); }

  const LatentTensor<Scalar>& operator[](Index i) const { return items_[i]; }
  LatentTensor<Scalar>& operator[](Index i) { return items_[i]; }

  const std::vector<LatentTensor<Scalar>>& items() const { return items_; }

  template <class Other>
  LatentBatch<Other> cast() const {
    std::vector<LatentTensor<Other>> out;
    out.reserve(items_.size());
    for (const auto& item : items_) out.push_back(item.template cast<Other>());
    return LatentBatch<Other>(std::move(out));
  }

  void require_finite(const std::string& what) const {
    for (size_t i = 0; i < items_.size(); ++i)
      items_[i].require_finite(what + " item " + std::to_string(i));
  }

 private:
  std::vector<LatentTensor<Scalar>> items_;
};

// Per-channel mean and population standard deviation.
struct ChannelStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

// Floor for the per-channel std so constant channels standardize to zero.
inline constexpr double kStdEpsilon = 1e-8;

// Per-channel standardization over all batch items and positions.
// Population variance; means and variances use pairwise reduction.
template <class Scalar>
std::pair<LatentBatch<Scalar>, ChannelStats> standardize(
    const LatentBatch<Scalar>& batch) {
  batch.require_finite("standardize");
  const Index b = batch.size();
  const Index p = batch.dims().positions();
  const Index c = batch.dims().c;
  const Index n = b * p;

  ChannelStats stats;
  stats.mean.resize(c);
  stats.std.resize(c);
  for (Index ch = 0; ch < c; ++ch) {
    const double mean =
        pairwise_sum(0, n,
                     [&](Index i) {
                       return static_cast<double>(batch[i / p].mat()(i % p, ch));
                     }) /
        static_cast<double>(n);
    const double var =
        pairwise_sum(0, n,
                     [&](Index i) {
                       const double d =
                           static_cast<double>(batch[i / p].mat()(i % p, ch)) -
                           mean;
                       return d * d;
                     }) /
        static_cast<double>(n);
    stats.mean[ch] = mean;
    stats.std[ch] = std::max(std::sqrt(var), kStdEpsilon);
  }

  std::vector<LatentTensor<Scalar>> out;
  out.reserve(b);
  for (Index i = 0; i < b; ++i) {
    PositionMatrix<Scalar> m = batch[i].mat();
    for (Index ch = 0; ch < c; ++ch) {
      const double mu = stats.mean[ch];
      const double inv = 1.0 / stats.std[ch];
      for (Index row = 0; row < p; ++row) {
        m(row, ch) = static_cast<Scalar>(
            (static_cast<double>(batch[i].mat()(row, ch)) - mu) * inv);
      }
    }
    out.emplace_back(batch.dims(), std::move(m));
  }
  return {LatentBatch<Scalar>(std::move(out)), std::move(stats)};
}

// Inverse of standardize: x * std + mean.
template <class Scalar>
LatentBatch<Scalar> unstandardize(const LatentBatch<Scalar>& batch,
                                  const ChannelStats& stats) {
  const Index c = batch.dims().c;
  if (stats.mean.size() != c || stats.std.size() != c)
    throw std::invalid_argument("stats size does not match channel count");
  std::vector<LatentTensor<Scalar>> out;
  out.reserve(batch.size());
  for (Index i = 0; i < batch.size(); ++i) {
    PositionMatrix<Scalar> m = batch[i].mat();
    for (Index ch = 0; ch < c; ++ch)
      m.col(ch) = (m.col(ch).template cast<double>() * stats.std[ch] +
                   Eigen::VectorXd::Constant(m.rows(), stats.mean[ch]))
                      .template cast<Scalar>();
    out.emplace_back(batch.dims(), std::move(m));
  }
  return LatentBatch<Scalar>(std::move(out));
}

// Visits every line of the tensor grid along one axis (0=T, 1=H, 2=W).
// fn(base, stride, len) addresses flat channel-innermost storage.
template <class Fn>
void for_each_axis_line(const TensorDims& d, int axis, Fn&& fn) {
  const Index ct = d.c;
  switch (axis) {
    case 0:  // lines along T, stride H*W*C
      for (Index h = 0; h < d.h; ++h)
        for (Index w = 0; w < d.w; ++w)
          for (Index c = 0; c < ct; ++c)
            fn((h * d.w + w) * ct + c, d.h * d.w * ct, d.t);
      break;
    case 1:  // lines along H, stride W*C
      for (Index t = 0; t < d.t; ++t)
        for (Index w = 0; w < d.w; ++w)
          for (Index c = 0; c < ct; ++c)
            fn((t * d.h * d.w + w) * ct + c, d.w * ct, d.h);
      break;
    case 2:  // lines along W, stride C
      for (Index t = 0; t < d.t; ++t)
        for (Index h = 0; h < d.h; ++h)
          for (Index c = 0; c < ct; ++c)
            fn(((t * d.h + h) * d.w) * ct + c, ct, d.w);
      break;
    default:
      throw std::invalid_argument("axis must be 0, 1 or 2");
  }
}

}  // namespace lspec
