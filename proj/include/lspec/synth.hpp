#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "lspec/parallel.hpp"
#include "lspec/rng.hpp"
#include "lspec/tensor.hpp"

namespace lspec {

// Per-axis AR(1) coefficients; lag-d correlation along an axis is rho^d.
struct ArSpec {
  double rho_t = 0.0;
  double rho_h = 0.0;
  double rho_w = 0.0;

  void validate() const {
    for (double r : {rho_t, rho_h, rho_w}) {
      if (!(r >= 0.0 && r < 1.0))
        throw std::invalid_argument("AR coefficients must lie in [0,1)");
    }
  }
};

// Prescribed channel eigenspectrum: eigenvalues descending, summing to C;
// optional orthonormal mixing (identity when absent).
struct SpectrumSpec {
  Eigen::VectorXd eigenvalues;
  std::optional<Eigen::MatrixXd> mixing;

  void validate() const {
    const Index c = eigenvalues.size();
    if (c < 1) throw std::invalid_argument("eigenvalues must be nonempty");
    double sum = 0.0;
    for (Index i = 0; i < c; ++i) {
      if (eigenvalues[i] < 0.0)
        throw std::invalid_argument("eigenvalues must be nonnegative");
      if (i > 0 && eigenvalues[i] > eigenvalues[i - 1])
        throw std::invalid_argument("eigenvalues must be sorted descending");
      sum += eigenvalues[i];
    }
    if (std::abs(sum - static_cast<double>(c)) > 1e-9)
      throw std::invalid_argument("eigenvalues must sum to C (got " +
                                  std::to_string(sum) + ")");
    if (mixing.has_value()) {
      if (mixing->rows() != c || mixing->cols() != c)
        throw std::invalid_argument("mixing matrix must be CxC");
      const Eigen::MatrixXd gram = mixing->transpose() * (*mixing);
      const double dev =
          (gram - Eigen::MatrixXd::Identity(c, c)).cwiseAbs().maxCoeff();
      if (dev >= 1e-8)
        throw std::invalid_argument("mixing matrix is not orthonormal");
    }
  }
};

namespace detail {

// Item values are drawn from sub-stream (seed, item) in (t,h,w,c) order, so
// parallel generation matches serial generation byte for byte.
template <class Scalar>
void fill_white(LatentTensor<Scalar>& x, uint64_t seed, uint64_t item) {
  Philox rng(seed, item);
  Scalar* d = x.data();
  const Index n = x.dims().size();
  for (Index i = 0; i < n; ++i) d[i] = static_cast<Scalar>(rng.normal());
}

}  // namespace detail

// I.i.d. standard normal batch.
template <class Scalar = double>
LatentBatch<Scalar> gen_white(const TensorDims& dims, Index batch_size,
                              uint64_t seed) {
  check_dims(dims);
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<LatentTensor<Scalar>> items(batch_size, LatentTensor<Scalar>(dims));
  parallel_for(batch_size, [&](long i) {
    detail::fill_white(items[i], seed, static_cast<uint64_t>(i));
  });
  return LatentBatch<Scalar>(std::move(items));
}

// Separable AR(1) Gaussian field per channel. Causal filter
// x_i = rho*x_{i-1} + sqrt(1-rho^2)*n_i along each axis with stationary
// initialization gives exact unit variance and exact rho^|d| correlation
// at every lag (products across axes for mixed lags). rho = 0 on all axes
// reproduces gen_white exactly.
template <class Scalar = double>
LatentBatch<Scalar> gen_ar_field(const TensorDims& dims, Index batch_size,
                                 const ArSpec& spec, uint64_t seed) {
  spec.validate();
  check_dims(dims);
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<LatentTensor<Scalar>> items(batch_size, LatentTensor<Scalar>(dims));
  const double rho[3] = {spec.rho_t, spec.rho_h, spec.rho_w};
  parallel_for(batch_size, [&](long i) {
    detail::fill_white(items[i], seed, static_cast<uint64_t>(i));
    Scalar* d = items[i].data();
    for (int axis = 0; axis < 3; ++axis) {
      if (rho[axis] == 0.0) continue;
      const double r = rho[axis];
      const double q = std::sqrt(1.0 - r * r);
      for_each_axis_line(dims, axis, [&](Index base, Index stride, Index len) {
        for (Index k = 1; k < len; ++k) {
          d[base + k * stride] = static_cast<Scalar>(
              r * static_cast<double>(d[base + (k - 1) * stride]) +
              q * static_cast<double>(d[base + k * stride]));
        }
      });
    }
  });
  return LatentBatch<Scalar>(std::move(items));
}

// Channel vectors drawn i.i.d. across positions with covariance
// Q diag(eigenvalues) Q^T.
template <class Scalar = double>
LatentBatch<Scalar> gen_spectrum_field(const TensorDims& dims, Index batch_size,
                                       const SpectrumSpec& spec, uint64_t seed) {
  spec.validate();
  check_dims(dims);
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (spec.eigenvalues.size() != dims.c)
    throw std::invalid_argument("eigenvalue count must equal channel count");

  Eigen::MatrixXd loading =
      spec.eigenvalues.cwiseSqrt().asDiagonal().toDenseMatrix();
  if (spec.mixing.has_value()) loading = (*spec.mixing) * loading;

  std::vector<LatentTensor<Scalar>> items(batch_size, LatentTensor<Scalar>(dims));
  parallel_for(batch_size, [&](long i) {
    Philox rng(seed, static_cast<uint64_t>(i));
    Eigen::VectorXd g(dims.c);
    auto& m = items[i].mat();
    for (Index p = 0; p < dims.positions(); ++p) {
      for (Index c = 0; c < dims.c; ++c) g[c] = rng.normal();
      m.row(p) = (loading * g).transpose().template cast<Scalar>();
    }
  });
  return LatentBatch<Scalar>(std::move(items));
}

}  // namespace lspec
