#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "lspec/tensor.hpp"

namespace lspec {

// Descending eigenvalues with the matching orthonormal eigenvector columns.
struct EigenSpectrum {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
};

// C x C mean of outer products of per-position channel vectors over all
// batch items and positions. On standardized input the diagonal is ~1.
template <class Scalar>
Eigen::MatrixXd channel_autocorr(const LatentBatch<Scalar>& batch) {
  const Index c = batch.dims().c;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(c, c);
  for (Index i = 0; i < batch.size(); ++i) {
    const Eigen::MatrixXd rows = batch[i].mat().template cast<double>();
    acc.noalias() += rows.transpose() * rows;
  }
  return acc / static_cast<double>(batch.total_positions());
}

// Full symmetric eigendecomposition by cyclic Jacobi rotations. Converges
// when the off-diagonal Frobenius mass drops below 1e-12 * |A|_F.
// Eigenvalues are sorted descending with ties broken by pre-sort position;
// each eigenvector is flipped so its largest-magnitude component (lowest
// index on magnitude ties) is positive.
inline EigenSpectrum eigh(const Eigen::MatrixXd& a_in) {
  const Index n = a_in.rows();
  if (a_in.cols() != n) throw std::invalid_argument("eigh: matrix not square");
  if (n > 0 && (a_in - a_in.transpose()).cwiseAbs().maxCoeff() >= 1e-10)
    throw std::invalid_argument("eigh: matrix not symmetric");

  Eigen::MatrixXd a = (a_in + a_in.transpose()) / 2.0;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double threshold = 1e-12 * a.norm();

  constexpr int kMaxSweeps = 64;
  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    if (std::sqrt(off) <= threshold) {
      converged = true;
      break;
    }
    for (Index p = 0; p < n - 1; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (Index i = 0; i < n; ++i) {
          const double aip = a(i, p);
          const double aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (Index i = 0; i < n; ++i) {
          const double api = a(p, i);
          const double aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
        }
        for (Index i = 0; i < n; ++i) {
          const double vip = v(i, p);
          const double viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  if (!converged)
    throw std::runtime_error("eigh: Jacobi iteration did not converge");

  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Index i, Index j) { return a(i, i) > a(j, j); });

  EigenSpectrum out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Index l = 0; l < n; ++l) {
    out.eigenvalues[l] = a(order[l], order[l]);
    Eigen::VectorXd col = v.col(order[l]);
    Index top = 0;
    for (Index i = 1; i < n; ++i)
      if (std::abs(col[i]) > std::abs(col[top])) top = i;
    if (col[top] < 0.0) col = -col;
    out.eigenvectors.col(l) = col;
  }
  return out;
}

// Prefix sums of eigenvalues over their total; negatives within -1e-9 are
// clamped to zero.
inline Eigen::VectorXd cumulative_explained_variance(
    const EigenSpectrum& spec) {
  const Index n = spec.eigenvalues.size();
  Eigen::VectorXd lam = spec.eigenvalues;
  for (Index i = 0; i < n; ++i) {
    if (lam[i] < -1e-9)
      throw std::invalid_argument(
          "cumulative_explained_variance: negative eigenvalue");
    lam[i] = std::max(lam[i], 0.0);
  }
  const double total = lam.sum();
  if (total <= 0.0)
    throw std::invalid_argument(
        "cumulative_explained_variance: zero total variance");
  Eigen::VectorXd out(n);
  double run = 0.0;
  for (Index i = 0; i < n; ++i) {
    run += lam[i];
    out[i] = run / total;
  }
  return out;
}

// exp(Shannon entropy) of the normalized eigenvalue distribution.
inline double effective_rank(const Eigen::VectorXd& eigenvalues) {
  double total = 0.0;
  for (Index i = 0; i < eigenvalues.size(); ++i) {
    if (eigenvalues[i] < -1e-9)
      throw std::invalid_argument("effective_rank: negative eigenvalue");
    total += std::max(eigenvalues[i], 0.0);
  }
  if (total <= 0.0)
    throw std::invalid_argument("effective_rank: zero total variance");
  double entropy = 0.0;
  for (Index i = 0; i < eigenvalues.size(); ++i) {
    const double p = std::max(eigenvalues[i], 0.0) / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

inline double effective_rank(const EigenSpectrum& spec) {
  return effective_rank(spec.eigenvalues);
}

// trace(Sigma) minus the top-k eigenvalue sum.
inline double cov_penalty(const Eigen::MatrixXd& sigma, Index k) {
  const Index c = sigma.rows();
  if (k < 1 || k >= c)
    throw std::invalid_argument("cov_penalty: need 1 <= k < C");
  const EigenSpectrum spec = eigh(sigma);
  return sigma.trace() - spec.eigenvalues.head(k).sum();
}

// Penalty plus its gradient with respect to the latent entries, via
// dλ_l/dΣ = v_l v_l^T chained through Σ = X^T X / n. The gradient is only
// well-defined for a simple top-k block; `gradient_reliable` is false when
// the gap λ_k - λ_{k+1} is below 1e-6.
struct CovPenaltyResult {
  double value = 0.0;
  LatentBatch<double> grad;
  bool gradient_reliable = true;
};

template <class Scalar>
CovPenaltyResult cov_penalty_grad(const LatentBatch<Scalar>& batch, Index k) {
  const Index c = batch.dims().c;
  if (k < 1 || k >= c)
    throw std::invalid_argument("cov_penalty_grad: need 1 <= k < C");
  const Eigen::MatrixXd sigma = channel_autocorr(batch);
  const EigenSpectrum spec = eigh(sigma);

  CovPenaltyResult out;
  out.value = sigma.trace() - spec.eigenvalues.head(k).sum();
  out.gradient_reliable =
      (spec.eigenvalues[k - 1] - spec.eigenvalues[k]) >= 1e-6;

  // d penalty / dSigma = I - V_k V_k^T; dSigma/dX gives 2/n * X * (...)
  const Eigen::MatrixXd vk = spec.eigenvectors.leftCols(k);
  const Eigen::MatrixXd dir =
      Eigen::MatrixXd::Identity(c, c) - vk * vk.transpose();
  const double scale = 2.0 / static_cast<double>(batch.total_positions());

  std::vector<LatentTensor<double>> grads;
  grads.reserve(batch.size());
  for (Index i = 0; i < batch.size(); ++i) {
    PositionMatrix<double> g =
        scale * (batch[i].mat().template cast<double>() * dir);
    grads.emplace_back(batch.dims(), std::move(g));
  }
  out.grad = LatentBatch<double>(std::move(grads));
  return out;
}

struct CovPenTrajectoryRow {
  Index step = 0;
  double penalty = 0.0;
  double effective_rank = 0.0;
};

struct CovPenOptimizeResult {
  LatentBatch<double> batch;
  std::vector<CovPenTrajectoryRow> trajectory;
};

// Gradient descent on the covariance tail penalty with per-step
// re-standardization. step_size <= 0 selects a default scaled by the total
// position count (the penalty gradient carries a 1/n factor).
template <class Scalar>
CovPenOptimizeResult optimize_latent_covpen(const LatentBatch<Scalar>& batch0,
                                            Index k, Index steps,
                                            double step_size = 0.0) {
  if (steps < 1)
    throw std::invalid_argument("optimize_latent_covpen: steps must be >= 1");
  const double n = static_cast<double>(batch0.total_positions());
  if (step_size <= 0.0) step_size = 0.004 * n;

  CovPenOptimizeResult result;
  LatentBatch<double> batch = standardize(batch0.template cast<double>()).first;

  auto record = [&](Index step) {
    const Eigen::MatrixXd sigma = channel_autocorr(batch);
    const EigenSpectrum spec = eigh(sigma);
    CovPenTrajectoryRow row;
    row.step = step;
    row.penalty = sigma.trace() - spec.eigenvalues.head(k).sum();
    row.effective_rank = effective_rank(spec);
    if (!std::isfinite(row.penalty))
      throw std::runtime_error("optimize_latent_covpen: diverged at step " +
                               std::to_string(step));
    result.trajectory.push_back(row);
  };

  record(0);
  for (Index step = 1; step <= steps; ++step) {
    const auto pen = cov_penalty_grad(batch, k);
    for (Index i = 0; i < batch.size(); ++i)
      batch[i].mat() -= step_size * pen.grad[i].mat();
    batch = standardize(batch).first;
    record(step);
  }
  result.batch = std::move(batch);
  return result;
}

// Replaces every position's channel vector by its orthogonal projection
// onto the span of the selected eigenvectors (0-based mode indices).
template <class Scalar>
LatentTensor<Scalar> pc_project(const LatentTensor<Scalar>& x,
                                const EigenSpectrum& spec,
                                const std::vector<Index>& modes) {
  const Index c = x.dims().c;
  if (spec.eigenvectors.rows() != c)
    throw std::invalid_argument("pc_project: spectrum order mismatch");
  if (modes.empty()) throw std::invalid_argument("pc_project: empty subset");
  Eigen::MatrixXd basis(c, static_cast<Index>(modes.size()));
  for (size_t m = 0; m < modes.size(); ++m) {
    if (modes[m] < 0 || modes[m] >= c)
      throw std::invalid_argument("pc_project: mode index out of range");
    basis.col(static_cast<Index>(m)) = spec.eigenvectors.col(modes[m]);
  }
  const Eigen::MatrixXd proj = basis * basis.transpose();  // symmetric
  PositionMatrix<double> rows = x.mat().template cast<double>() * proj;
  return LatentTensor<Scalar>(x.dims(), rows.template cast<Scalar>());
}

}  // namespace lspec
