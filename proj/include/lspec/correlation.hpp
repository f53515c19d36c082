#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lspec/spectrum.hpp"
#include "lspec/tensor.hpp"

namespace lspec {

enum class Similarity { dot, cosine };

// Patch rule: the first latent frame is split into size x size spatial
// patches; frames 1..T-1 are grouped into size^3 spatio-temporal patches
// starting at frame 1. Positions in trailing partial patches are dropped.
struct PatchSpec {
  Index size = 2;
  bool first_frame_spatial = true;
  Similarity similarity = Similarity::cosine;

  void validate() const {
    if (size < 2) throw std::invalid_argument("patch size must be >= 2");
  }
};

// Norm floor for cosine similarity on pathological zero vectors.
inline constexpr double kCosineEpsilon = 1e-12;

// Cosine-normalized spatio-temporal autocorrelation plus the channel-summed
// dot variant. R[(0,0,0)] = 1 for the cosine variant.
struct LagCorrelation {
  std::vector<std::array<Index, 3>> lags;
  Eigen::VectorXd cosine;
  Eigen::VectorXd dot;  // channel-summed; /C gives Pearson on standardized data
  std::vector<Index> counts;
};

namespace detail {

// Position lists for every patch under the PatchSpec tiling rule.
inline std::vector<std::vector<Index>> make_patches(const TensorDims& d,
                                                    const PatchSpec& spec) {
  spec.validate();
  const Index s = spec.size;
  std::vector<std::vector<Index>> patches;
  auto pos = [&](Index t, Index h, Index w) { return (t * d.h + h) * d.w + w; };

  auto add_spatial = [&](Index frame) {
    for (Index bh = 0; bh + s <= d.h; bh += s) {
      for (Index bw = 0; bw + s <= d.w; bw += s) {
        std::vector<Index> patch;
        patch.reserve(static_cast<size_t>(s * s));
        for (Index dh = 0; dh < s; ++dh)
          for (Index dw = 0; dw < s; ++dw)
            patch.push_back(pos(frame, bh + dh, bw + dw));
        patches.push_back(std::move(patch));
      }
    }
  };
  auto add_temporal = [&](Index frame0) {
    for (Index bh = 0; bh + s <= d.h; bh += s) {
      for (Index bw = 0; bw + s <= d.w; bw += s) {
        std::vector<Index> patch;
        patch.reserve(static_cast<size_t>(s * s * s));
        for (Index dt = 0; dt < s; ++dt)
          for (Index dh = 0; dh < s; ++dh)
            for (Index dw = 0; dw < s; ++dw)
              patch.push_back(pos(frame0 + dt, bh + dh, bw + dw));
        patches.push_back(std::move(patch));
      }
    }
  };

  if (spec.first_frame_spatial) {
    add_spatial(0);
    for (Index t = 1; t + s <= d.t; t += s) add_temporal(t);
  } else {
    for (Index t = 0; t + s <= d.t; t += s) add_temporal(t);
  }

  if (patches.empty())
    throw std::invalid_argument(
        "local_correlation: no patch with >= 2 positions for dims " + d.str());
  return patches;
}

// Rows scaled to unit norm with the epsilon guard.
template <class Scalar>
Eigen::MatrixXd normalized_rows(const LatentTensor<Scalar>& x) {
  Eigen::MatrixXd rows = x.mat().template cast<double>();
  for (Index p = 0; p < rows.rows(); ++p) {
    const double norm = rows.row(p).norm();
    rows.row(p) /= std::max(norm, kCosineEpsilon);
  }
  return rows;
}

}  // namespace detail

template <class Scalar>
LagCorrelation autocorrelation(const LatentTensor<Scalar>& x, Index max_t,
                               Index max_h, Index max_w) {
  const TensorDims& d = x.dims();
  if (max_t < 0 || max_t >= d.t || max_h < 0 || max_h >= d.h || max_w < 0 ||
      max_w >= d.w)
    throw std::invalid_argument("autocorrelation: lag out of range");

  const Eigen::MatrixXd raw = x.mat().template cast<double>();
  const Eigen::MatrixXd unit = detail::normalized_rows(x);

  LagCorrelation out;
  const Index n_lags = (max_t + 1) * (max_h + 1) * (max_w + 1);
  out.cosine.resize(n_lags);
  out.dot.resize(n_lags);
  Index idx = 0;
  for (Index dt = 0; dt <= max_t; ++dt) {
    for (Index dh = 0; dh <= max_h; ++dh) {
      for (Index dw = 0; dw <= max_w; ++dw) {
        double cos_sum = 0.0;
        double dot_sum = 0.0;
        Index count = 0;
        for (Index t = 0; t + dt < d.t; ++t) {
          for (Index h = 0; h + dh < d.h; ++h) {
            for (Index w = 0; w + dw < d.w; ++w) {
              const Index a = (t * d.h + h) * d.w + w;
              const Index b = ((t + dt) * d.h + (h + dh)) * d.w + (w + dw);
              cos_sum += unit.row(a).dot(unit.row(b));
              dot_sum += raw.row(a).dot(raw.row(b));
              ++count;
            }
          }
        }
        out.lags.push_back({dt, dh, dw});
        out.counts.push_back(count);
        out.cosine[idx] = cos_sum / static_cast<double>(count);
        out.dot[idx] = dot_sum / static_cast<double>(count);
        ++idx;
      }
    }
  }
  return out;
}

template <class Scalar>
std::vector<double> per_patch_local_correlation(const LatentTensor<Scalar>& x,
                                                const PatchSpec& spec);

// Mean over patches of the average pairwise similarity across all unordered
// distinct position pairs inside each patch. Uses the sum identity
// sum_{a<b} za.zb = (|sum z|^2 - sum |z|^2) / 2.
template <class Scalar>
double local_correlation(const LatentTensor<Scalar>& x, const PatchSpec& spec) {
  const std::vector<double> per_patch = per_patch_local_correlation(x, spec);
  double acc = 0.0;
  for (double r : per_patch) acc += r;
  return acc / static_cast<double>(per_patch.size());
}

// Batch mean: every item contributes the same number of patches, so this is
// the patch mean across the whole batch.
template <class Scalar>
double local_correlation(const LatentBatch<Scalar>& batch,
                         const PatchSpec& spec) {
  double acc = 0.0;
  for (Index i = 0; i < batch.size(); ++i)
    acc += local_correlation(batch[i], spec);
  return acc / static_cast<double>(batch.size());
}

// R(p) for every patch, in tiling order.
template <class Scalar>
std::vector<double> per_patch_local_correlation(const LatentTensor<Scalar>& x,
                                                const PatchSpec& spec) {
  const auto patches = detail::make_patches(x.dims(), spec);
  Eigen::MatrixXd rows;
  if (spec.similarity == Similarity::cosine)
    rows = detail::normalized_rows(x);
  else
    rows = x.mat().template cast<double>();
  std::vector<double> out;
  out.reserve(patches.size());
  Eigen::VectorXd s(rows.cols());
  for (const auto& patch : patches) {
    s.setZero();
    double q = 0.0;
    for (Index p : patch) {
      s += rows.row(p);
      q += rows.row(p).squaredNorm();
    }
    const double m = static_cast<double>(patch.size()) *
                     static_cast<double>(patch.size() - 1) / 2.0;
    out.push_back((s.squaredNorm() - q) / (2.0 * m));
  }
  return out;
}

// Hinge loss ReLU(alpha - E_p[R(p)]).
template <class Scalar>
double lcr_loss(const LatentTensor<Scalar>& x, double alpha,
                const PatchSpec& spec = {}) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("lcr_loss: alpha must lie in (0,1]");
  return std::max(0.0, alpha - local_correlation(x, spec));
}

template <class Scalar>
double lcr_loss(const LatentBatch<Scalar>& batch, double alpha,
                const PatchSpec& spec = {}) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("lcr_loss: alpha must lie in (0,1]");
  return std::max(0.0, alpha - local_correlation(batch, spec));
}

// Exact gradient of lcr_loss with respect to the tensor entries, with the
// input treated as already-standardized data (no gradient through batch
// statistics). Zero when the hinge is inactive.
template <class Scalar>
LatentTensor<double> lcr_grad(const LatentTensor<Scalar>& x, double alpha,
                              const PatchSpec& spec = {}) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("lcr_grad: alpha must lie in (0,1]");
  const auto patches = detail::make_patches(x.dims(), spec);
  const Eigen::MatrixXd raw = x.mat().template cast<double>();
  const bool cosine = spec.similarity == Similarity::cosine;
  const Eigen::MatrixXd rows = cosine ? detail::normalized_rows(x) : Eigen::MatrixXd(raw);

  double mean_corr = 0.0;
  {
    Eigen::VectorXd s(rows.cols());
    for (const auto& patch : patches) {
      s.setZero();
      double q = 0.0;
      for (Index p : patch) {
        s += rows.row(p);
        q += rows.row(p).squaredNorm();
      }
      const double m = static_cast<double>(patch.size()) *
                       static_cast<double>(patch.size() - 1) / 2.0;
      mean_corr += (s.squaredNorm() - q) / (2.0 * m);
    }
    mean_corr /= static_cast<double>(patches.size());
  }

  LatentTensor<double> grad(x.dims());
  if (mean_corr >= alpha) return grad;  // hinge inactive

  const double patch_weight = -1.0 / static_cast<double>(patches.size());
  Eigen::VectorXd s(rows.cols());
  for (const auto& patch : patches) {
    s.setZero();
    for (Index p : patch) s += rows.row(p);
    const double m = static_cast<double>(patch.size()) *
                     static_cast<double>(patch.size() - 1) / 2.0;
    for (Index p : patch) {
      // dR/dz_hat for the pair-sum identity
      Eigen::VectorXd g = (s - rows.row(p).transpose()) / m;
      if (cosine) {
        const double norm = raw.row(p).norm();
        const double r = std::max(norm, kCosineEpsilon);
        if (norm > kCosineEpsilon) {
          const Eigen::VectorXd zhat = rows.row(p).transpose();
          g = (g - g.dot(zhat) * zhat) / r;
        } else {
          g /= r;
        }
      }
      grad.mat().row(p) += patch_weight * g.transpose();
    }
  }
  return grad;
}

struct LcrTrajectoryRow {
  Index step = 0;
  double loss = 0.0;
  double local_corr = 0.0;
  double low_freq_fraction = 0.0;
};

struct LcrOptimizeResult {
  LatentTensor<double> tensor;
  std::vector<LcrTrajectoryRow> trajectory;
};

namespace detail {

// Per-channel standardization of a single tensor, in place.
inline void standardize_tensor(LatentTensor<double>& x) {
  const Index n = x.mat().rows();
  for (Index c = 0; c < x.dims().c; ++c) {
    const double mean =
        pairwise_sum(0, n, [&](Index p) { return x.mat()(p, c); }) /
        static_cast<double>(n);
    const double var = pairwise_sum(0, n,
                                    [&](Index p) {
                                      const double d = x.mat()(p, c) - mean;
                                      return d * d;
                                    }) /
                       static_cast<double>(n);
    const double inv = 1.0 / std::max(std::sqrt(var), kStdEpsilon);
    for (Index p = 0; p < n; ++p) x.mat()(p, c) = (x.mat()(p, c) - mean) * inv;
  }
}

}  // namespace detail

// Plain gradient descent on omega * lcr_loss with per-step re-standardization.
// step_size <= 0 selects a default proportional to the patch count (the loss
// is a patch mean, so its per-entry gradient scales as 1 / #patches).
// The trajectory records loss, mean local correlation and the low-frequency
// energy fraction (m_max 1 per axis) after every step.
template <class Scalar>
LcrOptimizeResult optimize_latent_lcr(const LatentTensor<Scalar>& x0,
                                      double alpha, double omega, Index steps,
                                      double step_size = 0.0,
                                      const PatchSpec& spec = {}) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("optimize_latent_lcr: alpha must lie in (0,1]");
  if (omega <= 0.0)
    throw std::invalid_argument("optimize_latent_lcr: omega must be > 0");
  if (steps < 1)
    throw std::invalid_argument("optimize_latent_lcr: steps must be >= 1");
  const Index n_patches =
      static_cast<Index>(detail::make_patches(x0.dims(), spec).size());
  if (step_size <= 0.0) step_size = 40.0 * static_cast<double>(n_patches);

  const Index band_t = std::min<Index>(1, x0.dims().t - 1);
  const Index band_h = std::min<Index>(1, x0.dims().h - 1);
  const Index band_w = std::min<Index>(1, x0.dims().w - 1);

  LcrOptimizeResult result;
  LatentTensor<double> x = x0.template cast<double>();
  detail::standardize_tensor(x);

  auto record = [&](Index step) {
    LcrTrajectoryRow row;
    row.step = step;
    row.local_corr = local_correlation(x, spec);
    row.loss = omega * std::max(0.0, alpha - row.local_corr);
    row.low_freq_fraction = low_freq_energy(x, band_t, band_h, band_w);
    if (!std::isfinite(row.loss) || !std::isfinite(row.local_corr))
      throw std::runtime_error("optimize_latent_lcr: diverged at step " +
                               std::to_string(step));
    result.trajectory.push_back(row);
  };

  record(0);
  for (Index step = 1; step <= steps; ++step) {
    const LatentTensor<double> grad = lcr_grad(x, alpha, spec);
    x.mat() -= (step_size * omega) * grad.mat();
    detail::standardize_tensor(x);
    record(step);
  }
  result.tensor = std::move(x);
  return result;
}

}  // namespace lspec
