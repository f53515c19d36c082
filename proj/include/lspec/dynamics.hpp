#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lspec/eigenspectrum.hpp"
#include "lspec/rng.hpp"
#include "lspec/tensor.hpp"

namespace lspec {

inline double sigmoid(double y) {
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

// n-node Gauss-Legendre rule on [-1, 1] (Newton iteration on P_n).
struct GaussLegendre {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

inline GaussLegendre gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  GaussLegendre rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 64; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    rule.nodes[i] = x;
    rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

// Timestep law on (0,1): logit-normal(mean, std), uniform, or a point mass.
struct TimestepDist {
  enum class Kind { logit_normal, uniform, fixed };

  Kind kind = Kind::logit_normal;
  double logit_mean = 0.0;
  double logit_std = 1.0;
  double t0 = 0.5;

  static TimestepDist logit_normal(double mean = 0.0, double std = 1.0) {
    TimestepDist d;
    d.kind = Kind::logit_normal;
    d.logit_mean = mean;
    d.logit_std = std;
    d.validate();
    return d;
  }
  static TimestepDist uniform() {
    TimestepDist d;
    d.kind = Kind::uniform;
    return d;
  }
  static TimestepDist fixed(double t) {
    TimestepDist d;
    d.kind = Kind::fixed;
    d.t0 = t;
    d.validate();
    return d;
  }

  void validate() const {
    if (kind == Kind::logit_normal && !(logit_std > 0.0))
      throw std::invalid_argument("logit_std must be > 0");
    if (kind == Kind::fixed && !(t0 > 0.0 && t0 < 1.0))
      throw std::invalid_argument("fixed timestep must lie in (0,1)");
  }

  double sample(Philox& rng) const {
    switch (kind) {
      case Kind::logit_normal:
        return sigmoid(logit_mean + logit_std * rng.normal());
      case Kind::uniform: {
        const double u = rng.uniform();
        return std::min(std::max(u, 0x1.0p-53), 1.0 - 0x1.0p-53);
      }
      case Kind::fixed:
        return t0;
    }
    return t0;
  }

  // E[fn(t)]. Logit-normal integrates on the logit axis through the sigmoid
  // with the Gaussian weight; Gauss-Legendre over +-12 std covers the mass
  // to ~1e-31.
  double expect(const std::function<double(double)>& fn, int nodes = 64) const {
    switch (kind) {
      case Kind::fixed:
        return fn(t0);
      case Kind::uniform: {
        const GaussLegendre rule = gauss_legendre(nodes);
        double acc = 0.0;
        for (int i = 0; i < nodes; ++i) {
          const double t = 0.5 * (rule.nodes[i] + 1.0);
          acc += 0.5 * rule.weights[i] * fn(t);
        }
        return acc;
      }
      case Kind::logit_normal: {
        const GaussLegendre rule = gauss_legendre(nodes);
        const double half = 12.0 * logit_std;
        double acc = 0.0;
        for (int i = 0; i < nodes; ++i) {
          const double y = logit_mean + half * rule.nodes[i];
          const double z = (y - logit_mean) / logit_std;
          const double pdf = std::exp(-0.5 * z * z) /
                             (logit_std * std::sqrt(2.0 * std::numbers::pi));
          acc += half * rule.weights[i] * pdf * fn(sigmoid(y));
        }
        return acc;
      }
    }
    return 0.0;
  }

  double mean_t(int nodes = 64) const {
    return expect([](double t) { return t; }, nodes);
  }

  std::string str() const {
    switch (kind) {
      case Kind::logit_normal:
        return "logit-normal(" + std::to_string(logit_mean) + "," +
               std::to_string(logit_std) + ")";
      case Kind::uniform:
        return "uniform";
      case Kind::fixed:
        return "fixed(" + std::to_string(t0) + ")";
    }
    return "";
  }
};

// Flow-matching interpolation u_t = (1-t) u0 + t eps and velocity target
// v = eps - u0.
struct DiffusePair {
  Eigen::VectorXd u_t;
  Eigen::VectorXd v;
};

inline DiffusePair diffuse(const Eigen::VectorXd& u0, double t,
                           const Eigen::VectorXd& noise) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("diffuse: t must lie in [0,1]");
  if (noise.size() != u0.size())
    throw std::invalid_argument("diffuse: noise shape mismatch");
  return {(1.0 - t) * u0 + t * noise, noise - u0};
}

// Whole-tensor form: every position's channel vector diffused at the same t.
template <class Scalar>
struct DiffusedTensor {
  LatentTensor<Scalar> u_t;
  LatentTensor<Scalar> v;
};

template <class Scalar>
DiffusedTensor<Scalar> diffuse(const LatentTensor<Scalar>& u0, double t,
                               const LatentTensor<Scalar>& noise) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("diffuse: t must lie in [0,1]");
  if (!(noise.dims() == u0.dims()))
    throw std::invalid_argument("diffuse: noise shape mismatch");
  DiffusedTensor<Scalar> out{LatentTensor<Scalar>(u0.dims()),
                             LatentTensor<Scalar>(u0.dims())};
  out.u_t.mat() = static_cast<Scalar>(1.0 - t) * u0.mat() +
                  static_cast<Scalar>(t) * noise.mat();
  out.v.mat() = noise.mat() - u0.mat();
  return out;
}

// Cross-correlation of velocity against input at timestep t: t*I - (1-t)*Sigma.
inline Eigen::MatrixXd cross_corr_analytic(const Eigen::MatrixXd& sigma,
                                           double t) {
  if (sigma.rows() != sigma.cols())
    throw std::invalid_argument("cross_corr_analytic: matrix not square");
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("cross_corr_analytic: t must lie in [0,1]");
  const Index c = sigma.rows();
  return t * Eigen::MatrixXd::Identity(c, c) - (1.0 - t) * sigma;
}

// Monte-Carlo estimate of E[v^T u_t] over all batch positions and n_noise
// fresh noise draws per position, symmetrized. `stderr` holds the per-entry
// standard error of the symmetrized mean (conservative for the off-diagonal).
struct EmpiricalCrossCorr {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd stderr_;
  Index n_samples = 0;
};

template <class Scalar>
EmpiricalCrossCorr cross_corr_empirical(const LatentBatch<Scalar>& batch,
                                        double t, Index n_noise,
                                        uint64_t seed) {
  if (n_noise < 1)
    throw std::invalid_argument("cross_corr_empirical: n_noise must be >= 1");
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("cross_corr_empirical: t must lie in [0,1]");
  const Index c = batch.dims().c;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(c, c);
  Eigen::MatrixXd sumsq = Eigen::MatrixXd::Zero(c, c);
  Eigen::VectorXd eps(c);

  for (Index item = 0; item < batch.size(); ++item) {
    Philox rng(seed, static_cast<uint64_t>(item));
    const auto& rows = batch[item].mat();
    for (Index p = 0; p < rows.rows(); ++p) {
      const Eigen::VectorXd u = rows.row(p).template cast<double>();
      for (Index d = 0; d < n_noise; ++d) {
        for (Index ch = 0; ch < c; ++ch) eps[ch] = rng.normal();
        const Eigen::VectorXd ut = (1.0 - t) * u + t * eps;
        const Eigen::VectorXd v = eps - u;
        for (Index i = 0; i < c; ++i) {
          for (Index j = 0; j < c; ++j) {
            const double x = v[i] * ut[j];
            sum(i, j) += x;
            sumsq(i, j) += x * x;
          }
        }
      }
    }
  }

  const double n = static_cast<double>(batch.total_positions() * n_noise);
  EmpiricalCrossCorr out;
  out.n_samples = static_cast<Index>(n);
  const Eigen::MatrixXd mean = sum / n;
  Eigen::MatrixXd se(c, c);
  for (Index i = 0; i < c; ++i)
    for (Index j = 0; j < c; ++j) {
      const double var =
          std::max(0.0, (sumsq(i, j) - n * mean(i, j) * mean(i, j)) / (n - 1.0));
      se(i, j) = std::sqrt(var / n);
    }
  out.mean = (mean + mean.transpose()) / 2.0;
  out.stderr_ = (se + se.transpose()) / 2.0;
  return out;
}

// Expected mode strengths s_bar_l = E_t[t - (1-t) lambda_l].
struct ModeStrengthCurve {
  Eigen::VectorXd lambdas;
  Eigen::VectorXd s_bar;
  Eigen::VectorXd abs_s_bar;
  double mean_t = 0.0;
};

inline ModeStrengthCurve expected_mode_strength_quad(
    const Eigen::VectorXd& lambdas, const TimestepDist& dist, int nodes = 64) {
  for (Index i = 0; i < lambdas.size(); ++i)
    if (lambdas[i] < 0.0)
      throw std::invalid_argument("expected_mode_strength: lambdas must be >= 0");
  ModeStrengthCurve out;
  out.lambdas = lambdas;
  out.mean_t = dist.mean_t(nodes);
  out.s_bar = out.mean_t * (lambdas.array() + 1.0) - lambdas.array();
  out.abs_s_bar = out.s_bar.cwiseAbs();
  return out;
}

struct ModeStrengthMc {
  ModeStrengthCurve curve;
  Eigen::VectorXd stderr_;
};

inline ModeStrengthMc expected_mode_strength_mc(const Eigen::VectorXd& lambdas,
                                                const TimestepDist& dist,
                                                Index n, uint64_t seed) {
  if (n < 100)
    throw std::invalid_argument("expected_mode_strength_mc: need n >= 100");
  for (Index i = 0; i < lambdas.size(); ++i)
    if (lambdas[i] < 0.0)
      throw std::invalid_argument("expected_mode_strength: lambdas must be >= 0");
  Philox rng(seed);
  double sum_t = 0.0, sumsq_t = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double t = dist.sample(rng);
    sum_t += t;
    sumsq_t += t * t;
  }
  const double nd = static_cast<double>(n);
  const double mean_t = sum_t / nd;
  const double var_t = std::max(0.0, (sumsq_t - nd * mean_t * mean_t) / (nd - 1.0));
  const double se_t = std::sqrt(var_t / nd);

  ModeStrengthMc out;
  out.curve.lambdas = lambdas;
  out.curve.mean_t = mean_t;
  out.curve.s_bar = mean_t * (lambdas.array() + 1.0) - lambdas.array();
  out.curve.abs_s_bar = out.curve.s_bar.cwiseAbs();
  out.stderr_ = se_t * (lambdas.array() + 1.0);
  return out;
}

inline Eigen::VectorXd sample_logit_normal(double mean, double std, Index n,
                                           uint64_t seed) {
  if (!(std > 0.0)) throw std::invalid_argument("sample_logit_normal: std <= 0");
  if (n < 1) throw std::invalid_argument("sample_logit_normal: n must be >= 1");
  Philox rng(seed);
  Eigen::VectorXd out(n);
  for (Index i = 0; i < n; ++i) out[i] = sigmoid(mean + std * rng.normal());
  return out;
}

// Linear velocity predictor u_t -> u_t * W trained by SGD on E||u_t W - v||^2
// with fresh (position, t, noise) draws each step. W starts at exactly zero.
struct DenoiserState {
  Eigen::MatrixXd w;
  Index step = 0;
};

struct DenoiserConfig {
  Index steps = 2000;
  double step_size = 0.0;  // <= 0: 0.1 / max(1, lambda_max)
  Index batch_draws = 32;
  uint64_t seed = 0;
  std::vector<Index> snapshots;  // empty: 1-2-5 decades plus the final step
};

inline std::vector<Index> snapshot_schedule_125(Index steps) {
  std::vector<Index> s{0};
  for (Index decade = 1; decade <= steps; decade *= 10) {
    for (Index m : {1, 2, 5}) {
      const Index v = m * decade;
      if (v <= steps) s.push_back(v);
    }
  }
  if (s.back() != steps) s.push_back(steps);
  return s;
}

template <class Scalar>
std::vector<DenoiserState> train_linear_denoiser(
    const LatentBatch<Scalar>& batch, const TimestepDist& dist,
    const DenoiserConfig& cfg) {
  if (cfg.steps < 1)
    throw std::invalid_argument("train_linear_denoiser: steps must be >= 1");
  if (cfg.batch_draws < 1)
    throw std::invalid_argument("train_linear_denoiser: batch_draws must be >= 1");
  const Index c = batch.dims().c;

  // stability precheck against the input spectral bound:
  // ||E[u_t^T u_t]|| <= max(lambda_max, 1) for every t in [0,1]
  const EigenSpectrum spec = eigh(channel_autocorr(batch));
  const double bound = std::max(spec.eigenvalues[0], 1.0);
  double step_size = cfg.step_size;
  if (step_size <= 0.0) step_size = 0.1 / bound;
  if (step_size * 2.0 * bound >= 2.0)
    throw std::invalid_argument(
        "train_linear_denoiser: step_size too large for spectral bound " +
        std::to_string(bound));

  std::vector<Index> schedule =
      cfg.snapshots.empty() ? snapshot_schedule_125(cfg.steps) : cfg.snapshots;
  std::sort(schedule.begin(), schedule.end());
  schedule.erase(std::unique(schedule.begin(), schedule.end()), schedule.end());

  const Index rows_per_item = batch.dims().positions();
  const Index total_rows = batch.total_positions();
  Philox rng(cfg.seed, 0x6c696e64656eull);  // dedicated training stream

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(c, c);
  Eigen::MatrixXd grad(c, c);
  Eigen::VectorXd eps(c);
  std::vector<DenoiserState> trajectory;
  size_t snap_idx = 0;

  auto maybe_snapshot = [&](Index step) {
    while (snap_idx < schedule.size() && schedule[snap_idx] == step) {
      trajectory.push_back({w, step});
      ++snap_idx;
    }
  };

  maybe_snapshot(0);
  for (Index step = 1; step <= cfg.steps; ++step) {
    grad.setZero();
    for (Index j = 0; j < cfg.batch_draws; ++j) {
      const Index r =
          std::min(static_cast<Index>(rng.uniform() * total_rows), total_rows - 1);
      const Eigen::VectorXd u =
          batch[r / rows_per_item].mat().row(r % rows_per_item).template cast<double>();
      const double t = dist.sample(rng);
      for (Index ch = 0; ch < c; ++ch) eps[ch] = rng.normal();
      const Eigen::VectorXd ut = (1.0 - t) * u + t * eps;
      const Eigen::VectorXd v = eps - u;
      const Eigen::VectorXd resid = w.transpose() * ut - v;
      grad.noalias() += ut * resid.transpose();
    }
    w -= (2.0 * step_size / static_cast<double>(cfg.batch_draws)) * grad;
    if (!w.allFinite())
      throw std::runtime_error("train_linear_denoiser: diverged at step " +
                               std::to_string(step));
    maybe_snapshot(step);
  }
  return trajectory;
}

// Learned strength of mode l at a snapshot: project the learned
// cross-correlation W^T E[u_t^T u_t] onto eigenvector v_l. With
// a = E[(1-t)^2] and b = E[t^2] this reduces to (a lambda_l + b) v_l^T W v_l.
struct ModeErrorCurve {
  std::vector<Index> steps;
  Eigen::MatrixXd learned;      // snapshots x modes
  Eigen::MatrixXd error;        // relative, or absolute where flagged
  std::vector<bool> relative;   // per mode: error is |.|/|s_bar|
};

inline ModeErrorCurve mode_error_curve(
    const std::vector<DenoiserState>& trajectory, const EigenSpectrum& spec,
    const Eigen::VectorXd& s_bar, const TimestepDist& dist) {
  const Index c = spec.eigenvalues.size();
  if (s_bar.size() != c)
    throw std::invalid_argument("mode_error_curve: s_bar size mismatch");
  const double a = dist.expect([](double t) { return (1.0 - t) * (1.0 - t); });
  const double b = dist.expect([](double t) { return t * t; });

  ModeErrorCurve out;
  out.learned.resize(static_cast<Index>(trajectory.size()), c);
  out.error.resize(static_cast<Index>(trajectory.size()), c);
  out.relative.resize(c);
  for (Index l = 0; l < c; ++l) out.relative[l] = std::abs(s_bar[l]) >= 1e-6;

  for (size_t s = 0; s < trajectory.size(); ++s) {
    out.steps.push_back(trajectory[s].step);
    for (Index l = 0; l < c; ++l) {
      const Eigen::VectorXd v = spec.eigenvectors.col(l);
      const double learned =
          (a * spec.eigenvalues[l] + b) * v.dot(trajectory[s].w * v);
      out.learned(static_cast<Index>(s), l) = learned;
      const double diff = std::abs(learned - s_bar[l]);
      out.error(static_cast<Index>(s), l) =
          out.relative[l] ? diff / std::abs(s_bar[l]) : diff;
    }
  }
  return out;
}

// Trailing moving average over snapshots, window w.
inline Eigen::MatrixXd smooth_trailing(const Eigen::MatrixXd& curve, int w) {
  Eigen::MatrixXd out = curve;
  for (Index r = 0; r < curve.rows(); ++r) {
    const Index lo = std::max<Index>(0, r - w + 1);
    out.row(r) = curve.middleRows(lo, r - lo + 1).colwise().mean();
  }
  return out;
}

// First step at which the smoothed error falls to `threshold`, log-step
// interpolated between bracketing snapshots; +inf when never reached.
inline Eigen::VectorXd steps_to_error_threshold(const ModeErrorCurve& curve,
                                                double threshold,
                                                int smooth_window = 5) {
  const Eigen::MatrixXd sm = smooth_trailing(curve.error, smooth_window);
  const Index modes = sm.cols();
  Eigen::VectorXd out(modes);
  for (Index l = 0; l < modes; ++l) {
    double reached = std::numeric_limits<double>::infinity();
    for (Index s = 0; s < sm.rows(); ++s) {
      if (sm(s, l) <= threshold) {
        if (s == 0) {
          reached = static_cast<double>(curve.steps[0]);
        } else {
          const double e0 = sm(s - 1, l);
          const double e1 = sm(s, l);
          const double x0 = std::log1p(static_cast<double>(curve.steps[s - 1]));
          const double x1 = std::log1p(static_cast<double>(curve.steps[s]));
          const double frac = (e0 - threshold) / std::max(e0 - e1, 1e-300);
          reached = std::expm1(x0 + frac * (x1 - x0));
        }
        break;
      }
    }
    out[l] = reached;
  }
  return out;
}

// Spearman rank correlation with average ranks on ties.
inline double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need two equal-length vectors");
  const Index n = a.size();
  auto ranks = [n](const Eigen::VectorXd& x) {
    std::vector<Index> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](Index i, Index j) { return x[i] < x[j]; });
    Eigen::VectorXd r(n);
    Index i = 0;
    while (i < n) {
      Index j = i;
      while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
      const double avg = 0.5 * (i + j) + 1.0;
      for (Index k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const Eigen::VectorXd ra = ranks(a);
  const Eigen::VectorXd rb = ranks(b);
  const double ma = ra.mean();
  const double mb = rb.mean();
  const Eigen::VectorXd da = ra.array() - ma;
  const Eigen::VectorXd db = rb.array() - mb;
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (denom <= 0.0) return 0.0;
  return da.dot(db) / denom;
}

}  // namespace lspec
