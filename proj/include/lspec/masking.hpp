#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lspec/rng.hpp"
#include "lspec/tensor.hpp"

namespace lspec {

// Binary keep/drop field with unit-block structure. Values are constant
// within each block; 1 = keep.
struct MaskVolume {
  Index t = 0, h = 0, w = 0;
  Index unit = 1;
  std::vector<uint8_t> values;
  Index n_blocks = 0;
  Index dropped_blocks = 0;

  Index positions() const { return t * h * w; }
  uint8_t at(Index ti, Index hi, Index wi) const {
    return values[(ti * h + hi) * w + wi];
  }
  double realized_ratio() const {
    return static_cast<double>(dropped_blocks) / static_cast<double>(n_blocks);
  }
};

// Drop fractions with categorical selection probabilities.
struct RatioSchedule {
  std::vector<double> ratios{0.0, 0.25, 0.5, 0.75};
  std::vector<double> probs{0.7, 0.1, 0.1, 0.1};

  void validate() const {
    if (ratios.empty() || ratios.size() != probs.size())
      throw std::invalid_argument("schedule needs matching ratios and probs");
    double sum = 0.0;
    for (double p : probs) {
      if (p < 0.0) throw std::invalid_argument("probs must be >= 0");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("probs must sum to 1");
    for (double r : ratios)
      if (!(r >= 0.0 && r < 1.0))
        throw std::invalid_argument("ratios must lie in [0,1)");
  }
};

inline double sample_ratio(const RatioSchedule& schedule, Philox& rng) {
  schedule.validate();
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < schedule.ratios.size(); ++i) {
    acc += schedule.probs[i];
    if (u < acc) return schedule.ratios[i];
  }
  return schedule.ratios.back();
}

inline double sample_ratio(const RatioSchedule& schedule, uint64_t seed) {
  Philox rng(seed);
  return sample_ratio(schedule, rng);
}

namespace detail {

// Axis segmentation into unit-length runs; a trailing partial run forms its
// own smaller block. first_separate peels index 0 off into a singleton run
// (the first-frame convention on the time axis).
inline std::vector<std::pair<Index, Index>> axis_segments(Index len, Index unit,
                                                          bool first_separate) {
  std::vector<std::pair<Index, Index>> segs;
  Index start = 0;
  if (first_separate) {
    segs.push_back({0, 1});
    start = 1;
  }
  for (Index i = start; i < len; i += unit)
    segs.push_back({i, std::min(unit, len - i)});
  return segs;
}

}  // namespace detail

// Exactly round(ratio * n_blocks) blocks dropped, chosen uniformly without
// replacement. With unit 2, frame 0 is masked in 1x2x2 spatial blocks and
// temporal blocks start at frame 1; trailing remainders form smaller blocks.
inline MaskVolume gen_mask(Index t, Index h, Index w, double ratio, Index unit,
                           uint64_t seed) {
  if (t < 1 || h < 1 || w < 1)
    throw std::invalid_argument("gen_mask: dims must be >= 1");
  if (unit != 1 && unit != 2)
    throw std::invalid_argument("gen_mask: unit must be 1 or 2");
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw std::invalid_argument("gen_mask: ratio must lie in [0,1)");
  if (unit > t || unit > h || unit > w)
    throw std::invalid_argument("gen_mask: dims smaller than unit");

  const auto segs_t = detail::axis_segments(t, unit, unit > 1 && t > 1);
  const auto segs_h = detail::axis_segments(h, unit, false);
  const auto segs_w = detail::axis_segments(w, unit, false);

  MaskVolume mask;
  mask.t = t;
  mask.h = h;
  mask.w = w;
  mask.unit = unit;
  mask.values.assign(static_cast<size_t>(t * h * w), 1);
  mask.n_blocks =
      static_cast<Index>(segs_t.size() * segs_h.size() * segs_w.size());
  mask.dropped_blocks = static_cast<Index>(std::llround(
      ratio * static_cast<double>(mask.n_blocks)));

  // partial Fisher-Yates over block indices
  std::vector<Index> blocks(mask.n_blocks);
  for (Index i = 0; i < mask.n_blocks; ++i) blocks[i] = i;
  Philox rng(seed);
  for (Index i = 0; i < mask.dropped_blocks; ++i) {
    const Index span = mask.n_blocks - i;
    const Index j =
        i + std::min(static_cast<Index>(rng.uniform() * span), span - 1);
    std::swap(blocks[i], blocks[j]);
  }

  const Index nh = static_cast<Index>(segs_h.size());
  const Index nw = static_cast<Index>(segs_w.size());
  for (Index i = 0; i < mask.dropped_blocks; ++i) {
    const Index b = blocks[i];
    const auto& st = segs_t[b / (nh * nw)];
    const auto& sh = segs_h[(b / nw) % nh];
    const auto& sw = segs_w[b % nw];
    for (Index ti = st.first; ti < st.first + st.second; ++ti)
      for (Index hi = sh.first; hi < sh.first + sh.second; ++hi)
        for (Index wi = sw.first; wi < sw.first + sw.second; ++wi)
          mask.values[(ti * h + hi) * w + wi] = 0;
  }
  return mask;
}

// z * M + (1 - M) * token, with the token broadcast over channels.
template <class Scalar>
LatentTensor<Scalar> apply_mask(const LatentTensor<Scalar>& z,
                                const MaskVolume& mask,
                                const Eigen::VectorXd& token) {
  const TensorDims& d = z.dims();
  if (mask.t != d.t || mask.h != d.h || mask.w != d.w)
    throw std::invalid_argument("apply_mask: mask shape mismatch");
  if (token.size() != d.c)
    throw std::invalid_argument("apply_mask: token length must equal C");
  for (Index c = 0; c < d.c; ++c)
    if (!std::isfinite(token[c]))
      throw std::invalid_argument("apply_mask: token must be finite");

  LatentTensor<Scalar> out = z;
  for (Index p = 0; p < d.positions(); ++p) {
    if (mask.values[static_cast<size_t>(p)] == 0)
      out.mat().row(p) = token.transpose().template cast<Scalar>();
  }
  return out;
}

// Mean absolute difference over all entries.
template <class Scalar>
double lmr_l1(const LatentTensor<Scalar>& x, const LatentTensor<Scalar>& x_hat) {
  if (!(x.dims() == x_hat.dims()))
    throw std::invalid_argument("lmr_l1: shape mismatch");
  const double sum = (x.mat().template cast<double>() -
                      x_hat.mat().template cast<double>())
                         .cwiseAbs()
                         .sum();
  return sum / static_cast<double>(x.dims().size());
}

// Samples a ratio, masks the tensor, and reports the L1 perturbation against
// the original (the identity stand-in for the decoder path).
template <class Scalar>
struct MaskPipelineResult {
  LatentTensor<Scalar> masked;
  double ratio_requested = 0.0;
  double ratio_realized = 0.0;
  double l1 = 0.0;
};

template <class Scalar>
MaskPipelineResult<Scalar> masked_identity_pipeline(
    const LatentTensor<Scalar>& z, const RatioSchedule& schedule,
    const Eigen::VectorXd& token, Index unit, uint64_t seed) {
  Philox rng(seed);
  MaskPipelineResult<Scalar> out;
  out.ratio_requested = sample_ratio(schedule, rng);
  const MaskVolume mask = gen_mask(z.dims().t, z.dims().h, z.dims().w,
                                   out.ratio_requested, unit, rng.next_u64());
  out.ratio_realized = mask.realized_ratio();
  out.masked = apply_mask(z, mask, token);
  out.l1 = lmr_l1(z, out.masked);
  return out;
}

}  // namespace lspec
