#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "lspec/tensor.hpp"

namespace lspec {

// Orthonormal DCT-II coefficients, one per (i,j,k,c) of the source tensor.
// Orthonormality makes Parseval exact: sum coeff^2 == sum signal^2.
template <class Scalar>
struct DctCoeffs {
  LatentTensor<Scalar> values;

  const TensorDims& dims() const { return values.dims(); }
};

namespace detail {

// N x N orthonormal DCT-II matrix: row k is the k-th analysis vector.
inline Eigen::MatrixXd dct_matrix(Index n) {
  Eigen::MatrixXd m(n, n);
  const double base = std::sqrt(1.0 / static_cast<double>(n));
  const double other = std::sqrt(2.0 / static_cast<double>(n));
  for (Index k = 0; k < n; ++k) {
    const double scale = (k == 0) ? base : other;
    for (Index i = 0; i < n; ++i) {
      m(k, i) = scale * std::cos(std::numbers::pi *
                                 (2.0 * static_cast<double>(i) + 1.0) *
                                 static_cast<double>(k) /
                                 (2.0 * static_cast<double>(n)));
    }
  }
  return m;
}

template <class Scalar>
void apply_along_axis(LatentTensor<Scalar>& x, int axis,
                      const Eigen::MatrixXd& m) {
  Scalar* d = x.data();
  Eigen::VectorXd line(m.rows());
  for_each_axis_line(x.dims(), axis, [&](Index base, Index stride, Index len) {
    for (Index k = 0; k < len; ++k)
      line[k] = static_cast<double>(d[base + k * stride]);
    Eigen::VectorXd y = m * line;
    for (Index k = 0; k < len; ++k)
      d[base + k * stride] = static_cast<Scalar>(y[k]);
  });
}

}  // namespace detail

// Separable orthonormal 3D DCT-II along T, H, W for each channel.
template <class Scalar>
DctCoeffs<Scalar> dct3(const LatentTensor<Scalar>& x) {
  LatentTensor<Scalar> out = x;
  const TensorDims& d = x.dims();
  const Index lens[3] = {d.t, d.h, d.w};
  for (int axis = 0; axis < 3; ++axis) {
    if (lens[axis] == 1) continue;  // length-1 orthonormal DCT is identity
    detail::apply_along_axis(out, axis, detail::dct_matrix(lens[axis]));
  }
  return {std::move(out)};
}

// Exact inverse of dct3 (DCT-III, i.e. the transposed orthonormal matrix).
template <class Scalar>
LatentTensor<Scalar> idct3(const DctCoeffs<Scalar>& coeffs) {
  LatentTensor<Scalar> out = coeffs.values;
  const TensorDims& d = out.dims();
  const Index lens[3] = {d.t, d.h, d.w};
  for (int axis = 0; axis < 3; ++axis) {
    if (lens[axis] == 1) continue;
    detail::apply_along_axis(out, axis,
                             detail::dct_matrix(lens[axis]).transpose());
  }
  return out;
}

struct FreqTriple {
  Index i = 0, j = 0, k = 0;
  bool operator==(const FreqTriple&) const = default;
};

// Linearizes the 3D frequency grid: ascending total frequency i+j+k with
// lexicographic (i,j,k) tie-break. Bijective over the grid and stable
// across platforms.
inline std::vector<FreqTriple> zigzag_order(Index t, Index h, Index w) {
  if (t < 1 || h < 1 || w < 1)
    throw std::invalid_argument("zigzag_order: dims must be >= 1");
  std::vector<FreqTriple> order;
  order.reserve(static_cast<size_t>(t * h * w));
  for (Index i = 0; i < t; ++i)
    for (Index j = 0; j < h; ++j)
      for (Index k = 0; k < w; ++k) order.push_back({i, j, k});
  std::sort(order.begin(), order.end(),
            [](const FreqTriple& a, const FreqTriple& b) {
              const Index sa = a.i + a.j + a.k;
              const Index sb = b.i + b.j + b.k;
              if (sa != sb) return sa < sb;
              if (a.i != b.i) return a.i < b.i;
              if (a.j != b.j) return a.j < b.j;
              return a.k < b.k;
            });
  return order;
}

// Binned zigzag-ordered spectral energy. Bin index ranges are half-open
// [start, end) over zigzag positions.
struct PsdCurve {
  std::vector<Index> bin_start;
  std::vector<Index> bin_end;
  Eigen::VectorXd energy;
  bool normalized = false;
};

namespace detail {

// Mean squared DCT coefficient per frequency triple, averaged over batch
// items and channels. Accumulation is in double in a fixed order.
template <class Scalar>
Eigen::VectorXd mean_coeff_energy(const LatentBatch<Scalar>& batch) {
  const TensorDims& d = batch.dims();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(d.positions());
  for (Index i = 0; i < batch.size(); ++i) {
    DctCoeffs<Scalar> coeffs = dct3(batch[i]);
    for (Index p = 0; p < d.positions(); ++p)
      acc[p] += coeffs.values.mat().row(p).template cast<double>().squaredNorm();
  }
  return acc / static_cast<double>(batch.size() * d.c);
}

}  // namespace detail

// Squared DCT coefficients averaged over channels and items, laid out in
// zigzag order, summed over `bins` near-equal-count contiguous bins, and
// normalized to unit total energy. The first (count % bins) bins hold one
// extra coefficient.
template <class Scalar>
PsdCurve psd(const LatentBatch<Scalar>& batch, Index bins) {
  const TensorDims& d = batch.dims();
  const Index count = d.positions();
  if (bins < 1) throw std::invalid_argument("psd: bins must be >= 1");
  if (bins > count)
    throw std::invalid_argument("psd: bins exceeds coefficient count " +
                                std::to_string(count));

  const Eigen::VectorXd energy = detail::mean_coeff_energy(batch);
  const std::vector<FreqTriple> order = zigzag_order(d.t, d.h, d.w);

  PsdCurve curve;
  curve.energy = Eigen::VectorXd::Zero(bins);
  const Index base = count / bins;
  const Index extra = count % bins;
  Index cursor = 0;
  for (Index b = 0; b < bins; ++b) {
    const Index len = base + (b < extra ? 1 : 0);
    curve.bin_start.push_back(cursor);
    curve.bin_end.push_back(cursor + len);
    double s = 0.0;
    for (Index z = cursor; z < cursor + len; ++z) {
      const FreqTriple& f = order[static_cast<size_t>(z)];
      s += energy[(f.i * d.h + f.j) * d.w + f.k];
    }
    curve.energy[b] = s;
    cursor += len;
  }
  const double total = curve.energy.sum();
  if (total > 0.0) {
    curve.energy /= total;
    curve.normalized = true;
  }
  return curve;
}

// Fraction of total spectral energy with i <= m_t, j <= m_h, k <= m_w.
template <class Scalar>
double low_freq_energy(const DctCoeffs<Scalar>& coeffs, Index m_t, Index m_h,
                       Index m_w) {
  const TensorDims& d = coeffs.dims();
  if (m_t < 0 || m_t >= d.t || m_h < 0 || m_h >= d.h || m_w < 0 || m_w >= d.w)
    throw std::invalid_argument("low_freq_energy: band exceeds axis bounds");
  double low = 0.0;
  double total = 0.0;
  for (Index i = 0; i < d.t; ++i) {
    for (Index j = 0; j < d.h; ++j) {
      for (Index k = 0; k < d.w; ++k) {
        const double e = coeffs.values.mat()
                             .row((i * d.h + j) * d.w + k)
                             .template cast<double>()
                             .squaredNorm();
        total += e;
        if (i <= m_t && j <= m_h && k <= m_w) low += e;
      }
    }
  }
  if (total <= 0.0) throw std::invalid_argument("low_freq_energy: zero energy");
  return low / total;
}

template <class Scalar>
double low_freq_energy(const LatentTensor<Scalar>& x, Index m_t, Index m_h,
                       Index m_w) {
  return low_freq_energy(dct3(x), m_t, m_h, m_w);
}

template <class Scalar>
double low_freq_energy(const LatentBatch<Scalar>& batch, Index m_t, Index m_h,
                       Index m_w) {
  const TensorDims& d = batch.dims();
  if (m_t < 0 || m_t >= d.t || m_h < 0 || m_h >= d.h || m_w < 0 || m_w >= d.w)
    throw std::invalid_argument("low_freq_energy: band exceeds axis bounds");
  const Eigen::VectorXd energy = detail::mean_coeff_energy(batch);
  double low = 0.0;
  double total = 0.0;
  for (Index i = 0; i < d.t; ++i)
    for (Index j = 0; j < d.h; ++j)
      for (Index k = 0; k < d.w; ++k) {
        const double e = energy[(i * d.h + j) * d.w + k];
        total += e;
        if (i <= m_t && j <= m_h && k <= m_w) low += e;
      }
  if (total <= 0.0) throw std::invalid_argument("low_freq_energy: zero energy");
  return low / total;
}

// Dirichlet kernel V[d] weighting autocorrelation lags in the low-frequency
// energy identity: E_low = sum_d R[d] V[d] for the symmetric band
// {0..m_max} U {N-m_max..N-1}.
struct SensitivityKernel {
  Index n = 0;
  Index m_max = 0;
  Eigen::VectorXd values;
};

inline SensitivityKernel sensitivity_kernel(Index n, Index m_max) {
  if (n < 1 || m_max < 0 || 2 * m_max + 1 > n)
    throw std::invalid_argument("sensitivity_kernel: need 1 <= 2*m_max+1 <= N");
  SensitivityKernel k;
  k.n = n;
  k.m_max = m_max;
  k.values.resize(n);
  k.values[0] = static_cast<double>(2 * m_max + 1);
  for (Index d = 1; d < n; ++d) {
    const double x = std::numbers::pi * static_cast<double>(d) /
                     static_cast<double>(n);
    k.values[d] =
        std::sin(static_cast<double>(2 * m_max + 1) * x) / std::sin(x);
  }
  return k;
}

// Discrete Wiener-Khinchin check: the DFT of the circular autocorrelation
// equals |DFT(signal)|^2 / N. Both spectra are returned together with their
// largest difference relative to the spectrum peak.
struct WienerKhinchinResult {
  Eigen::VectorXd psd_from_autocorr;
  Eigen::VectorXd psd_direct;
  double max_rel_diff = 0.0;
};

inline WienerKhinchinResult wiener_khinchin_check(const Eigen::VectorXd& x) {
  const Index n = x.size();
  if (n < 2)
    throw std::invalid_argument("wiener_khinchin_check: need length >= 2");

  Eigen::VectorXd r(n);  // circular autocorrelation, R[d] = mean x[i] x[i+d]
  for (Index d = 0; d < n; ++d) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) s += x[i] * x[(i + d) % n];
    r[d] = s / static_cast<double>(n);
  }

  WienerKhinchinResult out;
  out.psd_from_autocorr.resize(n);
  out.psd_direct.resize(n);
  // phases reduced mod N before the trig call to keep them in [0, 2*pi)
  const double w0 = 2.0 * std::numbers::pi / static_cast<double>(n);
  for (Index m = 0; m < n; ++m) {
    double re = 0.0;
    for (Index d = 0; d < n; ++d)
      re += r[d] * std::cos(w0 * static_cast<double>((m * d) % n));
    out.psd_from_autocorr[m] = re;

    double xr = 0.0, xi = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double a = w0 * static_cast<double>((m * i) % n);
      xr += x[i] * std::cos(a);
      xi -= x[i] * std::sin(a);
    }
    out.psd_direct[m] = (xr * xr + xi * xi) / static_cast<double>(n);
  }

  const double peak =
      std::max(out.psd_direct.cwiseAbs().maxCoeff(), 1e-300);
  out.max_rel_diff =
      (out.psd_from_autocorr - out.psd_direct).cwiseAbs().maxCoeff() / peak;
  return out;
}

}  // namespace lspec
