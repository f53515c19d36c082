#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lspec/eigenspectrum.hpp"
#include "lspec/rng.hpp"
#include "lspec/synth.hpp"

using namespace lspec;

namespace {

// Characteristic-polynomial oracle for symmetric 3x3 matrices (trigonometric
// closed form), descending. Independent of the Jacobi path.
Eigen::Vector3d cubic_eigenvalues(const Eigen::Matrix3d& a) {
  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  Eigen::Vector3d eig;
  if (p1 == 0.0) {
    eig << a(0, 0), a(1, 1), a(2, 2);
  } else {
    const double q = a.trace() / 3.0;
    const double p2 = (a(0, 0) - q) * (a(0, 0) - q) +
                      (a(1, 1) - q) * (a(1, 1) - q) +
                      (a(2, 2) - q) * (a(2, 2) - q) + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    const Eigen::Matrix3d b = (a - q * Eigen::Matrix3d::Identity()) / p;
    double r = b.determinant() / 2.0;
    r = std::clamp(r, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    eig[0] = q + 2.0 * p * std::cos(phi);
    eig[2] = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
    eig[1] = 3.0 * q - eig[0] - eig[2];
  }
  std::sort(eig.data(), eig.data() + 3, std::greater<double>());
  return eig;
}

Eigen::MatrixXd random_symmetric(Index n, uint64_t seed) {
  Philox rng(seed);
  Eigen::MatrixXd m(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j) m(i, j) = m(j, i) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("channel_autocorr: white batch is near identity") {
  auto [batch, stats] = standardize(gen_white({4, 40, 40, 8}, 16, 0));
  REQUIRE(batch.total_positions() >= 100000);
  const Eigen::MatrixXd sigma = channel_autocorr(batch);
  for (Index i = 0; i < 8; ++i) {
    CHECK(sigma(i, i) == doctest::Approx(1.0).epsilon(1e-9));
    for (Index j = 0; j < 8; ++j)
      if (i != j) CHECK(std::abs(sigma(i, j)) < 0.02);
  }
}

TEST_CASE("channel_autocorr: duplicated channel gives the all-ones matrix") {
  TensorDims d{2, 4, 4, 2};
  auto batch = gen_white({2, 4, 4, 1}, 3, 5);
  std::vector<LatentTensor<double>> items;
  for (Index i = 0; i < batch.size(); ++i) {
    LatentTensor<double> two(d);
    two.mat().col(0) = batch[i].mat().col(0);
    two.mat().col(1) = batch[i].mat().col(0);
    items.push_back(two);
  }
  auto [std_batch, stats] = standardize(LatentBatch<double>(std::move(items)));
  const Eigen::MatrixXd sigma = channel_autocorr(std_batch);
  CHECK((sigma - Eigen::MatrixXd::Ones(2, 2)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("channel_autocorr recovers a prescribed spectrum") {
  SpectrumSpec spec;
  spec.eigenvalues = Eigen::Vector4d(3.4, 0.3, 0.2, 0.1);
  auto batch = gen_spectrum_field({4, 40, 40, 4}, 16, spec, 2);
  const EigenSpectrum es = eigh(channel_autocorr(batch));
  for (Index l = 0; l < 4; ++l)
    CHECK(std::abs(es.eigenvalues[l] - spec.eigenvalues[l]) < 0.05);
}

TEST_CASE("eigh: identity matrix of order 48") {
  const EigenSpectrum es = eigh(Eigen::MatrixXd::Identity(48, 48));
  for (Index l = 0; l < 48; ++l)
    CHECK(es.eigenvalues[l] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("eigh: 2x2 closed form") {
  Eigen::MatrixXd a(2, 2);
  a << 1.0, 0.8, 0.8, 1.0;
  const EigenSpectrum es = eigh(a);
  CHECK(es.eigenvalues[0] == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(es.eigenvalues[1] == doctest::Approx(0.2).epsilon(1e-12));
  const double inv = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(es.eigenvectors(0, 0) - inv) < 1e-12);
  CHECK(std::abs(es.eigenvectors(1, 0) - inv) < 1e-12);
  CHECK(std::abs(es.eigenvectors(0, 1) - inv) < 1e-12);
  CHECK(std::abs(es.eigenvectors(1, 1) + inv) < 1e-12);
}

TEST_CASE("eigh matches the 3x3 characteristic-polynomial oracle") {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    const Eigen::MatrixXd a = random_symmetric(3, 100 + seed);
    const EigenSpectrum es = eigh(a);
    const Eigen::Vector3d expected = cubic_eigenvalues(a);
    for (Index l = 0; l < 3; ++l)
      CHECK(std::abs(es.eigenvalues[l] - expected[l]) < 1e-9);
  }
}

TEST_CASE("eigh reconstruction, orthonormality, trace, residual: 50 seeds") {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const Index n = 2 + static_cast<Index>(seed % 63);  // up to C = 64
    const Eigen::MatrixXd a = random_symmetric(n, 500 + seed);
    const EigenSpectrum es = eigh(a);
    const double scale = a.cwiseAbs().maxCoeff();

    const Eigen::MatrixXd recon = es.eigenvectors *
                                  es.eigenvalues.asDiagonal() *
                                  es.eigenvectors.transpose();
    CHECK((recon - a).cwiseAbs().maxCoeff() < 1e-7 * scale);

    const Eigen::MatrixXd gram = es.eigenvectors.transpose() * es.eigenvectors;
    CHECK((gram - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-8);

    CHECK(std::abs(es.eigenvalues.sum() - a.trace()) <=
          1e-8 * std::max(1.0, std::abs(a.trace())));

    for (Index l = 0; l < n; ++l) {
      const Eigen::VectorXd resid =
          a * es.eigenvectors.col(l) - es.eigenvalues[l] * es.eigenvectors.col(l);
      CHECK(resid.cwiseAbs().maxCoeff() < 1e-7 * std::max(1.0, scale));
      if (l > 0) CHECK(es.eigenvalues[l] <= es.eigenvalues[l - 1] + 1e-12);
    }
  }
}

TEST_CASE("eigh rejects asymmetric input") {
  Eigen::MatrixXd a(2, 2);
  a << 1.0, 0.5, 0.2, 1.0;
  CHECK_THROWS_AS(eigh(a), std::invalid_argument);
}

TEST_CASE("eigenvector sign convention is deterministic") {
  const Eigen::MatrixXd a = random_symmetric(6, 9);
  const EigenSpectrum es = eigh(a);
  for (Index l = 0; l < 6; ++l) {
    Index top = 0;
    for (Index i = 1; i < 6; ++i)
      if (std::abs(es.eigenvectors(i, l)) > std::abs(es.eigenvectors(top, l)))
        top = i;
    CHECK(es.eigenvectors(top, l) > 0.0);
  }
}

TEST_CASE("cumulative explained variance") {
  EigenSpectrum identity;
  identity.eigenvalues = Eigen::VectorXd::Ones(8);
  const Eigen::VectorXd ramp = cumulative_explained_variance(identity);
  for (Index l = 0; l < 8; ++l)
    CHECK(ramp[l] == doctest::Approx((l + 1) / 8.0).epsilon(1e-12));

  EigenSpectrum sharp;
  sharp.eigenvalues = Eigen::Vector4d(3.4, 0.3, 0.2, 0.1);
  const Eigen::VectorXd curve = cumulative_explained_variance(sharp);
  CHECK(curve[0] == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(curve[3] == doctest::Approx(1.0).epsilon(1e-12));
  for (Index l = 1; l < 4; ++l) CHECK(curve[l] >= curve[l - 1]);
}

TEST_CASE("a more concentrated spectrum dominates pointwise") {
  SpectrumSpec flat;
  flat.eigenvalues = Eigen::VectorXd::Ones(8);
  Eigen::VectorXd lam(8);
  lam << 4.0, 1.5, 1.0, 0.6, 0.4, 0.3, 0.15, 0.05;
  SpectrumSpec sharp;
  sharp.eigenvalues = lam;
  auto a = gen_spectrum_field({4, 16, 16, 8}, 8, flat, 21);
  auto b = gen_spectrum_field({4, 16, 16, 8}, 8, sharp, 21);
  const Eigen::VectorXd ca = cumulative_explained_variance(eigh(channel_autocorr(a)));
  const Eigen::VectorXd cb = cumulative_explained_variance(eigh(channel_autocorr(b)));
  for (Index l = 0; l + 1 < 8; ++l) CHECK(cb[l] >= ca[l]);
}

TEST_CASE("effective rank endpoints and the frozen reference value") {
  CHECK(effective_rank(Eigen::VectorXd::Ones(48)) ==
        doctest::Approx(48.0).epsilon(1e-12));
  Eigen::VectorXd one(4);
  one << 2.0, 0.0, 0.0, 0.0;
  CHECK(effective_rank(one) == doctest::Approx(1.0).epsilon(1e-12));
  Eigen::VectorXd lam(4);
  lam << 3.4, 0.3, 0.2, 0.1;
  // exp of the Shannon entropy, independently evaluated at 40 digits
  CHECK(effective_rank(lam) == doctest::Approx(1.7760996060982722).epsilon(1e-12));
  CHECK_THROWS_AS(effective_rank(Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST_CASE("cov_penalty: identity, exact-rank spectra, bounds") {
  CHECK(cov_penalty(Eigen::MatrixXd::Identity(48, 48), 3) ==
        doctest::Approx(45.0).epsilon(1e-12));

  // rank-3 matrix: penalty with k=3 vanishes
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(6);
  lam.head(3) << 3.0, 2.0, 1.0;
  const Eigen::MatrixXd q =
      Eigen::HouseholderQR<Eigen::MatrixXd>(random_symmetric(6, 77)).householderQ();
  const Eigen::MatrixXd a = q * lam.asDiagonal() * q.transpose();
  CHECK(std::abs(cov_penalty(a, 3)) < 1e-9);
  CHECK(cov_penalty(a, 2) > 0.0);
  CHECK_THROWS_AS(cov_penalty(a, 0), std::invalid_argument);
  CHECK_THROWS_AS(cov_penalty(a, 6), std::invalid_argument);
}

TEST_CASE("cov_penalty is nonnegative on channel autocorrelation matrices") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto batch = gen_ar_field({2, 6, 6, 5}, 2,
                              {.rho_t = 0.3, .rho_h = 0.05 * seed, .rho_w = 0.5},
                              seed);
    const Eigen::MatrixXd sigma = channel_autocorr(standardize(batch).first);
    for (Index k = 1; k < 5; ++k) CHECK(cov_penalty(sigma, k) >= 0.0);
  }
}

TEST_CASE("cov_penalty gradient matches finite differences") {
  const double h = 1e-6;
  auto [batch, stats] = standardize(gen_white({2, 4, 4, 4}, 2, 13));
  const auto result = cov_penalty_grad(batch, 3);
  REQUIRE(result.gradient_reliable);
  double max_rel = 0.0;
  for (Index item = 0; item < batch.size(); ++item) {
    for (Index p = 0; p < batch.dims().positions(); ++p) {
      for (Index c = 0; c < batch.dims().c; ++c) {
        LatentBatch<double> up = batch, dn = batch;
        up[item].mat()(p, c) += h;
        dn[item].mat()(p, c) -= h;
        const double fd = (cov_penalty(channel_autocorr(up), 3) -
                           cov_penalty(channel_autocorr(dn), 3)) /
                          (2.0 * h);
        const double an = result.grad[item].mat()(p, c);
        const double rel =
            std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        max_rel = std::max(max_rel, rel);
      }
    }
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("degenerate top-k gap flags the gradient as unreliable") {
  // duplicate channels put two exact zeros at the bottom of the spectrum,
  // so k = 3 sits on a tied boundary
  TensorDims d{2, 8, 8, 4};
  auto base = gen_white({2, 8, 8, 2}, 4, 3);
  std::vector<LatentTensor<double>> items;
  for (Index i = 0; i < base.size(); ++i) {
    LatentTensor<double> t(d);
    t.mat().col(0) = base[i].mat().col(0);
    t.mat().col(1) = base[i].mat().col(1);
    t.mat().col(2) = base[i].mat().col(0);
    t.mat().col(3) = base[i].mat().col(1);
    items.push_back(t);
  }
  LatentBatch<double> tied(std::move(items));
  const auto result = cov_penalty_grad(tied, 3);
  CHECK_FALSE(result.gradient_reliable);
  CHECK(cov_penalty_grad(tied, 1).gradient_reliable);
}

TEST_CASE("optimize_latent_covpen drives the effective rank down") {
  auto batch = gen_white({4, 8, 8, 8}, 4, 0);
  const auto result = optimize_latent_covpen(batch, 3, 300);
  REQUIRE(result.trajectory.size() == 301);
  CHECK(result.trajectory.front().effective_rank > 7.5);
  CHECK(result.trajectory.back().effective_rank < 5.0);

  Index non_increasing = 0;
  for (size_t s = 1; s < result.trajectory.size(); ++s)
    if (result.trajectory[s].penalty <= result.trajectory[s - 1].penalty + 1e-12)
      ++non_increasing;
  CHECK(static_cast<double>(non_increasing) >=
        0.95 * static_cast<double>(result.trajectory.size() - 1));
}

TEST_CASE("k = C-1 penalty equals the smallest eigenvalue and decays") {
  auto batch = gen_white({2, 8, 8, 4}, 4, 8);
  auto [std_batch, stats] = standardize(batch);
  const EigenSpectrum es = eigh(channel_autocorr(std_batch));
  const double tail = cov_penalty(channel_autocorr(std_batch), 3);
  CHECK(tail == doctest::Approx(es.eigenvalues[3]).epsilon(1e-9));

  const auto result = optimize_latent_covpen(batch, 3, 200);
  CHECK(result.trajectory.back().penalty < 0.5 * result.trajectory.front().penalty);
}

TEST_CASE("pc_project: full basis, rank-1 geometry, Pythagoras, idempotence") {
  auto [batch, stats] = standardize(gen_white({2, 8, 8, 4}, 4, 44));
  const EigenSpectrum es = eigh(channel_autocorr(batch));

  const auto full = pc_project(batch[0], es, {0, 1, 2, 3});
  CHECK((full.mat() - batch[0].mat()).cwiseAbs().maxCoeff() < 1e-10);

  const auto head = pc_project(batch[0], es, {0});
  const auto head_twice = pc_project(head, es, {0});
  CHECK((head.mat() - head_twice.mat()).cwiseAbs().maxCoeff() < 1e-10);

  const double x2 = batch[0].mat().squaredNorm();
  const double p2 = head.mat().squaredNorm();
  const double r2 = (batch[0].mat() - head.mat()).squaredNorm();
  CHECK(std::abs(p2 + r2 - x2) / x2 < 1e-9);

  CHECK_THROWS_AS(pc_project(batch[0], es, {}), std::invalid_argument);
  CHECK_THROWS_AS(pc_project(batch[0], es, {4}), std::invalid_argument);
}

TEST_CASE("pc_project on the perfectly correlated 2-channel batch") {
  TensorDims d{1, 4, 4, 2};
  auto base = gen_white({1, 4, 4, 1}, 2, 15);
  std::vector<LatentTensor<double>> items;
  for (Index i = 0; i < 2; ++i) {
    LatentTensor<double> t(d);
    t.mat().col(0) = base[i].mat().col(0);
    t.mat().col(1) = base[i].mat().col(0);
    items.push_back(t);
  }
  auto [batch, stats] = standardize(LatentBatch<double>(std::move(items)));
  const EigenSpectrum es = eigh(channel_autocorr(batch));
  const auto proj = pc_project(batch[0], es, {0});
  // both channels collapse onto the shared mean-direction component
  CHECK((proj.mat().col(0) - proj.mat().col(1)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((proj.mat() - batch[0].mat()).cwiseAbs().maxCoeff() < 1e-9);
}
