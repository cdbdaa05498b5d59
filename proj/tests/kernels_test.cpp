/*
 * Copyright 2026 The adkf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "adkf/kernels.hpp"

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace adkf {
namespace {

KernelParams unit_params(double log_ell = 0.0) {
  KernelParams p;
  p.log_lengthscale = log_ell;
  p.log_signal_amp = 0.0;
  return p;
}

TEST(Matern52, SelfCovarianceIsSignalVariance) {
  const Matrix x{{0.3, -1.2}};
  for (double log_ell : {-2.0, 0.0, 1.5}) {
    EXPECT_DOUBLE_EQ(kernel_matrix(KernelSpec::matern52(), unit_params(log_ell), x, x)(0, 0), 1.0);
  }
}

TEST(Matern52, AtOneLengthscale) {
  // (1 + √5 + 5/3) e^{−√5}, evaluated in extended precision.
  const long double s5 = std::sqrt(5.0L);
  const auto expected = static_cast<double>((1.0L + s5 + 5.0L / 3.0L) * std::exp(-s5));
  EXPECT_NEAR(expected, 0.52400, 1e-5);
  const double ell = 1.7;
  const Matrix a{{0.0, 0.0}};
  const Matrix b{{ell * 0.6, ell * 0.8}};
  EXPECT_NEAR(kernel_matrix(KernelSpec::matern52(), unit_params(std::log(ell)), a, b)(0, 0), expected, 1e-14);
}

TEST(Tanimoto, HandExample) {
  const Matrix a{{1, 1, 0}};
  const Matrix b{{1, 0, 1}};
  EXPECT_NEAR(kernel_matrix(KernelSpec::tanimoto(), unit_params(), a, b)(0, 0), 1.0 / 3.0, 1e-15);
}

TEST(Tanimoto, SelfSimilarityDisjointAndZero) {
  Rng rng(3);
  KernelParams p = unit_params();
  p.log_signal_amp = 0.4;
  for (int t = 0; t < 20; ++t) {
    Matrix a = testing::random_matrix(rng, 1, 6, 0.0, 5.0).array().floor();
    a(0, 0) += 1.0;
    EXPECT_NEAR(kernel_matrix(KernelSpec::tanimoto(), p, a, a)(0, 0), p.signal_variance(), 1e-14);
  }
  const Matrix a{{2, 0, 3, 0}};
  const Matrix b{{0, 4, 0, 1}};
  EXPECT_EQ(kernel_matrix(KernelSpec::tanimoto(), p, a, b)(0, 0), 0.0);
  const Matrix z = Matrix::Zero(1, 4);
  EXPECT_NEAR(kernel_matrix(KernelSpec::tanimoto(), p, z, z)(0, 0), p.signal_variance(), 1e-15);
}

TEST(Kernels, Errors) {
  try {
    kernel_matrix(KernelSpec::matern52(), unit_params(), Matrix::Zero(2, 3), Matrix::Zero(2, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
  try {
    kernel_matrix(KernelSpec::tanimoto(), unit_params(), Matrix{{1, -1}}, Matrix{{1, 1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNegativeCounts);
  }
}

TEST(KernelGradTheta, SignalAmplitudeGradientIsTwiceK) {
  Rng rng(4);
  const Matrix x = testing::random_matrix(rng, 5, 3, 0.0, 3.0);
  const KernelParams p = testing::random_params(rng);
  for (const KernelSpec spec : {KernelSpec::matern52(), KernelSpec::tanimoto()}) {
    const auto grads = kernel_grad_theta(spec, p, x, x);
    EXPECT_TRUE(grads.back().isApprox(2.0 * kernel_matrix(spec, p, x, x), 1e-14));
  }
}

TEST(KernelGradTheta, LengthscaleGradientVanishesAtZeroDistance) {
  const Matrix x{{0.5, 0.5}};
  EXPECT_EQ(kernel_grad_theta(KernelSpec::matern52(), unit_params(0.3), x, x)[0](0, 0), 0.0);
}

TEST(KernelGradTheta, LengthscaleGradientAtOneLengthscaleMatchesFd) {
  const double log_ell = 0.2;
  const Matrix a{{0.0}};
  const Matrix b{{std::exp(log_ell)}};
  const double h = 1e-6;
  const double fd = (kernel_matrix(KernelSpec::matern52(), unit_params(log_ell + h), a, b)(0, 0) -
                     kernel_matrix(KernelSpec::matern52(), unit_params(log_ell - h), a, b)(0, 0)) /
                    (2 * h);
  EXPECT_NEAR(kernel_grad_theta(KernelSpec::matern52(), unit_params(log_ell), a, b)[0](0, 0), fd, 1e-7);
}

TEST(KernelProperty, ThetaGradientsMatchFiniteDifferences) {
  Rng rng(5);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const KernelSpec spec = trial % 2 ? KernelSpec::tanimoto() : KernelSpec::matern52();
    const double lo = spec.family == KernelFamily::kTanimoto ? 0.0 : -1.0;
    const Matrix r = testing::random_matrix(rng, 4, 3, lo, 2.0);
    const Matrix c = testing::random_matrix(rng, 5, 3, lo, 2.0);
    const KernelParams p = testing::random_params(rng);
    const auto grads = kernel_grad_theta(spec, p, r, c);
    const Vector theta = to_theta(spec, p);
    for (std::size_t j = 0; j < grads.size(); ++j) {
      Vector tp = theta, tm = theta;
      tp[static_cast<Eigen::Index>(j)] += h;
      tm[static_cast<Eigen::Index>(j)] -= h;
      const Matrix fd =
          (kernel_matrix(spec, with_theta(spec, p, tp), r, c) - kernel_matrix(spec, with_theta(spec, p, tm), r, c)) /
          (2 * h);
      EXPECT_LE((grads[j] - fd).cwiseAbs().maxCoeff(), 1e-7) << "trial " << trial << " component " << j;
    }
  }
}

TEST(KernelProperty, InputVjpMatchesFiniteDifferences) {
  Rng rng(6);
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix r = testing::random_matrix(rng, 4, 3);
    const Matrix c = testing::random_matrix(rng, 3, 3);
    const Matrix w = testing::random_matrix(rng, 4, 3);
    const KernelParams p = testing::random_params(rng);
    const auto spec = KernelSpec::matern52();
    auto [gr, gc] = kernel_input_vjp(spec, p, r, c, w);
    auto objective = [&](const Matrix& rr, const Matrix& cc) {
      return (w.array() * kernel_matrix(spec, p, rr, cc).array()).sum();
    };
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      Matrix rp = r, rm = r;
      rp.data()[i] += h;
      rm.data()[i] -= h;
      EXPECT_NEAR(gr.data()[i], (objective(rp, c) - objective(rm, c)) / (2 * h), 1e-7);
    }
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      Matrix cp = c, cm = c;
      cp.data()[i] += h;
      cm.data()[i] -= h;
      EXPECT_NEAR(gc.data()[i], (objective(r, cp) - objective(r, cm)) / (2 * h), 1e-7);
    }
  }
}

TEST(KernelProperty, SymmetricPsdOnRandomInputs) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const KernelSpec spec = trial % 2 ? KernelSpec::tanimoto() : KernelSpec::matern52();
    const double lo = spec.family == KernelFamily::kTanimoto ? 0.0 : -1.0;
    const Matrix x = testing::random_matrix(rng, 12, 4, lo, 3.0);
    const KernelParams p = testing::random_params(rng);
    const Matrix k = kernel_matrix(spec, p, x, x);
    EXPECT_EQ((k - k.transpose()).cwiseAbs().maxCoeff(), 0.0);
    const SpdFactor f = cholesky_decompose(k);
    EXPECT_LE(f.jitter_applied, kJitterLadder[1] * k.diagonal().mean());
  }
}

TEST(KernelProperty, InvariantToCoordinatePermutation) {
  Rng rng(8);
  const Matrix x = testing::random_matrix(rng, 6, 5, 0.0, 3.0);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  const Matrix xp = x * perm;
  const KernelParams p = testing::random_params(rng);
  for (const KernelSpec spec : {KernelSpec::matern52(), KernelSpec::tanimoto()}) {
    EXPECT_LE((kernel_matrix(spec, p, x, x) - kernel_matrix(spec, p, xp, xp)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(MedianHeuristic, OneDimensionalExample) {
  const Matrix x{{0.0}, {1.0}, {3.0}};
  const KernelParams p = median_heuristic_init(x);
  EXPECT_NEAR(p.log_lengthscale, std::log(2.0), 1e-15);
  EXPECT_EQ(p.log_signal_amp, 0.0);
  EXPECT_NEAR(p.log_noise_std, std::log(0.1), 1e-15);
  ASSERT_TRUE(p.prior.has_value());
  EXPECT_EQ(p.prior->log_mu, p.log_lengthscale);
  EXPECT_EQ(p.prior->log_sigma, kDefaultPriorLogSigma);
}

TEST(MedianHeuristic, IdenticalPointsFallBackToUnitLengthscale) {
  const Matrix x{{2.0, 1.0}, {2.0, 1.0}};
  const KernelParams p = median_heuristic_init(x, 0.5);
  EXPECT_EQ(p.log_lengthscale, 0.0);
  EXPECT_EQ(p.prior->log_mu, 0.0);
  EXPECT_EQ(p.prior->log_sigma, 0.5);
}

TEST(MedianHeuristic, ExcludesZeroDistancesAndNeedsTwoPoints) {
  const Matrix x{{0.0}, {0.0}, {2.0}};  // distances {0, 2, 2}
  EXPECT_NEAR(median_heuristic_init(x).log_lengthscale, std::log(2.0), 1e-15);
  try {
    median_heuristic_init(Matrix{{1.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooFewPoints);
  }
}

TEST(LengthscalePrior, ModeAndSlope) {
  KernelParams p;
  p.prior = LengthscalePrior{0.7, 0.5};
  p.log_lengthscale = 0.7;
  PriorTerm t = lengthscale_log_prior(p);
  EXPECT_EQ(t.grad_log_lengthscale, 0.0);
  EXPECT_NEAR(t.value, -std::log(0.5 * std::sqrt(2.0 * std::numbers::pi)), 1e-15);
  p.log_lengthscale = 0.7 + 0.5;
  t = lengthscale_log_prior(p);
  EXPECT_NEAR(t.grad_log_lengthscale, -1.0 / 0.5, 1e-14);
}

TEST(LengthscalePrior, AbsentPriorContributesNothing) {
  KernelParams p;
  p.log_lengthscale = 3.0;
  const PriorTerm t = lengthscale_log_prior(p);
  EXPECT_EQ(t.value, 0.0);
  EXPECT_EQ(t.grad_log_lengthscale, 0.0);
}

}  // namespace
}  // namespace adkf
