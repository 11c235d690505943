#include "mionet/random_field.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mionet;

namespace {

GRFSpec small_spec(double l, int q = 101) {
  GRFSpec s;
  s.length_scale = l;
  s.grid = SensorGrid::uniform(q);
  return s;
}

double total_variation(const EncodedFunction& f) {
  double tv = 0.0;
  for (int i = 1; i < f.grid.q; ++i) tv += std::abs(f.values[i] - f.values[i - 1]);
  return tv;
}

}  // namespace

TEST(KernelMatrix, DiagonalExactlyOne) {
  Mat k = kernel_matrix(small_spec(0.2));
  for (int i = 0; i < k.rows(); ++i) EXPECT_EQ(k(i, i), 1.0);
}

TEST(KernelMatrix, ValueAtOneLengthScale) {
  // Grid spacing 0.01, so |x_i - x_j| = 0.2 exactly 20 cells apart.
  Mat k = kernel_matrix(small_spec(0.2, 101));
  EXPECT_NEAR(k(0, 20), std::exp(-0.5), 1e-12);
  EXPECT_NEAR(k(0, 20), 0.6065306597126334, 1e-12);
}

TEST(KernelMatrix, SymmetricWithOffDiagonalBelowOne) {
  Mat k = kernel_matrix(small_spec(0.35, 60));
  EXPECT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  double off_max = 0.0;
  for (int i = 0; i < k.rows(); ++i)
    for (int j = 0; j < k.cols(); ++j)
      if (i != j) off_max = std::max(off_max, k(i, j));
  EXPECT_LT(off_max, 1.0);
  EXPECT_GT(off_max, 0.0);
}

TEST(Cholesky, ResidualBelowTolerance) {
  GRFSpec spec = small_spec(0.2, 500);
  CholeskyFactor f = cholesky_factor(spec);
  Mat k = kernel_matrix(spec);
  k.diagonal().array() += spec.jitter;
  Mat residual = f.lower * f.lower.transpose() - k;
  EXPECT_LT(residual.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_GT(f.lower.diagonal().minCoeff(), 0.0);
  for (int i = 0; i < f.lower.rows(); ++i)
    for (int j = i + 1; j < f.lower.cols(); ++j) EXPECT_EQ(f.lower(i, j), 0.0);
}

TEST(Sample, DeterministicPerSeedAndIndex) {
  GaussianRandomField grf(small_spec(0.2));
  auto batch = grf.sample(99, 5);
  EncodedFunction again = grf.sample_one(99, 3);
  EXPECT_TRUE((batch[3].values.array() == again.values.array()).all());
  EncodedFunction other = grf.sample_one(100, 3);
  EXPECT_FALSE((batch[3].values.array() == other.values.array()).all());
}

TEST(Sample, MeanNearZero) {
  GaussianRandomField grf(small_spec(0.2));
  const int n = 10000;
  Vec mean = Vec::Zero(grf.spec().grid.q);
  for (int i = 0; i < n; ++i) mean += grf.sample_one(7, static_cast<std::uint64_t>(i)).values;
  mean /= n;
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.05);
}

TEST(Sample, EmpiricalCovarianceMatchesKernel) {
  GRFSpec spec = small_spec(0.2, 100);
  GaussianRandomField grf(spec);
  const int n = 10000;
  Mat sum = Mat::Zero(spec.grid.q, spec.grid.q);
  Vec mean = Vec::Zero(spec.grid.q);
  for (int i = 0; i < n; ++i) {
    Vec v = grf.sample_one(2718, static_cast<std::uint64_t>(i)).values;
    mean += v;
    sum.noalias() += v * v.transpose();
  }
  mean /= n;
  Mat cov = sum / n - mean * mean.transpose();
  Mat k = kernel_matrix(spec);
  EXPECT_LT((cov - k).cwiseAbs().maxCoeff(), 0.1);
}

TEST(Sample, SmallerLengthScaleIsRougher) {
  GaussianRandomField rough(small_spec(0.2, 200));
  GaussianRandomField smooth(small_spec(0.5, 200));
  double tv_rough = 0.0, tv_smooth = 0.0;
  for (int i = 0; i < 100; ++i) {
    tv_rough += total_variation(rough.sample_one(5, static_cast<std::uint64_t>(i)));
    tv_smooth += total_variation(smooth.sample_one(5, static_cast<std::uint64_t>(i)));
  }
  EXPECT_GT(tv_rough, tv_smooth);
}

TEST(Cholesky, FailureWithoutJitterReportsEigenvalueEstimate) {
  // The squared-exponential kernel on a dense grid is numerically
  // rank-deficient; with no jitter the factorization must fail loudly.
  GRFSpec spec = small_spec(0.2, 500);
  spec.jitter = 0.0;
  try {
    cholesky_factor(spec);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("eigenvalue"), std::string::npos);
  }
}

TEST(Spec, Validation) {
  GRFSpec bad = small_spec(0.2);
  bad.length_scale = 0.0;
  EXPECT_THROW(kernel_matrix(bad), ConfigError);
  bad = small_spec(0.2);
  bad.jitter = -1.0;
  EXPECT_THROW(cholesky_factor(bad), ConfigError);
  EXPECT_THROW(GaussianRandomField(small_spec(0.2)).sample(1, 0), ConfigError);
}

TEST(PeriodicCompose, ConstantStaysConstant) {
  const SensorGrid g = SensorGrid::uniform(100);
  EncodedFunction f(g, Vec::Constant(100, 3.5));
  EncodedFunction out = periodic_compose(f, SensorGrid::uniform(77));
  EXPECT_TRUE((out.values.array() == 3.5).all());
}

TEST(PeriodicCompose, EndpointsMapToFAtZero) {
  GaussianRandomField grf(small_spec(0.5, 300));
  EncodedFunction f = grf.sample_one(1, 0);
  EncodedFunction out = periodic_compose(f, SensorGrid::uniform(100));
  EXPECT_NEAR(out.values[0], f.values[0], 1e-12);
  EXPECT_NEAR(out.values[99], f.values[0], 1e-12);
}

TEST(PeriodicCompose, IdentityInputGivesSinSquared) {
  const SensorGrid g = SensorGrid::uniform(1000);
  Vec v(g.q);
  for (int j = 0; j < g.q; ++j) v[j] = g.point(j);
  EncodedFunction f(g, v);
  EncodedFunction out = periodic_compose(f, SensorGrid::uniform(100));
  for (int j = 0; j < 100; ++j) {
    const double x = out.grid.point(j);
    EXPECT_NEAR(out.values[j], std::sin(M_PI * x) * std::sin(M_PI * x), 1e-12);
  }
}

TEST(PeriodicCompose, SymmetricAboutOneHalf) {
  GaussianRandomField grf(small_spec(0.5, 400));
  EncodedFunction f = grf.sample_one(12, 4);
  EncodedFunction out = periodic_compose(f, SensorGrid::uniform(101));
  for (int j = 0; j <= 100; ++j)
    EXPECT_NEAR(out.values[j], out.values[100 - j], 1e-12);
}
