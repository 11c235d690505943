#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <vector>

#include "mionet/encoding.hpp"
#include "mionet/errors.hpp"
#include "mionet/rng.hpp"

namespace mionet {

/// Zero-mean Gaussian random field on [0,1] with the squared-exponential
/// kernel k_l(x,x') = exp(-(x-x')^2 / (2 l^2)).
struct GRFSpec {
  double length_scale = 0.2;
  SensorGrid grid = SensorGrid{1000};
  double jitter = 1e-12;  // added to the covariance diagonal before factoring

  void validate() const {
    if (!(length_scale > 0.0)) throw ConfigError("GRF length_scale must be > 0");
    if (jitter < 0.0) throw ConfigError("GRF jitter must be >= 0");
    if (grid.q < 2) throw ConfigError("GRF grid needs q >= 2");
  }
};

/// Covariance matrix of the field on its grid.
inline Mat kernel_matrix(const GRFSpec& spec) {
  spec.validate();
  const int q = spec.grid.q;
  const double inv = 1.0 / (2.0 * spec.length_scale * spec.length_scale);
  Mat k(q, q);
  for (int i = 0; i < q; ++i) {
    k(i, i) = 1.0;
    for (int j = 0; j < i; ++j) {
      const double d = spec.grid.point(i) - spec.grid.point(j);
      const double v = std::exp(-d * d * inv);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

/// Lower-triangular factor with K + jitter*I = L L^T.
struct CholeskyFactor {
  Mat lower;
};

inline CholeskyFactor cholesky_factor(const GRFSpec& spec) {
  Mat k = kernel_matrix(spec);
  k.diagonal().array() += spec.jitter;
  Eigen::LLT<Mat> llt(k);
  if (llt.info() != Eigen::Success) {
    const double min_eig =
        Eigen::SelfAdjointEigenSolver<Mat>(k, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    char detail[96];
    std::snprintf(detail, sizeof(detail), "smallest eigenvalue estimate %.3e (jitter %.3e)",
                  min_eig, spec.jitter);
    throw NumericalError(std::string("Cholesky factorization of GRF covariance failed; ") +
                         detail);
  }
  return CholeskyFactor{llt.matrixL()};
}

/// Sampler with a cached factorization; draws are deterministic per
/// (seed, index) so sampling can be parallelized or resumed without a shared
/// stream.
class GaussianRandomField {
 public:
  explicit GaussianRandomField(GRFSpec spec)
      : spec_(spec), chol_(cholesky_factor(spec)) {}

  const GRFSpec& spec() const { return spec_; }
  const Mat& lower() const { return chol_.lower; }

  EncodedFunction sample_one(std::uint64_t seed, std::uint64_t index) const {
    Rng rng(mix_seed(seed, index));
    Vec z(spec_.grid.q);
    for (int i = 0; i < spec_.grid.q; ++i) z[i] = rng.normal();
    return EncodedFunction(spec_.grid, chol_.lower.triangularView<Eigen::Lower>() * z);
  }

  std::vector<EncodedFunction> sample(std::uint64_t seed, int count) const {
    if (count < 1) throw ConfigError("GRF sample count must be >= 1");
    std::vector<EncodedFunction> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
      out.push_back(sample_one(seed, static_cast<std::uint64_t>(i)));
    return out;
  }

 private:
  GRFSpec spec_;
  CholeskyFactor chol_;
};

inline std::vector<EncodedFunction> sample_grf(const GRFSpec& spec, std::uint64_t seed,
                                               int count) {
  return GaussianRandomField(spec).sample(seed, count);
}

/// g(x) = f(sin^2(pi x)) sampled on out_grid; the composition makes any f on
/// [0,1] into a function that closes up periodically (g(0) = g(1) = f(0)).
inline EncodedFunction periodic_compose(const EncodedFunction& f, const SensorGrid& out_grid) {
  Vec out(out_grid.q);
  for (int j = 0; j < out_grid.q; ++j) {
    const double s = std::sin(M_PI * out_grid.point(j));
    out[j] = interp_linear(f, std::min(s * s, 1.0));
  }
  return EncodedFunction(out_grid, std::move(out));
}

}  // namespace mionet
