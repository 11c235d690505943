#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mionet/errors.hpp"
#include "mionet/tensor.hpp"

namespace mionet {

/// q equidistant sensor locations on [0,1], endpoints included: x_j = j/(q-1).
struct SensorGrid {
  int q = 0;

  static SensorGrid uniform(int q) {
    if (q < 2) throw ConfigError("sensor grid needs q >= 2, got " + std::to_string(q));
    return SensorGrid{q};
  }

  double point(int j) const { return static_cast<double>(j) / (q - 1); }
  double spacing() const { return 1.0 / (q - 1); }

  std::vector<double> points() const {
    std::vector<double> p(static_cast<std::size_t>(q));
    for (int j = 0; j < q; ++j) p[static_cast<std::size_t>(j)] = point(j);
    return p;
  }

  bool operator==(const SensorGrid& o) const { return q == o.q; }
};

/// Finite coordinate vector of an input function: its samples at the grid's
/// sensor points.
struct EncodedFunction {
  SensorGrid grid;
  Vec values;

  EncodedFunction() = default;
  EncodedFunction(SensorGrid g, Vec v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.q)
      throw DimensionError("encoded function has " + std::to_string(values.size()) +
                           " values for a " + std::to_string(grid.q) + "-point grid");
  }
};

/// Evaluates the piecewise-linear interpolant of grid samples at x. Exact at
/// (floating-point images of) the grid nodes; throws DomainError outside
/// [0, 1].
inline double interp_linear(const SensorGrid& grid, const Vec& values, double x) {
  const double t = x * (grid.q - 1);
  const double r = std::round(t);
  if (std::abs(t - r) < 1e-9 && r >= 0 && r < grid.q)
    return values[static_cast<Eigen::Index>(r)];
  if (x < 0.0 || x > 1.0)
    throw DomainError("query point " + std::to_string(x) + " outside [0,1]");
  const int i = std::min(static_cast<int>(std::floor(t)), grid.q - 2);
  const double theta = t - i;
  return (1.0 - theta) * values[i] + theta * values[i + 1];
}

inline double interp_linear(const EncodedFunction& f, double x) {
  return interp_linear(f.grid, f.values, x);
}

/// Samples a function held on a fine grid at the target sensors (linear
/// interpolation; exact where points coincide).
inline EncodedFunction encode(const EncodedFunction& fine, const SensorGrid& target) {
  if (fine.grid.q < target.q)
    throw ConfigError("fine grid (" + std::to_string(fine.grid.q) +
                      " points) coarser than target (" + std::to_string(target.q) + ")");
  Vec out(target.q);
  for (int j = 0; j < target.q; ++j) out[j] = interp_linear(fine, target.point(j));
  return EncodedFunction(target, std::move(out));
}

/// Projection onto the space of piecewise-linear functions with coarse_n
/// equidistant knots: the canonical truncation of the hat-function basis,
/// with point evaluations as coordinates.
struct FaberProjection {
  int coarse_n = 0;

  explicit FaberProjection(int n) : coarse_n(n) {
    if (n < 2) throw ConfigError("Faber projection needs n >= 2, got " + std::to_string(n));
  }

  /// Interpolates f at the knots and re-samples the interpolant on f's grid.
  EncodedFunction apply(const EncodedFunction& f) const {
    if (coarse_n > f.grid.q)
      throw ConfigError("projection size " + std::to_string(coarse_n) +
                        " exceeds grid resolution " + std::to_string(f.grid.q));
    const SensorGrid knots = SensorGrid::uniform(coarse_n);
    Vec knot_values(coarse_n);
    for (int k = 0; k < coarse_n; ++k)
      knot_values[k] = interp_linear(f, knots.point(k));
    Vec out(f.grid.q);
    for (int j = 0; j < f.grid.q; ++j)
      out[j] = interp_linear(knots, knot_values, f.grid.point(j));
    return EncodedFunction(f.grid, std::move(out));
  }
};

inline EncodedFunction faber_project(const EncodedFunction& f, int n) {
  return FaberProjection(n).apply(f);
}

/// One row of a projection-error profile.
struct ProjectionErrorRow {
  int n = 0;
  double sup_error = 0.0;
};

/// For each coarse size n, the sup over samples of the max-norm projection
/// residual ||v - P_n v|| (discretized on each sample's grid).
inline std::vector<ProjectionErrorRow> projection_error_profile(
    const std::vector<EncodedFunction>& samples, const std::vector<int>& ns) {
  if (samples.empty()) throw DataError("projection_error_profile: no samples");
  std::vector<ProjectionErrorRow> rows;
  rows.reserve(ns.size());
  for (int n : ns) {
    double sup = 0.0;
    for (const EncodedFunction& f : samples) {
      const EncodedFunction pf = faber_project(f, n);
      sup = std::max(sup, (f.values - pf.values).cwiseAbs().maxCoeff());
    }
    rows.push_back({n, sup});
  }
  return rows;
}

}  // namespace mionet
