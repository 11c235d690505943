#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mionet/encoding.hpp"
#include "mionet/errors.hpp"

namespace mionet {

/// Trajectory of the first pendulum state on an equidistant time grid.
struct ODESolution {
  SensorGrid grid = SensorGrid{100};
  Vec u1;
};

/// Space-time field on equidistant grids; values(j, i) = u(x_i, t_j)
/// (rows advance in time).
struct Field2D {
  SensorGrid xgrid = SensorGrid{100};
  SensorGrid tgrid = SensorGrid{100};
  RowMat values;
};

namespace detail {

inline void check_finite_state(double norm, double t, const char* solver) {
  if (!std::isfinite(norm))
    throw NumericalError(std::string(solver) + " blew up at t = " + std::to_string(t));
}

/// RK4 for u1' = u2, u2' = -f1(t) sin(u1) + f2(t) from (0,0); callable forcing
/// so convergence tests can use smooth analytic inputs.
template <class F1, class F2>
Vec integrate_pendulum(F1&& f1, F2&& f2, int out_points, int substeps) {
  const int cells = out_points - 1;
  const double h = 1.0 / (static_cast<double>(cells) * substeps);
  Vec u1_out(out_points);
  double u1 = 0.0, u2 = 0.0;
  u1_out[0] = 0.0;
  for (int j = 0; j < cells; ++j) {
    for (int s = 0; s < substeps; ++s) {
      const double t = (static_cast<double>(j) * substeps + s) * h;
      const auto du1 = [](double, double, double b) { return b; };
      const auto du2 = [&](double tt, double a, double) {
        return -f1(tt) * std::sin(a) + f2(tt);
      };
      const double k1a = du1(t, u1, u2), k1b = du2(t, u1, u2);
      const double k2a = du1(t + h / 2, u1 + h / 2 * k1a, u2 + h / 2 * k1b);
      const double k2b = du2(t + h / 2, u1 + h / 2 * k1a, u2 + h / 2 * k1b);
      const double k3a = du1(t + h / 2, u1 + h / 2 * k2a, u2 + h / 2 * k2b);
      const double k3b = du2(t + h / 2, u1 + h / 2 * k2a, u2 + h / 2 * k2b);
      const double k4a = du1(t + h, u1 + h * k3a, u2 + h * k3b);
      const double k4b = du2(t + h, u1 + h * k3a, u2 + h * k3b);
      u1 += h / 6 * (k1a + 2 * k2a + 2 * k3a + k4a);
      u2 += h / 6 * (k1b + 2 * k2b + 2 * k3b + k4b);
    }
    check_finite_state(std::abs(u1) + std::abs(u2), static_cast<double>(j + 1) / cells,
                       "pendulum solver");
    u1_out[j + 1] = u1;
  }
  return u1_out;
}

/// Generic RK4 method-of-lines driver writing one output row per time node.
template <class Rhs>
void integrate_mol(RowMat& out, Vec state, Rhs&& rhs, int nt, int substeps,
                   const char* name) {
  const int cells = nt - 1;
  const double h = 1.0 / (static_cast<double>(cells) * substeps);
  Vec k1(state.size()), k2(state.size()), k3(state.size()), k4(state.size()),
      tmp(state.size());
  out.row(0) = state.transpose();
  for (int j = 0; j < cells; ++j) {
    for (int s = 0; s < substeps; ++s) {
      rhs(state, k1);
      tmp = state + (h / 2) * k1;
      rhs(tmp, k2);
      tmp = state + (h / 2) * k2;
      rhs(tmp, k3);
      tmp = state + h * k3;
      rhs(tmp, k4);
      state += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    check_finite_state(state.cwiseAbs().sum(), static_cast<double>(j + 1) / cells, name);
    out.row(j + 1) = state.transpose();
  }
}

}  // namespace detail

struct PendulumOptions {
  int out_points = 100;
  int substeps_per_interval = 24;  // RK4 steps per output interval
};

/// Reference solve of u1' = u2, u2' = -f1(t) sin(u1) + f2(t), u(0) = (0,0).
/// The forcing functions are evaluated by linear interpolation of their grids.
inline ODESolution solve_pendulum(const EncodedFunction& f1, const EncodedFunction& f2,
                                  const PendulumOptions& opt = {}) {
  ODESolution sol;
  sol.grid = SensorGrid::uniform(opt.out_points);
  sol.u1 = detail::integrate_pendulum(
      [&](double t) { return interp_linear(f1, t); },
      [&](double t) { return interp_linear(f2, t); }, opt.out_points,
      opt.substeps_per_interval);
  return sol;
}

struct DiffusionReactionOptions {
  int nx = 100;
  int nt = 100;
  double reaction_rate = 0.01;
  double cfl_safety = 0.4;
  int substeps_override = 0;  // 0: derive from the diffusive CFL bound
};

/// u_t = (D(x) u_x)_x + k u^2 + g(x) on [0,1]^2 with zero initial and boundary
/// conditions. Conservative second-order fluxes with D averaged to cell
/// midpoints; explicit RK4 in time under dt <= cfl_safety * dx^2 / (2 max D).
inline Field2D solve_diffusion_reaction(const EncodedFunction& diffusivity,
                                        const EncodedFunction& source,
                                        const DiffusionReactionOptions& opt = {}) {
  const int nx = opt.nx, nt = opt.nt;
  const double dx = 1.0 / (nx - 1);
  Vec d(nx), g(nx);
  for (int i = 0; i < nx; ++i) {
    const double x = static_cast<double>(i) / (nx - 1);
    d[i] = interp_linear(diffusivity, x);
    g[i] = interp_linear(source, x);
  }
  const double dmax = d.maxCoeff();
  const double dt_max = opt.cfl_safety * dx * dx / (2.0 * dmax);
  const double out_dt = 1.0 / (nt - 1);
  int substeps = static_cast<int>(std::ceil(out_dt / dt_max));
  if (opt.substeps_override > 0) {
    if (out_dt / opt.substeps_override > dt_max)
      throw ConfigError("substeps_override violates the diffusive CFL bound");
    substeps = opt.substeps_override;
  }

  Vec dmid(nx - 1);  // D at interface i+1/2
  for (int i = 0; i < nx - 1; ++i) dmid[i] = 0.5 * (d[i] + d[i + 1]);
  const double inv_dx2 = 1.0 / (dx * dx);
  const double k = opt.reaction_rate;

  auto rhs = [&](const Vec& u, Vec& du) {
    du[0] = 0.0;
    du[nx - 1] = 0.0;
    for (int i = 1; i < nx - 1; ++i) {
      const double flux =
          dmid[i] * (u[i + 1] - u[i]) - dmid[i - 1] * (u[i] - u[i - 1]);
      du[i] = flux * inv_dx2 + k * u[i] * u[i] + g[i];
    }
  };

  Field2D field;
  field.xgrid = SensorGrid::uniform(nx);
  field.tgrid = SensorGrid::uniform(nt);
  field.values.resize(nt, nx);
  detail::integrate_mol(field.values, Vec::Zero(nx), rhs, nt, substeps,
                        "diffusion-reaction solver");
  return field;
}

struct AdvectionDiffusionOptions {
  int nx = 100;  // output columns; the periodic grid has nx-1 distinct nodes
  int nt = 100;
  double cfl_safety = 0.4;
  int substeps_override = 0;
};

/// u_t + u_x - D(x) u_xx = 0 on [0,1] with periodic boundary; second-order
/// central differences for both derivatives, RK4 in time under
/// dt <= min(cfl_safety dx^2 / (2 max D), 0.5 dx). The output duplicates the
/// x = 1 column (identical to x = 0 by construction).
inline Field2D solve_advection_diffusion(const EncodedFunction& diffusivity,
                                         const EncodedFunction& initial,
                                         const AdvectionDiffusionOptions& opt = {}) {
  const int nx = opt.nx, nt = opt.nt;
  const int n = nx - 1;  // distinct periodic nodes
  const double dx = 1.0 / n;
  Vec d(n), u0(n);
  for (int i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / n;
    d[i] = interp_linear(diffusivity, x);
    u0[i] = interp_linear(initial, x);
  }
  const double dmax = d.maxCoeff();
  const double dt_max = std::min(opt.cfl_safety * dx * dx / (2.0 * dmax), 0.5 * dx);
  const double out_dt = 1.0 / (nt - 1);
  int substeps = static_cast<int>(std::ceil(out_dt / dt_max));
  if (opt.substeps_override > 0) {
    if (out_dt / opt.substeps_override > dt_max)
      throw ConfigError("substeps_override violates the CFL bound");
    substeps = opt.substeps_override;
  }

  const double inv_2dx = 1.0 / (2.0 * dx);
  const double inv_dx2 = 1.0 / (dx * dx);
  auto rhs = [&](const Vec& u, Vec& du) {
    for (int i = 0; i < n; ++i) {
      const double up = u[(i + 1) % n];
      const double um = u[(i + n - 1) % n];
      du[i] = -(up - um) * inv_2dx + d[i] * ((up - 2.0 * u[i]) + um) * inv_dx2;
    }
  };

  RowMat interior(nt, n);
  detail::integrate_mol(interior, u0, rhs, nt, substeps, "advection-diffusion solver");

  Field2D field;
  field.xgrid = SensorGrid::uniform(nx);
  field.tgrid = SensorGrid::uniform(nt);
  field.values.resize(nt, nx);
  field.values.leftCols(n) = interior;
  field.values.col(nx - 1) = interior.col(0);
  return field;
}

}  // namespace mionet
