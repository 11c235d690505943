#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mionet/errors.hpp"
#include "mionet/net.hpp"

namespace mionet {

/// Adam optimizer state over a flat parameter vector. Defaults are the
/// canonical beta1/beta2/eps of the original method; only the learning rate
/// varies between experiments.
struct AdamState {
  long step = 0;
  Vec m, v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(std::size_t total_params, double lr) {
    AdamState s;
    s.lr = lr;
    s.m = Vec::Zero(static_cast<Eigen::Index>(total_params));
    s.v = Vec::Zero(static_cast<Eigen::Index>(total_params));
    return s;
  }
};

inline std::size_t total_size(const std::vector<ParamBlock>& blocks) {
  std::size_t n = 0;
  for (const ParamBlock& b : blocks) n += b.size;
  return n;
}

/// One Adam update with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   theta <- theta - lr * m-hat / (sqrt(v-hat) + eps).
/// Parameter and gradient blocks must align; throws TrainingError on
/// non-finite gradients, carrying the step index.
inline void adam_step(const std::vector<ParamBlock>& params,
                      const std::vector<ParamBlock>& grads, AdamState& state) {
  if (params.size() != grads.size())
    throw DimensionError("adam_step: parameter/gradient block count mismatch");
  const std::size_t total = total_size(params);
  if (state.m.size() != static_cast<Eigen::Index>(total))
    throw DimensionError("adam_step: state sized for " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(total));

  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  std::size_t off = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size)
      throw DimensionError("adam_step: block " + std::to_string(i) + " size mismatch");
    Eigen::Map<Vec> p(params[i].data, static_cast<Eigen::Index>(params[i].size));
    Eigen::Map<const Vec> g(grads[i].data, static_cast<Eigen::Index>(grads[i].size));
    if (!g.allFinite())
      throw TrainingError("non-finite gradient in Adam update", state.step);
    auto m = state.m.segment(static_cast<Eigen::Index>(off), g.size());
    auto v = state.v.segment(static_cast<Eigen::Index>(off), g.size());
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    p.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    off += params[i].size;
  }
}

}  // namespace mionet
