#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mionet/adam.hpp"
#include "mionet/dataset.hpp"
#include "mionet/errors.hpp"
#include "mionet/model.hpp"

namespace mionet {

enum class LossRule { Mse, Rectangle, Trapezoid, MonteCarlo };

inline std::string to_string(LossRule r) {
  switch (r) {
    case LossRule::Mse: return "mse";
    case LossRule::Rectangle: return "rectangle";
    case LossRule::Trapezoid: return "trapezoid";
    case LossRule::MonteCarlo: return "montecarlo";
  }
  return "?";
}
inline LossRule loss_rule_from_string(const std::string& s) {
  if (s == "mse") return LossRule::Mse;
  if (s == "rectangle") return LossRule::Rectangle;
  if (s == "trapezoid") return LossRule::Trapezoid;
  if (s == "montecarlo") return LossRule::MonteCarlo;
  throw ConfigError("unknown loss rule '" + s + "'");
}

struct TrainConfig {
  double lr = 1e-3;
  long epochs = 1;
  std::uint64_t seed = 0;
  LossRule loss = LossRule::Mse;
  long eval_every = 1000;

  void validate() const {
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train config: lr must be > 0");
    if (eval_every < 1) throw ConfigError("train config: eval_every must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"epochs", c.epochs},
       {"seed", c.seed},
       {"loss", to_string(c.loss)},
       {"eval_every", c.eval_every}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<long>();
  c.seed = j.value("seed", std::uint64_t{0});
  c.loss = loss_rule_from_string(j.value("loss", std::string("mse")));
  c.eval_every = j.value("eval_every", long{1000});
}

// ---------------------------------------------------------------------------
// Numerical-integration estimates of int_0^1 f for uniformly placed samples.
// ---------------------------------------------------------------------------

/// Rectangle rule: `values` holds f at the midpoints of m equal cells.
/// Monte Carlo: `values` holds f at arbitrary sampled nodes. Both reduce to
/// the sample mean. Trapezoid: `values` holds f at the m+1 uniform nodes
/// including both endpoints.
inline double integrate_samples(const Vec& values, LossRule rule) {
  if (rule == LossRule::Trapezoid) {
    if (values.size() < 2)
      throw ConfigError("trapezoid rule needs at least 2 nodes");
    const Eigen::Index m = values.size() - 1;
    return (values.segment(1, m - 1).sum() + 0.5 * (values[0] + values[m])) /
           static_cast<double>(m);
  }
  if (values.size() < 1) throw ConfigError("integration needs at least 1 node");
  return values.mean();
}

// ---------------------------------------------------------------------------
// Record weights: every loss here is sum_k w_k r_k^2 for residuals r_k, which
// keeps one forward/backward path for all rules. MSE uses w = 1/N; the
// quadrature rules average per-function integral estimates of the squared
// residual over the G functions, so Monte Carlo with one uniform node set
// recovers the MSE.
// ---------------------------------------------------------------------------

inline Vec loss_weights(const Dataset& data, LossRule rule) {
  const Eigen::Index n = data.num_records();
  const Eigen::Index groups = data.num_groups();
  Vec w(n);
  switch (rule) {
    case LossRule::Mse:
      w.setConstant(1.0 / static_cast<double>(n));
      return w;
    case LossRule::Rectangle:
    case LossRule::MonteCarlo: {
      std::vector<Eigen::Index> per_group(static_cast<std::size_t>(groups), 0);
      for (std::uint32_t g : data.group_of) per_group[g]++;
      for (Eigen::Index k = 0; k < n; ++k)
        w[k] = 1.0 / (static_cast<double>(groups) *
                      static_cast<double>(per_group[data.group_of[static_cast<std::size_t>(k)]]));
      return w;
    }
    case LossRule::Trapezoid: {
      if (data.query_dim() != 1)
        throw ConfigError("trapezoid loss is defined for 1-d query domains");
      // Uniform nodes per group; endpoint records get half weight.
      std::vector<Eigen::Index> per_group(static_cast<std::size_t>(groups), 0);
      std::vector<double> lo(static_cast<std::size_t>(groups), 1e300),
          hi(static_cast<std::size_t>(groups), -1e300);
      for (Eigen::Index k = 0; k < n; ++k) {
        const auto g = data.group_of[static_cast<std::size_t>(k)];
        per_group[g]++;
        lo[g] = std::min(lo[g], data.ys(k, 0));
        hi[g] = std::max(hi[g], data.ys(k, 0));
      }
      for (Eigen::Index c : per_group)
        if (c < 2) throw ConfigError("trapezoid loss needs at least 2 nodes per function");
      for (Eigen::Index k = 0; k < n; ++k) {
        const auto g = data.group_of[static_cast<std::size_t>(k)];
        const double m = static_cast<double>(per_group[g] - 1);
        const double y = data.ys(k, 0);
        const bool endpoint = (y == lo[g] || y == hi[g]);
        w[k] = (endpoint ? 0.5 : 1.0) / (static_cast<double>(groups) * m);
      }
      return w;
    }
  }
  throw ConfigError("unhandled loss rule");
}

// ---------------------------------------------------------------------------
// Training plan: the deduplicated batch view of a dataset for one model
// layout. Branch rows come straight from the group table; each trunk gets a
// table of unique raw coordinate tuples.
// ---------------------------------------------------------------------------

struct TrainingPlan {
  ModelBatch batch;
  Vec targets;
  Vec weights;
};

namespace detail {

inline void dedupe_trunk_rows(const RowMat& raw_per_record, RowMat& unique_rows,
                              std::vector<std::uint32_t>& row_of) {
  const Eigen::Index n = raw_per_record.rows();
  const Eigen::Index d = raw_per_record.cols();
  row_of.resize(static_cast<std::size_t>(n));
  std::unordered_map<std::string, std::uint32_t> index;
  index.reserve(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> order;
  std::string key(static_cast<std::size_t>(d) * sizeof(double), '\0');
  for (Eigen::Index k = 0; k < n; ++k) {
    std::memcpy(key.data(), raw_per_record.row(k).data(),
                static_cast<std::size_t>(d) * sizeof(double));
    auto [it, inserted] = index.emplace(key, static_cast<std::uint32_t>(order.size()));
    if (inserted) order.push_back(k);
    row_of[static_cast<std::size_t>(k)] = it->second;
  }
  unique_rows.resize(static_cast<Eigen::Index>(order.size()), d);
  for (std::size_t u = 0; u < order.size(); ++u)
    unique_rows.row(static_cast<Eigen::Index>(u)) = raw_per_record.row(order[u]);
}

}  // namespace detail

inline TrainingPlan build_plan(const Dataset& data, const MIONetConfig& config,
                               LossRule rule = LossRule::Mse) {
  data.check_consistent();
  if (config.num_branches() != data.num_branches())
    throw DataError("model expects " + std::to_string(config.num_branches()) +
                    " input functions, dataset has " + std::to_string(data.num_branches()));
  if (config.query_dim != data.query_dim())
    throw DataError("model query dimension " + std::to_string(config.query_dim) +
                    " does not match dataset d = " + std::to_string(data.query_dim()));
  for (int i = 0; i < config.num_branches(); ++i) {
    if (config.branches[static_cast<std::size_t>(i)].layer_sizes.front() !=
        data.sensor_counts()[static_cast<std::size_t>(i)])
      throw DataError("branch " + std::to_string(i) + " expects " +
                      std::to_string(config.branches[static_cast<std::size_t>(i)]
                                         .layer_sizes.front()) +
                      " sensors, dataset has " +
                      std::to_string(data.sensor_counts()[static_cast<std::size_t>(i)]));
  }

  TrainingPlan plan;
  plan.batch.branch_inputs = data.branch_coords;
  plan.batch.group_of = data.group_of;
  plan.targets = data.targets;
  plan.weights = loss_weights(data, rule);

  const auto split = config.effective_split();
  const std::size_t m = split.size();
  plan.batch.trunk_raw.resize(m);
  plan.batch.trunk_row.resize(m);
  const Eigen::Index n = data.num_records();
  for (std::size_t t = 0; t < m; ++t) {
    RowMat raw(n, static_cast<Eigen::Index>(split[t].size()));
    for (Eigen::Index k = 0; k < n; ++k)
      for (std::size_t c = 0; c < split[t].size(); ++c)
        raw(k, static_cast<Eigen::Index>(c)) = data.ys(k, split[t][c]);
    detail::dedupe_trunk_rows(raw, plan.batch.trunk_raw[t], plan.batch.trunk_row[t]);
  }

  // Dense fast path: one trunk and records enumerating groups x unique rows
  // in row-major order.
  if (m == 1) {
    const Eigen::Index groups = data.num_groups();
    const Eigen::Index u = plan.batch.trunk_raw[0].rows();
    if (n == groups * u) {
      bool grid = true;
      for (Eigen::Index k = 0; k < n && grid; ++k)
        grid = plan.batch.group_of[static_cast<std::size_t>(k)] ==
                   static_cast<std::uint32_t>(k / u) &&
               plan.batch.trunk_row[0][static_cast<std::size_t>(k)] ==
                   static_cast<std::uint32_t>(k % u);
      plan.batch.complete_grid = grid;
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Losses and evaluation.
// ---------------------------------------------------------------------------

struct LossValue {
  double loss = 0.0;
  ModelGrads grads;
};

/// Weighted squared-residual loss and its exact gradients in one pass.
inline double loss_and_gradients(const MIONetModel& model, const TrainingPlan& plan,
                                 LowRankEngine& engine, ModelGrads& grads, Vec& dpred) {
  const Vec& preds = engine.forward(model, plan.batch);
  dpred = preds - plan.targets;
  const double loss = plan.weights.dot(dpred.cwiseProduct(dpred));
  dpred.array() *= 2.0 * plan.weights.array();
  engine.backward(model, plan.batch, dpred, grads);
  return loss;
}

/// MSE over a dataset with gradients (the spec's per-batch loss operation).
inline LossValue mse_loss(const MIONetModel& model, const Dataset& data) {
  TrainingPlan plan = build_plan(data, model.config, LossRule::Mse);
  LowRankEngine engine;
  LossValue out;
  out.grads.init_like(model);
  Vec dpred;
  out.loss = loss_and_gradients(model, plan, engine, out.grads, dpred);
  return out;
}

/// Loss value under a numerical-integration rule (squared residuals
/// integrated per function, averaged over functions).
inline double integration_loss(const MIONetModel& model, const Dataset& data,
                               LossRule rule) {
  TrainingPlan plan = build_plan(data, model.config, rule);
  LowRankEngine engine;
  const Vec& preds = engine.forward(model, plan.batch);
  Vec r = preds - plan.targets;
  return plan.weights.dot(r.cwiseProduct(r));
}

struct GroupError {
  std::uint32_t group = 0;
  double relative_l2 = 0.0;
};

struct EvalResult {
  std::vector<GroupError> per_group;      // groups with nonzero reference norm
  std::vector<std::uint32_t> excluded;    // groups skipped (zero reference norm)
  double aggregate = 0.0;                 // mean over included groups
};

/// Per-function relative L2 errors ||pred - true|| / ||true|| and their mean.
inline EvalResult l2_relative_error(const MIONetModel& model, const Dataset& data) {
  TrainingPlan plan = build_plan(data, model.config, LossRule::Mse);
  LowRankEngine engine;
  const Vec& preds = engine.forward(model, plan.batch);
  const Eigen::Index groups = data.num_groups();
  Vec err2 = Vec::Zero(groups), ref2 = Vec::Zero(groups);
  for (Eigen::Index k = 0; k < data.num_records(); ++k) {
    const auto g = data.group_of[static_cast<std::size_t>(k)];
    const double r = preds[k] - data.targets[k];
    err2[g] += r * r;
    ref2[g] += data.targets[k] * data.targets[k];
  }
  EvalResult out;
  double sum = 0.0;
  for (Eigen::Index g = 0; g < groups; ++g) {
    if (ref2[g] == 0.0) {
      out.excluded.push_back(static_cast<std::uint32_t>(g));
      continue;
    }
    const double e = std::sqrt(err2[g] / ref2[g]);
    out.per_group.push_back({static_cast<std::uint32_t>(g), e});
    sum += e;
  }
  if (out.per_group.empty()) throw DataError("no group has a nonzero reference norm");
  out.aggregate = sum / static_cast<double>(out.per_group.size());
  return out;
}

// ---------------------------------------------------------------------------
// Training loop and multi-trial statistics.
// ---------------------------------------------------------------------------

struct LossSample {
  long epoch = 0;
  double loss = 0.0;
};

struct TrainLog {
  std::vector<LossSample> history;
  double final_loss = 0.0;
};

/// Full-batch Adam for config.epochs steps; deterministic per (model, config).
inline TrainLog train(MIONetModel& model, const Dataset& data, const TrainConfig& config) {
  config.validate();
  TrainingPlan plan = build_plan(data, model.config, config.loss);
  LowRankEngine engine;
  ModelGrads grads;
  grads.init_like(model);
  AdamState state = AdamState::init(model.parameter_count(), config.lr);
  auto params = model.param_blocks();
  auto gblocks = grads.param_blocks(model);

  TrainLog log;
  Vec dpred;
  for (long epoch = 1; epoch <= config.epochs; ++epoch) {
    const double loss = loss_and_gradients(model, plan, engine, grads, dpred);
    if (!std::isfinite(loss)) throw TrainingError("non-finite training loss", epoch);
    if (epoch == 1 || epoch % config.eval_every == 0 || epoch == config.epochs)
      log.history.push_back({epoch, loss});
    adam_step(params, gblocks, state);
    log.final_loss = loss;
  }
  return log;
}

struct TrialReport {
  std::vector<double> errors;       // final test error per trial
  double mean = 0.0;
  double stddev = 0.0;              // population std; meaningful for >= 2 trials
  bool has_stddev = false;
  std::vector<TrainLog> logs;
};

/// Runs independent trials with seeds base_seed + trial, evaluating each
/// trained model on the test set.
inline TrialReport run_trials(const MIONetConfig& model_config, const Dataset& train_data,
                              const Dataset& test_data, const TrainConfig& train_config,
                              int trials) {
  if (trials < 1) throw ConfigError("run_trials: trials must be >= 1");
  TrialReport report;
  for (int t = 0; t < trials; ++t) {
    MIONetModel model =
        build_model(model_config, train_config.seed + static_cast<std::uint64_t>(t));
    report.logs.push_back(train(model, train_data, train_config));
    report.errors.push_back(l2_relative_error(model, test_data).aggregate);
  }
  double sum = 0.0;
  for (double e : report.errors) sum += e;
  report.mean = sum / static_cast<double>(trials);
  if (trials >= 2) {
    double ss = 0.0;
    for (double e : report.errors) ss += (e - report.mean) * (e - report.mean);
    report.stddev = std::sqrt(ss / static_cast<double>(trials));
    report.has_stddev = true;
  }
  return report;
}

inline void to_json(nlohmann::json& j, const TrialReport& r) {
  j = {{"errors", r.errors}, {"mean", r.mean}};
  if (r.has_stddev) j["stddev"] = r.stddev;
  nlohmann::json logs = nlohmann::json::array();
  for (const auto& log : r.logs) {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& s : log.history) h.push_back({{"epoch", s.epoch}, {"loss", s.loss}});
    logs.push_back({{"final_loss", log.final_loss}, {"history", h}});
  }
  j["trials"] = logs;
}

}  // namespace mionet
