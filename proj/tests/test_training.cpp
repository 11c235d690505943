#include "mionet/training.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <limits>

#include "mionet/benchmarks.hpp"
#include "mionet/random_field.hpp"

using namespace mionet;

namespace {

ODESolution synthetic_solution(int q, double scale) {
  ODESolution sol;
  sol.grid = SensorGrid::uniform(q);
  sol.u1.resize(q);
  for (int j = 0; j < q; ++j) {
    const double t = sol.grid.point(j);
    sol.u1[j] = scale * t * t * (1.0 - t);
  }
  return sol;
}

// A tiny ODE-style dataset with synthetic targets (no solver involved).
Dataset synthetic_ode_dataset(int groups, int q, int points,
                              const SamplingPolicy& policy = SamplingPolicy::all_points()) {
  GRFSpec spec;
  spec.grid = SensorGrid::uniform(q);
  GaussianRandomField grf(spec);
  std::vector<std::vector<EncodedFunction>> inputs;
  std::vector<ODESolution> sols;
  for (int g = 0; g < groups; ++g) {
    inputs.push_back({grf.sample_one(100, static_cast<std::uint64_t>(2 * g)),
                      grf.sample_one(100, static_cast<std::uint64_t>(2 * g + 1))});
    sols.push_back(synthetic_solution(points, 1.0 + 0.1 * g));
  }
  return assemble_dataset(inputs, sols, policy);
}

MIONetConfig small_config(int q, int p, int d) {
  MIONetConfig c;
  c.branches.push_back({{q, 16, p}, false});
  c.branches.push_back({{q, 16, p}, false});
  if (d > 0) {
    std::vector<int> sizes = {d, 16, p};
    c.trunks.push_back({sizes, TrunkFeatureMap::None, false});
  }
  c.query_dim = d;
  return c;
}

void zero_model(MIONetModel& m) {
  for (auto& net : m.branch_nets) {
    for (auto& w : net.weights) w.setZero();
    for (auto& b : net.biases)
      if (b.size()) b.setZero();
  }
  for (auto& net : m.trunk_nets) {
    for (auto& w : net.weights) w.setZero();
    for (auto& b : net.biases)
      if (b.size()) b.setZero();
  }
  m.bias = 0.0;
}

}  // namespace

TEST(Assemble, OdeAllPointsCountsMatchPaperScale) {
  Dataset ds = synthetic_ode_dataset(1000, 20, 100);
  EXPECT_EQ(ds.num_records(), 100000);
  EXPECT_EQ(ds.num_groups(), 1000);
  EXPECT_EQ(ds.query_dim(), 1);
  EXPECT_EQ(ds.group_of.front(), 0u);
  EXPECT_EQ(ds.group_of.back(), 999u);
}

TEST(Assemble, Field2DRandomSubsetCounts) {
  std::vector<std::vector<EncodedFunction>> inputs;
  std::vector<Field2D> sols;
  GRFSpec spec;
  spec.grid = SensorGrid::uniform(20);
  GaussianRandomField grf(spec);
  for (int g = 0; g < 50; ++g) {
    inputs.push_back({grf.sample_one(5, static_cast<std::uint64_t>(g)),
                      grf.sample_one(6, static_cast<std::uint64_t>(g))});
    Field2D f;
    f.xgrid = SensorGrid::uniform(100);
    f.tgrid = SensorGrid::uniform(100);
    f.values = RowMat::Constant(100, 100, static_cast<double>(g));
    sols.push_back(std::move(f));
  }
  Dataset ds = assemble_dataset(inputs, sols, SamplingPolicy::random_subset(100, 77));
  EXPECT_EQ(ds.num_records(), 5000);
  EXPECT_EQ(ds.query_dim(), 2);
  // Per-sample subsets are deterministic given the policy seed.
  Dataset again = assemble_dataset(inputs, sols, SamplingPolicy::random_subset(100, 77));
  EXPECT_TRUE((ds.ys.array() == again.ys.array()).all());
  Dataset other = assemble_dataset(inputs, sols, SamplingPolicy::random_subset(100, 78));
  EXPECT_FALSE((ds.ys.array() == other.ys.array()).all());
}

TEST(Assemble, SingleSampleMapsToGroupZero) {
  Dataset ds = synthetic_ode_dataset(1, 10, 25);
  for (auto g : ds.group_of) EXPECT_EQ(g, 0u);
}

TEST(Assemble, MisalignedLengthsRejected) {
  std::vector<std::vector<EncodedFunction>> inputs(2);
  std::vector<ODESolution> sols(3);
  EXPECT_THROW(assemble_dataset(inputs, sols), DataError);
}

TEST(DatasetIo, RoundTripIsBitExact) {
  Dataset ds = synthetic_ode_dataset(7, 12, 9, SamplingPolicy::random_subset(4, 3));
  ds.system = "ode";
  ds.provenance["seed"] = 100;
  const auto dir = std::filesystem::temp_directory_path() / "mionet_ds_test";
  std::filesystem::remove_all(dir);
  save_dataset(dir, ds);
  Dataset back = load_dataset(dir);
  EXPECT_EQ(back.system, "ode");
  EXPECT_EQ(back.num_records(), ds.num_records());
  EXPECT_TRUE((back.targets.array() == ds.targets.array()).all());
  EXPECT_TRUE((back.ys.array() == ds.ys.array()).all());
  for (int i = 0; i < ds.num_branches(); ++i)
    EXPECT_TRUE((back.branch_coords[static_cast<std::size_t>(i)].array() ==
                 ds.branch_coords[static_cast<std::size_t>(i)].array()).all());
  EXPECT_EQ(back.group_of, ds.group_of);
  std::filesystem::remove_all(dir);
}

TEST(Plan, CompleteGridDetection) {
  Dataset all = synthetic_ode_dataset(5, 10, 20);
  MIONetConfig c = small_config(10, 8, 1);
  EXPECT_TRUE(build_plan(all, c).batch.complete_grid);
  Dataset sub = synthetic_ode_dataset(5, 10, 20, SamplingPolicy::random_subset(7, 1));
  EXPECT_FALSE(build_plan(sub, c).batch.complete_grid);
  // Shared y grid must deduplicate to one trunk table.
  EXPECT_EQ(build_plan(all, c).batch.trunk_raw[0].rows(), 20);
}

TEST(Plan, MismatchesRejected) {
  Dataset ds = synthetic_ode_dataset(3, 10, 5);
  MIONetConfig wrong_q = small_config(11, 8, 1);
  EXPECT_THROW(build_plan(ds, wrong_q), DataError);
  MIONetConfig wrong_d = small_config(10, 8, 2);
  wrong_d.trunk_split = {{0}, {1}};
  wrong_d.trunks.push_back({{1, 16, 8}, TrunkFeatureMap::None, false});
  EXPECT_THROW(build_plan(ds, wrong_d), DataError);
}

TEST(MseLoss, PerfectAndConstantModels) {
  Dataset ds = synthetic_ode_dataset(4, 10, 15);
  MIONetModel m = build_model(small_config(10, 8, 1), 5);
  zero_model(m);
  // Constant model b with all targets b + 1: loss exactly 1.
  m.bias = 2.0;
  ds.targets.setConstant(3.0);
  LossValue v = mse_loss(m, ds);
  EXPECT_DOUBLE_EQ(v.loss, 1.0);
  // Perfect predictions: zero loss.
  ds.targets.setConstant(2.0);
  EXPECT_DOUBLE_EQ(mse_loss(m, ds).loss, 0.0);
}

TEST(MseLoss, ZeroModelLossIsMeanSquaredTargets) {
  Dataset ds = synthetic_ode_dataset(6, 10, 12);
  MIONetModel m = build_model(small_config(10, 8, 1), 5);
  zero_model(m);
  const double want = ds.targets.squaredNorm() / static_cast<double>(ds.num_records());
  EXPECT_NEAR(mse_loss(m, ds).loss, want, 1e-12 * std::max(1.0, want));
}

TEST(MseLoss, GradientMatchesFiniteDifferences) {
  Dataset ds = synthetic_ode_dataset(3, 6, 5);
  MIONetConfig c;
  c.branches.push_back({{6, 7, 5}, false});
  c.branches.push_back({{6, 5}, true});
  c.trunks.push_back({{1, 7, 5}, TrunkFeatureMap::None, false});
  c.query_dim = 1;
  MIONetModel m = build_model(c, 8);
  // The t = 0 records put zero-initialized first-layer biases exactly on the
  // ReLU kink; nudge every parameter off it before differencing.
  Rng kick(99);
  for (auto& blk : m.param_blocks())
    for (std::size_t i = 0; i < blk.size; ++i)
      blk.data[i] += 0.02 * (2.0 * kick.uniform() - 1.0) + 0.005;
  LossValue v = mse_loss(m, ds);

  auto params = m.param_blocks();
  auto gblocks = v.grads.param_blocks(m);
  const double h = 1e-6;
  double max_rel = 0.0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size; ++i) {
      double& theta = params[b].data[i];
      const double orig = theta;
      theta = orig + h;
      const double up = mse_loss(m, ds).loss;
      theta = orig - h;
      const double down = mse_loss(m, ds).loss;
      theta = orig;
      const double fd = (up - down) / (2.0 * h);
      const double ad = gblocks[b].data[i];
      max_rel = std::max(max_rel,
                         std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-3}));
    }
  }
  EXPECT_LT(max_rel, 1e-5);
}

TEST(IntegrationRules, ConstantAndLinearExactness) {
  for (LossRule rule : {LossRule::Rectangle, LossRule::Trapezoid, LossRule::MonteCarlo}) {
    const int m = 37;
    Vec ones = Vec::Ones(rule == LossRule::Trapezoid ? m + 1 : m);
    EXPECT_DOUBLE_EQ(integrate_samples(ones, rule), 1.0);
  }
  // Trapezoid is exact on linear integrands.
  const int m = 50;
  Vec lin(m + 1);
  for (int k = 0; k <= m; ++k) lin[k] = 3.0 * (static_cast<double>(k) / m) - 1.0;
  EXPECT_NEAR(integrate_samples(lin, LossRule::Trapezoid), 3.0 / 2.0 - 1.0, 1e-14);
  EXPECT_THROW(integrate_samples(Vec::Ones(1), LossRule::Trapezoid), ConfigError);
}

TEST(IntegrationRules, SquareConvergesToOneThird) {
  const int m = 100;
  Vec mid(m), nodes(m + 1), mc(m);
  for (int k = 0; k < m; ++k) {
    const double x = (k + 0.5) / m;
    mid[k] = x * x;
  }
  for (int k = 0; k <= m; ++k) {
    const double x = static_cast<double>(k) / m;
    nodes[k] = x * x;
  }
  Rng rng(123);
  for (int k = 0; k < m; ++k) {
    const double x = rng.uniform();
    mc[k] = x * x;
  }
  EXPECT_NEAR(integrate_samples(mid, LossRule::Rectangle), 1.0 / 3.0, 1e-4);
  EXPECT_NEAR(integrate_samples(nodes, LossRule::Trapezoid), 1.0 / 3.0, 1e-4);
  EXPECT_NEAR(integrate_samples(mc, LossRule::MonteCarlo), 1.0 / 3.0, 0.05);
}

TEST(IntegrationLoss, MonteCarloWithUniformCountsRecoversMse) {
  Dataset ds = synthetic_ode_dataset(5, 8, 11);
  MIONetModel m = build_model(small_config(8, 6, 1), 21);
  const double mse = mse_loss(m, ds).loss;
  EXPECT_NEAR(integration_loss(m, ds, LossRule::MonteCarlo), mse, 1e-14 + 1e-12 * mse);
  const double trap = integration_loss(m, ds, LossRule::Trapezoid);
  EXPECT_TRUE(std::isfinite(trap));
  EXPECT_GT(trap, 0.0);
}

TEST(L2RelativeError, HomogeneityAndHandComputedToy) {
  Dataset ds = synthetic_ode_dataset(2, 8, 2);
  MIONetModel m = build_model(small_config(8, 6, 1), 31);
  zero_model(m);
  m.bias = 1.0;
  // Group 0 targets (3, 4), group 1 targets (1, 2): hand computation gives
  // ||(-2,-3)||/5 and ||(0,-1)||/sqrt(5).
  ds.targets << 3.0, 4.0, 1.0, 2.0;
  EvalResult r = l2_relative_error(m, ds);
  ASSERT_EQ(r.per_group.size(), 2u);
  EXPECT_NEAR(r.per_group[0].relative_l2, std::sqrt(13.0) / 5.0, 1e-14);
  EXPECT_NEAR(r.per_group[1].relative_l2, 1.0 / std::sqrt(5.0), 1e-14);
  EXPECT_NEAR(r.aggregate, 0.5 * (std::sqrt(13.0) / 5.0 + 1.0 / std::sqrt(5.0)), 1e-14);

  // Perfect predictions: zero error. Uniform 1% overshoot: exactly 1%.
  ds.targets.setConstant(1.0);
  EXPECT_DOUBLE_EQ(l2_relative_error(m, ds).aggregate, 0.0);
  m.bias = 1.01;
  EXPECT_NEAR(l2_relative_error(m, ds).aggregate, 0.01, 1e-12);

  // Scale equivariance: scaling predictions and targets together changes nothing.
  ds.targets.setConstant(5.0);
  m.bias = 4.0;
  const double base = l2_relative_error(m, ds).aggregate;
  ds.targets.setConstant(50.0);
  m.bias = 40.0;
  EXPECT_NEAR(l2_relative_error(m, ds).aggregate, base, 1e-12);
}

TEST(L2RelativeError, ZeroNormGroupsExcludedAndReported) {
  Dataset ds = synthetic_ode_dataset(3, 8, 4);
  MIONetModel m = build_model(small_config(8, 6, 1), 37);
  zero_model(m);
  m.bias = 0.5;
  ds.targets.segment(4, 4).setZero();  // group 1 reference is identically zero
  EvalResult r = l2_relative_error(m, ds);
  ASSERT_EQ(r.excluded.size(), 1u);
  EXPECT_EQ(r.excluded[0], 1u);
  EXPECT_EQ(r.per_group.size(), 2u);
}

TEST(Train, ContractAndDeterminism) {
  Dataset ds = synthetic_ode_dataset(6, 10, 15);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 1;
  cfg.eval_every = 1;
  EXPECT_THROW(([&] {
                 TrainConfig bad = cfg;
                 bad.epochs = 0;
                 bad.validate();
               })(),
               ConfigError);

  MIONetModel m1 = build_model(small_config(10, 8, 1), 9);
  MIONetModel m2 = build_model(small_config(10, 8, 1), 9);
  TrainLog log1 = train(m1, ds, cfg);
  EXPECT_EQ(log1.history.size(), 1u);  // epochs = 1 -> exactly one recorded step

  cfg.epochs = 40;
  cfg.eval_every = 10;
  MIONetModel m3 = build_model(small_config(10, 8, 1), 9);
  train(m2, ds, cfg);
  train(m3, ds, cfg);
  auto p2 = m2.param_blocks(), p3 = m3.param_blocks();
  for (std::size_t b = 0; b < p2.size(); ++b)
    for (std::size_t i = 0; i < p2[b].size; ++i)
      EXPECT_EQ(p2[b].data[i], p3[b].data[i]);
}

TEST(Train, NonFiniteLossRaisesTrainingErrorWithEpoch) {
  Dataset ds = synthetic_ode_dataset(3, 8, 5);
  MIONetModel m = build_model(small_config(8, 6, 1), 3);
  m.bias = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 10;
  cfg.eval_every = 5;
  try {
    train(m, ds, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.epoch, 1);
  }
}

TEST(Bench, LaneCountDoesNotChangeResults) {
  // (model, trial) tasks are independent; the parallel runner must produce
  // bitwise-identical errors regardless of the lane count.
  BenchSpec spec;
  spec.table = "tiny";
  spec.system = "ode";
  spec.lr = 2e-3;
  MIONetConfig small;
  small.branches = {{{10, 12, 8}, false}, {{10, 12, 8}, false}};
  small.trunks = {{{1, 12, 8}, TrunkFeatureMap::None, false}};
  small.query_dim = 1;
  spec.models = {{"A", 1, 12, false, small}, {"B", 1, 12, true,
                  [] {
                    MIONetConfig c;
                    c.branches = {{{20, 12, 8}, false}};
                    c.trunks = {{{1, 12, 8}, TrunkFeatureMap::None, false}};
                    c.query_dim = 1;
                    return c;
                  }()}};
  BenchScale scale{"tiny", 40, 0, 0, 2, SamplingPolicy::all_points()};

  Dataset train_ds = synthetic_ode_dataset(6, 10, 8);
  Dataset test_ds = synthetic_ode_dataset(3, 10, 8);
  BenchResult one = run_bench(spec, scale, 5, 1, train_ds, test_ds);
  BenchResult two = run_bench(spec, scale, 5, 2, train_ds, test_ds);
  ASSERT_EQ(one.rows.size(), two.rows.size());
  for (std::size_t r = 0; r < one.rows.size(); ++r)
    for (std::size_t t = 0; t < one.rows[r].report.errors.size(); ++t)
      EXPECT_EQ(one.rows[r].report.errors[t], two.rows[r].report.errors[t]);
}

TEST(Train, LossDropsTenfoldOnSmokeBenchmark) {
  // Miniature ODE-style benchmark; the smoothed loss must fall by >= 10x
  // within the first few thousand epochs.
  Dataset ds = synthetic_ode_dataset(20, 10, 20);
  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.epochs = 1500;
  cfg.eval_every = 100;
  MIONetModel m = build_model(small_config(10, 12, 1), 77);
  TrainLog log = train(m, ds, cfg);
  EXPECT_LT(log.final_loss, log.history.front().loss / 10.0);
  for (std::size_t i = 1; i < log.history.size(); ++i)
    EXPECT_LE(log.history[i].epoch - log.history[i - 1].epoch, 100 + 1);
}

TEST(RunTrials, StatisticsAndDeterminism) {
  Dataset train_ds = synthetic_ode_dataset(8, 10, 12);
  Dataset test_ds = synthetic_ode_dataset(4, 10, 12);
  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.epochs = 60;
  cfg.eval_every = 30;
  cfg.seed = 5;
  MIONetConfig mc = small_config(10, 8, 1);

  TrialReport one = run_trials(mc, train_ds, test_ds, cfg, 1);
  EXPECT_FALSE(one.has_stddev);
  ASSERT_EQ(one.errors.size(), 1u);

  TrialReport a = run_trials(mc, train_ds, test_ds, cfg, 3);
  TrialReport b = run_trials(mc, train_ds, test_ds, cfg, 3);
  EXPECT_TRUE(a.has_stddev);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.errors[i], b.errors[i]);
}

TEST(RunTrials, ConstantTargetsReachNearZeroError) {
  Dataset train_ds = synthetic_ode_dataset(5, 8, 10);
  train_ds.targets.setConstant(0.3);
  Dataset test_ds = synthetic_ode_dataset(3, 8, 10);
  test_ds.targets.setConstant(0.3);
  TrainConfig cfg;
  cfg.lr = 5e-3;
  cfg.epochs = 2500;
  cfg.eval_every = 500;
  cfg.seed = 11;
  TrialReport r = run_trials(small_config(8, 6, 1), train_ds, test_ds, cfg, 2);
  EXPECT_LT(r.mean, 0.05);
}

// Grouped-input function approximation: raw coordinate vectors as "input
// functions" with no trunk at all; a separable product target must be
// learnable to ~1% relative error.
TEST(GroupedInputs, SeparableFunctionFitsWithoutTrunk) {
  MIONetConfig c;
  c.variant = ModelVariant::LowRank;
  c.branches.push_back({{1, 32, 32, 16}, false});
  c.branches.push_back({{1, 32, 32, 16}, false});
  c.query_dim = 0;

  const int side = 12;
  Dataset ds;
  ds.branch_coords.resize(2);
  const Eigen::Index n = side * side;
  ds.branch_coords[0].resize(n, 1);
  ds.branch_coords[1].resize(n, 1);
  ds.ys.resize(n, 0);
  ds.targets.resize(n);
  Eigen::Index k = 0;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const double x = static_cast<double>(i) / (side - 1);
      const double y = static_cast<double>(j) / (side - 1);
      ds.branch_coords[0](k, 0) = x;
      ds.branch_coords[1](k, 0) = y;
      ds.targets[k] = (std::sin(M_PI * x) + 1.2) * (std::cos(M_PI * y) - 0.4);
      ds.group_of.push_back(static_cast<std::uint32_t>(k));
      ++k;
    }
  }

  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.epochs = 8000;
  cfg.eval_every = 2000;
  MIONetModel m = build_model(c, 13);
  train(m, ds, cfg);

  double err2 = 0.0, ref2 = 0.0;
  LowRankEngine engine;
  TrainingPlan plan = build_plan(ds, c);
  const Vec& preds = engine.forward(m, plan.batch);
  for (Eigen::Index r = 0; r < n; ++r) {
    err2 += (preds[r] - ds.targets[r]) * (preds[r] - ds.targets[r]);
    ref2 += ds.targets[r] * ds.targets[r];
  }
  EXPECT_LT(std::sqrt(err2 / ref2), 1e-2);
}
