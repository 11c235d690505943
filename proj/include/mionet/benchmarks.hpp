#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mionet/dataset.hpp"
#include "mionet/errors.hpp"
#include "mionet/model.hpp"
#include "mionet/random_field.hpp"
#include "mionet/solvers.hpp"
#include "mionet/training.hpp"

namespace mionet {

// ---------------------------------------------------------------------------
// Benchmark data generation: the three operator-learning problems, each with
// GRF inputs on a 1000-point fine grid encoded at 100 equidistant sensors.
// ---------------------------------------------------------------------------

struct GenOptions {
  int sensors = 100;
  int fine_points = 1000;
  double length_scale = 0.2;
  std::uint64_t seed = 0;
  SamplingPolicy policy = SamplingPolicy::all_points();
};

inline Dataset generate_ode_dataset(int count, const GenOptions& opt) {
  if (count < 1) throw ConfigError("gen-data: function count must be >= 1");
  GRFSpec spec;
  spec.length_scale = opt.length_scale;
  spec.grid = SensorGrid::uniform(opt.fine_points);
  GaussianRandomField grf(spec);
  const SensorGrid sensors = SensorGrid::uniform(opt.sensors);

  std::vector<std::vector<EncodedFunction>> inputs;
  std::vector<ODESolution> sols;
  inputs.reserve(static_cast<std::size_t>(count));
  sols.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    EncodedFunction f1 = grf.sample_one(opt.seed, 2 * static_cast<std::uint64_t>(k));
    EncodedFunction f2 = grf.sample_one(opt.seed, 2 * static_cast<std::uint64_t>(k) + 1);
    inputs.push_back({encode(f1, sensors), encode(f2, sensors)});
    sols.push_back(solve_pendulum(f1, f2));
  }
  Dataset ds = assemble_dataset(inputs, sols, opt.policy);
  ds.system = "ode";
  ds.provenance["length_scale"] = opt.length_scale;
  ds.provenance["grf_seed"] = opt.seed;
  ds.provenance["fine_points"] = opt.fine_points;
  ds.provenance["sensors"] = opt.sensors;
  return ds;
}

inline Dataset generate_dr_dataset(int count, const GenOptions& opt) {
  if (count < 1) throw ConfigError("gen-data: function count must be >= 1");
  GRFSpec spec;
  spec.length_scale = opt.length_scale;
  spec.grid = SensorGrid::uniform(opt.fine_points);
  GaussianRandomField grf(spec);
  const SensorGrid sensors = SensorGrid::uniform(opt.sensors);

  std::vector<std::vector<EncodedFunction>> inputs;
  std::vector<Field2D> sols;
  for (int k = 0; k < count; ++k) {
    EncodedFunction f = grf.sample_one(opt.seed, 2 * static_cast<std::uint64_t>(k));
    EncodedFunction g = grf.sample_one(opt.seed, 2 * static_cast<std::uint64_t>(k) + 1);
    EncodedFunction d(f.grid, Vec(0.01 * (f.values.cwiseAbs().array() + 1.0)));
    inputs.push_back({encode(d, sensors), encode(g, sensors)});
    sols.push_back(solve_diffusion_reaction(d, g));
  }
  Dataset ds = assemble_dataset(inputs, sols, opt.policy);
  ds.system = "dr";
  ds.provenance["length_scale"] = opt.length_scale;
  ds.provenance["grf_seed"] = opt.seed;
  ds.provenance["fine_points"] = opt.fine_points;
  ds.provenance["sensors"] = opt.sensors;
  return ds;
}

inline Dataset generate_ad_dataset(int count, const GenOptions& opt) {
  if (count < 1) throw ConfigError("gen-data: function count must be >= 1");
  GRFSpec spec;
  spec.length_scale = opt.length_scale;
  spec.grid = SensorGrid::uniform(opt.fine_points);
  GaussianRandomField grf(spec);
  const SensorGrid sensors = SensorGrid::uniform(opt.sensors);

  std::vector<std::vector<EncodedFunction>> inputs;
  std::vector<Field2D> sols;
  for (int k = 0; k < count; ++k) {
    EncodedFunction f1 = grf.sample_one(opt.seed, 2 * static_cast<std::uint64_t>(k));
    EncodedFunction f2 = grf.sample_one(opt.seed, 2 * static_cast<std::uint64_t>(k) + 1);
    EncodedFunction u0 = periodic_compose(f1, spec.grid);
    EncodedFunction composed = periodic_compose(f2, spec.grid);
    EncodedFunction d(spec.grid, Vec(0.05 * composed.values.cwiseAbs().array() + 0.05));
    inputs.push_back({encode(d, sensors), encode(u0, sensors)});
    sols.push_back(solve_advection_diffusion(d, u0));
  }
  Dataset ds = assemble_dataset(inputs, sols, opt.policy);
  ds.system = "ad";
  ds.provenance["length_scale"] = opt.length_scale;
  ds.provenance["grf_seed"] = opt.seed;
  ds.provenance["fine_points"] = opt.fine_points;
  ds.provenance["sensors"] = opt.sensors;
  return ds;
}

inline Dataset generate_dataset(const std::string& system, int count, const GenOptions& opt) {
  if (system == "ode") return generate_ode_dataset(count, opt);
  if (system == "dr") return generate_dr_dataset(count, opt);
  if (system == "ad") return generate_ad_dataset(count, opt);
  throw ConfigError("unknown system '" + system + "' (expected ode, dr, or ad)");
}

/// Concatenates all input-function coordinates into a single branch table:
/// how a single-input network consumes a multi-input dataset.
inline Dataset concat_branches(const Dataset& ds) {
  Dataset out = ds;
  Eigen::Index total = 0;
  for (const auto& b : ds.branch_coords) total += b.cols();
  RowMat merged(ds.num_groups(), total);
  Eigen::Index off = 0;
  for (const auto& b : ds.branch_coords) {
    merged.middleCols(off, b.cols()) = b;
    off += b.cols();
  }
  out.branch_coords.clear();
  out.branch_coords.push_back(std::move(merged));
  return out;
}

// ---------------------------------------------------------------------------
// Paper-table presets.
// ---------------------------------------------------------------------------

/// Branch/trunk stacks of `depth` weight layers and a shared width, the
/// multiple-input architecture of the experiments.
inline MIONetConfig make_mionet_config(int n, int sensors, int depth, int width,
                                       int query_dim) {
  MIONetConfig c;
  for (int i = 0; i < n; ++i) {
    std::vector<int> sizes = {sensors};
    for (int k = 0; k < depth; ++k) sizes.push_back(width);
    c.branches.push_back({sizes, false});
  }
  std::vector<int> tsizes = {query_dim};
  for (int k = 0; k < depth; ++k) tsizes.push_back(width);
  c.trunks.push_back({tsizes, TrunkFeatureMap::None, false});
  c.query_dim = query_dim;
  return c;
}

/// Single-input baseline of matching size: one branch on the concatenated
/// sensors with `depth` weight layers; the trunk has depth-1 layers with the
/// activation applied to its output (the branch's final linear layer acts as
/// the readout).
inline MIONetConfig make_deeponet_config(int total_sensors, int depth, int width,
                                         int query_dim) {
  MIONetConfig c;
  std::vector<int> bsizes = {total_sensors};
  for (int k = 0; k < depth; ++k) bsizes.push_back(width);
  c.branches.push_back({bsizes, false});
  std::vector<int> tsizes = {query_dim};
  for (int k = 0; k < depth - 1; ++k) tsizes.push_back(width);
  c.trunks.push_back({tsizes, TrunkFeatureMap::None, true});
  c.query_dim = query_dim;
  return c;
}

/// Advection-diffusion variants: the operator is linear in the initial
/// condition, so its branch is a bias-free linear layer.
inline MIONetConfig make_ad_mionet_config(int sensors, int depth, int width,
                                          bool periodic) {
  MIONetConfig c;
  std::vector<int> dsizes = {sensors};
  for (int k = 0; k < depth; ++k) dsizes.push_back(width);
  c.branches.push_back({dsizes, false});            // diffusivity branch
  c.branches.push_back({{sensors, width}, true});   // linear initial-condition branch
  if (periodic) {
    std::vector<int> xsizes = {4};
    for (int k = 0; k < depth; ++k) xsizes.push_back(width);
    std::vector<int> tsizes = {1};
    for (int k = 0; k < depth; ++k) tsizes.push_back(width);
    c.trunks.push_back({xsizes, TrunkFeatureMap::PeriodicK2, false});
    c.trunks.push_back({tsizes, TrunkFeatureMap::None, false});
    c.trunk_split = {{0}, {1}};
  } else {
    std::vector<int> tsizes = {2};
    for (int k = 0; k < depth; ++k) tsizes.push_back(width);
    c.trunks.push_back({tsizes, TrunkFeatureMap::None, false});
  }
  c.query_dim = 2;
  return c;
}

struct BenchModel {
  std::string name;
  int depth = 0;
  int width = 0;
  bool concat_inputs = false;  // single-input baseline consumes merged sensors
  MIONetConfig config;
};

struct BenchScale {
  std::string name;       // "paper" | "quick"
  long epochs = 0;
  int train_fns = 0;
  int test_fns = 0;
  int trials = 0;
  SamplingPolicy policy;  // query-point policy for train/test sets
};

struct BenchSpec {
  std::string table;   // "t1" | "t2" | "t3"
  std::string system;  // "ode" | "dr" | "ad"
  double length_scale = 0.2;
  double lr = 1e-3;
  std::vector<BenchModel> models;
  BenchScale paper, quick;
};

inline BenchSpec bench_spec(const std::string& table, std::uint64_t data_seed = 0) {
  BenchSpec b;
  b.table = table;
  if (table == "t1") {
    b.system = "ode";
    b.length_scale = 0.2;
    b.lr = 1e-3;
    b.models = {{"MIONet", 2, 200, false, make_mionet_config(2, 100, 2, 200, 1)},
                {"DeepONet (same size)", 2, 312, true, make_deeponet_config(200, 2, 312, 1)}};
    b.paper = {"paper", 100000, 1000, 1000, 5, SamplingPolicy::all_points()};
    // Quick keeps the full 1000 training functions: MIONet's three-factor
    // products overfit badly on 200-function sets (>30% test error), which
    // would invert the paper's ordering; 10k epochs alone already cuts the
    // runtime ~10x.
    b.quick = {"quick", 10000, 1000, 1000, 2, SamplingPolicy::all_points()};
  } else if (table == "t2") {
    b.system = "dr";
    b.length_scale = 0.2;
    b.lr = 1e-3;
    b.models = {{"MIONet", 2, 200, false, make_mionet_config(2, 100, 2, 200, 2)},
                {"DeepONet (same size)", 2, 312, true, make_deeponet_config(200, 2, 312, 2)}};
    b.paper = {"paper", 100000, 1000, 5000, 5, SamplingPolicy::all_points()};
    // all_points would put 2M records in the quick training set; subsample
    // instead (recorded in the manifest).
    b.quick = {"quick", 10000, 200, 200, 2, SamplingPolicy::random_subset(100, data_seed + 101)};
  } else if (table == "t3") {
    b.system = "ad";
    b.length_scale = 0.5;
    b.lr = 2e-4;
    b.models = {
        {"MIONet", 3, 300, false, make_ad_mionet_config(100, 3, 300, false)},
        {"MIONet (periodic)", 3, 248, false, make_ad_mionet_config(100, 3, 248, true)},
        {"DeepONet (same size)", 3, 343, true, make_deeponet_config(200, 3, 343, 2)}};
    b.paper = {"paper", 100000, 1000, 1000, 5, SamplingPolicy::random_subset(100, data_seed + 17)};
    b.quick = {"quick", 10000, 200, 200, 2, SamplingPolicy::random_subset(100, data_seed + 17)};
  } else {
    throw ConfigError("unknown benchmark table '" + table + "' (expected t1, t2, t3)");
  }
  return b;
}

// ---------------------------------------------------------------------------
// Benchmark runner.
// ---------------------------------------------------------------------------

struct BenchRow {
  std::string model;
  int depth = 0;
  int width = 0;
  std::size_t params = 0;
  TrialReport report;
};

struct BenchResult {
  std::string table;
  std::string scale;
  std::vector<BenchRow> rows;
};

/// Runs every (model, trial) pair of a table, parallelized across lanes;
/// results are independent of the lane count.
inline BenchResult run_bench(const BenchSpec& spec, const BenchScale& scale,
                             std::uint64_t seed, int jobs,
                             const Dataset& train_data, const Dataset& test_data) {
  Dataset train_concat, test_concat;
  bool have_concat = false;
  for (const auto& m : spec.models) {
    if (m.concat_inputs && !have_concat) {
      train_concat = concat_branches(train_data);
      test_concat = concat_branches(test_data);
      have_concat = true;
    }
  }

  struct Task {
    std::size_t model_idx;
    int trial;
  };
  std::vector<Task> tasks;
  for (std::size_t mi = 0; mi < spec.models.size(); ++mi)
    for (int t = 0; t < scale.trials; ++t) tasks.push_back({mi, t});

  std::vector<double> errors(tasks.size(), 0.0);
  std::vector<TrainLog> logs(tasks.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size() || failed.load()) return;
      const Task& task = tasks[i];
      const BenchModel& bm = spec.models[task.model_idx];
      try {
        const Dataset& tr = bm.concat_inputs ? train_concat : train_data;
        const Dataset& te = bm.concat_inputs ? test_concat : test_data;
        TrainConfig cfg;
        cfg.lr = spec.lr;
        cfg.epochs = scale.epochs;
        cfg.eval_every = std::max<long>(1, scale.epochs / 20);
        cfg.seed = seed;
        MIONetModel model =
            build_model(bm.config, seed + static_cast<std::uint64_t>(task.trial));
        logs[i] = train(model, tr, cfg);
        errors[i] = l2_relative_error(model, te).aggregate;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failed.store(true);
        failure = e.what();
        return;
      }
    }
  };
  const int lanes = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  for (int l = 0; l < lanes; ++l) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failed.load()) throw TrainingError("benchmark task failed: " + failure, 0);

  BenchResult result;
  result.table = spec.table;
  result.scale = scale.name;
  for (std::size_t mi = 0; mi < spec.models.size(); ++mi) {
    BenchRow row;
    row.model = spec.models[mi].name;
    row.depth = spec.models[mi].depth;
    row.width = spec.models[mi].width;
    row.params = build_model(spec.models[mi].config, 0).parameter_count();
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].model_idx != mi) continue;
      row.report.errors.push_back(errors[i]);
      row.report.logs.push_back(logs[i]);
    }
    double sum = 0.0;
    for (double e : row.report.errors) sum += e;
    row.report.mean = sum / static_cast<double>(row.report.errors.size());
    if (row.report.errors.size() >= 2) {
      double ss = 0.0;
      for (double e : row.report.errors)
        ss += (e - row.report.mean) * (e - row.report.mean);
      row.report.stddev = std::sqrt(ss / static_cast<double>(row.report.errors.size()));
      row.report.has_stddev = true;
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline std::string format_params(std::size_t params) {
  return std::to_string((params + 500) / 1000) + "K";
}

inline std::string bench_markdown(const BenchResult& r) {
  std::string out;
  out += "| Model | Depth | Width | Parameters | L2 relative error |\n";
  out += "|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& row : r.rows) {
    if (row.report.has_stddev) {
      std::snprintf(buf, sizeof(buf), "| %s | %d | %d | %s | %.2f +- %.2f %% |\n",
                    row.model.c_str(), row.depth, row.width,
                    format_params(row.params).c_str(), 100.0 * row.report.mean,
                    100.0 * row.report.stddev);
    } else {
      std::snprintf(buf, sizeof(buf), "| %s | %d | %d | %s | %.2f %% |\n",
                    row.model.c_str(), row.depth, row.width,
                    format_params(row.params).c_str(), 100.0 * row.report.mean);
    }
    out += buf;
  }
  return out;
}

}  // namespace mionet
