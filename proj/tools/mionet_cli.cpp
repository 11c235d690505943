// Command-line front end: data generation, training, evaluation, benchmark
// tables, and diagnostics. Every command writes a manifest next to its
// outputs; identical manifests reproduce identical numeric outputs.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "mionet/benchmarks.hpp"
#include "mionet/dataset.hpp"
#include "mionet/manifest.hpp"
#include "mionet/model.hpp"
#include "mionet/random_field.hpp"
#include "mionet/training.hpp"

namespace fs = std::filesystem;
using namespace mionet;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path + "'");
  return nlohmann::json::parse(is);
}

SamplingPolicy policy_for(const std::string& system, int points, std::uint64_t seed) {
  if (points == 0) return SamplingPolicy::all_points();
  if (points > 0) return SamplingPolicy::random_subset(points, seed + 1000003);
  // System defaults: the advection-diffusion sets keep 100 of the 10000 grid
  // values; the others keep every output point.
  if (system == "ad") return SamplingPolicy::random_subset(100, seed + 1000003);
  return SamplingPolicy::all_points();
}

int cmd_gen_data(const std::string& system, int count_train, int count_test,
                 double length_scale, std::uint64_t seed, int points,
                 const std::string& out) {
  GenOptions opt;
  opt.length_scale = length_scale;
  opt.seed = seed;
  opt.policy = policy_for(system, points, seed);
  if (count_train < 1 || count_test < 0)
    throw ConfigError("gen-data: need count_train >= 1 and count_test >= 0");

  Dataset train_ds = generate_dataset(system, count_train, opt);
  train_ds.provenance["command"] = "gen-data";
  train_ds.provenance["role"] = "train";
  train_ds.provenance["version"] = kVersion;
  save_dataset(fs::path(out) / "train", train_ds);
  std::printf("wrote %s/train (%ld records, %ld functions)\n", out.c_str(),
              static_cast<long>(train_ds.num_records()),
              static_cast<long>(train_ds.num_groups()));

  if (count_test > 0) {
    GenOptions test_opt = opt;
    test_opt.seed = mix_seed(seed, 0x7e57);  // independent input draws
    test_opt.policy = policy_for(system, points, test_opt.seed);
    Dataset test_ds = generate_dataset(system, count_test, test_opt);
    test_ds.provenance["command"] = "gen-data";
    test_ds.provenance["role"] = "test";
    test_ds.provenance["version"] = kVersion;
    save_dataset(fs::path(out) / "test", test_ds);
    std::printf("wrote %s/test (%ld records, %ld functions)\n", out.c_str(),
                static_cast<long>(test_ds.num_records()),
                static_cast<long>(test_ds.num_groups()));
  }
  return 0;
}

void write_report_files(const fs::path& out, const TrialReport& report) {
  nlohmann::json j = report;
  write_text(out / "report.json", j.dump(2) + "\n");

  std::string csv = "trial,l2_relative_error\n";
  for (std::size_t i = 0; i < report.errors.size(); ++i)
    csv += std::to_string(i) + "," + fmt(report.errors[i]) + "\n";
  csv += "mean," + fmt(report.mean) + "\n";
  if (report.has_stddev) csv += "std," + fmt(report.stddev) + "\n";
  write_text(out / "report.csv", csv);

  std::string hist = "trial,epoch,loss\n";
  for (std::size_t t = 0; t < report.logs.size(); ++t)
    for (const auto& s : report.logs[t].history)
      hist += std::to_string(t) + "," + std::to_string(s.epoch) + "," + fmt(s.loss) + "\n";
  write_text(out / "loss_history.csv", hist);
}

int cmd_train(const std::string& data_dir, const std::string& model_file,
              const std::string& train_file, int trials, std::uint64_t seed_override,
              bool has_seed, const std::string& out) {
  fs::path train_path = fs::path(data_dir);
  fs::path test_path;
  if (fs::exists(train_path / "train" / "manifest.json")) {
    test_path = train_path / "test";
    train_path /= "train";
  }
  Dataset train_ds = load_dataset(train_path);
  Dataset test_ds = test_path.empty() || !fs::exists(test_path / "manifest.json")
                        ? train_ds
                        : load_dataset(test_path);

  MIONetConfig model_config = load_json(model_file).get<MIONetConfig>();
  TrainConfig train_config = load_json(train_file).get<TrainConfig>();
  if (has_seed) train_config.seed = seed_override;
  train_config.validate();
  model_config.validate();

  if (trials < 1) throw ConfigError("train: trials must be >= 1");
  fs::create_directories(out);
  TrialReport report;
  for (int t = 0; t < trials; ++t) {
    MIONetModel model =
        build_model(model_config, train_config.seed + static_cast<std::uint64_t>(t));
    report.logs.push_back(train(model, train_ds, train_config));
    report.errors.push_back(l2_relative_error(model, test_ds).aggregate);
    save_model((fs::path(out) / ("checkpoint_trial" + std::to_string(t) + ".bin")).string(),
               model);
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
  write_report_files(out, report);

  RunManifest manifest;
  manifest.command = "train";
  manifest.config = {{"data", data_dir},
                     {"model", load_json(model_file)},
                     {"train", train_config},
                     {"trials", trials}};
  manifest.seed = train_config.seed;
  manifest.outputs = {"report.json", "report.csv", "loss_history.csv"};
  write_manifest(out, manifest);
  std::printf("mean L2 relative error: %s\n", fmt(report.mean).c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& grid_samples, const std::string& out) {
  MIONetModel model = load_model(checkpoint);
  Dataset ds = load_dataset(data_dir);
  EvalResult result = l2_relative_error(model, ds);

  nlohmann::json metrics = {{"aggregate_l2_relative_error", result.aggregate},
                            {"groups_evaluated", result.per_group.size()},
                            {"groups_excluded_zero_norm", result.excluded}};
  write_text(fs::path(out) / "metrics.json", metrics.dump(2) + "\n");

  std::string csv = "group,l2_relative_error\n";
  for (const auto& g : result.per_group)
    csv += std::to_string(g.group) + "," + fmt(g.relative_l2) + "\n";
  write_text(fs::path(out) / "per_function_errors.csv", csv);

  // Dense prediction grids for selected samples (plot-ready CSV).
  std::vector<int> picks;
  if (!grid_samples.empty()) {
    std::stringstream ss(grid_samples);
    std::string tok;
    while (std::getline(ss, tok, ',')) picks.push_back(std::stoi(tok));
  }
  for (int g : picks) {
    if (g < 0 || g >= ds.num_groups())
      throw ConfigError("grid sample index " + std::to_string(g) + " out of range");
    const int d = ds.query_dim();
    const SensorGrid grid100 = SensorGrid::uniform(100);
    // Truth values from the dataset records of this group, keyed by y.
    std::map<std::pair<double, double>, double> truth;
    for (Eigen::Index k = 0; k < ds.num_records(); ++k) {
      if (ds.group_of[static_cast<std::size_t>(k)] != static_cast<std::uint32_t>(g)) continue;
      const double a = ds.ys(k, 0);
      const double b = d == 2 ? ds.ys(k, 1) : 0.0;
      truth[{a, b}] = ds.targets[k];
    }
    std::vector<Vec> coords;
    for (const auto& bc : ds.branch_coords) coords.push_back(bc.row(g).transpose());
    std::string gcsv = d == 2 ? "x,t,u_pred,u_true,abs_err\n" : "t,u_pred,u_true,abs_err\n";
    const int nx = d == 2 ? grid100.q : 1;
    const int nt = grid100.q;
    for (int j = 0; j < nt; ++j) {
      for (int i = 0; i < nx; ++i) {
        Vec y(d);
        if (d == 2) {
          y << grid100.point(i), grid100.point(j);
        } else {
          y << grid100.point(j);
        }
        const double pred = forward_lowrank(model, coords, y);
        const auto it = truth.find({y[0], d == 2 ? y[1] : 0.0});
        std::string row = d == 2 ? fmt(y[0]) + "," + fmt(y[1]) : fmt(y[0]);
        row += "," + fmt(pred);
        if (it != truth.end()) {
          row += "," + fmt(it->second) + "," + fmt(std::abs(pred - it->second));
        } else {
          row += ",,";
        }
        gcsv += row + "\n";
      }
    }
    write_text(fs::path(out) / ("pred_grid_" + std::to_string(g) + ".csv"), gcsv);
  }

  RunManifest manifest;
  manifest.command = "eval";
  manifest.config = {{"checkpoint", checkpoint}, {"data", data_dir},
                     {"grid_samples", grid_samples}};
  manifest.outputs = {"metrics.json", "per_function_errors.csv"};
  write_manifest(out, manifest);
  std::printf("aggregate L2 relative error: %s\n", fmt(result.aggregate).c_str());
  return 0;
}

int cmd_bench(const std::string& table, const std::string& scale_name,
              std::uint64_t seed, int jobs, const std::string& out) {
  BenchSpec spec = bench_spec(table, seed);
  const BenchScale& scale = scale_name == "paper" ? spec.paper : spec.quick;
  if (scale_name != "paper" && scale_name != "quick")
    throw ConfigError("bench scale must be 'paper' or 'quick'");

  GenOptions opt;
  opt.length_scale = spec.length_scale;
  opt.seed = seed;
  opt.policy = scale.policy;
  const fs::path data_dir = fs::path(out) / "data";
  Dataset train_ds, test_ds;
  if (fs::exists(data_dir / "train" / "manifest.json")) {
    train_ds = load_dataset(data_dir / "train");
    test_ds = load_dataset(data_dir / "test");
  } else {
    train_ds = generate_dataset(spec.system, scale.train_fns, opt);
    GenOptions topt = opt;
    topt.seed = mix_seed(seed, 0x7e57);
    topt.policy = scale.policy.kind == SamplingPolicy::RandomSubset
                      ? SamplingPolicy::random_subset(scale.policy.count,
                                                      topt.seed + 1000003)
                      : scale.policy;
    test_ds = generate_dataset(spec.system, scale.test_fns, topt);
    train_ds.provenance["role"] = "train";
    train_ds.provenance["scale"] = scale.name;
    test_ds.provenance["role"] = "test";
    test_ds.provenance["scale"] = scale.name;
    save_dataset(data_dir / "train", train_ds);
    save_dataset(data_dir / "test", test_ds);
  }

  BenchResult result = run_bench(spec, scale, seed, jobs, train_ds, test_ds);

  std::string md = "## Table " + table.substr(1) + " (" + spec.system + ", " +
                   scale.name + " scale)\n\n" + bench_markdown(result);
  write_text(fs::path(out) / "table.md", md);

  std::string csv = "model,depth,width,params,mean,std,trials\n";
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : result.rows) {
    csv += row.model + "," + std::to_string(row.depth) + "," + std::to_string(row.width) +
           "," + std::to_string(row.params) + "," + fmt(row.report.mean) + "," +
           (row.report.has_stddev ? fmt(row.report.stddev) : "") + "," +
           std::to_string(row.report.errors.size()) + "\n";
    nlohmann::json jr = row.report;
    jr["model"] = row.model;
    jr["depth"] = row.depth;
    jr["width"] = row.width;
    jr["params"] = row.params;
    rows.push_back(jr);
  }
  write_text(fs::path(out) / "table.csv", csv);
  write_text(fs::path(out) / "report.json",
             nlohmann::json{{"table", table}, {"scale", scale.name}, {"rows", rows}}.dump(2) +
                 "\n");

  RunManifest manifest;
  manifest.command = "bench";
  manifest.config = {{"table", table},
                     {"scale", scale.name},
                     {"epochs", scale.epochs},
                     {"train_fns", scale.train_fns},
                     {"test_fns", scale.test_fns},
                     {"trials", scale.trials},
                     {"lr", spec.lr},
                     {"policy", scale.policy.name()},
                     {"jobs", jobs}};
  manifest.seed = seed;
  manifest.outputs = {"table.md", "table.csv", "report.json"};
  write_manifest(out, manifest);
  std::puts(md.c_str());
  return 0;
}

int cmd_diagnostics(const std::string& kind, std::uint64_t seed, const std::string& out) {
  RunManifest manifest;
  manifest.command = "diagnostics";
  manifest.seed = seed;
  manifest.config = {{"kind", kind}};

  if (kind == "projection") {
    GRFSpec spec;
    spec.length_scale = 0.2;
    spec.grid = SensorGrid::uniform(1000);
    auto samples = sample_grf(spec, seed, 100);
    auto rows = projection_error_profile(samples, {3, 5, 9, 17, 33, 65});
    std::string csv = "n,sup_error\n";
    for (const auto& r : rows) csv += std::to_string(r.n) + "," + fmt(r.sup_error) + "\n";
    write_text(fs::path(out) / "projection_profile.csv", csv);
    manifest.outputs = {"projection_profile.csv"};
  } else if (kind == "grf") {
    GRFSpec spec;
    spec.length_scale = 0.2;
    spec.grid = SensorGrid::uniform(100);
    GaussianRandomField grf(spec);
    const int n = 10000;
    Mat sum = Mat::Zero(100, 100);
    Vec mean = Vec::Zero(100);
    for (int i = 0; i < n; ++i) {
      Vec v = grf.sample_one(seed, static_cast<std::uint64_t>(i)).values;
      mean += v;
      sum.noalias() += v * v.transpose();
    }
    mean /= n;
    Mat cov = sum / n - mean * mean.transpose();
    Mat k = kernel_matrix(spec);
    const double dev = (cov - k).cwiseAbs().maxCoeff();
    bool diag_exact = true;
    for (int i = 0; i < 100; ++i) diag_exact = diag_exact && k(i, i) == 1.0;
    nlohmann::json report = {{"samples", n},
                             {"max_abs_covariance_deviation", dev},
                             {"kernel_diagonal_exactly_one", diag_exact},
                             {"length_scale", spec.length_scale}};
    write_text(fs::path(out) / "grf_check.json", report.dump(2) + "\n");
    manifest.outputs = {"grf_check.json"};
  } else if (kind == "gradcheck") {
    // Small random models, parameters nudged off ReLU kinks, against central
    // finite differences.
    MIONetConfig c;
    c.branches.push_back({{7, 12, 8}, false});
    c.branches.push_back({{7, 8}, true});
    c.trunks.push_back({{1, 12, 8}, TrunkFeatureMap::None, false});
    c.query_dim = 1;
    double worst = 0.0;
    Rng rng(seed);
    for (int rep = 0; rep < 20; ++rep) {
      MIONetModel m = build_model(c, seed + static_cast<std::uint64_t>(rep));
      for (auto& blk : m.param_blocks())
        for (std::size_t i = 0; i < blk.size; ++i)
          blk.data[i] += 0.02 * (2.0 * rng.uniform() - 1.0) + 0.005;
      const int batch = 5;
      std::vector<std::vector<Vec>> coords;
      std::vector<Vec> ys;
      for (int k = 0; k < batch; ++k) {
        Vec a(7), b(7), y(1);
        for (int i = 0; i < 7; ++i) {
          a[i] = 2.0 * rng.uniform() - 1.0;
          b[i] = 2.0 * rng.uniform() - 1.0;
        }
        y[0] = rng.uniform();
        coords.push_back({a, b});
        ys.push_back(y);
      }
      ModelGrads grads = model_backward(m, coords, ys, Vec::Ones(batch));
      auto objective = [&] {
        double s = 0.0;
        for (int k = 0; k < batch; ++k)
          s += forward_lowrank(m, coords[static_cast<std::size_t>(k)],
                               ys[static_cast<std::size_t>(k)]);
        return s;
      };
      auto params = m.param_blocks();
      auto gblocks = grads.param_blocks(m);
      const double h = 1e-6;
      for (std::size_t b = 0; b < params.size(); ++b) {
        for (std::size_t i = 0; i < params[b].size; ++i) {
          double& theta = params[b].data[i];
          const double orig = theta;
          theta = orig + h;
          const double up = objective();
          theta = orig - h;
          const double down = objective();
          theta = orig;
          const double fd = (up - down) / (2.0 * h);
          const double ad = gblocks[b].data[i];
          worst = std::max(worst, std::abs(fd - ad) /
                                      std::max({std::abs(fd), std::abs(ad), 1e-3}));
        }
      }
    }
    nlohmann::json report = {{"models_checked", 20},
                             {"max_relative_gradient_error", worst},
                             {"threshold", 1e-5},
                             {"pass", worst < 1e-5}};
    write_text(fs::path(out) / "gradcheck.json", report.dump(2) + "\n");
    manifest.outputs = {"gradcheck.json"};
    std::printf("gradcheck max relative error: %s\n", fmt(worst).c_str());
  } else {
    throw ConfigError("unknown diagnostics kind '" + kind +
                      "' (expected projection, grf, gradcheck)");
  }
  write_manifest(out, manifest);
  return 0;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const DataError*>(&e)) return "data";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIONet: multiple-input operator regression"};
  app.require_subcommand(1);

  std::string system = "ode", out = "out", scale = "quick", table = "t1";
  std::string data_dir, model_file, train_file, checkpoint, grid_samples, kind;
  int count_train = 1000, count_test = 1000, points = -1, trials = 5, jobs = 2;
  double length_scale = 0.2;
  std::uint64_t seed = 0;
  bool has_seed = false;

  auto* gen = app.add_subcommand("gen-data", "Generate benchmark datasets");
  gen->add_option("--system", system, "ode | dr | ad")->required();
  gen->add_option("--train", count_train, "training function tuples");
  gen->add_option("--test", count_test, "test function tuples");
  gen->add_option("--length-scale", length_scale, "GRF length scale");
  gen->add_option("--seed", seed, "base seed");
  gen->add_option("--points", points,
                  "query points kept per sample (0 = all, -1 = system default)");
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("--data", data_dir, "dataset directory (or gen-data parent)")->required();
  tr->add_option("--model", model_file, "model config JSON")->required();
  tr->add_option("--train-config", train_file, "training config JSON")->required();
  tr->add_option("--trials", trials, "independent trials");
  auto* seed_opt = tr->add_option("--seed", seed, "override the config seed");
  tr->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--grid-samples", grid_samples, "comma-separated group indices");
  ev->add_option("--out", out, "output directory")->required();

  auto* be = app.add_subcommand("bench", "Reproduce a benchmark table");
  be->add_option("--table", table, "t1 | t2 | t3")->required();
  be->add_option("--scale", scale, "paper | quick");
  be->add_option("--seed", seed, "base seed");
  be->add_option("--jobs", jobs, "parallel training lanes");
  be->add_option("--out", out, "output directory")->required();

  auto* di = app.add_subcommand("diagnostics", "Projection/GRF/gradient reports");
  di->add_option("--kind", kind, "projection | grf | gradcheck")->required();
  di->add_option("--seed", seed, "base seed");
  di->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
    has_seed = seed_opt->count() > 0;
    if (gen->parsed())
      return cmd_gen_data(system, count_train, count_test, length_scale, seed, points, out);
    if (tr->parsed())
      return cmd_train(data_dir, model_file, train_file, trials, seed, has_seed, out);
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir, grid_samples, out);
    if (be->parsed()) return cmd_bench(table, scale, seed, jobs, out);
    if (di->parsed()) return cmd_diagnostics(kind, seed, out);
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", error_kind(e)}, {"message", e.what()}}.dump()
              << "\n";
    return 1;
  }
}
