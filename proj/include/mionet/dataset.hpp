#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mionet/encoding.hpp"
#include "mionet/errors.hpp"
#include "mionet/rng.hpp"
#include "mionet/solvers.hpp"

namespace mionet {

/// How query points are drawn from each solution field when flattening a
/// sample into records.
struct SamplingPolicy {
  enum Kind { AllPoints, RandomSubset } kind = AllPoints;
  int count = 0;           // RandomSubset: points per sample
  std::uint64_t seed = 0;  // RandomSubset: base seed (per-sample substreams)

  static SamplingPolicy all_points() { return {AllPoints, 0, 0}; }
  static SamplingPolicy random_subset(int count, std::uint64_t seed) {
    return {RandomSubset, count, seed};
  }

  std::string name() const { return kind == AllPoints ? "all_points" : "random_subset"; }
};

/// One training atom: the encoded input functions of its source tuple, one
/// query point, and the reference solution value there.
struct DatasetRecord {
  std::vector<Vec> branch_coords;
  Vec y;
  double target = 0.0;
};

/// Flattened operator-learning dataset. Branch coordinates are stored once per
/// source function tuple (group); records reference their group through the
/// grouping index.
class Dataset {
 public:
  int num_branches() const { return static_cast<int>(branch_coords.size()); }
  Eigen::Index num_groups() const {
    return branch_coords.empty() ? 0 : branch_coords.front().rows();
  }
  Eigen::Index num_records() const { return targets.size(); }
  int query_dim() const { return static_cast<int>(ys.cols()); }

  std::vector<int> sensor_counts() const {
    std::vector<int> q;
    for (const auto& b : branch_coords) q.push_back(static_cast<int>(b.cols()));
    return q;
  }

  DatasetRecord record(Eigen::Index k) const {
    DatasetRecord r;
    const auto g = group_of[static_cast<std::size_t>(k)];
    for (const auto& b : branch_coords) r.branch_coords.push_back(b.row(g).transpose());
    r.y = ys.row(k).transpose();
    r.target = targets[k];
    return r;
  }

  void check_consistent() const {
    const Eigen::Index n = num_records();
    if (static_cast<Eigen::Index>(group_of.size()) != n)
      throw DataError("grouping index length does not match record count");
    if (ys.rows() != n) throw DataError("query point rows do not match record count");
    for (std::uint32_t g : group_of)
      if (g >= num_groups()) throw DataError("grouping index out of range");
    for (std::size_t i = 1; i < branch_coords.size(); ++i)
      if (branch_coords[i].rows() != num_groups())
        throw DataError("branch coordinate tables disagree on group count");
  }

  std::vector<RowMat> branch_coords;   // per branch: G x q_i
  RowMat ys;                           // N x d
  Vec targets;                         // N
  std::vector<std::uint32_t> group_of; // N

  std::string system = "custom";
  nlohmann::json provenance = nlohmann::json::object();
};

namespace detail {

inline std::vector<int> select_query_indices(int total, const SamplingPolicy& policy,
                                             std::uint64_t sample_index) {
  std::vector<int> idx;
  if (policy.kind == SamplingPolicy::AllPoints) {
    idx.resize(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
  }
  if (policy.count < 1 || policy.count > total)
    throw ConfigError("random_subset count " + std::to_string(policy.count) +
                      " out of range for " + std::to_string(total) + " grid points");
  // Partial Fisher-Yates over [0, total), seeded per sample.
  std::vector<int> pool(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) pool[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(policy.seed, sample_index));
  idx.reserve(static_cast<std::size_t>(policy.count));
  for (int k = 0; k < policy.count; ++k) {
    const std::uint64_t j =
        static_cast<std::uint64_t>(k) + rng.integer(static_cast<std::uint64_t>(total - k));
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
    idx.push_back(pool[static_cast<std::size_t>(k)]);
  }
  return idx;
}

}  // namespace detail

/// Flattens ODE samples: one record per retained time node, y = t.
inline Dataset assemble_dataset(const std::vector<std::vector<EncodedFunction>>& inputs,
                                const std::vector<ODESolution>& solutions,
                                const SamplingPolicy& policy = SamplingPolicy::all_points()) {
  if (inputs.size() != solutions.size())
    throw DataError("inputs and solutions differ in length (" +
                    std::to_string(inputs.size()) + " vs " +
                    std::to_string(solutions.size()) + ")");
  if (inputs.empty()) throw DataError("empty dataset");

  Dataset ds;
  const std::size_t n = inputs.front().size();
  const Eigen::Index groups = static_cast<Eigen::Index>(inputs.size());
  ds.branch_coords.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.branch_coords[i].resize(groups, inputs.front()[i].grid.q);

  std::vector<std::vector<int>> picks(static_cast<std::size_t>(groups));
  Eigen::Index total = 0;
  for (Eigen::Index g = 0; g < groups; ++g) {
    if (inputs[static_cast<std::size_t>(g)].size() != n)
      throw DataError("sample " + std::to_string(g) + " has a different input arity");
    picks[static_cast<std::size_t>(g)] = detail::select_query_indices(
        solutions[static_cast<std::size_t>(g)].grid.q, policy,
        static_cast<std::uint64_t>(g));
    total += static_cast<Eigen::Index>(picks[static_cast<std::size_t>(g)].size());
  }
  ds.ys.resize(total, 1);
  ds.targets.resize(total);
  ds.group_of.reserve(static_cast<std::size_t>(total));
  Eigen::Index k = 0;
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < n; ++i)
      ds.branch_coords[i].row(g) = inputs[static_cast<std::size_t>(g)][i].values.transpose();
    const ODESolution& sol = solutions[static_cast<std::size_t>(g)];
    for (int j : picks[static_cast<std::size_t>(g)]) {
      ds.ys(k, 0) = sol.grid.point(j);
      ds.targets[k] = sol.u1[j];
      ds.group_of.push_back(static_cast<std::uint32_t>(g));
      ++k;
    }
  }
  ds.provenance["policy"] = policy.name();
  if (policy.kind == SamplingPolicy::RandomSubset) {
    ds.provenance["points_per_sample"] = policy.count;
    ds.provenance["subset_seed"] = policy.seed;
  }
  return ds;
}

/// Flattens space-time fields: one record per retained grid point, y = (x, t).
inline Dataset assemble_dataset(const std::vector<std::vector<EncodedFunction>>& inputs,
                                const std::vector<Field2D>& solutions,
                                const SamplingPolicy& policy = SamplingPolicy::all_points()) {
  if (inputs.size() != solutions.size())
    throw DataError("inputs and solutions differ in length (" +
                    std::to_string(inputs.size()) + " vs " +
                    std::to_string(solutions.size()) + ")");
  if (inputs.empty()) throw DataError("empty dataset");

  Dataset ds;
  const std::size_t n = inputs.front().size();
  const Eigen::Index groups = static_cast<Eigen::Index>(inputs.size());
  ds.branch_coords.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.branch_coords[i].resize(groups, inputs.front()[i].grid.q);

  std::vector<std::vector<int>> picks(static_cast<std::size_t>(groups));
  Eigen::Index total = 0;
  for (Eigen::Index g = 0; g < groups; ++g) {
    if (inputs[static_cast<std::size_t>(g)].size() != n)
      throw DataError("sample " + std::to_string(g) + " has a different input arity");
    const Field2D& sol = solutions[static_cast<std::size_t>(g)];
    picks[static_cast<std::size_t>(g)] = detail::select_query_indices(
        sol.xgrid.q * sol.tgrid.q, policy, static_cast<std::uint64_t>(g));
    total += static_cast<Eigen::Index>(picks[static_cast<std::size_t>(g)].size());
  }
  ds.ys.resize(total, 2);
  ds.targets.resize(total);
  ds.group_of.reserve(static_cast<std::size_t>(total));
  Eigen::Index k = 0;
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < n; ++i)
      ds.branch_coords[i].row(g) = inputs[static_cast<std::size_t>(g)][i].values.transpose();
    const Field2D& sol = solutions[static_cast<std::size_t>(g)];
    const int nx = sol.xgrid.q;
    for (int flat : picks[static_cast<std::size_t>(g)]) {
      const int j = flat / nx, i = flat % nx;  // row-major over (t, x)
      ds.ys(k, 0) = sol.xgrid.point(i);
      ds.ys(k, 1) = sol.tgrid.point(j);
      ds.targets[k] = sol.values(j, i);
      ds.group_of.push_back(static_cast<std::uint32_t>(g));
      ++k;
    }
  }
  ds.provenance["policy"] = policy.name();
  if (policy.kind == SamplingPolicy::RandomSubset) {
    ds.provenance["points_per_sample"] = policy.count;
    ds.provenance["subset_seed"] = policy.seed;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/manifest.json, records.bin (little-endian float64,
// per record: concatenated branch coordinates, y, s), groups.bin (uint32
// group id per record).
// ---------------------------------------------------------------------------

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  ds.check_consistent();
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {
      {"format", "mionet-dataset/1"},
      {"n", ds.num_branches()},
      {"q", ds.sensor_counts()},
      {"d", ds.query_dim()},
      {"record_count", static_cast<std::size_t>(ds.num_records())},
      {"group_count", static_cast<std::size_t>(ds.num_groups())},
      {"system", ds.system},
      {"provenance", ds.provenance},
  };
  {
    std::ofstream os(dir / "manifest.json");
    if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
  }
  {
    std::ofstream os(dir / "records.bin", std::ios::binary);
    if (!os) throw DataError("cannot write " + (dir / "records.bin").string());
    std::vector<double> row;
    for (Eigen::Index k = 0; k < ds.num_records(); ++k) {
      row.clear();
      const auto g = ds.group_of[static_cast<std::size_t>(k)];
      for (const auto& b : ds.branch_coords)
        for (Eigen::Index j = 0; j < b.cols(); ++j) row.push_back(b(g, j));
      for (Eigen::Index j = 0; j < ds.ys.cols(); ++j) row.push_back(ds.ys(k, j));
      row.push_back(ds.targets[k]);
      os.write(reinterpret_cast<const char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
  }
  {
    std::ofstream os(dir / "groups.bin", std::ios::binary);
    if (!os) throw DataError("cannot write " + (dir / "groups.bin").string());
    os.write(reinterpret_cast<const char*>(ds.group_of.data()),
             static_cast<std::streamsize>(ds.group_of.size() * sizeof(std::uint32_t)));
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw DataError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(ms);
  if (manifest.at("format") != "mionet-dataset/1")
    throw DataError("unexpected dataset format tag");

  Dataset ds;
  const int n = manifest.at("n").get<int>();
  const auto q = manifest.at("q").get<std::vector<int>>();
  const int d = manifest.at("d").get<int>();
  const auto records = manifest.at("record_count").get<std::size_t>();
  const auto groups = manifest.at("group_count").get<std::size_t>();
  ds.system = manifest.value("system", "custom");
  ds.provenance = manifest.value("provenance", nlohmann::json::object());

  ds.group_of.resize(records);
  {
    std::ifstream gs(dir / "groups.bin", std::ios::binary);
    if (!gs) throw DataError("cannot open " + (dir / "groups.bin").string());
    gs.read(reinterpret_cast<char*>(ds.group_of.data()),
            static_cast<std::streamsize>(records * sizeof(std::uint32_t)));
    if (!gs) throw DataError("groups.bin shorter than the manifest record count");
  }

  ds.branch_coords.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    ds.branch_coords[static_cast<std::size_t>(i)].resize(
        static_cast<Eigen::Index>(groups), q[static_cast<std::size_t>(i)]);
  ds.ys.resize(static_cast<Eigen::Index>(records), d);
  ds.targets.resize(static_cast<Eigen::Index>(records));

  std::size_t row_len = static_cast<std::size_t>(d) + 1;
  for (int qi : q) row_len += static_cast<std::size_t>(qi);
  std::vector<double> row(row_len);
  std::vector<char> seen(groups, 0);
  std::ifstream rs(dir / "records.bin", std::ios::binary);
  if (!rs) throw DataError("cannot open " + (dir / "records.bin").string());
  for (std::size_t k = 0; k < records; ++k) {
    rs.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row_len * sizeof(double)));
    if (!rs) throw DataError("records.bin shorter than the manifest record count");
    const std::uint32_t g = ds.group_of[k];
    if (g >= groups) throw DataError("group id out of range in groups.bin");
    std::size_t off = 0;
    if (!seen[g]) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < q[static_cast<std::size_t>(i)]; ++j)
          ds.branch_coords[static_cast<std::size_t>(i)](g, j) = row[off++];
      seen[g] = 1;
    } else {
      off = row_len - static_cast<std::size_t>(d) - 1;
    }
    for (int j = 0; j < d; ++j) ds.ys(static_cast<Eigen::Index>(k), j) = row[off++];
    ds.targets[static_cast<Eigen::Index>(k)] = row[off];
  }
  ds.check_consistent();
  return ds;
}

}  // namespace mionet
