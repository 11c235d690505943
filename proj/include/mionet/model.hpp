#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mionet/adam.hpp"
#include "mionet/errors.hpp"
#include "mionet/net.hpp"
#include "mionet/rng.hpp"
#include "mionet/tensor.hpp"

namespace mionet {

enum class ModelVariant { LowRank, HighRank, FiniteImage };
enum class TrunkFeatureMap { None, PeriodicK2 };

inline std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::LowRank: return "low_rank";
    case ModelVariant::HighRank: return "high_rank";
    case ModelVariant::FiniteImage: return "finite_image";
  }
  return "?";
}
inline ModelVariant variant_from_string(const std::string& s) {
  if (s == "low_rank") return ModelVariant::LowRank;
  if (s == "high_rank") return ModelVariant::HighRank;
  if (s == "finite_image") return ModelVariant::FiniteImage;
  throw ConfigError("unknown model variant '" + s + "'");
}
inline std::string to_string(TrunkFeatureMap m) {
  return m == TrunkFeatureMap::None ? "none" : "periodic_k2";
}
inline TrunkFeatureMap feature_map_from_string(const std::string& s) {
  if (s == "none") return TrunkFeatureMap::None;
  if (s == "periodic_k2") return TrunkFeatureMap::PeriodicK2;
  throw ConfigError("unknown trunk feature map '" + s + "'");
}

/// One branch network: encodes a q_i-dimensional input-function coordinate
/// vector into p_i features. A linear_no_bias branch is a single bias-free
/// affine layer (the structured option for operators linear in that input).
struct BranchSpec {
  std::vector<int> layer_sizes;
  bool linear_no_bias = false;
};

/// One trunk network: encodes (a group of) query-point coordinates into p
/// features. layer_sizes[0] is the dimension after the feature map.
struct TrunkSpec {
  std::vector<int> layer_sizes;
  TrunkFeatureMap feature_map = TrunkFeatureMap::None;
  bool final_activation = false;  // activation on the output layer (DeepONet trunks)
};

struct MIONetConfig {
  ModelVariant variant = ModelVariant::LowRank;
  std::vector<BranchSpec> branches;
  std::vector<TrunkSpec> trunks;
  /// Query-coordinate indices handled by each trunk. Empty means one trunk
  /// taking all coordinates (or no trunk at all when trunks is empty).
  std::vector<std::vector<int>> trunk_split;
  int query_dim = 1;           // d: raw dimension of y
  Activation activation = Activation::Relu;
  int image_basis_size = 0;    // m (finite_image only)

  int num_branches() const { return static_cast<int>(branches.size()); }
  int num_trunks() const { return static_cast<int>(trunks.size()); }

  /// Shared output width of the low-rank architecture.
  int rank() const { return branches.front().layer_sizes.back(); }

  std::vector<int> branch_ranks() const {
    std::vector<int> p;
    for (const auto& b : branches) p.push_back(b.layer_sizes.back());
    return p;
  }

  std::vector<std::vector<int>> effective_split() const {
    if (!trunk_split.empty()) return trunk_split;
    if (trunks.empty()) return {};
    std::vector<int> all(static_cast<std::size_t>(query_dim));
    std::iota(all.begin(), all.end(), 0);
    return {all};
  }

  int mapped_trunk_dim(int t) const {
    const auto split = effective_split();
    const int raw = static_cast<int>(split[static_cast<std::size_t>(t)].size());
    if (trunks[static_cast<std::size_t>(t)].feature_map == TrunkFeatureMap::PeriodicK2)
      return 4;  // cos/sin at frequencies 1 and 2
    return raw;
  }

  void validate() const {
    if (branches.empty()) throw ConfigError("config.branches: need at least one branch");
    for (std::size_t i = 0; i < branches.size(); ++i) {
      const auto& b = branches[i];
      const std::string name = "config.branches[" + std::to_string(i) + "]";
      if (b.layer_sizes.size() < 2) throw ConfigError(name + ".layer_sizes too short");
      if (b.linear_no_bias && b.layer_sizes.size() != 2)
        throw ConfigError(name + ": linear_no_bias branch must be a single layer");
    }
    if (query_dim < 0) throw ConfigError("config.query_dim must be >= 0");

    const auto split = effective_split();
    if (split.size() != trunks.size())
      throw ConfigError("config.trunk_split: " + std::to_string(split.size()) +
                        " groups for " + std::to_string(trunks.size()) + " trunks");
    std::vector<int> seen(static_cast<std::size_t>(query_dim), 0);
    for (const auto& group : split) {
      if (group.empty()) throw ConfigError("config.trunk_split: empty group");
      for (int c : group) {
        if (c < 0 || c >= query_dim)
          throw ConfigError("config.trunk_split: coordinate " + std::to_string(c) +
                            " out of range");
        if (seen[static_cast<std::size_t>(c)]++)
          throw ConfigError("config.trunk_split: coordinate " + std::to_string(c) +
                            " assigned twice");
      }
    }
    for (int c = 0; c < query_dim; ++c) {
      if (!trunks.empty() && !seen[static_cast<std::size_t>(c)])
        throw ConfigError("config.trunk_split: coordinate " + std::to_string(c) +
                          " not covered");
    }
    if (trunks.empty() && query_dim != 0)
      throw ConfigError("config.trunks: query_dim > 0 requires at least one trunk");

    for (std::size_t t = 0; t < trunks.size(); ++t) {
      const auto& tr = trunks[t];
      const std::string name = "config.trunks[" + std::to_string(t) + "]";
      if (tr.layer_sizes.size() < 2) throw ConfigError(name + ".layer_sizes too short");
      if (tr.feature_map == TrunkFeatureMap::PeriodicK2 &&
          split[t].size() != 1)
        throw ConfigError(name + ": periodic feature map needs a single coordinate");
      if (tr.layer_sizes.front() != mapped_trunk_dim(static_cast<int>(t)))
        throw ConfigError(name + ".layer_sizes[0] = " +
                          std::to_string(tr.layer_sizes.front()) +
                          " does not match its input dimension " +
                          std::to_string(mapped_trunk_dim(static_cast<int>(t))));
    }

    switch (variant) {
      case ModelVariant::LowRank: {
        const int p = rank();
        for (std::size_t i = 0; i < branches.size(); ++i)
          if (branches[i].layer_sizes.back() != p)
            throw ConfigError("config.branches[" + std::to_string(i) +
                              "]: output width " +
                              std::to_string(branches[i].layer_sizes.back()) +
                              " != shared rank " + std::to_string(p));
        for (std::size_t t = 0; t < trunks.size(); ++t)
          if (trunks[t].layer_sizes.back() != p)
            throw ConfigError("config.trunks[" + std::to_string(t) +
                              "]: output width " +
                              std::to_string(trunks[t].layer_sizes.back()) +
                              " != shared rank " + std::to_string(p));
        break;
      }
      case ModelVariant::HighRank: {
        if (trunks.size() != 1)
          throw ConfigError("config.trunks: high_rank variant uses exactly one trunk");
        long prod = 1;
        for (int p : branch_ranks()) prod *= p;
        if (trunks[0].layer_sizes.back() != prod)
          throw ConfigError("config.trunks[0]: output width must equal the product "
                            "of branch widths (" + std::to_string(prod) + ")");
        break;
      }
      case ModelVariant::FiniteImage: {
        if (!trunks.empty())
          throw ConfigError("config.trunks: finite_image variant has no trunk");
        if (query_dim != 0)
          throw ConfigError("config.query_dim: finite_image variant has no query point");
        if (image_basis_size < 1)
          throw ConfigError("config.image_basis_size must be >= 1");
        break;
      }
    }
  }
};

/// Periodic input features exp(i 2pi x), exp(i 4pi x) as cos/sin pairs; makes
/// every downstream output exactly 1-periodic in x.
inline Vec periodic_features(double x) {
  Vec f(4);
  f << std::cos(2.0 * M_PI * x), std::sin(2.0 * M_PI * x), std::cos(4.0 * M_PI * x),
      std::sin(4.0 * M_PI * x);
  return f;
}

struct MIONetModel {
  MIONetConfig config;
  std::vector<DenseNet> branch_nets;
  std::vector<DenseNet> trunk_nets;
  double bias = 0.0;
  Tensor image_tensor{std::vector<int>{1}};  // finite_image: shape (p_1..p_n, m)
  Vec image_bias;                            // finite_image: length m
  std::uint64_t build_seed = 0;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& net : branch_nets) n += net.parameter_count();
    for (const auto& net : trunk_nets) n += net.parameter_count();
    if (config.variant == ModelVariant::FiniteImage)
      n += image_tensor.size() + static_cast<std::size_t>(image_bias.size());
    else
      n += 1;  // scalar output bias
    return n;
  }

  std::vector<ParamBlock> param_blocks() {
    std::vector<ParamBlock> out;
    for (auto& net : branch_nets)
      for (auto b : net.param_blocks()) out.push_back(b);
    for (auto& net : trunk_nets)
      for (auto b : net.param_blocks()) out.push_back(b);
    if (config.variant == ModelVariant::FiniteImage) {
      out.push_back({image_tensor.data().data(), image_tensor.size()});
      out.push_back({image_bias.data(), static_cast<std::size_t>(image_bias.size())});
    } else {
      out.push_back({&bias, 1});
    }
    return out;
  }

  /// Maps the raw query point onto trunk t's network input.
  Vec trunk_input(int t, const Vec& y) const {
    const auto split = config.effective_split();
    const auto& group = split[static_cast<std::size_t>(t)];
    if (config.trunks[static_cast<std::size_t>(t)].feature_map ==
        TrunkFeatureMap::PeriodicK2)
      return periodic_features(y[group[0]]);
    Vec v(static_cast<Eigen::Index>(group.size()));
    for (std::size_t i = 0; i < group.size(); ++i) v[static_cast<Eigen::Index>(i)] = y[group[i]];
    return v;
  }
};

/// Builds and initializes a model (Glorot weights, zero biases, b = 0);
/// deterministic per seed.
inline MIONetModel build_model(const MIONetConfig& config, std::uint64_t seed) {
  config.validate();
  MIONetModel model;
  model.config = config;
  model.build_seed = seed;
  std::uint64_t net_index = 0;
  for (const auto& spec : config.branches) {
    if (spec.linear_no_bias) {
      model.branch_nets.push_back(init_glorot(spec.layer_sizes, Activation::Identity,
                                              true, mix_seed(seed, net_index++), {0}));
    } else {
      model.branch_nets.push_back(init_glorot(spec.layer_sizes, config.activation, true,
                                              mix_seed(seed, net_index++)));
    }
  }
  for (const auto& spec : config.trunks) {
    model.trunk_nets.push_back(init_glorot(spec.layer_sizes, config.activation,
                                           !spec.final_activation,
                                           mix_seed(seed, net_index++)));
  }
  if (config.variant == ModelVariant::FiniteImage) {
    std::vector<int> shape = config.branch_ranks();
    shape.push_back(config.image_basis_size);
    model.image_tensor = Tensor(shape);
    long fan_in = 1;
    for (int p : config.branch_ranks()) fan_in *= p;
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + config.image_basis_size));
    Rng rng(mix_seed(seed, net_index++));
    for (double& w : model.image_tensor.data()) w = r * (2.0 * rng.uniform() - 1.0);
    model.image_bias = Vec::Zero(config.image_basis_size);
  }
  return model;
}

namespace detail {

inline void check_branch_coords(const MIONetModel& model, const std::vector<Vec>& coords) {
  if (static_cast<int>(coords.size()) != model.config.num_branches())
    throw DimensionError("expected " + std::to_string(model.config.num_branches()) +
                         " branch inputs, got " + std::to_string(coords.size()));
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i].size() != model.branch_nets[i].input_dim())
      throw DimensionError("branch " + std::to_string(i) + ": input length " +
                           std::to_string(coords[i].size()) + " != " +
                           std::to_string(model.branch_nets[i].input_dim()));
  }
}

inline void check_query(const MIONetModel& model, const Vec& y) {
  if (y.size() != model.config.query_dim)
    throw DimensionError("query point has dimension " + std::to_string(y.size()) +
                         ", model expects " + std::to_string(model.config.query_dim));
}

}  // namespace detail

/// Low-rank forward: S(g_1 (.) ... (.) g_n (.) f_1(y) (.) ... ) + b.
inline double forward_lowrank(const MIONetModel& model, const std::vector<Vec>& coords,
                              const Vec& y) {
  if (model.config.variant != ModelVariant::LowRank)
    throw UsageError("forward_lowrank called on a " + to_string(model.config.variant) +
                     " model");
  detail::check_branch_coords(model, coords);
  detail::check_query(model, y);
  std::vector<Vec> factors;
  factors.reserve(coords.size() + model.trunk_nets.size());
  for (std::size_t i = 0; i < coords.size(); ++i)
    factors.push_back(forward(model.branch_nets[i], coords[i]));
  for (std::size_t t = 0; t < model.trunk_nets.size(); ++t)
    factors.push_back(forward(model.trunk_nets[t],
                              model.trunk_input(static_cast<int>(t), y)));
  return hadamard_sum(factors) + model.bias;
}

/// High-rank forward: the trunk output, reshaped to (p_1, ..., p_n), is
/// contracted multilinearly against the branch outputs.
inline double forward_highrank(const MIONetModel& model, const std::vector<Vec>& coords,
                               const Vec& y) {
  if (model.config.variant != ModelVariant::HighRank)
    throw UsageError("forward_highrank called on a " + to_string(model.config.variant) +
                     " model");
  detail::check_branch_coords(model, coords);
  detail::check_query(model, y);
  std::vector<Vec> alphas;
  alphas.reserve(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i)
    alphas.push_back(forward(model.branch_nets[i], coords[i]));
  const Vec trunk_out = forward(model.trunk_nets[0], model.trunk_input(0, y));
  Tensor w(model.config.branch_ranks(),
           std::vector<double>(trunk_out.data(), trunk_out.data() + trunk_out.size()));
  return contract_multilinear(w, alphas) + model.bias;
}

/// Finite-image forward: coefficient i of the output expansion is
/// W_i<g_1, ..., g_n> + b_i. Reconstruction uses the nodal hat basis on an
/// m-point grid, so the coefficients are the predicted function values there.
inline Vec forward_finite_image(const MIONetModel& model, const std::vector<Vec>& coords) {
  if (model.config.variant != ModelVariant::FiniteImage)
    throw UsageError("forward_finite_image called on a " +
                     to_string(model.config.variant) + " model");
  detail::check_branch_coords(model, coords);
  std::vector<Vec> alphas;
  alphas.reserve(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i)
    alphas.push_back(forward(model.branch_nets[i], coords[i]));
  return contract_to_vector(model.image_tensor, alphas) + model.image_bias;
}

// ---------------------------------------------------------------------------
// Batched evaluation/differentiation of the low-rank architecture.
//
// A batch references G unique input-function tuples and, per trunk, a table of
// unique (feature-mapped) query rows; every record selects one row from each
// table. When the records enumerate the full G x U grid in row-major order
// (one trunk), the combination collapses to dense matrix products.
// ---------------------------------------------------------------------------

struct ModelBatch {
  std::vector<RowMat> branch_inputs;                 // per branch: G x q_i
  std::vector<RowMat> trunk_raw;                     // per trunk: U_t x |group| raw coords
  std::vector<std::vector<std::uint32_t>> trunk_row; // per trunk: record -> row
  std::vector<std::uint32_t> group_of;               // record -> function tuple
  bool complete_grid = false;

  Eigen::Index num_records() const {
    return static_cast<Eigen::Index>(group_of.size());
  }
  Eigen::Index num_groups() const {
    return branch_inputs.empty() ? 0 : branch_inputs.front().rows();
  }
};

/// Gradients for every trainable piece of a model, in param_blocks() order.
struct ModelGrads {
  std::vector<NetGrads> branch;
  std::vector<NetGrads> trunk;
  double dbias = 0.0;
  Tensor dimage_tensor{std::vector<int>{1}};
  Vec dimage_bias;

  void init_like(const MIONetModel& model) {
    branch.resize(model.branch_nets.size());
    trunk.resize(model.trunk_nets.size());
    for (std::size_t i = 0; i < branch.size(); ++i) branch[i].init_like(model.branch_nets[i]);
    for (std::size_t t = 0; t < trunk.size(); ++t) trunk[t].init_like(model.trunk_nets[t]);
    if (model.config.variant == ModelVariant::FiniteImage) {
      dimage_tensor = Tensor(model.image_tensor.shape());
      dimage_bias = Vec::Zero(model.image_bias.size());
    }
  }

  std::vector<ParamBlock> param_blocks(const MIONetModel& model) {
    std::vector<ParamBlock> out;
    for (std::size_t i = 0; i < branch.size(); ++i)
      for (auto b : branch[i].param_blocks(model.branch_nets[i])) out.push_back(b);
    for (std::size_t t = 0; t < trunk.size(); ++t)
      for (auto b : trunk[t].param_blocks(model.trunk_nets[t])) out.push_back(b);
    if (model.config.variant == ModelVariant::FiniteImage) {
      out.push_back({dimage_tensor.data().data(), dimage_tensor.size()});
      out.push_back({dimage_bias.data(), static_cast<std::size_t>(dimage_bias.size())});
    } else {
      out.push_back({&dbias, 1});
    }
    return out;
  }
};

/// Applies a trunk's feature map to a table of raw coordinate rows.
inline RowMat map_trunk_features(const MIONetConfig& config, int t, const RowMat& raw) {
  if (config.trunks[static_cast<std::size_t>(t)].feature_map == TrunkFeatureMap::None)
    return raw;
  RowMat mapped(raw.rows(), 4);
  for (Eigen::Index r = 0; r < raw.rows(); ++r)
    mapped.row(r) = periodic_features(raw(r, 0)).transpose();
  return mapped;
}

class LowRankEngine {
 public:
  /// Forward pass over a batch; returns predictions per record.
  const Vec& forward(const MIONetModel& model, const ModelBatch& batch) {
    const std::size_t n = model.branch_nets.size();
    const std::size_t m = model.trunk_nets.size();
    branch_cache_.resize(n);
    trunk_cache_.resize(m);
    factors_.clear();
    for (std::size_t i = 0; i < n; ++i)
      factors_.push_back(&forward_batch(model.branch_nets[i], batch.branch_inputs[i],
                                        branch_cache_[i]));
    mapped_trunk_.resize(m);
    for (std::size_t t = 0; t < m; ++t) {
      mapped_trunk_[t] = map_trunk_features(model.config, static_cast<int>(t),
                                            batch.trunk_raw[t]);
      factors_.push_back(&forward_batch(model.trunk_nets[t], mapped_trunk_[t],
                                        trunk_cache_[t]));
    }

    const Eigen::Index records = batch.num_records();
    preds_.resize(records);

    if (batch.complete_grid) {
      hadamard_prefix_over_branches(model);
      const RowMat& trunk_a = *factors_[n];
      grid_pred_.noalias() = branch_prod_ * trunk_a.transpose();
      Eigen::Map<RowMat>(preds_.data(), batch.num_groups(), trunk_a.rows()) = grid_pred_;
      preds_.array() += model.bias;
      return preds_;
    }

    const Eigen::Index p = factors_.front()->cols();
    work_.resize(p);
    for (Eigen::Index k = 0; k < records; ++k) {
      work_ = factors_[0]->row(batch.group_of[static_cast<std::size_t>(k)]).transpose().array();
      for (std::size_t i = 1; i < n; ++i)
        work_ *= factors_[i]->row(batch.group_of[static_cast<std::size_t>(k)]).transpose().array();
      for (std::size_t t = 0; t < m; ++t)
        work_ *=
            factors_[n + t]->row(batch.trunk_row[t][static_cast<std::size_t>(k)]).transpose().array();
      preds_[k] = work_.sum() + model.bias;
    }
    return preds_;
  }

  /// Reverse pass: `dpred` is dLoss/dPrediction per record. Overwrites grads.
  void backward(const MIONetModel& model, const ModelBatch& batch, const Vec& dpred,
                ModelGrads& grads) {
    const std::size_t n = model.branch_nets.size();
    const std::size_t m = model.trunk_nets.size();
    const Eigen::Index p = factors_.front()->cols();

    dfactor_.resize(n + m);
    for (std::size_t i = 0; i < n; ++i)
      dfactor_[i].setZero(batch.branch_inputs[i].rows(), p);
    for (std::size_t t = 0; t < m; ++t)
      dfactor_[n + t].setZero(batch.trunk_raw[t].rows(), p);

    if (batch.complete_grid) {
      const Eigen::Index groups = batch.num_groups();
      const RowMat& trunk_a = *factors_[n];
      Eigen::Map<const RowMat> dgrid(dpred.data(), groups, trunk_a.rows());
      dfactor_[n].noalias() = dgrid.transpose() * branch_prod_;
      dbranch_prod_.noalias() = dgrid * trunk_a;
      scale_by_cofactors(n);
    } else {
      const Eigen::Index records = batch.num_records();
      prefix_.resize(n + m + 1);
      prefix_[0] = Eigen::ArrayXd::Ones(p);
      Eigen::ArrayXd suffix(p);
      std::vector<Eigen::Index> rows(n + m);
      for (Eigen::Index k = 0; k < records; ++k) {
        const double dk = dpred[k];
        if (dk == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i)
          rows[i] = batch.group_of[static_cast<std::size_t>(k)];
        for (std::size_t t = 0; t < m; ++t)
          rows[n + t] = batch.trunk_row[t][static_cast<std::size_t>(k)];
        for (std::size_t f = 0; f < n + m; ++f)
          prefix_[f + 1] = prefix_[f] * factors_[f]->row(rows[f]).transpose().array();
        suffix.setConstant(dk);
        for (std::size_t f = n + m; f-- > 0;) {
          dfactor_[f].row(rows[f]).transpose().array() += prefix_[f] * suffix;
          suffix *= factors_[f]->row(rows[f]).transpose().array();
        }
      }
    }

    grads.branch.resize(n);
    grads.trunk.resize(m);
    for (std::size_t i = 0; i < n; ++i)
      backward_batch(model.branch_nets[i], branch_cache_[i], dfactor_[i], grads.branch[i]);
    for (std::size_t t = 0; t < m; ++t)
      backward_batch(model.trunk_nets[t], trunk_cache_[t], dfactor_[n + t], grads.trunk[t]);
    grads.dbias = dpred.sum();
  }

  const Vec& predictions() const { return preds_; }

 private:
  // Product of all branch activations (complete-grid path), with per-branch
  // cofactor products for the backward pass.
  void hadamard_prefix_over_branches(const MIONetModel& model) {
    const std::size_t n = model.branch_nets.size();
    branch_prod_ = *factors_[0];
    for (std::size_t i = 1; i < n; ++i) branch_prod_.array() *= factors_[i]->array();
  }

  void scale_by_cofactors(std::size_t n) {
    // dA_i = dH (.) prod_{i' != i} A_{i'}, via prefix/suffix products.
    gprefix_.resize(n + 1);
    gprefix_[0] = RowMat::Ones(dbranch_prod_.rows(), dbranch_prod_.cols());
    for (std::size_t i = 0; i < n; ++i) {
      gprefix_[i + 1] = gprefix_[i];
      gprefix_[i + 1].array() *= factors_[i]->array();
    }
    RowMat suffix = dbranch_prod_;
    for (std::size_t i = n; i-- > 0;) {
      dfactor_[i] = gprefix_[i];
      dfactor_[i].array() *= suffix.array();
      if (i > 0) suffix.array() *= factors_[i]->array();
    }
  }

  std::vector<ForwardCache> branch_cache_, trunk_cache_;
  std::vector<const RowMat*> factors_;
  std::vector<RowMat> mapped_trunk_;
  std::vector<RowMat> dfactor_;
  std::vector<RowMat> gprefix_;
  RowMat branch_prod_, dbranch_prod_, grid_pred_;
  std::vector<Eigen::ArrayXd> prefix_;
  Eigen::ArrayXd work_;
  Vec preds_;
};

/// Spec-level batched reverse pass for the low-rank model: one record per row
/// of coordinates/query points, upstream = dLoss/dPrediction per record.
inline ModelGrads model_backward(const MIONetModel& model,
                                 const std::vector<std::vector<Vec>>& branch_coords,
                                 const std::vector<Vec>& ys, const Vec& upstream) {
  if (branch_coords.empty()) throw DimensionError("model_backward: empty batch");
  if (static_cast<Eigen::Index>(branch_coords.size()) != upstream.size() ||
      (model.config.query_dim > 0 && branch_coords.size() != ys.size()))
    throw DimensionError("model_backward: batch size mismatch");

  const int n = model.config.num_branches();
  const int m = model.config.num_trunks();
  const auto split = model.config.effective_split();
  ModelBatch batch;
  const Eigen::Index records = static_cast<Eigen::Index>(branch_coords.size());
  batch.branch_inputs.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    batch.branch_inputs[static_cast<std::size_t>(i)].resize(
        records, model.branch_nets[static_cast<std::size_t>(i)].input_dim());
    for (Eigen::Index k = 0; k < records; ++k)
      batch.branch_inputs[static_cast<std::size_t>(i)].row(k) =
          branch_coords[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].transpose();
  }
  batch.trunk_raw.resize(static_cast<std::size_t>(m));
  batch.trunk_row.resize(static_cast<std::size_t>(m));
  for (int t = 0; t < m; ++t) {
    const auto& group = split[static_cast<std::size_t>(t)];
    batch.trunk_raw[static_cast<std::size_t>(t)].resize(records,
                                                        static_cast<Eigen::Index>(group.size()));
    batch.trunk_row[static_cast<std::size_t>(t)].resize(static_cast<std::size_t>(records));
    for (Eigen::Index k = 0; k < records; ++k) {
      for (std::size_t c = 0; c < group.size(); ++c)
        batch.trunk_raw[static_cast<std::size_t>(t)](k, static_cast<Eigen::Index>(c)) =
            ys[static_cast<std::size_t>(k)][group[c]];
      batch.trunk_row[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
          static_cast<std::uint32_t>(k);
    }
  }
  batch.group_of.resize(static_cast<std::size_t>(records));
  for (Eigen::Index k = 0; k < records; ++k)
    batch.group_of[static_cast<std::size_t>(k)] = static_cast<std::uint32_t>(k);

  LowRankEngine engine;
  engine.forward(model, batch);
  ModelGrads grads;
  grads.init_like(model);
  engine.backward(model, batch, upstream, grads);
  return grads;
}

// ---------------------------------------------------------------------------
// Model checkpoints: a JSON header line (format tag, config, seed, bias),
// followed by each network's checkpoint, followed by the image-space tensor
// and bias for finite_image models.
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const BranchSpec& b) {
  j = {{"layer_sizes", b.layer_sizes}, {"linear_no_bias", b.linear_no_bias}};
}
inline void from_json(const nlohmann::json& j, BranchSpec& b) {
  j.at("layer_sizes").get_to(b.layer_sizes);
  b.linear_no_bias = j.value("linear_no_bias", false);
}
inline void to_json(nlohmann::json& j, const TrunkSpec& t) {
  j = {{"layer_sizes", t.layer_sizes},
       {"feature_map", to_string(t.feature_map)},
       {"final_activation", t.final_activation}};
}
inline void from_json(const nlohmann::json& j, TrunkSpec& t) {
  j.at("layer_sizes").get_to(t.layer_sizes);
  t.feature_map = feature_map_from_string(j.value("feature_map", std::string("none")));
  t.final_activation = j.value("final_activation", false);
}
inline void to_json(nlohmann::json& j, const MIONetConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"branches", c.branches},
       {"trunks", c.trunks},
       {"trunk_split", c.trunk_split},
       {"query_dim", c.query_dim},
       {"activation", to_string(c.activation)},
       {"image_basis_size", c.image_basis_size}};
}
inline void from_json(const nlohmann::json& j, MIONetConfig& c) {
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  j.at("branches").get_to(c.branches);
  c.trunks = j.value("trunks", std::vector<TrunkSpec>{});
  c.trunk_split = j.value("trunk_split", std::vector<std::vector<int>>{});
  c.query_dim = j.at("query_dim").get<int>();
  c.activation = activation_from_string(j.value("activation", std::string("relu")));
  c.image_basis_size = j.value("image_basis_size", 0);
}

inline void write_model(std::ostream& os, const MIONetModel& model) {
  nlohmann::json header = {{"format", "mionet-model/1"},
                           {"config", model.config},
                           {"seed", model.build_seed},
                           {"bias", model.bias}};
  os << header.dump() << '\n';
  for (const auto& net : model.branch_nets) write_net(os, net);
  for (const auto& net : model.trunk_nets) write_net(os, net);
  if (model.config.variant == ModelVariant::FiniteImage) {
    os.write(reinterpret_cast<const char*>(model.image_tensor.data().data()),
             static_cast<std::streamsize>(model.image_tensor.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(model.image_bias.data()),
             static_cast<std::streamsize>(static_cast<std::size_t>(model.image_bias.size()) *
                                          sizeof(double)));
  }
}

inline MIONetModel read_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("truncated model checkpoint header");
  nlohmann::json header = nlohmann::json::parse(line);
  if (header.at("format") != "mionet-model/1")
    throw DataError("unexpected model checkpoint format tag");
  MIONetModel model = build_model(header.at("config").get<MIONetConfig>(),
                                  header.at("seed").get<std::uint64_t>());
  model.bias = header.at("bias").get<double>();
  for (auto& net : model.branch_nets) net = read_net(is);
  for (auto& net : model.trunk_nets) net = read_net(is);
  if (model.config.variant == ModelVariant::FiniteImage) {
    is.read(reinterpret_cast<char*>(model.image_tensor.data().data()),
            static_cast<std::streamsize>(model.image_tensor.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(model.image_bias.data()),
            static_cast<std::streamsize>(static_cast<std::size_t>(model.image_bias.size()) *
                                         sizeof(double)));
    if (!is) throw DataError("truncated finite-image parameter block");
  }
  return model;
}

inline void save_model(const std::string& path, const MIONetModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_model(os, model);
}

inline MIONetModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_model(is);
}

}  // namespace mionet
