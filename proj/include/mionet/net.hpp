#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mionet/errors.hpp"
#include "mionet/rng.hpp"
#include "mionet/tensor.hpp"

namespace mionet {

enum class Activation { Relu, Identity };

inline std::string to_string(Activation a) {
  return a == Activation::Relu ? "relu" : "identity";
}
inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + s + "'");
}

/// A contiguous block of trainable parameters (used to iterate a model's
/// parameters in a fixed, serialization-compatible order).
struct ParamBlock {
  double* data = nullptr;
  std::size_t size = 0;
};

/// Fully-connected network. Layer k maps d_{k-1} -> d_k through an affine map
/// followed by the activation; when final_linear is set the last layer stays
/// affine. Weights are stored row-major (output-neuron major), which is also
/// the checkpoint layout.
class DenseNet {
 public:
  std::vector<int> layer_sizes;       // d_0 .. d_L
  std::vector<RowMat> weights;        // layer k: d_k x d_{k-1}
  std::vector<Vec> biases;            // empty vector when the layer has no bias
  std::vector<std::uint8_t> use_bias; // per layer
  Activation activation = Activation::Relu;
  bool final_linear = true;
  std::uint64_t init_seed = 0;

  int num_layers() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int k = 0; k < num_layers(); ++k) {
      n += static_cast<std::size_t>(weights[k].size());
      if (use_bias[k]) n += static_cast<std::size_t>(biases[k].size());
    }
    return n;
  }

  /// Parameter blocks in checkpoint order: layer-major, weights then bias.
  std::vector<ParamBlock> param_blocks() {
    std::vector<ParamBlock> out;
    for (int k = 0; k < num_layers(); ++k) {
      out.push_back({weights[k].data(), static_cast<std::size_t>(weights[k].size())});
      if (use_bias[k])
        out.push_back({biases[k].data(), static_cast<std::size_t>(biases[k].size())});
    }
    return out;
  }
};

/// Glorot-uniform initialization: weights uniform on +-sqrt(6/(fan_in+fan_out)),
/// biases zero. Bit-reproducible for a given seed (per-layer substreams).
inline DenseNet init_glorot(std::vector<int> layer_sizes, Activation act,
                            bool final_linear, std::uint64_t seed,
                            std::vector<std::uint8_t> use_bias = {}) {
  if (layer_sizes.size() < 2)
    throw ConfigError("layer_sizes needs at least input and output entries");
  for (std::size_t i = 0; i < layer_sizes.size(); ++i) {
    if (layer_sizes[i] < 1)
      throw ConfigError("layer_sizes[" + std::to_string(i) + "] must be >= 1");
  }
  const int layers = static_cast<int>(layer_sizes.size()) - 1;
  if (use_bias.empty()) use_bias.assign(static_cast<std::size_t>(layers), 1);
  if (static_cast<int>(use_bias.size()) != layers)
    throw ConfigError("use_bias length does not match layer count");

  DenseNet net;
  net.layer_sizes = std::move(layer_sizes);
  net.activation = act;
  net.final_linear = final_linear;
  net.use_bias = std::move(use_bias);
  net.init_seed = seed;
  net.weights.resize(static_cast<std::size_t>(layers));
  net.biases.resize(static_cast<std::size_t>(layers));
  for (int k = 0; k < layers; ++k) {
    const int fan_in = net.layer_sizes[static_cast<std::size_t>(k)];
    const int fan_out = net.layer_sizes[static_cast<std::size_t>(k) + 1];
    const double r = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    RowMat& w = net.weights[static_cast<std::size_t>(k)];
    w.resize(fan_out, fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = r * (2.0 * rng.uniform() - 1.0);
    if (net.use_bias[static_cast<std::size_t>(k)])
      net.biases[static_cast<std::size_t>(k)] = Vec::Zero(fan_out);
  }
  return net;
}

/// Per-layer activations retained by the batched forward pass for reuse in
/// backward. a[0] is the input batch, a[k+1] the output of layer k.
struct ForwardCache {
  std::vector<RowMat> a;
};

namespace detail {

inline void apply_activation(RowMat& z, Activation act) {
  if (act == Activation::Relu) z = z.cwiseMax(0.0);
}

}  // namespace detail

/// Batched forward pass: rows of x are samples. Returns a reference to the
/// output activations held by the cache.
inline const RowMat& forward_batch(const DenseNet& net, const RowMat& x,
                                   ForwardCache& cache) {
  if (x.cols() != net.input_dim())
    throw DimensionError("forward: input has " + std::to_string(x.cols()) +
                         " columns, network expects " + std::to_string(net.input_dim()));
  const int layers = net.num_layers();
  cache.a.resize(static_cast<std::size_t>(layers) + 1);
  cache.a[0] = x;
  for (int k = 0; k < layers; ++k) {
    RowMat& z = cache.a[static_cast<std::size_t>(k) + 1];
    z.noalias() = cache.a[static_cast<std::size_t>(k)] * net.weights[static_cast<std::size_t>(k)].transpose();
    if (net.use_bias[static_cast<std::size_t>(k)])
      z.rowwise() += net.biases[static_cast<std::size_t>(k)].transpose();
    const bool last = (k == layers - 1);
    if (!(last && net.final_linear)) detail::apply_activation(z, net.activation);
  }
  return cache.a.back();
}

/// Single-sample forward pass.
inline Vec forward(const DenseNet& net, const Vec& x) {
  if (x.size() != net.input_dim())
    throw DimensionError("forward: input length " + std::to_string(x.size()) +
                         ", network expects " + std::to_string(net.input_dim()));
  Vec a = x;
  const int layers = net.num_layers();
  for (int k = 0; k < layers; ++k) {
    Vec z = net.weights[static_cast<std::size_t>(k)] * a;
    if (net.use_bias[static_cast<std::size_t>(k)]) z += net.biases[static_cast<std::size_t>(k)];
    const bool last = (k == layers - 1);
    if (!(last && net.final_linear) && net.activation == Activation::Relu)
      z = z.cwiseMax(0.0);
    a.swap(z);
  }
  return a;
}

/// Parameter gradients mirroring a DenseNet, plus the gradient with respect to
/// the input batch when requested.
struct NetGrads {
  std::vector<RowMat> dw;
  std::vector<Vec> db;
  RowMat dx;           // filled only when input gradients are requested
  bool has_dx = false;

  void init_like(const DenseNet& net) {
    const int layers = net.num_layers();
    dw.resize(static_cast<std::size_t>(layers));
    db.resize(static_cast<std::size_t>(layers));
    for (int k = 0; k < layers; ++k) {
      dw[static_cast<std::size_t>(k)].setZero(net.weights[static_cast<std::size_t>(k)].rows(),
                                              net.weights[static_cast<std::size_t>(k)].cols());
      if (net.use_bias[static_cast<std::size_t>(k)])
        db[static_cast<std::size_t>(k)] = Vec::Zero(net.biases[static_cast<std::size_t>(k)].size());
    }
  }

  std::vector<ParamBlock> param_blocks(const DenseNet& net) {
    std::vector<ParamBlock> out;
    for (int k = 0; k < net.num_layers(); ++k) {
      out.push_back({dw[static_cast<std::size_t>(k)].data(),
                     static_cast<std::size_t>(dw[static_cast<std::size_t>(k)].size())});
      if (net.use_bias[static_cast<std::size_t>(k)])
        out.push_back({db[static_cast<std::size_t>(k)].data(),
                       static_cast<std::size_t>(db[static_cast<std::size_t>(k)].size())});
    }
    return out;
  }
};

/// Reverse-mode pass over a batch. `upstream` holds dLoss/dOutput per sample
/// (accumulated across the batch into parameter gradients; ReLU subgradient at
/// zero is taken as zero). Overwrites `grads`.
inline void backward_batch(const DenseNet& net, const ForwardCache& cache,
                           const RowMat& upstream, NetGrads& grads,
                           bool want_input_grads = false) {
  const int layers = net.num_layers();
  if (cache.a.size() != static_cast<std::size_t>(layers) + 1)
    throw DimensionError("backward: cache does not match a prior forward pass");
  if (upstream.rows() != cache.a[0].rows() || upstream.cols() != net.output_dim())
    throw DimensionError("backward: upstream gradient shape mismatch");
  if (upstream.rows() == 0) throw DimensionError("backward: empty batch");

  grads.dw.resize(static_cast<std::size_t>(layers));
  grads.db.resize(static_cast<std::size_t>(layers));

  RowMat dz = upstream;
  if (!net.final_linear && net.activation == Activation::Relu) {
    dz.array() *= (cache.a[static_cast<std::size_t>(layers)].array() > 0.0).cast<double>();
  }
  for (int k = layers - 1; k >= 0; --k) {
    const RowMat& a_prev = cache.a[static_cast<std::size_t>(k)];
    grads.dw[static_cast<std::size_t>(k)].noalias() = dz.transpose() * a_prev;
    if (net.use_bias[static_cast<std::size_t>(k)])
      grads.db[static_cast<std::size_t>(k)] = dz.colwise().sum().transpose();
    if (k > 0) {
      RowMat da;
      da.noalias() = dz * net.weights[static_cast<std::size_t>(k)];
      if (net.activation == Activation::Relu)
        da.array() *= (cache.a[static_cast<std::size_t>(k)].array() > 0.0).cast<double>();
      dz.swap(da);
    } else if (want_input_grads) {
      grads.dx.noalias() = dz * net.weights[0];
      grads.has_dx = true;
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint format: one line of compact JSON (layer sizes, flags, seed)
// followed by the raw little-endian float64 parameter block, layer-major,
// weights before bias, weights row-major.
// ---------------------------------------------------------------------------

inline nlohmann::json net_header_json(const DenseNet& net) {
  return nlohmann::json{{"format", "mionet-net/1"},
                        {"layer_sizes", net.layer_sizes},
                        {"activation", to_string(net.activation)},
                        {"final_linear", net.final_linear},
                        {"use_bias", net.use_bias},
                        {"seed", net.init_seed}};
}

inline void write_net(std::ostream& os, const DenseNet& net) {
  os << net_header_json(net).dump() << '\n';
  DenseNet& mut = const_cast<DenseNet&>(net);
  for (const ParamBlock& b : mut.param_blocks())
    os.write(reinterpret_cast<const char*>(b.data),
             static_cast<std::streamsize>(b.size * sizeof(double)));
}

inline DenseNet read_net(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("truncated network checkpoint header");
  nlohmann::json h = nlohmann::json::parse(line);
  if (h.at("format") != "mionet-net/1")
    throw DataError("unexpected checkpoint format tag");
  DenseNet net = init_glorot(h.at("layer_sizes").get<std::vector<int>>(),
                             activation_from_string(h.at("activation")),
                             h.at("final_linear").get<bool>(),
                             h.at("seed").get<std::uint64_t>(),
                             h.at("use_bias").get<std::vector<std::uint8_t>>());
  for (const ParamBlock& b : net.param_blocks()) {
    is.read(reinterpret_cast<char*>(b.data),
            static_cast<std::streamsize>(b.size * sizeof(double)));
    if (!is) throw DataError("truncated network parameter block");
  }
  return net;
}

inline void save_net(const std::string& path, const DenseNet& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_net(os, net);
}

inline DenseNet load_net(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_net(is);
}

}  // namespace mionet
