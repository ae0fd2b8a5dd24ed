#pragma once

// Dense multilayer perceptrons with exact reverse-mode gradients, Adam, and
// Polyak averaging. Batches are column-major: one sample per column.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsr/error.hpp"
#include "nsr/rng.hpp"

namespace nsr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class OutputActivation { identity, tanh };

inline std::string to_string(OutputActivation a) {
  return a == OutputActivation::tanh ? "tanh" : "identity";
}

inline OutputActivation output_activation_from_string(const std::string& s) {
  if (s == "identity") return OutputActivation::identity;
  if (s == "tanh") return OutputActivation::tanh;
  throw InvalidArgument("unknown output activation '" + s + "'");
}

struct AdamState {
  std::vector<Matrix> m_weights, v_weights;
  std::vector<Vector> m_biases, v_biases;
  std::uint64_t step = 0;
};

// Parameters of an MLP with ReLU hidden layers. weights[i] maps layer i to
// layer i+1 and has shape (layer_dims[i+1], layer_dims[i]).
struct Network {
  std::vector<int> layer_dims;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  OutputActivation output_activation = OutputActivation::identity;
  AdamState opt;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return weights.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
    return n;
  }
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static Gradients zeros_like(const Network& net) {
    Gradients g;
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
      g.weights.push_back(Matrix::Zero(net.weights[i].rows(), net.weights[i].cols()));
      g.biases.push_back(Vector::Zero(net.biases[i].size()));
    }
    return g;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
    return n;
  }

  // Flattened view in the checkpoint order: per layer, W row-major then b.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights[l].cols(); ++c) out.push_back(weights[l](r, c));
      for (Eigen::Index r = 0; r < biases[l].size(); ++r) out.push_back(biases[l](r));
    }
    return out;
  }
};

namespace detail {

inline void check_congruent(const Network& net, const Gradients& g, const char* op) {
  bool ok = g.weights.size() == net.num_layers() && g.biases.size() == net.num_layers();
  for (std::size_t i = 0; ok && i < net.num_layers(); ++i) {
    ok = g.weights[i].rows() == net.weights[i].rows() &&
         g.weights[i].cols() == net.weights[i].cols() &&
         g.biases[i].size() == net.biases[i].size();
  }
  if (!ok) throw InvalidArgument(std::string(op) + ": gradient shapes do not match network");
}

inline void check_congruent(const Network& a, const Network& b, const char* op) {
  if (a.layer_dims != b.layer_dims)
    throw InvalidArgument(std::string(op) + ": networks have different layer dims");
}

inline void ensure_adam_state(Network& net) {
  auto& o = net.opt;
  if (o.m_weights.size() == net.num_layers()) return;
  o.m_weights.clear();
  o.v_weights.clear();
  o.m_biases.clear();
  o.v_biases.clear();
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    o.m_weights.push_back(Matrix::Zero(net.weights[i].rows(), net.weights[i].cols()));
    o.v_weights.push_back(Matrix::Zero(net.weights[i].rows(), net.weights[i].cols()));
    o.m_biases.push_back(Vector::Zero(net.biases[i].size()));
    o.v_biases.push_back(Vector::Zero(net.biases[i].size()));
  }
}

}  // namespace detail

// Weights and biases are drawn uniformly from +-1/sqrt(fan_in), layer by
// layer, weights row-major before biases. Adam moments start at zero.
inline Network mlp_init(const std::vector<int>& layer_dims, std::uint64_t seed,
                        OutputActivation output_activation = OutputActivation::identity) {
  if (layer_dims.size() < 2) throw InvalidArgument("mlp_init: need at least two layer dims");
  for (int d : layer_dims)
    if (d < 1) throw InvalidArgument("mlp_init: layer dims must be >= 1");

  Network net;
  net.layer_dims = layer_dims;
  net.output_activation = output_activation;
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    const int in = layer_dims[i];
    const int out = layer_dims[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix w(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-bound, bound);
    Vector b(out);
    for (int r = 0; r < out; ++r) b(r) = rng.uniform(-bound, bound);
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  detail::ensure_adam_state(net);
  return net;
}

// Activations of every layer, kept for the backward pass.
struct ForwardCache {
  std::vector<Matrix> activations;  // [0] is the input, back() the output
  std::vector<Matrix> preactivations;

  const Matrix& output() const { return activations.back(); }
};

inline ForwardCache forward_cached(const Network& net, const Matrix& inputs) {
  if (inputs.rows() != net.input_dim())
    throw InvalidArgument("forward: input has " + std::to_string(inputs.rows()) +
                          " rows, network expects " + std::to_string(net.input_dim()));
  ForwardCache cache;
  cache.activations.reserve(net.num_layers() + 1);
  cache.preactivations.reserve(net.num_layers());
  cache.activations.push_back(inputs);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Matrix z = net.weights[l] * cache.activations.back();
    z.colwise() += net.biases[l];
    Matrix a;
    if (l + 1 < net.num_layers()) {
      a = z.cwiseMax(0.0);
    } else if (net.output_activation == OutputActivation::tanh) {
      a = z.array().tanh().matrix();
    } else {
      a = z;
    }
    cache.preactivations.push_back(std::move(z));
    cache.activations.push_back(std::move(a));
  }
  return cache;
}

inline Matrix forward_batch(const Network& net, const Matrix& inputs) {
  if (inputs.rows() != net.input_dim())
    throw InvalidArgument("forward: input has " + std::to_string(inputs.rows()) +
                          " rows, network expects " + std::to_string(net.input_dim()));
  Matrix a = inputs;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Matrix z = net.weights[l] * a;
    z.colwise() += net.biases[l];
    if (l + 1 < net.num_layers()) {
      a = z.cwiseMax(0.0);
    } else if (net.output_activation == OutputActivation::tanh) {
      a = z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

inline std::vector<double> forward(const Network& net, std::span<const double> input) {
  if (static_cast<int>(input.size()) != net.input_dim())
    throw InvalidArgument("forward: input length " + std::to_string(input.size()) +
                          " != " + std::to_string(net.input_dim()));
  Matrix x = Eigen::Map<const Vector>(input.data(), static_cast<Eigen::Index>(input.size()));
  Matrix y = forward_batch(net, x);
  return {y.data(), y.data() + y.size()};
}

struct BackwardResult {
  Gradients grads;
  Matrix input_grad;  // empty unless requested
};

// Propagates dLoss/dOutput back through a cached forward pass.
inline BackwardResult backward(const Network& net, const ForwardCache& cache,
                               const Matrix& output_grad, bool want_input_grad = false) {
  const std::size_t L = net.num_layers();
  BackwardResult res;
  res.grads.weights.resize(L);
  res.grads.biases.resize(L);

  Matrix delta;
  if (net.output_activation == OutputActivation::tanh) {
    const Matrix& y = cache.activations.back();
    delta = output_grad.cwiseProduct((1.0 - y.array().square()).matrix());
  } else {
    delta = output_grad;
  }
  for (std::size_t l = L; l-- > 0;) {
    res.grads.weights[l].noalias() = delta * cache.activations[l].transpose();
    res.grads.biases[l] = delta.rowwise().sum();
    if (l == 0 && !want_input_grad) break;
    Matrix upstream = net.weights[l].transpose() * delta;
    if (l == 0) {
      res.input_grad = std::move(upstream);
      break;
    }
    const Matrix& z = cache.preactivations[l - 1];
    delta = (z.array() > 0.0).select(upstream.array(), 0.0).matrix();
  }
  return res;
}

enum class LossKind { weighted_mse, weighted_neg_mean };

struct LossAndGradients {
  Gradients grads;
  double loss = 0.0;
};

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericInputError(std::string(what) + " contains non-finite values");
}

// Per-sample weight scale; an empty span means unit weights.
inline void check_weights(std::span<const double> weights, Eigen::Index batch) {
  if (weights.empty()) return;
  if (static_cast<Eigen::Index>(weights.size()) != batch)
    throw InvalidArgument("loss: weights length does not match batch size");
  for (double w : weights) {
    if (std::isnan(w) || !std::isfinite(w)) throw NumericInputError("loss: non-finite weight");
    if (w < 0.0) throw InvalidArgument("loss: weights must be >= 0");
  }
}

}  // namespace detail

// dLoss/dOutput for mean_i w_i * loss_i, where loss_i is ||y_i - t_i||^2
// (weighted_mse) or -sum_k y_ik (weighted_neg_mean). Returns the loss value.
inline double loss_output_grad(LossKind kind, const Matrix& outputs, const Matrix* targets,
                               std::span<const double> weights, Matrix& output_grad) {
  const Eigen::Index batch = outputs.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);
  output_grad.resize(outputs.rows(), batch);
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    double per_sample;
    if (kind == LossKind::weighted_mse) {
      const auto diff = (outputs.col(i) - targets->col(i)).eval();
      per_sample = diff.squaredNorm();
      if (weights.empty()) {
        output_grad.col(i) = (2.0 * inv_b) * diff;
      } else {
        output_grad.col(i) = ((2.0 * inv_b) * weights[i]) * diff;
      }
    } else {
      per_sample = -outputs.col(i).sum();
      output_grad.col(i).setConstant(weights.empty() ? -inv_b : -inv_b * weights[i]);
    }
    total += weights.empty() ? per_sample : weights[i] * per_sample;
  }
  return total * inv_b;
}

inline double weighted_scalar_loss(const Network& net, LossKind kind, const Matrix& inputs,
                                   const Matrix* targets, std::span<const double> weights) {
  const Matrix out = forward_batch(net, inputs);
  Matrix unused;
  return loss_output_grad(kind, out, targets, weights, unused);
}

// Exact gradient of mean_i w_i * loss_i with respect to every parameter.
// `targets` must be non-null iff kind == weighted_mse. Empty `weights`
// means unit weights without the multiplication.
inline LossAndGradients backward_weighted_scalar_loss(const Network& net, LossKind kind,
                                                      const Matrix& inputs, const Matrix* targets,
                                                      std::span<const double> weights) {
  if (inputs.cols() == 0) throw InvalidArgument("loss: empty batch");
  if ((kind == LossKind::weighted_mse) != (targets != nullptr))
    throw InvalidArgument("loss: targets are required for weighted_mse and only for it");
  detail::require_finite(inputs, "loss: inputs");
  if (targets) {
    if (targets->rows() != net.output_dim() || targets->cols() != inputs.cols())
      throw InvalidArgument("loss: target shape mismatch");
    detail::require_finite(*targets, "loss: targets");
  }
  detail::check_weights(weights, inputs.cols());

  const ForwardCache cache = forward_cached(net, inputs);
  Matrix dout;
  LossAndGradients res;
  res.loss = loss_output_grad(kind, cache.output(), targets, weights, dout);
  res.grads = backward(net, cache, dout).grads;
  return res;
}

inline void adam_step(Network& net, const Gradients& grads, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  detail::check_congruent(net, grads, "adam_step");
  if (!(lr >= 0.0)) throw InvalidArgument("adam_step: lr must be >= 0");
  detail::ensure_adam_state(net);
  auto& o = net.opt;
  ++o.step;
  const double t = static_cast<double>(o.step);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);

  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    update(net.weights[l], grads.weights[l], o.m_weights[l], o.v_weights[l]);
    update(net.biases[l], grads.biases[l], o.m_biases[l], o.v_biases[l]);
  }
}

inline void sgd_step(Network& net, const Gradients& grads, double lr) {
  detail::check_congruent(net, grads, "sgd_step");
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    net.weights[l] -= lr * grads.weights[l];
    net.biases[l] -= lr * grads.biases[l];
  }
}

// target <- (1 - tau) * target + tau * source
inline void soft_update(Network& target, const Network& source, double tau) {
  detail::check_congruent(target, source, "soft_update");
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("soft_update: tau must be in [0, 1]");
  for (std::size_t l = 0; l < target.num_layers(); ++l) {
    target.weights[l] = (1.0 - tau) * target.weights[l] + tau * source.weights[l];
    target.biases[l] = (1.0 - tau) * target.biases[l] + tau * source.biases[l];
  }
}

inline void copy_parameters(Network& dst, const Network& src) {
  detail::check_congruent(dst, src, "copy_parameters");
  dst.weights = src.weights;
  dst.biases = src.biases;
}

inline std::vector<double> flatten_parameters(const Network& net) {
  Gradients view{net.weights, net.biases};
  return view.flatten();
}

// FNV-1a over the raw parameter bytes; equal hashes <=> (practically)
// bit-identical parameters.
inline std::uint64_t parameter_hash(const Network& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : flatten_parameters(net)) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int k = 0; k < 8; ++k) {
      h ^= (bits >> (8 * k)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline Matrix to_matrix(const std::vector<std::vector<double>>& columns) {
  if (columns.empty()) return {};
  Matrix m(static_cast<Eigen::Index>(columns.front().size()),
           static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].size() != columns.front().size())
      throw InvalidArgument("to_matrix: ragged batch");
    for (std::size_t r = 0; r < columns[c].size(); ++r)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = columns[c][r];
  }
  return m;
}

// ---- checkpoint (JSON) ----
//
// {"layer_dims": [...], "hidden_activation": "relu", "output_activation": ...,
//  "weights": [[row-major]...], "biases": [[...]...],
//  "adam": {"step": n, "m_weights": ..., "v_weights": ..., "m_biases": ..., "v_biases": ...}}
//
// nlohmann::json prints doubles in shortest round-trip form, so save/load is
// bit-exact.

namespace detail {

inline nlohmann::json matrix_rows_json(const Matrix& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return flat;
}

inline Matrix matrix_from_rows_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  const auto flat = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
    throw InvalidArgument("checkpoint: parameter array has wrong length");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline Vector vector_from_json(const nlohmann::json& j, Eigen::Index n) {
  const auto flat = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != n)
    throw InvalidArgument("checkpoint: bias array has wrong length");
  return Eigen::Map<const Vector>(flat.data(), n);
}

}  // namespace detail

inline nlohmann::json network_to_json(const Network& net) {
  using nlohmann::json;
  json j;
  j["layer_dims"] = net.layer_dims;
  j["hidden_activation"] = "relu";
  j["output_activation"] = to_string(net.output_activation);
  json w = json::array(), b = json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    w.push_back(detail::matrix_rows_json(net.weights[l]));
    b.push_back(std::vector<double>(net.biases[l].data(),
                                    net.biases[l].data() + net.biases[l].size()));
  }
  j["weights"] = std::move(w);
  j["biases"] = std::move(b);
  if (net.opt.m_weights.size() == net.num_layers()) {
    json adam;
    adam["step"] = net.opt.step;
    json mw = json::array(), vw = json::array(), mb = json::array(), vb = json::array();
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      mw.push_back(detail::matrix_rows_json(net.opt.m_weights[l]));
      vw.push_back(detail::matrix_rows_json(net.opt.v_weights[l]));
      mb.push_back(detail::matrix_rows_json(net.opt.m_biases[l]));
      vb.push_back(detail::matrix_rows_json(net.opt.v_biases[l]));
    }
    adam["m_weights"] = std::move(mw);
    adam["v_weights"] = std::move(vw);
    adam["m_biases"] = std::move(mb);
    adam["v_biases"] = std::move(vb);
    j["adam"] = std::move(adam);
  }
  return j;
}

inline Network network_from_json(const nlohmann::json& j) {
  try {
    Network net;
    net.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    if (net.layer_dims.size() < 2) throw InvalidArgument("checkpoint: need >= 2 layer dims");
    if (j.value("hidden_activation", std::string("relu")) != "relu")
      throw InvalidArgument("checkpoint: only relu hidden activation is supported");
    net.output_activation = output_activation_from_string(j.at("output_activation"));
    const auto& w = j.at("weights");
    const auto& b = j.at("biases");
    const std::size_t L = net.layer_dims.size() - 1;
    if (w.size() != L || b.size() != L) throw InvalidArgument("checkpoint: wrong layer count");
    for (std::size_t l = 0; l < L; ++l) {
      const Eigen::Index out = net.layer_dims[l + 1], in = net.layer_dims[l];
      net.weights.push_back(detail::matrix_from_rows_json(w[l], out, in));
      net.biases.push_back(detail::vector_from_json(b[l], out));
    }
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      net.opt.step = a.at("step").get<std::uint64_t>();
      for (std::size_t l = 0; l < L; ++l) {
        const Eigen::Index out = net.layer_dims[l + 1], in = net.layer_dims[l];
        net.opt.m_weights.push_back(detail::matrix_from_rows_json(a.at("m_weights")[l], out, in));
        net.opt.v_weights.push_back(detail::matrix_from_rows_json(a.at("v_weights")[l], out, in));
        net.opt.m_biases.push_back(detail::vector_from_json(a.at("m_biases")[l], out));
        net.opt.v_biases.push_back(detail::vector_from_json(a.at("v_biases")[l], out));
      }
    } else {
      detail::ensure_adam_state(net);
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace nsr
