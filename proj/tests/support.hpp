#pragma once

// Test-only oracles. Nothing here calls backward(); gradients are estimated
// from forward passes alone.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "nsr/replay_her.hpp"
#include "nsr/tensor_net.hpp"

namespace nsr::testing {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(lo, hi);
  return m;
}

// Central differences of weighted_scalar_loss, one parameter at a time, in
// Gradients::flatten() order.
inline std::vector<double> numeric_gradient(Network net, LossKind kind, const Matrix& inputs,
                                            const Matrix* targets, std::span<const double> weights,
                                            double h = 1e-5) {
  std::vector<double> out;
  auto probe = [&](double& p) {
    const double saved = p;
    p = saved + h;
    const double up = weighted_scalar_loss(net, kind, inputs, targets, weights);
    p = saved - h;
    const double down = weighted_scalar_loss(net, kind, inputs, targets, weights);
    p = saved;
    out.push_back((up - down) / (2.0 * h));
  };
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) probe(net.weights[l](r, c));
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) probe(net.biases[l](r));
  }
  return out;
}

// |a - n| / max(|a|, |n|), with an absolute floor so that entries that are
// zero up to round-off do not count as failures.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

inline bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

// Episode of a fixed-horizon env driven by uniformly random actions.
inline Episode random_episode(const EnvSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x7e57));
  EnvState st = reset(spec, seed);
  Episode ep;
  while (!st.done) {
    std::vector<double> a(static_cast<std::size_t>(spec.action_dim));
    for (double& x : a) x = rng.uniform(-1.0, 1.0);
    ep.push_back(step(st, a));
  }
  return ep;
}

inline ReplayBuffer random_buffer(const EnvSpec& spec, int episodes, std::uint64_t seed) {
  ReplayBuffer buf(static_cast<std::size_t>(episodes), spec.max_episode_steps);
  for (int e = 0; e < episodes; ++e)
    buf.store_episode(random_episode(spec, derive_seed(seed, 0xb0f, static_cast<std::uint64_t>(e))));
  return buf;
}

}  // namespace nsr::testing
