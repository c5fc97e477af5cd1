#pragma once

// Central finite-difference gradient oracle for networks: perturbs weights
// one at a time and compares against the analytic batch-mean gradients.
// Probes every parameter when a layer is small enough, otherwise a seeded
// sample of locations.

#include <cmath>
#include <cstdint>
#include <vector>

#include "lowrank/nn.hpp"
#include "lowrank/rng.hpp"

namespace testing_support {

struct FdReport {
  double max_rel_err = 0.0;
  int probes = 0;
};

inline double fd_loss(const lowrank::Network& net, const lowrank::Matrix& x,
                      const std::vector<int32_t>& labels, uint64_t seed) {
  const lowrank::ForwardResult f = lowrank::forward(net, x, lowrank::Mode::train, seed);
  return lowrank::softmax_cross_entropy_loss(f.logits, labels);
}

// rel error with the absolute floor the contract allows for near-zero grads
inline double fd_rel_err(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / denom;
}

inline FdReport fd_check(lowrank::Network net, const lowrank::Matrix& x,
                         const std::vector<int32_t>& labels, double eps = 1e-5,
                         int max_probes_per_layer = 0, uint64_t probe_seed = 17,
                         uint64_t forward_seed = 99) {
  FdReport report;
  const lowrank::ForwardResult f = lowrank::forward(net, x, lowrank::Mode::train, forward_seed);
  const lowrank::BackwardResult b = lowrank::backward(net, f.cache, labels);

  lowrank::Rng rng(probe_seed);
  auto probe_param = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + eps;
    const double up = fd_loss(net, x, labels, forward_seed);
    param = saved - eps;
    const double down = fd_loss(net, x, labels, forward_seed);
    param = saved;
    const double numeric = (up - down) / (2.0 * eps);
    report.max_rel_err = std::max(report.max_rel_err, fd_rel_err(analytic, numeric));
    ++report.probes;
  };

  for (const lowrank::DenseTape& tape : b.tapes) {
    auto& layer = std::get<lowrank::DenseLayer>(net.layers[tape.layer_index]);
    const lowrank::Matrix grad = lowrank::dense_mean_gradient(tape);
    const std::vector<double> bias_grad = lowrank::dense_mean_bias_gradient(tape);
    const int total = grad.rows() * grad.cols();
    const int probes = max_probes_per_layer > 0 ? std::min(total, max_probes_per_layer) : total;
    for (int p = 0; p < probes; ++p) {
      const int flat = probes == total ? p : static_cast<int>(rng.uniform_int(total));
      const int i = flat / grad.cols();
      const int j = flat % grad.cols();
      probe_param(layer.weights(i, j), grad(i, j));
    }
    const int bias_probes =
        max_probes_per_layer > 0
            ? std::min(static_cast<int>(bias_grad.size()), std::max(max_probes_per_layer / 4, 1))
            : static_cast<int>(bias_grad.size());
    for (int p = 0; p < bias_probes; ++p) {
      const int i = bias_probes == static_cast<int>(bias_grad.size())
                        ? p
                        : static_cast<int>(rng.uniform_int(bias_grad.size()));
      probe_param(layer.bias[i], bias_grad[i]);
    }
  }

  for (const lowrank::ConvGrad& cg : b.conv_grads) {
    auto& layer = std::get<lowrank::Conv2dLayer>(net.layers[cg.layer_index]);
    const int total = static_cast<int>(cg.kernel_grad.size());
    const int probes = max_probes_per_layer > 0 ? std::min(total, max_probes_per_layer) : total;
    for (int p = 0; p < probes; ++p) {
      const int flat = probes == total ? p : static_cast<int>(rng.uniform_int(total));
      probe_param(layer.kernels[flat], cg.kernel_grad[flat]);
    }
    for (size_t i = 0; i < cg.bias_grad.size(); ++i)
      probe_param(layer.bias[i], cg.bias_grad[i]);
  }
  return report;
}

}  // namespace testing_support
