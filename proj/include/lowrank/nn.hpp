#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lowrank/matrix.hpp"

namespace lowrank {

struct Shape3 {
  int c = 1, h = 1, w = 1;
  int flat() const { return c * h * w; }
  bool operator==(const Shape3&) const = default;
};

struct DenseLayer {
  std::string name;
  Matrix weights;            // m outputs x n inputs
  std::vector<double> bias;  // m
};

struct Conv2dLayer {
  std::string name;
  int in_ch = 0, out_ch = 0, kh = 0, kw = 0, stride = 1, pad = 0;
  Shape3 in_shape;
  std::vector<double> kernels;  // out_ch x in_ch x kh x kw
  std::vector<double> bias;     // out_ch

  Shape3 out_shape() const {
    return {out_ch, (in_shape.h + 2 * pad - kh) / stride + 1,
            (in_shape.w + 2 * pad - kw) / stride + 1};
  }
  size_t kernel_index(int o, int i, int y, int x) const {
    return ((static_cast<size_t>(o) * in_ch + i) * kh + y) * kw + x;
  }
};

struct ReluLayer {};

struct MaxPool2Layer {  // 2x2 window, stride 2
  Shape3 in_shape;
  Shape3 out_shape() const { return {in_shape.c, in_shape.h / 2, in_shape.w / 2}; }
};

struct DropoutLayer {};  // fraction comes from the owning Network

using Layer = std::variant<DenseLayer, Conv2dLayer, ReluLayer, MaxPool2Layer, DropoutLayer>;

struct Network {
  Shape3 input_shape;
  std::vector<Layer> layers;
  double dropout_fraction = 0.5;
};

// Flat width entering each layer, plus the final output width; validates
// that the layer shapes chain.
std::vector<int> layer_widths(const Network& net);

// Built-in desk-scale architectures: "mlp-mnist" (784-256-128-classes,
// dense only) and "mini-conv" (2 conv + pool stages + 2 dense). Dropout
// layers are inserted after the hidden dense activations when enabled.
Network make_preset(const std::string& name, uint64_t seed, bool dropout,
                    double dropout_fraction = 0.5, int class_count = 10);

enum class Mode { train, eval };

struct ForwardCache {
  Mode mode = Mode::eval;
  // inputs[i] is what layer i consumed; inputs.back() is the logits.
  std::vector<Matrix> inputs;
  std::vector<std::vector<uint8_t>> dropout_masks;  // per layer, train mode only
  std::vector<std::vector<int32_t>> pool_argmax;    // per layer
};

struct ForwardResult {
  Matrix logits;  // B x classes
  ForwardCache cache;
};

// In train mode dropout masks are drawn from the seed and cached; eval mode
// applies no dropout and ignores the seed.
ForwardResult forward(const Network& net, const Matrix& inputs, Mode mode, uint64_t seed);

// Per-sample activation/error stream of one dense layer: row i of x and
// delta belong to sample i, and the exact batch-mean weight gradient is
// (1/B) delta^T x.
struct DenseTape {
  int layer_index = -1;
  std::string name;
  Matrix x;      // B x n
  Matrix delta;  // B x m
};

struct ConvGrad {
  int layer_index = -1;
  std::vector<double> kernel_grad;  // batch mean
  std::vector<double> bias_grad;    // batch mean
};

struct BackwardResult {
  double loss = 0.0;  // mean cross-entropy over the batch
  std::vector<DenseTape> tapes;      // one per dense layer, network order
  std::vector<ConvGrad> conv_grads;  // one per conv layer, network order
};

BackwardResult backward(const Network& net, const ForwardCache& cache,
                        std::span<const int32_t> labels);

// Batch-mean dense gradients assembled from a tape.
Matrix dense_mean_gradient(const DenseTape& tape);
std::vector<double> dense_mean_bias_gradient(const DenseTape& tape);

// weights <- weights - alpha * grad; bias likewise when a bias gradient is
// supplied. Value in, value out.
DenseLayer apply_dense_update(const DenseLayer& layer, const Matrix& grad, double alpha,
                              std::span<const double> bias_grad = {});
void apply_dense_update_inplace(DenseLayer& layer, const Matrix& grad, double alpha,
                                std::span<const double> bias_grad = {});
void apply_conv_update_inplace(Conv2dLayer& layer, const ConvGrad& grad, double alpha);

double softmax_cross_entropy_loss(const Matrix& logits, std::span<const int32_t> labels);
int argmax_row(const Matrix& m, int row);

// Versioned binary model checkpoint with shape-tagged per-layer blobs;
// round-trips bit-exact.
void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

}  // namespace lowrank
