#include "lowrank/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lowrank/cost.hpp"
#include "lowrank/error.hpp"
#include "lowrank/linalg.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

namespace {

int layer_out_width(const Layer& layer, int in_width) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    if (d->weights.cols() != in_width)
      throw ShapeError(strfmt("dense layer %s expects %d inputs, previous layer yields %d",
                              d->name.c_str(), d->weights.cols(), in_width));
    return d->weights.rows();
  }
  if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
    if (c->in_shape.flat() != in_width)
      throw ShapeError(strfmt("conv layer %s expects %d inputs, previous layer yields %d",
                              c->name.c_str(), c->in_shape.flat(), in_width));
    return c->out_shape().flat();
  }
  if (const auto* p = std::get_if<MaxPool2Layer>(&layer)) {
    if (p->in_shape.flat() != in_width)
      throw ShapeError(strfmt("pool layer expects %d inputs, previous layer yields %d",
                              p->in_shape.flat(), in_width));
    return p->out_shape().flat();
  }
  return in_width;  // relu / dropout
}

}  // namespace

std::vector<int> layer_widths(const Network& net) {
  std::vector<int> widths;
  widths.reserve(net.layers.size() + 1);
  int w = net.input_shape.flat();
  widths.push_back(w);
  for (const Layer& layer : net.layers) {
    w = layer_out_width(layer, w);
    widths.push_back(w);
  }
  return widths;
}

namespace {

DenseLayer make_dense(const std::string& name, int out, int in, Rng& rng) {
  DenseLayer d;
  d.name = name;
  d.weights = Matrix(out, in);
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : d.weights.data()) v = rng.gaussian() * s;
  d.bias.assign(out, 0.0);
  return d;
}

Conv2dLayer make_conv(const std::string& name, Shape3 in_shape, int out_ch, int ksize, int pad,
                      Rng& rng) {
  Conv2dLayer c;
  c.name = name;
  c.in_ch = in_shape.c;
  c.out_ch = out_ch;
  c.kh = c.kw = ksize;
  c.stride = 1;
  c.pad = pad;
  c.in_shape = in_shape;
  c.kernels.resize(static_cast<size_t>(out_ch) * c.in_ch * ksize * ksize);
  const double s = 1.0 / std::sqrt(static_cast<double>(c.in_ch) * ksize * ksize);
  for (double& v : c.kernels) v = rng.gaussian() * s;
  c.bias.assign(out_ch, 0.0);
  return c;
}

}  // namespace

Network make_preset(const std::string& name, uint64_t seed, bool dropout,
                    double dropout_fraction, int class_count) {
  if (class_count < 2) throw ConfigError(strfmt("preset: class_count %d < 2", class_count));
  Rng rng(mix_seed(seed, 0x11e7));
  Network net;
  net.dropout_fraction = dropout_fraction;
  if (name == "mlp-mnist") {
    net.input_shape = {1, 28, 28};
    net.layers.emplace_back(make_dense("fc1", 256, 784, rng));
    net.layers.emplace_back(ReluLayer{});
    if (dropout) net.layers.emplace_back(DropoutLayer{});
    net.layers.emplace_back(make_dense("fc2", 128, 256, rng));
    net.layers.emplace_back(ReluLayer{});
    if (dropout) net.layers.emplace_back(DropoutLayer{});
    net.layers.emplace_back(make_dense("fc3", class_count, 128, rng));
  } else if (name == "mini-conv") {
    net.input_shape = {3, 32, 32};
    net.layers.emplace_back(make_conv("conv1", net.input_shape, 8, 3, 1, rng));
    net.layers.emplace_back(ReluLayer{});
    net.layers.emplace_back(MaxPool2Layer{{8, 32, 32}});
    net.layers.emplace_back(make_conv("conv2", {8, 16, 16}, 16, 3, 1, rng));
    net.layers.emplace_back(ReluLayer{});
    net.layers.emplace_back(MaxPool2Layer{{16, 16, 16}});
    net.layers.emplace_back(make_dense("fc1", 128, 16 * 8 * 8, rng));
    net.layers.emplace_back(ReluLayer{});
    if (dropout) net.layers.emplace_back(DropoutLayer{});
    net.layers.emplace_back(make_dense("fc2", class_count, 128, rng));
  } else {
    throw ConfigError(strfmt("unknown preset '%s' (expected mlp-mnist or mini-conv)",
                             name.c_str()));
  }
  layer_widths(net);  // validate wiring
  return net;
}

namespace {

void conv_forward(const Conv2dLayer& c, const Matrix& in, Matrix& out) {
  const Shape3 os = c.out_shape();
  const int B = in.rows();
  for (int s = 0; s < B; ++s) {
    const double* x = in.row(s);
    double* y = out.row(s);
    for (int o = 0; o < c.out_ch; ++o) {
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox) {
          double acc = c.bias[o];
          const int iy0 = oy * c.stride - c.pad;
          const int ix0 = ox * c.stride - c.pad;
          for (int i = 0; i < c.in_ch; ++i) {
            for (int ky = 0; ky < c.kh; ++ky) {
              const int iy = iy0 + ky;
              if (iy < 0 || iy >= c.in_shape.h) continue;
              for (int kx = 0; kx < c.kw; ++kx) {
                const int ix = ix0 + kx;
                if (ix < 0 || ix >= c.in_shape.w) continue;
                acc += c.kernels[c.kernel_index(o, i, ky, kx)] *
                       x[(static_cast<size_t>(i) * c.in_shape.h + iy) * c.in_shape.w + ix];
              }
            }
          }
          y[(static_cast<size_t>(o) * os.h + oy) * os.w + ox] = acc;
        }
      }
    }
  }
  ledger_add(2ull * B * c.out_ch * os.h * os.w * c.in_ch * c.kh * c.kw);
}

// dL/dkernels (batch mean) and dL/dinput from dL/doutput.
void conv_backward(const Conv2dLayer& c, const Matrix& in, const Matrix& gout, Matrix& gin,
                   ConvGrad& grad) {
  const Shape3 os = c.out_shape();
  const int B = in.rows();
  grad.kernel_grad.assign(c.kernels.size(), 0.0);
  grad.bias_grad.assign(c.bias.size(), 0.0);
  for (int s = 0; s < B; ++s) {
    const double* x = in.row(s);
    const double* gy = gout.row(s);
    double* gx = gin.row(s);
    for (int o = 0; o < c.out_ch; ++o) {
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox) {
          const double g = gy[(static_cast<size_t>(o) * os.h + oy) * os.w + ox];
          if (g == 0.0) continue;
          grad.bias_grad[o] += g;
          const int iy0 = oy * c.stride - c.pad;
          const int ix0 = ox * c.stride - c.pad;
          for (int i = 0; i < c.in_ch; ++i) {
            for (int ky = 0; ky < c.kh; ++ky) {
              const int iy = iy0 + ky;
              if (iy < 0 || iy >= c.in_shape.h) continue;
              for (int kx = 0; kx < c.kw; ++kx) {
                const int ix = ix0 + kx;
                if (ix < 0 || ix >= c.in_shape.w) continue;
                const size_t xi =
                    (static_cast<size_t>(i) * c.in_shape.h + iy) * c.in_shape.w + ix;
                grad.kernel_grad[c.kernel_index(o, i, ky, kx)] += g * x[xi];
                gx[xi] += g * c.kernels[c.kernel_index(o, i, ky, kx)];
              }
            }
          }
        }
      }
    }
  }
  const double inv_b = 1.0 / B;
  for (double& v : grad.kernel_grad) v *= inv_b;
  for (double& v : grad.bias_grad) v *= inv_b;
  ledger_add(4ull * B * c.out_ch * os.h * os.w * c.in_ch * c.kh * c.kw);
}

}  // namespace

ForwardResult forward(const Network& net, const Matrix& inputs, Mode mode, uint64_t seed) {
  const std::vector<int> widths = layer_widths(net);
  if (inputs.cols() != widths.front())
    throw ShapeError(strfmt("forward: input width %d, network expects %d", inputs.cols(),
                            widths.front()));
  if (!inputs.all_finite()) throw NumericError("forward: non-finite input batch");

  const int B = inputs.rows();
  ForwardResult res;
  res.cache.mode = mode;
  res.cache.inputs.reserve(net.layers.size() + 1);
  res.cache.dropout_masks.resize(net.layers.size());
  res.cache.pool_argmax.resize(net.layers.size());
  res.cache.inputs.push_back(inputs);

  Rng dropout_rng(mix_seed(seed, 0xd20b));
  const double keep = 1.0 - net.dropout_fraction;

  CategoryScope scope(FlopCategory::inference);
  for (size_t li = 0; li < net.layers.size(); ++li) {
    const Matrix& x = res.cache.inputs.back();
    Matrix y;
    if (const auto* d = std::get_if<DenseLayer>(&net.layers[li])) {
      y = matmul_nt(x, d->weights);  // B x m
      for (int i = 0; i < y.rows(); ++i) {
        double* row = y.row(i);
        for (int j = 0; j < y.cols(); ++j) row[j] += d->bias[j];
      }
    } else if (const auto* c = std::get_if<Conv2dLayer>(&net.layers[li])) {
      y = Matrix(B, c->out_shape().flat());
      conv_forward(*c, x, y);
    } else if (std::holds_alternative<ReluLayer>(net.layers[li])) {
      y = x;
      for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    } else if (const auto* p = std::get_if<MaxPool2Layer>(&net.layers[li])) {
      const Shape3 is = p->in_shape;
      const Shape3 os = p->out_shape();
      y = Matrix(B, os.flat());
      std::vector<int32_t>& amax = res.cache.pool_argmax[li];
      amax.assign(static_cast<size_t>(B) * os.flat(), 0);
      for (int s = 0; s < B; ++s) {
        const double* xr = x.row(s);
        double* yr = y.row(s);
        for (int ch = 0; ch < os.c; ++ch) {
          for (int oy = 0; oy < os.h; ++oy) {
            for (int ox = 0; ox < os.w; ++ox) {
              int best = -1;
              double bv = 0.0;
              for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                  const int xi =
                      (ch * is.h + (2 * oy + dy)) * is.w + (2 * ox + dx);
                  if (best < 0 || xr[xi] > bv) {
                    best = xi;
                    bv = xr[xi];
                  }
                }
              }
              const size_t oi = (static_cast<size_t>(ch) * os.h + oy) * os.w + ox;
              yr[oi] = bv;
              amax[static_cast<size_t>(s) * os.flat() + oi] = best;
            }
          }
        }
      }
    } else {  // dropout
      y = x;
      if (mode == Mode::train && net.dropout_fraction > 0.0) {
        std::vector<uint8_t>& mask = res.cache.dropout_masks[li];
        mask.resize(y.size());
        double* p = y.data().data();
        const double inv_keep = 1.0 / keep;
        for (size_t i = 0; i < y.size(); ++i) {
          mask[i] = dropout_rng.uniform() < keep ? 1 : 0;
          p[i] = mask[i] ? p[i] * inv_keep : 0.0;
        }
      }
    }
    res.cache.inputs.push_back(std::move(y));
  }
  res.logits = res.cache.inputs.back();
  return res;
}

double softmax_cross_entropy_loss(const Matrix& logits, std::span<const int32_t> labels) {
  if (static_cast<size_t>(logits.rows()) != labels.size())
    throw ShapeError(strfmt("loss: %d logit rows vs %zu labels", logits.rows(), labels.size()));
  double loss = 0.0;
  for (int i = 0; i < logits.rows(); ++i) {
    const int32_t label = labels[i];
    if (label < 0 || label >= logits.cols())
      throw ConfigError(strfmt("label %d out of range [0, %d)", label, logits.cols()));
    const double* row = logits.row(i);
    double mx = row[0];
    for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < logits.cols(); ++j) sum += std::exp(row[j] - mx);
    loss += std::log(sum) - (row[label] - mx);
  }
  return loss / logits.rows();
}

int argmax_row(const Matrix& m, int row) {
  const double* r = m.row(row);
  int best = 0;
  for (int j = 1; j < m.cols(); ++j)
    if (r[j] > r[best]) best = j;
  return best;
}

BackwardResult backward(const Network& net, const ForwardCache& cache,
                        std::span<const int32_t> labels) {
  if (cache.inputs.size() != net.layers.size() + 1)
    throw ShapeError("backward: cache does not match network depth");
  const Matrix& logits = cache.inputs.back();
  const int B = logits.rows();
  if (static_cast<size_t>(B) != labels.size())
    throw ShapeError(strfmt("backward: batch %d vs %zu labels", B, labels.size()));

  BackwardResult out;
  out.loss = softmax_cross_entropy_loss(logits, labels);

  CategoryScope scope(FlopCategory::inference);

  // d(per-sample loss)/d(logits) = softmax - onehot; kept per sample so the
  // dense tapes expose the raw (x_i, delta_i) stream.
  Matrix g(B, logits.cols());
  for (int i = 0; i < B; ++i) {
    const double* row = logits.row(i);
    double* gr = g.row(i);
    double mx = row[0];
    for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < logits.cols(); ++j) {
      gr[j] = std::exp(row[j] - mx);
      sum += gr[j];
    }
    for (int j = 0; j < logits.cols(); ++j) gr[j] /= sum;
    gr[labels[i]] -= 1.0;
  }

  const double keep = 1.0 - net.dropout_fraction;
  for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
    const Matrix& x = cache.inputs[li];
    if (const auto* d = std::get_if<DenseLayer>(&net.layers[li])) {
      DenseTape tape;
      tape.layer_index = li;
      tape.name = d->name;
      tape.x = x;
      tape.delta = g;
      out.tapes.push_back(std::move(tape));
      if (li > 0) g = matmul(g, d->weights);  // B x n
    } else if (const auto* c = std::get_if<Conv2dLayer>(&net.layers[li])) {
      ConvGrad cg;
      cg.layer_index = li;
      Matrix gin(B, c->in_shape.flat());
      {
        CategoryScope conv_scope(FlopCategory::conv_grad);
        conv_backward(*c, x, g, gin, cg);
      }
      out.conv_grads.push_back(std::move(cg));
      g = std::move(gin);
    } else if (std::holds_alternative<ReluLayer>(net.layers[li])) {
      const double* xp = x.data().data();
      double* gp = g.data().data();
      for (size_t i = 0; i < g.size(); ++i)
        if (xp[i] <= 0.0) gp[i] = 0.0;
    } else if (const auto* p = std::get_if<MaxPool2Layer>(&net.layers[li])) {
      const std::vector<int32_t>& amax = cache.pool_argmax[li];
      const Shape3 os = p->out_shape();
      Matrix gin(B, p->in_shape.flat());
      for (int s = 0; s < B; ++s) {
        const double* gr = g.row(s);
        double* gi = gin.row(s);
        for (int oi = 0; oi < os.flat(); ++oi)
          gi[amax[static_cast<size_t>(s) * os.flat() + oi]] += gr[oi];
      }
      g = std::move(gin);
    } else {  // dropout
      if (cache.mode == Mode::train && net.dropout_fraction > 0.0) {
        const std::vector<uint8_t>& mask = cache.dropout_masks[li];
        const double inv_keep = 1.0 / keep;
        double* gp = g.data().data();
        for (size_t i = 0; i < g.size(); ++i) gp[i] = mask[i] ? gp[i] * inv_keep : 0.0;
      }
    }
  }

  // restore network order (built back-to-front)
  std::reverse(out.tapes.begin(), out.tapes.end());
  std::reverse(out.conv_grads.begin(), out.conv_grads.end());
  return out;
}

Matrix dense_mean_gradient(const DenseTape& tape) {
  CategoryScope scope(FlopCategory::dense_grad);
  Matrix g = matmul_tn(tape.delta, tape.x);  // m x n
  scale(g, 1.0 / tape.x.rows());
  return g;
}

std::vector<double> dense_mean_bias_gradient(const DenseTape& tape) {
  std::vector<double> g(tape.delta.cols(), 0.0);
  for (int i = 0; i < tape.delta.rows(); ++i) {
    const double* row = tape.delta.row(i);
    for (size_t j = 0; j < g.size(); ++j) g[j] += row[j];
  }
  const double inv_b = 1.0 / tape.delta.rows();
  for (double& v : g) v *= inv_b;
  return g;
}

void apply_dense_update_inplace(DenseLayer& layer, const Matrix& grad, double alpha,
                                std::span<const double> bias_grad) {
  if (!layer.weights.same_shape(grad))
    throw ShapeError(strfmt("dense update %s: weights %dx%d vs grad %dx%d", layer.name.c_str(),
                            layer.weights.rows(), layer.weights.cols(), grad.rows(),
                            grad.cols()));
  CategoryScope scope(FlopCategory::apply);
  add_scaled(layer.weights, grad, -alpha);
  ledger_add(2ull * grad.size());
  if (!bias_grad.empty()) {
    if (bias_grad.size() != layer.bias.size())
      throw ShapeError(strfmt("dense update %s: bias %zu vs grad %zu", layer.name.c_str(),
                              layer.bias.size(), bias_grad.size()));
    for (size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] -= alpha * bias_grad[i];
  }
}

DenseLayer apply_dense_update(const DenseLayer& layer, const Matrix& grad, double alpha,
                              std::span<const double> bias_grad) {
  DenseLayer out = layer;
  apply_dense_update_inplace(out, grad, alpha, bias_grad);
  return out;
}

void apply_conv_update_inplace(Conv2dLayer& layer, const ConvGrad& grad, double alpha) {
  if (grad.kernel_grad.size() != layer.kernels.size() ||
      grad.bias_grad.size() != layer.bias.size())
    throw ShapeError(strfmt("conv update %s: gradient sizes do not match", layer.name.c_str()));
  CategoryScope scope(FlopCategory::apply);
  for (size_t i = 0; i < layer.kernels.size(); ++i)
    layer.kernels[i] -= alpha * grad.kernel_grad[i];
  for (size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] -= alpha * grad.bias_grad[i];
  ledger_add(2ull * (layer.kernels.size() + layer.bias.size()));
}

namespace {

constexpr char kModelMagic[4] = {'L', 'R', 'N', 'N'};
constexpr uint32_t kModelVersion = 1;

enum LayerTag : uint32_t { kDense = 0, kConv = 1, kRelu = 2, kPool = 3, kDropout = 4 };

void put_u32(std::ofstream& os, uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void put_f64(std::ofstream& os, double v) { os.write(reinterpret_cast<char*>(&v), 8); }
void put_doubles(std::ofstream& os, const double* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
}
void put_string(std::ofstream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t take_u32(std::ifstream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated model checkpoint");
  return v;
}
double take_f64(std::ifstream& is) {
  double v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw IoError("truncated model checkpoint");
  return v;
}
void take_doubles(std::ifstream& is, double* p, size_t n) {
  if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 8)))
    throw IoError("truncated model checkpoint");
}
std::string take_string(std::ifstream& is) {
  const uint32_t n = take_u32(is);
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw IoError("truncated model checkpoint");
  return s;
}

}  // namespace

void save_model(const Network& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(strfmt("cannot open %s for writing", path.string().c_str()));
  os.write(kModelMagic, 4);
  put_u32(os, kModelVersion);
  put_u32(os, static_cast<uint32_t>(net.input_shape.c));
  put_u32(os, static_cast<uint32_t>(net.input_shape.h));
  put_u32(os, static_cast<uint32_t>(net.input_shape.w));
  put_f64(os, net.dropout_fraction);
  put_u32(os, static_cast<uint32_t>(net.layers.size()));
  for (const Layer& layer : net.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      put_u32(os, kDense);
      put_string(os, d->name);
      put_u32(os, static_cast<uint32_t>(d->weights.rows()));
      put_u32(os, static_cast<uint32_t>(d->weights.cols()));
      put_doubles(os, d->weights.data().data(), d->weights.size());
      put_doubles(os, d->bias.data(), d->bias.size());
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      put_u32(os, kConv);
      put_string(os, c->name);
      for (int v : {c->in_ch, c->out_ch, c->kh, c->kw, c->stride, c->pad, c->in_shape.c,
                    c->in_shape.h, c->in_shape.w})
        put_u32(os, static_cast<uint32_t>(v));
      put_doubles(os, c->kernels.data(), c->kernels.size());
      put_doubles(os, c->bias.data(), c->bias.size());
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      put_u32(os, kRelu);
    } else if (const auto* p = std::get_if<MaxPool2Layer>(&layer)) {
      put_u32(os, kPool);
      for (int v : {p->in_shape.c, p->in_shape.h, p->in_shape.w})
        put_u32(os, static_cast<uint32_t>(v));
    } else {
      put_u32(os, kDropout);
    }
  }
  if (!os) throw IoError(strfmt("write failed: %s", path.string().c_str()));
}

Network load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(strfmt("cannot open %s", path.string().c_str()));
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0)
    throw IoError(strfmt("bad model checkpoint magic in %s", path.string().c_str()));
  const uint32_t version = take_u32(is);
  if (version != kModelVersion)
    throw IoError(strfmt("unsupported model version %u", version));
  Network net;
  net.input_shape.c = static_cast<int>(take_u32(is));
  net.input_shape.h = static_cast<int>(take_u32(is));
  net.input_shape.w = static_cast<int>(take_u32(is));
  net.dropout_fraction = take_f64(is);
  const uint32_t count = take_u32(is);
  for (uint32_t li = 0; li < count; ++li) {
    const uint32_t tag = take_u32(is);
    switch (tag) {
      case kDense: {
        DenseLayer d;
        d.name = take_string(is);
        const uint32_t rows = take_u32(is);
        const uint32_t cols = take_u32(is);
        d.weights = Matrix(static_cast<int>(rows), static_cast<int>(cols));
        take_doubles(is, d.weights.data().data(), d.weights.size());
        d.bias.resize(rows);
        take_doubles(is, d.bias.data(), d.bias.size());
        net.layers.emplace_back(std::move(d));
        break;
      }
      case kConv: {
        Conv2dLayer c;
        c.name = take_string(is);
        c.in_ch = static_cast<int>(take_u32(is));
        c.out_ch = static_cast<int>(take_u32(is));
        c.kh = static_cast<int>(take_u32(is));
        c.kw = static_cast<int>(take_u32(is));
        c.stride = static_cast<int>(take_u32(is));
        c.pad = static_cast<int>(take_u32(is));
        c.in_shape.c = static_cast<int>(take_u32(is));
        c.in_shape.h = static_cast<int>(take_u32(is));
        c.in_shape.w = static_cast<int>(take_u32(is));
        c.kernels.resize(static_cast<size_t>(c.out_ch) * c.in_ch * c.kh * c.kw);
        take_doubles(is, c.kernels.data(), c.kernels.size());
        c.bias.resize(c.out_ch);
        take_doubles(is, c.bias.data(), c.bias.size());
        net.layers.emplace_back(std::move(c));
        break;
      }
      case kRelu:
        net.layers.emplace_back(ReluLayer{});
        break;
      case kPool: {
        MaxPool2Layer p;
        p.in_shape.c = static_cast<int>(take_u32(is));
        p.in_shape.h = static_cast<int>(take_u32(is));
        p.in_shape.w = static_cast<int>(take_u32(is));
        net.layers.emplace_back(p);
        break;
      }
      case kDropout:
        net.layers.emplace_back(DropoutLayer{});
        break;
      default:
        throw IoError(strfmt("unknown layer tag %u in %s", tag, path.string().c_str()));
    }
  }
  return net;
}

}  // namespace lowrank
