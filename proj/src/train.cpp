#include "lowrank/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lowrank/error.hpp"
#include "lowrank/linalg.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::mbgd: return "MBGD";
    case Variant::sbpca: return "SBPCA";
    case Variant::sbpcav: return "SBPCAV";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "MBGD" || s == "mbgd") return Variant::mbgd;
  if (s == "SBPCA" || s == "sbpca") return Variant::sbpca;
  if (s == "SBPCAV" || s == "sbpcav") return Variant::sbpcav;
  throw ConfigError(strfmt("unknown variant '%s' (MBGD, SBPCA, or SBPCAV)", s.c_str()));
}

namespace {

bool is_pow2(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

int effective_block_size(const Hyperparams& hp) {
  if (hp.block_size > 0) return hp.block_size;
  return std::max(hp.batch_size / 4, 1);
}

void validate(const Hyperparams& hp) {
  if (hp.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (hp.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (hp.rank < 0) throw ConfigError("rank must be >= 0");
  if (hp.sigma_floor <= 0.0) throw ConfigError("sigma_floor must be > 0");
  if (hp.dropout && (hp.dropout_fraction < 0.0 || hp.dropout_fraction >= 1.0))
    throw ConfigError("dropout_fraction must lie in [0, 1)");
  if (hp.variant == Variant::sbpca) {
    if (!is_pow2(static_cast<uint64_t>(hp.batch_size)))
      throw ConfigError(strfmt("SBPCA requires a power-of-two batch size, got %d",
                               hp.batch_size));
    const int b = effective_block_size(hp);
    if (hp.batch_size % b != 0)
      throw ConfigError(strfmt("SBPCA batch size %d is not divisible by block size %d",
                               hp.batch_size, b));
  } else if (hp.variant == Variant::sbpcav) {
    if (!is_pow2(static_cast<uint64_t>(hp.batch_size) + 1))
      throw ConfigError(strfmt(
          "SBPCAV consumes 2^L - 1 samples per batch; batch size %d + 1 is not a power of two",
          hp.batch_size));
  }
}

namespace {

struct DenseRef {
  int layer_index;
  DenseLayer* layer;
};

std::vector<DenseRef> dense_refs(Network& net) {
  std::vector<DenseRef> refs;
  for (size_t i = 0; i < net.layers.size(); ++i)
    if (auto* d = std::get_if<DenseLayer>(&net.layers[i]))
      refs.push_back({static_cast<int>(i), d});
  return refs;
}

std::vector<BlockSample> chunk_fixed(const DenseTape& tape, int b) {
  std::vector<BlockSample> blocks;
  const int count = tape.x.rows() / b;
  blocks.reserve(count);
  for (int i = 0; i < count; ++i)
    blocks.push_back({copy_rows(tape.x, i * b, b), copy_rows(tape.delta, i * b, b)});
  return blocks;
}

std::vector<BlockSample> chunk_doubling(const DenseTape& tape) {
  std::vector<BlockSample> blocks;
  int offset = 0;
  int b = 1;
  while (offset < tape.x.rows()) {
    const int take = std::min(b, tape.x.rows() - offset);
    blocks.push_back({copy_rows(tape.x, offset, take), copy_rows(tape.delta, offset, take)});
    offset += take;
    b *= 2;
  }
  return blocks;
}

uint64_t batch_seed(uint64_t seed, int epoch, size_t batch_index) {
  return mix_seed(seed, (static_cast<uint64_t>(epoch) << 24) ^ batch_index);
}

// Mean gradient over the whole dataset per instrumented dense layer,
// dropout disabled. Instrumentation only: all FLOPs land in `other`.
std::vector<Matrix> full_dataset_gradients(const Network& net, const Dataset& d,
                                           const std::vector<int>& layer_indices,
                                           int batch_size) {
  CategoryScope scope(FlopCategory::other);
  std::vector<Matrix> sums;
  std::vector<int32_t> idx;
  size_t off = 0;
  while (off < d.size()) {
    const size_t take = std::min(static_cast<size_t>(batch_size), d.size() - off);
    idx.resize(take);
    for (size_t i = 0; i < take; ++i) idx[i] = static_cast<int32_t>(off + i);
    const Matrix x = gather_rows(d.images, idx);
    std::vector<int32_t> labels(d.labels.begin() + static_cast<ptrdiff_t>(off),
                                d.labels.begin() + static_cast<ptrdiff_t>(off + take));
    ForwardResult fwd = forward(net, x, Mode::eval, 0);
    BackwardResult bwd = backward(net, fwd.cache, labels);
    if (sums.empty()) {
      for (const DenseTape& tape : bwd.tapes)
        if (std::find(layer_indices.begin(), layer_indices.end(), tape.layer_index) !=
            layer_indices.end())
          sums.emplace_back(tape.delta.cols(), tape.x.cols());
    }
    size_t si = 0;
    for (const DenseTape& tape : bwd.tapes) {
      if (std::find(layer_indices.begin(), layer_indices.end(), tape.layer_index) ==
          layer_indices.end())
        continue;
      Matrix part = matmul_tn(tape.delta, tape.x);
      add_scaled(sums[si], part, 1.0);
      ++si;
    }
    off += take;
  }
  for (Matrix& g : sums) scale(g, 1.0 / static_cast<double>(d.size()));
  return sums;
}

TrainResult train_impl(const Network& net0, const Dataset& train_set, const Dataset& test_set,
                       const Hyperparams& hp, const TrainOptions& opts) {
  validate(hp);
  if (train_set.size() == 0) throw ConfigError("training dataset is empty");
  if (static_cast<size_t>(hp.batch_size) > train_set.size())
    throw ConfigError(strfmt("batch size %d exceeds dataset size %zu", hp.batch_size,
                             train_set.size()));

  TrainResult res;
  res.net = net0;
  layer_widths(res.net);  // validate wiring against nothing changing

  const bool lowrank_path = hp.variant != Variant::mbgd;
  const bool freeze_dense = hp.rank == 0;  // diagnostic: conv-only training
  const bool update_dense = !freeze_dense;
  std::vector<DenseRef> dense = dense_refs(res.net);

  SbpcaConfig cfg;
  cfg.rank = hp.rank;
  cfg.block_size = effective_block_size(hp);
  cfg.variant = hp.variant == Variant::sbpcav ? SbpcaVariant::sbpcav : SbpcaVariant::sbpca;
  cfg.sigma_floor = hp.sigma_floor;
  cfg.seed = hp.seed;

  std::vector<int> instrumented_indices;
  if (lowrank_path && !freeze_dense) {
    for (size_t di = 0; di < dense.size(); ++di) {
      const DenseLayer& layer = *dense[di].layer;
      const int m = layer.weights.rows();
      const int n = layer.weights.cols();
      if (hp.rank > std::min(m, n))
        throw ConfigError(strfmt("rank %d exceeds min(%d, %d) for dense layer %s", hp.rank, m,
                                 n, layer.name.c_str()));
      SbpcaConfig layer_cfg = cfg;
      layer_cfg.seed = mix_seed(hp.seed, 0x1a7e0000ull + di);
      res.states.push_back(init_state(m, n, layer_cfg));
      res.instrumented_layers.push_back(layer.name);
      instrumented_indices.push_back(dense[di].layer_index);
    }
  }

  // Auxiliary-memory accounting (floats, model weights excluded).
  {
    uint64_t tape = 0, grad = 0, state = 0, update = 0, qr_ws = 0;
    for (const DenseRef& ref : dense) {
      const uint64_t m = ref.layer->weights.rows();
      const uint64_t n = ref.layer->weights.cols();
      const uint64_t B = hp.batch_size;
      const uint64_t k = hp.rank;
      tape += B * (m + n);
      grad += m * n;
      if (lowrank_path && !freeze_dense) {
        state += k * (m + n + 1);
        update += k * (m + n);
        qr_ws += k * k + std::max(m, n) * (k + 1);
      }
    }
    res.ledger.note_aux("tape", tape);
    res.ledger.note_aux("gradient", grad);
    if (lowrank_path && !freeze_dense) {
      res.ledger.note_aux("state", state);
      res.ledger.note_aux("stream_update", update);
      res.ledger.note_aux("qr_workspace", qr_ws);
      res.ledger.note_concurrent(tape + grad + state + update + qr_ws);
    } else {
      res.ledger.note_concurrent(tape + grad);
    }
  }

  double max_dev = 0.0;
  bool any_dev = false;
  BlockHook hook;
  if (opts.monitor_orthonormality) {
    hook = [&](const LowRankState& s, int) {
      max_dev = std::max(max_dev, orthonormality_deviation(s.x_hat));
      max_dev = std::max(max_dev, orthonormality_deviation(s.delta_hat));
      any_dev = true;
    };
  }

  SbpcaStats stats;

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    LedgerScope attach(&res.ledger, FlopCategory::other);

    const auto idx_batches = batches(train_set, hp.batch_size, hp.seed, epoch);
    double loss_sum = 0.0;
    for (size_t bi = 0; bi < idx_batches.size(); ++bi) {
      const std::vector<int32_t>& batch_idx = idx_batches[bi];
      const Matrix x = gather_rows(train_set.images, batch_idx);
      std::vector<int32_t> labels(batch_idx.size());
      for (size_t i = 0; i < batch_idx.size(); ++i) labels[i] = train_set.labels[batch_idx[i]];

      ForwardResult fwd = forward(res.net, x, Mode::train, batch_seed(hp.seed, epoch, bi));
      BackwardResult bwd = backward(res.net, fwd.cache, labels);
      loss_sum += bwd.loss;

      if (update_dense) {
        size_t si = 0;
        for (const DenseTape& tape : bwd.tapes) {
          DenseLayer* layer = nullptr;
          for (const DenseRef& ref : dense)
            if (ref.layer_index == tape.layer_index) layer = ref.layer;
          const std::vector<double> bias_grad = dense_mean_bias_gradient(tape);
          if (!lowrank_path) {
            const Matrix g = dense_mean_gradient(tape);
            apply_dense_update_inplace(*layer, g, hp.alpha_fc, bias_grad);
          } else {
            const std::vector<BlockSample> blocks = hp.variant == Variant::sbpcav
                                                        ? chunk_doubling(tape)
                                                        : chunk_fixed(tape, cfg.block_size);
            LowRankState& state = res.states[si];
            state = hp.variant == Variant::sbpcav
                        ? sbpcav_update(state, blocks, cfg, hook, &stats)
                        : sbpca_update(state, blocks, cfg, hook, &stats);
            const Matrix g = recompose(state);
            apply_dense_update_inplace(*layer, g, hp.alpha_fc, bias_grad);
            ++si;
          }
        }
      }
      for (const ConvGrad& cg : bwd.conv_grads)
        apply_conv_update_inplace(std::get<Conv2dLayer>(res.net.layers[cg.layer_index]), cg,
                                  hp.alpha_conv);
    }

    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = idx_batches.empty() ? 0.0 : loss_sum / static_cast<double>(idx_batches.size());
    const EvalResult ev = evaluate(res.net, test_set, hp.batch_size);
    row.test_loss = ev.loss;
    row.test_accuracy = ev.accuracy;

    if (!res.states.empty()) {
      row.tracking_error.assign(res.states.size(),
                                std::numeric_limits<double>::quiet_NaN());
      if (opts.tracking_cadence > 0 && epoch % opts.tracking_cadence == 0) {
        const std::vector<Matrix> grads = full_dataset_gradients(
            res.net, train_set, instrumented_indices, hp.batch_size);
        for (size_t i = 0; i < res.states.size(); ++i)
          row.tracking_error[i] = tracking_error(grads[i], res.states[i]);
      }
    }

    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.metrics.push_back(row);
    if (opts.on_epoch) opts.on_epoch(res.metrics.back());
  }

  if (any_dev) res.max_ortho_deviation = max_dev;
  res.sigma_clamp_events = stats.sigma_clamp_events;
  return res;
}

}  // namespace

TrainResult train_mbgd(const Network& net, const Dataset& train_set, const Dataset& test_set,
                       const Hyperparams& hp, const TrainOptions& opts) {
  if (hp.variant != Variant::mbgd)
    throw ConfigError("train_mbgd called with a non-MBGD variant");
  return train_impl(net, train_set, test_set, hp, opts);
}

TrainResult train_sbpca(const Network& net, const Dataset& train_set, const Dataset& test_set,
                        const Hyperparams& hp, const TrainOptions& opts) {
  if (hp.variant == Variant::mbgd)
    throw ConfigError("train_sbpca requires variant SBPCA or SBPCAV");
  return train_impl(net, train_set, test_set, hp, opts);
}

EvalResult evaluate(const Network& net, const Dataset& d, int batch_size) {
  EvalResult out;
  if (d.size() == 0) return out;
  size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<int32_t> idx;
  size_t off = 0;
  while (off < d.size()) {
    const size_t take = std::min(static_cast<size_t>(batch_size), d.size() - off);
    idx.resize(take);
    for (size_t i = 0; i < take; ++i) idx[i] = static_cast<int32_t>(off + i);
    const Matrix x = gather_rows(d.images, idx);
    std::vector<int32_t> labels(d.labels.begin() + static_cast<ptrdiff_t>(off),
                                d.labels.begin() + static_cast<ptrdiff_t>(off + take));
    const ForwardResult fwd = forward(net, x, Mode::eval, 0);
    loss_sum += softmax_cross_entropy_loss(fwd.logits, labels) * static_cast<double>(take);
    for (size_t i = 0; i < take; ++i)
      if (argmax_row(fwd.logits, static_cast<int>(i)) == labels[i]) ++correct;
    off += take;
  }
  out.loss = loss_sum / static_cast<double>(d.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(d.size());
  return out;
}

int epochs_to_converge(std::span<const double> test_accuracy) {
  const int n = static_cast<int>(test_accuracy.size());
  if (n == 0) throw ConfigError("epochs_to_converge: empty series");
  std::vector<double> trailing(n);
  for (int e = 0; e < n; ++e) {
    const int lo = std::max(0, e - 4);
    double sum = 0.0;
    for (int i = lo; i <= e; ++i) sum += test_accuracy[i];
    trailing[e] = sum / (e - lo + 1);
  }
  double best = -std::numeric_limits<double>::infinity();
  for (double v : trailing)
    if (!std::isnan(v)) best = std::max(best, v);
  constexpr double kHalfPoint = 0.005;
  for (int e = 0; e < n; ++e)
    if (trailing[e] >= best - kHalfPoint) return e + 1;
  return n + 1;  // never plateaued: "failed to converge"
}

int epochs_to_converge(const std::vector<MetricsRow>& metrics) {
  std::vector<double> acc(metrics.size());
  for (size_t i = 0; i < metrics.size(); ++i) acc[i] = metrics[i].test_accuracy;
  return epochs_to_converge(acc);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows,
                       const std::vector<std::string>& layer_names) {
  std::ofstream os(path, std::ios::binary);  // binary: LF endings everywhere
  if (!os) throw IoError(strfmt("cannot open %s for writing", path.string().c_str()));
  os << "epoch,train_loss,test_loss,test_accuracy";
  for (const std::string& name : layer_names) os << ",tracking_error_" << name;
  os << ",wall_seconds\n";
  for (const MetricsRow& row : rows) {
    os << row.epoch << ',' << format_double(row.train_loss) << ','
       << format_double(row.test_loss) << ',' << format_double(row.test_accuracy);
    for (size_t i = 0; i < layer_names.size(); ++i) {
      const double v = i < row.tracking_error.size()
                           ? row.tracking_error[i]
                           : std::numeric_limits<double>::quiet_NaN();
      os << ',' << format_double(v);
    }
    os << ',' << format_double(row.wall_seconds) << '\n';
  }
  if (!os) throw IoError(strfmt("write failed: %s", path.string().c_str()));
}

MetricsFile read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(strfmt("cannot open %s", path.string().c_str()));
  std::string line;
  if (!std::getline(is, line)) throw IoError(strfmt("%s: empty metrics file", path.string().c_str()));
  MetricsFile out;
  std::vector<std::string> headers;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) headers.push_back(col);
  }
  constexpr const char* kPrefix = "tracking_error_";
  for (const std::string& h : headers)
    if (h.rfind(kPrefix, 0) == 0) out.layer_names.push_back(h.substr(strlen(kPrefix)));
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != headers.size())
      throw IoError(strfmt("%s: row has %zu cells, header has %zu", path.string().c_str(),
                           cells.size(), headers.size()));
    MetricsRow row;
    row.epoch = std::stoi(cells[0]);
    row.train_loss = std::stod(cells[1]);
    row.test_loss = std::stod(cells[2]);
    row.test_accuracy = std::stod(cells[3]);
    for (size_t i = 0; i < out.layer_names.size(); ++i)
      row.tracking_error.push_back(std::stod(cells[4 + i]));
    row.wall_seconds = std::stod(cells.back());
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace lowrank
