#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lowrank/cost.hpp"
#include "lowrank/data.hpp"
#include "lowrank/nn.hpp"
#include "lowrank/sbpca.hpp"

namespace lowrank {

enum class Variant { mbgd, sbpca, sbpcav };
const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct Hyperparams {
  int batch_size = 128;  // B; SBPCAV consumes B = 2^L - 1 samples per batch
  int block_size = 0;    // b; 0 means the default B/4
  int rank = 10;         // k; 0 freezes the dense layers (diagnostic mode)
  double alpha_fc = 0.01;
  double alpha_conv = 0.01;
  int epochs = 0;
  Variant variant = Variant::mbgd;
  bool dropout = false;
  double dropout_fraction = 0.5;
  uint64_t seed = 0;
  double sigma_floor = 1e-8;
};

// Throws ConfigError on violated constraints (SBPCA: B a power of two and
// divisible by b; SBPCAV: B+1 a power of two).
void validate(const Hyperparams& hp);
int effective_block_size(const Hyperparams& hp);

struct MetricsRow {
  int epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  // One entry per instrumented layer; NaN on epochs without a probe.
  std::vector<double> tracking_error;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  // Full-training-set gradient probes every this many epochs (0 disables).
  int tracking_cadence = 5;
  // Track max |X^T X - I| and |D^T D - I| after every block (costly).
  bool monitor_orthonormality = false;
  std::function<void(const MetricsRow&)> on_epoch;
};

struct TrainResult {
  Network net;
  std::vector<MetricsRow> metrics;
  CostLedger ledger;
  std::vector<std::string> instrumented_layers;  // dense layer names (SBPCA paths)
  std::vector<LowRankState> states;              // final per-layer state (SBPCA paths)
  double max_ortho_deviation = std::numeric_limits<double>::quiet_NaN();
  uint64_t sigma_clamp_events = 0;
};

TrainResult train_mbgd(const Network& net, const Dataset& train_set, const Dataset& test_set,
                       const Hyperparams& hp, const TrainOptions& opts = {});
TrainResult train_sbpca(const Network& net, const Dataset& train_set, const Dataset& test_set,
                        const Hyperparams& hp, const TrainOptions& opts = {});

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalResult evaluate(const Network& net, const Dataset& d, int batch_size = 256);

// First epoch (1-based) whose trailing-5-epoch mean test accuracy comes
// within 0.5 percentage points of the best trailing mean of the run;
// windows are clipped at the start. Returns size()+1 when no epoch
// qualifies (reported as "failed to converge").
int epochs_to_converge(std::span<const double> test_accuracy);
int epochs_to_converge(const std::vector<MetricsRow>& metrics);

// Shortest decimal representation that round-trips the exact double.
std::string format_double(double v);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows,
                       const std::vector<std::string>& layer_names);

struct MetricsFile {
  std::vector<std::string> layer_names;
  std::vector<MetricsRow> rows;
};
MetricsFile read_metrics_csv(const std::filesystem::path& path);

}  // namespace lowrank
