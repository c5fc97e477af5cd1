#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lowrank/config.hpp"
#include "lowrank/train.hpp"

namespace lowrank {

// One (variant, rank, alpha_fc, seed) combination of a sweep.
struct RunKey {
  Variant variant = Variant::mbgd;
  int rank = 0;
  double alpha_fc = 0.01;
  uint64_t seed = 0;
  std::string dir_name() const;
};

struct RunSummary {
  RunKey key;
  int epochs = 0;
  double final_train_loss = 0.0;
  double final_test_loss = 0.0;
  double final_test_accuracy = 0.0;
  double best_test_accuracy = 0.0;
  int etc_epochs = 0;
  uint64_t aux_floats = 0;        // model accounting for this run's variant
  uint64_t baseline_aux_floats = 0;  // MBGD batch-tape accounting, same net
  uint64_t flops_per_batch = 0;
  std::string status = "ok";
  std::string run_dir;
};

std::vector<RunKey> enumerate_runs(const RunConfig& cfg);

// Executes every sweep combination (bounded worker pool; LOWRANK_THREADS
// caps the width), writes per-run artifacts and the summary.csv, and
// returns the summaries in enumeration order.
std::vector<RunSummary> execute_all(const RunConfig& cfg);

void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<RunSummary>& rows);
std::vector<RunSummary> read_summary_csv(const std::filesystem::path& path);

// CLI entry points; return the process exit code (0 ok, 1 config error,
// 2 runtime failure).
int run_command(const std::filesystem::path& config_path, std::ostream& out,
                std::ostream& err);
int report_command(const std::filesystem::path& dir, std::ostream& out, std::ostream& err);

}  // namespace lowrank
