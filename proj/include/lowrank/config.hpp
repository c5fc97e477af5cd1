#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lowrank/train.hpp"

namespace lowrank {

// One experiment configuration: fixed settings plus the sweep axes. Parsed
// from flat key=value text with a [sweep] section for the list-valued axes.
struct RunConfig {
  // architecture / data
  std::string preset;               // mlp-mnist | mini-conv
  std::string dataset = "idx";      // idx | cifar10
  std::filesystem::path train_images, train_labels, test_images, test_labels;  // idx
  std::vector<std::filesystem::path> train_files, test_files;                  // cifar
  size_t train_limit = 0;  // 0 = all; deterministic first-N slice
  size_t test_limit = 0;
  bool standardize = false;

  // fixed hyperparameters
  int batch_size = 128;
  int block_size = 0;  // 0 -> B/4
  int epochs = 0;
  double alpha_conv = 0.01;
  bool dropout = false;
  double dropout_fraction = 0.5;
  double sigma_floor = 1e-8;
  int tracking_cadence = 5;

  // sweep axes (variant x rank x alpha_fc x seed)
  std::vector<Variant> variants;
  std::vector<int> ranks;
  std::vector<double> alpha_fcs;
  std::vector<uint64_t> seeds;

  std::filesystem::path output_dir;
  int workers = 0;  // 0: LOWRANK_THREADS or hardware count
};

RunConfig parse_run_config_text(const std::string& text, const std::string& origin);
RunConfig parse_run_config(const std::filesystem::path& path);

// Canonical serialization of the resolved config (defaults filled in);
// stored verbatim in every run directory.
std::string resolved_config_text(const RunConfig& cfg);

// FNV-1a of the resolved text; prefixes every artifact path so differing
// configs never collide.
uint64_t config_hash(const RunConfig& cfg);

}  // namespace lowrank
