#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lowrank/matrix.hpp"

namespace lowrank {

// Immutable after load; samples are rows of `images`, channel-major,
// normalized to [0, 1] unless standardized.
struct Dataset {
  int channels = 1, height = 0, width = 0;
  int class_count = 0;
  Matrix images;  // N x (channels*height*width)
  std::vector<int32_t> labels;
  size_t size() const { return labels.size(); }
};

// IDX image/label pair (MNIST layout). Validates the big-endian magics
// (0x803 images, 0x801 labels), rejects truncated files, and scales pixel
// bytes to [0, 1].
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

// CIFAR binary batches. 3073-byte records are CIFAR-10 (label + 3x32x32
// pixels); 3074-byte records are CIFAR-100 (coarse label ignored, fine
// label kept). Files are concatenated in the order given.
Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_files);

// First n samples in file order (deterministic desk-scale slice); n = 0
// keeps everything.
Dataset subset_first(const Dataset& d, size_t n);

double mean_pixel(const Dataset& d);

struct ChannelStats {
  std::vector<double> mean, stddev;
};
ChannelStats channel_stats(const Dataset& d);
// (x - mean_c) / stddev_c per channel, with the supplied (training-set) stats.
void standardize(Dataset& d, const ChannelStats& stats);

// Synthetic (activation, error) stream whose expected mean outer product
// (1/N) sum delta x^T equals u * diag(s) * v^T for seeded orthonormal u, v.
struct SyntheticStreamSpec {
  int m = 0, n = 0;
  int rank = 0;
  std::vector<double> singular_values;  // non-increasing, positive
  int samples = 0;
  double noise_scale = 0.0;
  uint64_t seed = 0;
};

struct SyntheticStream {
  Matrix xs;              // N x n
  Matrix deltas;          // N x m
  Matrix u;               // m x r ground truth
  Matrix v;               // n x r
  std::vector<double> s;  // r
};

SyntheticStream synthetic_stream(const SyntheticStreamSpec& spec);

// Seeded per-epoch permutation cut into floor(N/B) full batches; the
// remainder is dropped.
std::vector<std::vector<int32_t>> batches(const Dataset& d, int batch_size, uint64_t seed,
                                          int epoch);

}  // namespace lowrank
