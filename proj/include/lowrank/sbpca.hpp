#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "lowrank/matrix.hpp"

namespace lowrank {

enum class SbpcaVariant { sbpca, sbpcav };

struct SbpcaConfig {
  int rank = 1;        // k
  int block_size = 1;  // b (fixed-size variant)
  SbpcaVariant variant = SbpcaVariant::sbpca;
  double sigma_floor = 1e-8;
  uint64_t seed = 0;
};

// One streaming block: b stacked input activations and the matching
// backpropagated errors.
struct BlockSample {
  Matrix x_block;      // b x n
  Matrix delta_block;  // b x m
  int rows() const { return x_block.rows(); }
};

// Rank-k approximation of a dense layer's batch gradient: right singular
// vectors ("singular activations"), left singular vectors ("singular
// backpropagated errors"), and the singular-value estimates. Exactly
// k(m+n+1) scalars of state.
struct LowRankState {
  Matrix x_hat;               // n x k, orthonormal columns
  Matrix delta_hat;           // m x k, orthonormal columns
  std::vector<double> sigma;  // k

  int m() const { return delta_hat.rows(); }
  int n() const { return x_hat.rows(); }
  int k() const { return static_cast<int>(sigma.size()); }
  size_t storage_floats() const {
    return sigma.size() + x_hat.size() + delta_hat.size();
  }
};

// Called after each completed block with the post-update state and the
// 1-based block index. Used by tests and the orthonormality monitor.
using BlockHook = std::function<void(const LowRankState&, int)>;

// Counters a caller may pass to observe update internals.
struct SbpcaStats {
  uint64_t sigma_clamp_events = 0;
  uint64_t sigma_sign_flips = 0;
};

// Fresh state: Q factors of seeded Gaussian panels, all singular-value
// estimates at one. Requires cfg.rank <= min(m, n).
LowRankState init_state(int m, int n, const SbpcaConfig& cfg);

// One batch of blocks with the fixed block size b = cfg.block_size and
// convergence weights i/(i+1), 1/(i+1) for 1-based block index i. Returns
// the updated state; the input state is untouched (it is the caller's
// carry between batches).
LowRankState sbpca_update(const LowRankState& state, std::span<const BlockSample> batch,
                          const SbpcaConfig& cfg, const BlockHook& hook = {},
                          SbpcaStats* stats = nullptr);

// Variable-block variant: fixed weights 1/2, block sizes 2^0, 2^1, ...,
// 2^(L-1) in order (total rows 2^L - 1).
LowRankState sbpcav_update(const LowRankState& state, std::span<const BlockSample> batch,
                           const SbpcaConfig& cfg, const BlockHook& hook = {},
                           SbpcaStats* stats = nullptr);

// Expand the triple back into the dense gradient delta_hat * diag(sigma) *
// x_hat^T (m x n).
Matrix recompose(const LowRankState& state);

// Frobenius distance between a full gradient and the recomposed
// approximation.
double tracking_error(const Matrix& full_grad, const LowRankState& state);

// Flat binary state checkpoint: magic "SBPC", version, m, n, k (u32 LE),
// then sigma, x_hat, delta_hat as raw doubles. Bit-exact round trip.
void save_state(const LowRankState& state, const std::filesystem::path& path);
LowRankState load_state(const std::filesystem::path& path);

}  // namespace lowrank
