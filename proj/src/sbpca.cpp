#include "lowrank/sbpca.hpp"

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

constexpr char kStateMagic[4] = {'S', 'B', 'P', 'C'};
constexpr uint32_t kStateVersion = 1;

void check_block(const BlockSample& blk, const LowRankState& s, int index_1based) {
  if (blk.x_block.rows() != blk.delta_block.rows())
    throw ShapeError(strfmt("block %d: x rows %d != delta rows %d", index_1based,
                            blk.x_block.rows(), blk.delta_block.rows()));
  if (blk.x_block.cols() != s.n() || blk.delta_block.cols() != s.m())
    throw ShapeError(strfmt("block %d: got x %dx%d, delta %dx%d for state m=%d n=%d",
                            index_1based, blk.x_block.rows(), blk.x_block.cols(),
                            blk.delta_block.rows(), blk.delta_block.cols(), s.m(), s.n()));
  if (!blk.x_block.all_finite() || !blk.delta_block.all_finite())
    throw NumericError(strfmt("block %d: non-finite activation or error entries", index_1based));
}

// One bi-iteration step on a single block, with mixing weights w_old + w_new
// = 1. Both singular-vector panels are re-orthonormalized afterwards and the
// singular values re-estimated from inner products with the stream.
void block_step(LowRankState& s, const BlockSample& blk, double w_old, double w_new,
                const SbpcaConfig& cfg, SbpcaStats* stats) {
  const int b = blk.rows();
  const int k = s.k();
  const double inv_b = 1.0 / b;

  std::vector<double> inv_sigma(k);
  uint64_t clamps = 0;
  for (int j = 0; j < k; ++j) {
    double v = s.sigma[j];
    if (v < cfg.sigma_floor) {
      v = cfg.sigma_floor;
      ++clamps;
    }
    inv_sigma[j] = 1.0 / v;
  }

  Matrix y, z, xe, de;
  {
    CategoryScope scope(FlopCategory::stream);
    y = matmul(blk.delta_block, s.delta_hat);  // b x k
    z = matmul(blk.x_block, s.x_hat);          // b x k
    scale(y, inv_b);
    scale(z, inv_b);
    xe = matmul_tn(blk.x_block, y);      // n x k
    de = matmul_tn(blk.delta_block, z);  // m x k
  }

  {
    // mixing and the diagonal rescale are O(k(m+n)) bookkeeping
    CategoryScope scope(FlopCategory::sigma);
    for (int i = 0; i < s.n(); ++i)
      for (int j = 0; j < k; ++j)
        s.x_hat(i, j) = w_old * s.x_hat(i, j) + w_new * xe(i, j) * inv_sigma[j];
    for (int i = 0; i < s.m(); ++i)
      for (int j = 0; j < k; ++j)
        s.delta_hat(i, j) = w_old * s.delta_hat(i, j) + w_new * de(i, j) * inv_sigma[j];
    ledger_add(3ull * k * (s.m() + s.n()));
  }

  {
    CategoryScope scope(FlopCategory::qr);
    s.x_hat = qr(s.x_hat).q;
    s.delta_hat = qr(s.delta_hat).q;
  }

  {
    CategoryScope scope(FlopCategory::sigma);
    const Matrix yq = matmul(blk.delta_block, s.delta_hat);  // b x k
    const Matrix zq = matmul(blk.x_block, s.x_hat);          // b x k
    for (int j = 0; j < k; ++j) {
      double dot = 0.0;
      for (int i = 0; i < b; ++i) dot += yq(i, j) * zq(i, j);
      double v = w_old * s.sigma[j] + w_new * dot * inv_b;
      if (v < 0.0) {
        // (delta_hat_j, sigma_j) -> (-delta_hat_j, -sigma_j) is a gauge
        // freedom of the decomposition; canonicalize to sigma >= 0 so a
        // sign-mismatched column pair cannot pin sigma at the floor.
        v = -v;
        for (int i = 0; i < s.m(); ++i) s.delta_hat(i, j) = -s.delta_hat(i, j);
        if (stats != nullptr) ++stats->sigma_sign_flips;
      }
      if (v < cfg.sigma_floor) {
        v = cfg.sigma_floor;
        ++clamps;
      }
      s.sigma[j] = v;
    }
    ledger_add(2ull * b * k + 3ull * k);
  }

  if (stats != nullptr) stats->sigma_clamp_events += clamps;
}

}  // namespace

LowRankState init_state(int m, int n, const SbpcaConfig& cfg) {
  const int k = cfg.rank;
  if (k < 1 || k > std::min(m, n))
    throw ConfigError(strfmt("init_state: rank %d outside [1, min(%d, %d)]", k, m, n));
  Rng rng_x(mix_seed(cfg.seed, 0x78aa));
  Rng rng_d(mix_seed(cfg.seed, 0xd317));
  LowRankState s;
  s.x_hat = qr(Matrix::gaussian(n, k, rng_x)).q;
  s.delta_hat = qr(Matrix::gaussian(m, k, rng_d)).q;
  s.sigma.assign(k, 1.0);
  return s;
}

LowRankState sbpca_update(const LowRankState& state, std::span<const BlockSample> batch,
                          const SbpcaConfig& cfg, const BlockHook& hook, SbpcaStats* stats) {
  LowRankState s = state;
  int i = 1;
  for (const BlockSample& blk : batch) {
    check_block(blk, s, i);
    if (blk.rows() != cfg.block_size)
      throw ShapeError(strfmt("block %d: %d rows, configured block size is %d", i, blk.rows(),
                              cfg.block_size));
    const double w_new = 1.0 / (i + 1);
    block_step(s, blk, i * w_new, w_new, cfg, stats);
    if (hook) hook(s, i);
    ++i;
  }
  return s;
}

LowRankState sbpcav_update(const LowRankState& state, std::span<const BlockSample> batch,
                           const SbpcaConfig& cfg, const BlockHook& hook, SbpcaStats* stats) {
  LowRankState s = state;
  int expected = 1;
  int i = 1;
  for (const BlockSample& blk : batch) {
    check_block(blk, s, i);
    if (blk.rows() != expected)
      throw ConfigError(strfmt("sbpcav block %d: %d rows, expected %d (sizes must double)", i,
                               blk.rows(), expected));
    block_step(s, blk, 0.5, 0.5, cfg, stats);
    if (hook) hook(s, i);
    expected *= 2;
    ++i;
  }
  return s;
}

Matrix recompose(const LowRankState& state) {
  CategoryScope scope(FlopCategory::recompose);
  Matrix scaled = state.delta_hat;  // m x k
  for (int i = 0; i < scaled.rows(); ++i)
    for (int j = 0; j < scaled.cols(); ++j) scaled(i, j) *= state.sigma[j];
  return matmul_nt(scaled, state.x_hat);  // m x n
}

double tracking_error(const Matrix& full_grad, const LowRankState& state) {
  if (full_grad.rows() != state.m() || full_grad.cols() != state.n())
    throw ShapeError(strfmt("tracking_error: gradient %dx%d vs state %dx%d", full_grad.rows(),
                            full_grad.cols(), state.m(), state.n()));
  Matrix diff = recompose(state);
  scale(diff, -1.0);
  add_scaled(diff, full_grad, 1.0);
  return frobenius_norm(diff);
}

namespace {

void write_bytes(std::ofstream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& os, uint32_t v) { write_bytes(os, &v, 4); }

uint32_t read_u32(std::ifstream& is, const std::filesystem::path& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw IoError(strfmt("truncated state checkpoint: %s", path.string().c_str()));
  return v;
}

}  // namespace

void save_state(const LowRankState& state, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(strfmt("cannot open %s for writing", path.string().c_str()));
  write_bytes(os, kStateMagic, 4);
  write_u32(os, kStateVersion);
  write_u32(os, static_cast<uint32_t>(state.m()));
  write_u32(os, static_cast<uint32_t>(state.n()));
  write_u32(os, static_cast<uint32_t>(state.k()));
  write_bytes(os, state.sigma.data(), state.sigma.size() * sizeof(double));
  write_bytes(os, state.x_hat.data().data(), state.x_hat.size() * sizeof(double));
  write_bytes(os, state.delta_hat.data().data(), state.delta_hat.size() * sizeof(double));
  if (!os) throw IoError(strfmt("write failed: %s", path.string().c_str()));
}

LowRankState load_state(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(strfmt("cannot open %s", path.string().c_str()));
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kStateMagic, 4) != 0)
    throw IoError(strfmt("bad state checkpoint magic in %s", path.string().c_str()));
  const uint32_t version = read_u32(is, path);
  if (version != kStateVersion)
    throw IoError(strfmt("unsupported state checkpoint version %u in %s", version,
                         path.string().c_str()));
  const uint32_t m = read_u32(is, path);
  const uint32_t n = read_u32(is, path);
  const uint32_t k = read_u32(is, path);
  LowRankState s;
  s.sigma.resize(k);
  s.x_hat = Matrix(static_cast<int>(n), static_cast<int>(k));
  s.delta_hat = Matrix(static_cast<int>(m), static_cast<int>(k));
  auto read_doubles = [&](double* p, size_t count) {
    if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(count * sizeof(double))))
      throw IoError(strfmt("truncated state checkpoint: %s", path.string().c_str()));
  };
  read_doubles(s.sigma.data(), k);
  read_doubles(s.x_hat.data().data(), s.x_hat.size());
  read_doubles(s.delta_hat.data().data(), s.delta_hat.size());
  return s;
}

}  // namespace lowrank
