#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

namespace lowrank {

// Buckets for the FLOP ledger. The gradient-construction buckets (dense_grad,
// stream, qr, recompose) map one-to-one onto the closed-form cost model;
// everything else is run overhead that the model deliberately leaves out.
enum class FlopCategory {
  inference,   // forward passes and backprop data movement
  dense_grad,  // full-rank batch gradient assembly (MBGD path)
  stream,      // per-block singular-vector update products
  qr,          // re-orthonormalization
  recompose,   // expanding the low-rank triple into a dense gradient
  sigma,       // singular-value estimation and block mixing
  conv_grad,   // convolutional gradients (always full rank)
  apply,       // weight/bias update application
  other,
};
constexpr int kFlopCategoryCount = 9;
const char* flop_category_name(FlopCategory c);

// FLOP and auxiliary-memory accounting for one training run. flops counters
// are monotone; aux components record the high-water mark of each named
// buffer family (training-data/gradient memory, excluding the model itself).
struct CostLedger {
  std::array<uint64_t, kFlopCategoryCount> flops{};
  std::map<std::string, uint64_t> aux_floats;
  uint64_t peak_aux_floats = 0;

  void add(FlopCategory c, uint64_t n) { flops[static_cast<int>(c)] += n; }
  uint64_t get(FlopCategory c) const { return flops[static_cast<int>(c)]; }
  uint64_t total_flops() const;

  void note_aux(const std::string& component, uint64_t floats);
  void note_concurrent(uint64_t total_floats);
};

// Attaches a ledger + category to the current thread for the lifetime of the
// scope; matrix products report their FLOPs to whatever is attached. Nest
// scopes to switch category. Thread-local by construction, so concurrent
// runs never share a ledger accidentally.
class LedgerScope {
 public:
  LedgerScope(CostLedger* ledger, FlopCategory category);
  ~LedgerScope();
  LedgerScope(const LedgerScope&) = delete;
  LedgerScope& operator=(const LedgerScope&) = delete;

 private:
  CostLedger* prev_ledger_;
  FlopCategory prev_category_;
};

// Switches the category on whatever ledger is currently attached, leaving
// the ledger itself in place.
class CategoryScope {
 public:
  explicit CategoryScope(FlopCategory category);
  ~CategoryScope();
  CategoryScope(const CategoryScope&) = delete;
  CategoryScope& operator=(const CategoryScope&) = delete;

 private:
  FlopCategory prev_category_;
};

// Report flops to the currently attached ledger, if any.
void ledger_add(uint64_t flops);

// Closed-form per-batch cost model for one m x n dense layer trained with
// batch size B, block size b, and rank k.
struct CostModel {
  // FLOPs per batch
  uint64_t mbgd_flops = 0;             // 2*B*m*n
  uint64_t sbpca_stream_flops = 0;     // 4*B*k*(m+n)
  uint64_t sbpca_qr_flops = 0;         // (B/b) * 2k^2(m+n) * 2 (factor + explicit Q)
  uint64_t sbpca_recompose_flops = 0;  // 2*k*m*n
  uint64_t sbpca_flops = 0;            // sum of the three above

  // auxiliary floats
  uint64_t mbgd_tape_floats = 0;          // B*(m+n), streamed activation/error pairs
  uint64_t mbgd_grad_floats = 0;          // m*n, materialized batch gradient
  uint64_t mbgd_aux_floats = 0;           // min of the two accountings
  uint64_t sbpca_state_floats = 0;        // k*(m+n+1)
  uint64_t sbpca_update_floats = 0;       // k*(m+n)
  uint64_t sbpca_qr_workspace_floats = 0; // k^2 + max(m,n)*(k+1)
  uint64_t sbpca_aux_floats = 0;          // sum of the three above

  // reduction ratios
  double ratio_flops = 0.0;          // sbpca_flops / mbgd_flops
  double ratio_memory_batch = 0.0;   // (3k+1)/B, vs the streamed batch tape
  double ratio_memory_expanded = 0.0;  // [2k(m+n)+max(m,n)(k+1)+k^2] / (m*n)
};

CostModel cost_model(int m, int n, int B, int b, int k);

}  // namespace lowrank
