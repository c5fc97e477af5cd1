#include "lowrank/cost.hpp"

#include <algorithm>

#include "lowrank/error.hpp"

namespace lowrank {

namespace {
thread_local CostLedger* tl_ledger = nullptr;
thread_local FlopCategory tl_category = FlopCategory::other;
}  // namespace

const char* flop_category_name(FlopCategory c) {
  switch (c) {
    case FlopCategory::inference: return "inference";
    case FlopCategory::dense_grad: return "dense_grad";
    case FlopCategory::stream: return "stream";
    case FlopCategory::qr: return "qr";
    case FlopCategory::recompose: return "recompose";
    case FlopCategory::sigma: return "sigma";
    case FlopCategory::conv_grad: return "conv_grad";
    case FlopCategory::apply: return "apply";
    case FlopCategory::other: return "other";
  }
  return "?";
}

uint64_t CostLedger::total_flops() const {
  uint64_t t = 0;
  for (uint64_t f : flops) t += f;
  return t;
}

void CostLedger::note_aux(const std::string& component, uint64_t floats) {
  uint64_t& slot = aux_floats[component];
  slot = std::max(slot, floats);
}

void CostLedger::note_concurrent(uint64_t total_floats) {
  peak_aux_floats = std::max(peak_aux_floats, total_floats);
}

LedgerScope::LedgerScope(CostLedger* ledger, FlopCategory category)
    : prev_ledger_(tl_ledger), prev_category_(tl_category) {
  tl_ledger = ledger;
  tl_category = category;
}

LedgerScope::~LedgerScope() {
  tl_ledger = prev_ledger_;
  tl_category = prev_category_;
}

CategoryScope::CategoryScope(FlopCategory category) : prev_category_(tl_category) {
  tl_category = category;
}

CategoryScope::~CategoryScope() { tl_category = prev_category_; }

void ledger_add(uint64_t flops) {
  if (tl_ledger != nullptr) tl_ledger->add(tl_category, flops);
}

CostModel cost_model(int m, int n, int B, int b, int k) {
  if (m < 1 || n < 1 || B < 1 || b < 1 || k < 1)
    throw ConfigError(strfmt("cost_model: all counts must be >= 1 (m=%d n=%d B=%d b=%d k=%d)",
                             m, n, B, b, k));
  if (k > std::min(m, n))
    throw ConfigError(strfmt("cost_model: k=%d exceeds min(m,n)=%d", k, std::min(m, n)));

  const uint64_t um = m, un = n, uB = B, ub = b, uk = k;
  const uint64_t mx = std::max(um, un);
  const uint64_t blocks = uB / ub;

  CostModel c;
  c.mbgd_flops = 2 * uB * um * un;
  c.sbpca_stream_flops = 4 * uB * uk * (um + un);
  c.sbpca_qr_flops = blocks * 2 * uk * uk * (um + un) * 2;
  c.sbpca_recompose_flops = 2 * uk * um * un;
  c.sbpca_flops = c.sbpca_stream_flops + c.sbpca_qr_flops + c.sbpca_recompose_flops;

  c.mbgd_tape_floats = uB * (um + un);
  c.mbgd_grad_floats = um * un;
  c.mbgd_aux_floats = std::min(c.mbgd_tape_floats, c.mbgd_grad_floats);
  c.sbpca_state_floats = uk * (um + un + 1);
  c.sbpca_update_floats = uk * (um + un);
  c.sbpca_qr_workspace_floats = uk * uk + mx * (uk + 1);
  c.sbpca_aux_floats =
      c.sbpca_state_floats + c.sbpca_update_floats + c.sbpca_qr_workspace_floats;

  c.ratio_flops = static_cast<double>(c.sbpca_flops) / static_cast<double>(c.mbgd_flops);
  c.ratio_memory_batch = static_cast<double>(3 * uk + 1) / static_cast<double>(uB);
  c.ratio_memory_expanded =
      static_cast<double>(2 * uk * (um + un) + mx * (uk + 1) + uk * uk) /
      static_cast<double>(um * un);
  return c;
}

}  // namespace lowrank
