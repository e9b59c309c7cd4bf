#pragma once

#include <string>
#include <vector>

#include "capslab/attacks.hpp"

namespace capslab {

// Line-delimited attack records, one JSON object per sample:
//   {"index":..,"true_label":..,"predicted_label":..,"target_label":..,
//    "norm":..,"success":..,"iterations":..}
// Wall times are deliberately excluded so identical runs write identical
// bytes. Image data lives in the sidecar, keyed by index.
void write_results_jsonl(const std::string& path, const std::vector<AttackResult>& results);
// reads records; original/delta stay empty unless a sidecar is joined
std::vector<AttackResult> read_results_jsonl(const std::string& path);

// Shape-prefixed binary sidecar holding each record's delta:
//   magic "CFDL1", u32 count, u8 ndim, i64 dims each (per-delta shape),
//   then per record: u64 sample index, f64 data
void write_delta_sidecar(const std::string& path, const std::vector<AttackResult>& results);
// joins deltas (and recomputed norms are left untouched) onto records by index
void read_delta_sidecar(const std::string& path, std::vector<AttackResult>& results);

// standalone delta collection (universal perturbations), same layout
void write_deltas(const std::string& path, const std::vector<Tensor>& deltas);
std::vector<Tensor> read_deltas(const std::string& path);

}  // namespace capslab
