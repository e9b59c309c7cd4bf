#pragma once

#include <functional>
#include <memory>

#include "capslab/attack_io.hpp"
#include "capslab/attacks.hpp"
#include "capslab/report.hpp"
#include "capslab/tsne.hpp"

namespace capslab {

// static-strided worker pool; results keyed by index so scheduling cannot
// change any output
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

enum class AttackKind { cw, boundary, deepfool };
std::string attack_name(AttackKind k);

struct AttackSuiteConfig {
  std::uint64_t seed = 1;
  int workers = 2;
  int cw_count = 50;         // desk-scale default (paper runs 500)
  int iterative_count = 100;  // desk-scale default (paper runs 1000)
  CwConfig cw;
  BoundaryConfig boundary;
  DeepFoolConfig deepfool;
  UniversalConfig universal;
  std::string config_json() const;
};

// Runs one attack over seeded samples from the test set, in parallel over
// workers. Per-sample RNG streams derive from the root seed and sample index.
std::vector<AttackResult> run_attack_set(const Classifier& model, const LabeledDataset& test,
                                         AttackKind kind, const AttackSuiteConfig& cfg);

// aggregates a result set into a report row
NormRow summarize_norms(const std::string& attack, const std::string& model,
                        const std::vector<AttackResult>& results);

// universal perturbations per fold, parallel over folds
std::vector<UniversalResult> run_universal_folds(const Classifier& model,
                                                 const std::vector<LabeledDataset>& folds,
                                                 const AttackSuiteConfig& cfg);

// 2-D embedding of the universal perturbations as CSV:
//   point,x,y,source_model,fold
std::string embedding_csv(const EmbeddingResult& emb, const std::vector<std::string>& models,
                          const std::vector<int>& folds);

}  // namespace capslab
