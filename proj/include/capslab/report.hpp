#pragma once

#include <map>
#include <string>
#include <vector>

#include "capslab/tensor.hpp"

namespace capslab {

struct NormRow {
  std::string attack;
  std::string model;
  double mean_norm = 0.0;  // over successful samples
  double success_rate = 0.0;
  int n_success = 0;
  int n = 0;
};

struct TransferRow {
  std::string attack;
  std::string direction;  // e.g. "convnet->capsnet"
  double value = 0.0;     // fooling rate; whole-test accuracy for universal
  bool is_accuracy = false;
  std::size_t evaluated = 0;
};

struct UniversalFoldRow {
  std::string model;
  int fold = 0;
  double norm = 0.0;
  double final_accuracy = 0.0;
  int outer_iterations = 0;
  bool success = false;
};

// Aggregated experiment artifacts mirroring the norm, fooling-rate and
// accuracy tables plus the embedding pointer. Serialization is canonical:
// fixed key order, no wall times, so identical runs write identical bytes.
struct ExperimentReport {
  std::uint64_t seed = 0;
  std::string dataset;
  std::map<std::string, std::string> configs;  // echoed config JSON per stage
  std::map<std::string, double> model_accuracy;
  std::vector<NormRow> norms;
  std::vector<UniversalFoldRow> universal_folds;
  std::vector<TransferRow> transfers;
  std::string embedding_file;

  std::string to_json() const;
  static ExperimentReport from_json(const std::string& text);
  // human-readable tables (norms, transfer, accuracies)
  std::string to_tables() const;
};

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace capslab
