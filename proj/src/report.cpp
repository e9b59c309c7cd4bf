#include "capslab/report.hpp"

#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace capslab {

using nlohmann::json;
using nlohmann::ordered_json;

std::string ExperimentReport::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["dataset"] = dataset;
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : configs) cfg[k] = json::parse(v);
  j["configs"] = cfg;
  ordered_json acc = ordered_json::object();
  for (const auto& [k, v] : model_accuracy) acc[k] = v;
  j["model_accuracy"] = acc;
  j["norms"] = ordered_json::array();
  for (const NormRow& r : norms)
    j["norms"].push_back({{"attack", r.attack},
                          {"model", r.model},
                          {"mean_norm", r.mean_norm},
                          {"success_rate", r.success_rate},
                          {"n_success", r.n_success},
                          {"n", r.n}});
  j["universal_folds"] = ordered_json::array();
  for (const UniversalFoldRow& r : universal_folds)
    j["universal_folds"].push_back({{"model", r.model},
                                    {"fold", r.fold},
                                    {"norm", r.norm},
                                    {"final_accuracy", r.final_accuracy},
                                    {"outer_iterations", r.outer_iterations},
                                    {"success", r.success}});
  j["transfers"] = ordered_json::array();
  for (const TransferRow& r : transfers)
    j["transfers"].push_back({{"attack", r.attack},
                              {"direction", r.direction},
                              {"value", r.value},
                              {"is_accuracy", r.is_accuracy},
                              {"evaluated", r.evaluated}});
  j["embedding_file"] = embedding_file;
  return j.dump(2) + "\n";
}

ExperimentReport ExperimentReport::from_json(const std::string& text) {
  const auto j = json::parse(text);
  ExperimentReport r;
  r.seed = j.at("seed");
  r.dataset = j.at("dataset");
  for (const auto& [k, v] : j.at("configs").items()) r.configs[k] = v.dump();
  for (const auto& [k, v] : j.at("model_accuracy").items()) r.model_accuracy[k] = v;
  for (const auto& e : j.at("norms"))
    r.norms.push_back({e.at("attack"), e.at("model"), e.at("mean_norm"), e.at("success_rate"),
                       e.at("n_success"), e.at("n")});
  for (const auto& e : j.at("universal_folds"))
    r.universal_folds.push_back({e.at("model"), e.at("fold"), e.at("norm"),
                                 e.at("final_accuracy"), e.at("outer_iterations"),
                                 e.at("success")});
  for (const auto& e : j.at("transfers"))
    r.transfers.push_back(
        {e.at("attack"), e.at("direction"), e.at("value"), e.at("is_accuracy"), e.at("evaluated")});
  r.embedding_file = j.at("embedding_file");
  return r;
}

std::string ExperimentReport::to_tables() const {
  std::string out;
  char buf[256];
  auto line = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof(buf), fmt, args...);
    out += buf;
    out += "\n";
  };
  line("== Average perturbation norms (dataset: %s, seed %llu) ==", dataset.c_str(),
       static_cast<unsigned long long>(seed));
  line("%-10s %-9s %12s %9s %9s", "attack", "model", "mean||d||2", "success", "samples");
  for (const NormRow& r : norms)
    line("%-10s %-9s %12.4f %8.1f%% %6d/%d", r.attack.c_str(), r.model.c_str(), r.mean_norm,
         100.0 * r.success_rate, r.n_success, r.n);
  if (!universal_folds.empty()) {
    out += "\n";
    line("== Universal perturbations per fold ==");
    line("%-9s %5s %10s %15s %8s", "model", "fold", "norm", "final-accuracy", "iters");
    for (const UniversalFoldRow& r : universal_folds)
      line("%-9s %5d %10.4f %14.2f%% %8d", r.model.c_str(), r.fold, r.norm,
           100.0 * r.final_accuracy, r.outer_iterations);
  }
  if (!transfers.empty()) {
    out += "\n";
    line("== Transfer (fooling rate; universal rows report whole-test accuracy) ==");
    line("%-10s %-22s %10s %10s", "attack", "direction", "value", "samples");
    for (const TransferRow& r : transfers)
      line("%-10s %-22s %9.2f%% %10zu", r.attack.c_str(), r.direction.c_str(), 100.0 * r.value,
           r.evaluated);
  }
  if (!model_accuracy.empty()) {
    out += "\n";
    line("== Test accuracies ==");
    for (const auto& [k, v] : model_accuracy) line("%-9s %8.2f%%", k.c_str(), 100.0 * v);
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << content;
  if (!os) throw IoError("short write on " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace capslab
