// capslab: train grayscale classifiers and attack them.
//
// Subcommands: train, attack, universal, transfer, embed, report.
// Every run directory receives config.json echoing the full configuration
// (seed included) so any run can be replayed exactly.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "capslab/capsnet.hpp"
#include "capslab/checkpoint.hpp"
#include "capslab/convnet.hpp"
#include "capslab/harness.hpp"
#include "capslab/image_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace capslab;
using nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_input(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw UsageError(what + " not found: " + path);
}

void write_config_echo(const std::string& out_dir, const ordered_json& cfg) {
  fs::create_directories(out_dir);
  write_text_file(out_dir + "/config.json", cfg.dump(2) + "\n");
}

LabeledDataset load_split(const std::string& data_dir, const std::string& dataset, bool train) {
  const std::string dir = resolve_data_dir(data_dir);
  require_input(dir, "data directory");
  return load_named_split(dir, dataset, train);
}

struct TimingLog {
  ordered_json entries = ordered_json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  void mark(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    entries[stage] = std::chrono::duration<double>(now - start).count();
    start = now;
  }
  void write(const std::string& out_dir) {
    write_text_file(out_dir + "/timings.json", entries.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset = "mnist";
  std::string model = "convnet";
  std::string arch = "desk";
  std::string data_dir;
  std::string out = "runs/train";
  std::uint64_t seed = 1;
  int epochs = 15;
  int batch = 128;
  int micro_batch = 16;
  double lr = 1e-3;
  std::size_t train_limit = 10000;
  int caps_conv_kernels = 0;       // 0: per --arch
  int caps_primary_channels = 0;   // 0: per --arch
  bool none_of_the_above = false;
  bool full_train_set = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const auto train_set = load_split(a.data_dir, a.dataset, true);
  const auto test_set = load_split(a.data_dir, a.dataset, false);

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch = a.batch;
  tc.micro_batch = a.micro_batch;
  tc.lr = a.lr;
  tc.train_limit = a.full_train_set ? 0 : a.train_limit;
  tc.seed = a.seed;
  tc.verbose = !a.quiet;

  std::unique_ptr<TrainableModel> model;
  if (a.model == "convnet") {
    ConvNetConfig cfg;
    model = std::make_unique<ConvNetModel>(cfg, a.seed);
  } else if (a.model == "capsnet") {
    CapsNetConfig cfg;
    if (a.dataset == "fashion") {
      cfg.variant = "fashion";
      cfg.conv1_channels = 32;
      cfg.conv2_channels = 32;
    }
    if (a.arch == "paper") {
      cfg.conv1_channels = cfg.variant == "mnist" ? 64 : cfg.conv1_channels;
      cfg.primary_channels = 32;
    } else if (a.arch == "desk") {
      if (cfg.variant == "mnist") cfg.conv1_channels = 32;
      cfg.primary_channels = 16;
    } else {
      throw UsageError("unknown --arch " + a.arch);
    }
    if (a.caps_conv_kernels > 0) cfg.conv1_channels = a.caps_conv_kernels;
    if (a.caps_primary_channels > 0) cfg.primary_channels = a.caps_primary_channels;
    cfg.none_of_the_above = a.none_of_the_above;
    model = std::make_unique<CapsNetModel>(cfg, a.seed);
  } else {
    throw UsageError("unknown --model " + a.model);
  }

  ordered_json echo;
  echo["command"] = "train";
  echo["dataset"] = a.dataset;
  echo["model"] = a.model;
  echo["seed"] = a.seed;
  echo["epochs"] = tc.epochs;
  echo["batch"] = tc.batch;
  echo["micro_batch"] = tc.micro_batch;
  echo["lr"] = tc.lr;
  echo["train_limit"] = tc.train_limit;
  echo["model_config"] = nlohmann::json::parse(model->config_json());
  write_config_echo(a.out, echo);

  TimingLog timing;
  const TrainHistory hist = train_model(*model, train_set, test_set, tc);
  timing.mark("train");

  const std::string ckpt = a.out + "/" + a.model + ".ckpt";
  save_checkpoint(*model, ckpt);
  ordered_json hj;
  hj["train_loss"] = hist.train_loss;
  hj["test_accuracy"] = hist.test_accuracy;
  write_text_file(a.out + "/" + a.model + "_history.json", hj.dump(2) + "\n");
  timing.write(a.out);
  std::cout << "trained " << a.model << ": test accuracy " << hist.test_accuracy.back()
            << ", checkpoint " << ckpt << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct AttackArgs {
  std::string attack = "deepfool";
  std::string model_ckpt;
  std::string dataset = "mnist";
  std::string data_dir;
  std::string out = "runs/attack";
  std::uint64_t seed = 1;
  int count = 100;
  int workers = 2;
  int export_images_count = 0;
  AttackSuiteConfig suite;
};

int cmd_attack(const AttackArgs& a) {
  require_input(a.model_ckpt, "checkpoint");
  const auto test_set = load_split(a.data_dir, a.dataset, false);
  auto model = load_checkpoint(a.model_ckpt);

  AttackKind kind;
  if (a.attack == "cw")
    kind = AttackKind::cw;
  else if (a.attack == "boundary")
    kind = AttackKind::boundary;
  else if (a.attack == "deepfool")
    kind = AttackKind::deepfool;
  else
    throw UsageError("unknown --attack " + a.attack);

  AttackSuiteConfig cfg = a.suite;
  cfg.seed = a.seed;
  cfg.workers = a.workers;
  cfg.cw_count = a.count;
  cfg.iterative_count = a.count;

  ordered_json echo;
  echo["command"] = "attack";
  echo["attack"] = a.attack;
  echo["model_ckpt"] = a.model_ckpt;
  echo["model_kind"] = model->kind();
  echo["dataset"] = a.dataset;
  echo["count"] = a.count;
  echo["seed"] = a.seed;
  echo["suite"] = nlohmann::json::parse(cfg.config_json());
  write_config_echo(a.out, echo);

  TimingLog timing;
  const auto results = run_attack_set(*model, test_set, kind, cfg);
  timing.mark("attack");

  write_results_jsonl(a.out + "/results.jsonl", results);
  write_delta_sidecar(a.out + "/deltas.bin", results);
  const NormRow row = summarize_norms(a.attack, model->kind(), results);
  ordered_json sj;
  sj["attack"] = row.attack;
  sj["model"] = row.model;
  sj["mean_norm"] = row.mean_norm;
  sj["success_rate"] = row.success_rate;
  sj["n_success"] = row.n_success;
  sj["n"] = row.n;
  write_text_file(a.out + "/summary.json", sj.dump(2) + "\n");
  if (a.export_images_count > 0) {
    fs::create_directories(a.out + "/images");
    const int k = std::min<int>(a.export_images_count, static_cast<int>(results.size()));
    for (int i = 0; i < k; ++i)
      export_images(results[static_cast<std::size_t>(i)],
                    a.out + "/images/sample" + std::to_string(results[i].sample_index));
  }
  timing.write(a.out);
  std::cout << a.attack << " on " << model->kind() << ": success rate " << row.success_rate
            << ", mean norm " << row.mean_norm << " over " << row.n_success << "/" << row.n
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct UniversalArgs {
  std::string model_ckpt;
  std::string dataset = "mnist";
  std::string data_dir;
  std::string out = "runs/universal";
  std::uint64_t seed = 1;
  int workers = 2;
  AttackSuiteConfig suite;
};

int cmd_universal(const UniversalArgs& a) {
  require_input(a.model_ckpt, "checkpoint");
  const auto test_set = load_split(a.data_dir, a.dataset, false);
  auto model = load_checkpoint(a.model_ckpt);
  const auto folds = ten_fold_split(test_set);

  AttackSuiteConfig cfg = a.suite;
  cfg.seed = a.seed;
  cfg.workers = a.workers;

  ordered_json echo;
  echo["command"] = "universal";
  echo["model_ckpt"] = a.model_ckpt;
  echo["model_kind"] = model->kind();
  echo["dataset"] = a.dataset;
  echo["seed"] = a.seed;
  echo["suite"] = nlohmann::json::parse(cfg.config_json());
  write_config_echo(a.out, echo);

  TimingLog timing;
  const auto results = run_universal_folds(*model, folds, cfg);
  timing.mark("universal");

  std::vector<Tensor> deltas;
  std::string rows;
  for (std::size_t f = 0; f < results.size(); ++f) {
    const UniversalResult& r = results[f];
    deltas.push_back(r.delta);
    ordered_json j;
    j["fold"] = f;
    j["norm"] = r.norm;
    j["final_accuracy"] = r.accuracy_trace.back();
    j["outer_iterations"] = r.outer_iterations;
    j["success"] = r.success;
    j["accuracy_trace"] = r.accuracy_trace;
    rows += j.dump() + "\n";
  }
  write_text_file(a.out + "/folds.jsonl", rows);
  write_deltas(a.out + "/deltas.bin", deltas);
  timing.write(a.out);
  int ok = 0;
  for (const auto& r : results) ok += r.success ? 1 : 0;
  std::cout << "universal on " << model->kind() << ": " << ok << "/" << results.size()
            << " folds below threshold\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TransferArgs {
  std::string results_dir;  // attack run dir (results.jsonl + deltas.bin) or universal dir
  std::string target_ckpt;
  std::string dataset = "mnist";
  std::string data_dir;
  std::string out = "runs/transfer";
  bool universal = false;
};

int cmd_transfer(const TransferArgs& a) {
  require_input(a.target_ckpt, "checkpoint");
  auto target = load_checkpoint(a.target_ckpt);
  const auto test_set = load_split(a.data_dir, a.dataset, false);
  fs::create_directories(a.out);

  ordered_json echo;
  echo["command"] = "transfer";
  echo["results_dir"] = a.results_dir;
  echo["target_ckpt"] = a.target_ckpt;
  echo["target_kind"] = target->kind();
  echo["dataset"] = a.dataset;
  echo["universal"] = a.universal;
  write_config_echo(a.out, echo);

  ordered_json out;
  if (a.universal) {
    require_input(a.results_dir + "/deltas.bin", "universal deltas");
    const auto deltas = read_deltas(a.results_dir + "/deltas.bin");
    ordered_json accs = ordered_json::array();
    double mean = 0.0;
    for (const Tensor& d : deltas) {
      const double acc = universal_transfer_accuracy(d, *target, test_set);
      accs.push_back(acc);
      mean += acc;
    }
    out["kind"] = "universal";
    out["whole_test_accuracy_per_fold"] = accs;
    out["mean_accuracy"] = deltas.empty() ? 0.0 : mean / static_cast<double>(deltas.size());
  } else {
    require_input(a.results_dir + "/results.jsonl", "attack results");
    require_input(a.results_dir + "/deltas.bin", "delta sidecar");
    auto results = read_results_jsonl(a.results_dir + "/results.jsonl");
    read_delta_sidecar(a.results_dir + "/deltas.bin", results);
    for (auto& r : results) r.original = test_set.images.at(r.sample_index);
    // targeted evaluation whenever the source attack stored targets
    bool targeted = false;
    for (const auto& r : results) targeted = targeted || r.target_label >= 0;
    if (targeted)
      for (const auto& r : results)
        if (r.success && r.target_label < 0)
          throw UsageError("mixed targeted/untargeted results cannot be transferred together");
    const TransferStats stats = transfer_evaluate(results, *target, targeted);
    out["kind"] = targeted ? "targeted" : "untargeted";
    out["fooling_rate"] = stats.fooling_rate;
    out["evaluated"] = stats.evaluated;
  }
  write_text_file(a.out + "/transfer.json", out.dump(2) + "\n");
  std::cout << "transfer -> " << target->kind() << ": " << out.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EmbedArgs {
  std::vector<std::string> delta_files;
  std::vector<std::string> labels;
  std::string out = "runs/embed";
  std::uint64_t seed = 1;
  double perplexity = 5.0;
  int iterations = 1000;
};

int cmd_embed(const EmbedArgs& a) {
  if (a.delta_files.empty()) throw UsageError("--deltas required");
  if (a.labels.size() != a.delta_files.size())
    throw UsageError("--label count must match --deltas count");
  std::vector<Tensor> points;
  std::vector<std::string> models;
  std::vector<int> folds;
  for (std::size_t f = 0; f < a.delta_files.size(); ++f) {
    require_input(a.delta_files[f], "delta file");
    const auto deltas = read_deltas(a.delta_files[f]);
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      points.push_back(deltas[i].reshaped({deltas[i].numel()}));
      models.push_back(a.labels[f]);
      folds.push_back(static_cast<int>(i));
    }
  }
  TsneConfig cfg;
  cfg.perplexity = a.perplexity;
  cfg.iterations = a.iterations;
  cfg.seed = a.seed;

  ordered_json echo;
  echo["command"] = "embed";
  echo["deltas"] = a.delta_files;
  echo["labels"] = a.labels;
  echo["seed"] = a.seed;
  echo["perplexity"] = cfg.perplexity;
  echo["iterations"] = cfg.iterations;
  write_config_echo(a.out, echo);

  const EmbeddingResult emb = tsne_embed(points, cfg);
  write_text_file(a.out + "/coords.csv", embedding_csv(emb, models, folds));
  ordered_json kj;
  kj["final_kl"] = emb.final_kl;
  kj["exaggeration_iters"] = emb.exaggeration_iters;
  kj["kl_trace"] = emb.kl_trace;
  kj["jittered"] = emb.jittered;
  write_text_file(a.out + "/kl_trace.json", kj.dump(2) + "\n");
  std::cout << "embedded " << emb.points << " perturbations, final KL " << emb.final_kl << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string run;  // root containing train/, attacks/, universal/, transfer/, embedding/
  std::string dataset = "mnist";
  std::string data_dir;
  std::string out;
  std::uint64_t seed = 1;
};

int cmd_report(const ReportArgs& a) {
  require_input(a.run, "run directory");
  const std::string out_dir = a.out.empty() ? a.run + "/report" : a.out;
  fs::create_directories(out_dir);
  const auto test_set = load_split(a.data_dir, a.dataset, false);

  ExperimentReport rep;
  rep.seed = a.seed;
  rep.dataset = a.dataset;

  for (const std::string kind : {"convnet", "capsnet"}) {
    const std::string ckpt = a.run + "/train/" + kind + ".ckpt";
    if (!fs::exists(ckpt)) continue;
    auto model = load_checkpoint(ckpt);
    rep.model_accuracy[kind] = model->accuracy(test_set);
  }

  const std::string attacks_root = a.run + "/attacks";
  if (fs::exists(attacks_root)) {
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(attacks_root))
      if (e.is_directory()) dirs.push_back(e.path().filename().string());
    std::sort(dirs.begin(), dirs.end());
    for (const std::string& d : dirs) {
      const std::string rj = attacks_root + "/" + d + "/results.jsonl";
      if (!fs::exists(rj)) continue;
      const auto results = read_results_jsonl(rj);
      const auto split = d.find('_');
      const std::string attack = split == std::string::npos ? d : d.substr(0, split);
      const std::string model = split == std::string::npos ? "?" : d.substr(split + 1);
      rep.norms.push_back(summarize_norms(attack, model, results));
      const std::string cj = attacks_root + "/" + d + "/config.json";
      if (fs::exists(cj)) rep.configs["attack/" + d] = read_text_file(cj);
    }
  }

  const std::string uni_root = a.run + "/universal";
  if (fs::exists(uni_root)) {
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(uni_root))
      if (e.is_directory()) dirs.push_back(e.path().filename().string());
    std::sort(dirs.begin(), dirs.end());
    for (const std::string& model : dirs) {
      const std::string fj = uni_root + "/" + model + "/folds.jsonl";
      if (!fs::exists(fj)) continue;
      std::istringstream lines(read_text_file(fj));
      std::string line;
      double norm_sum = 0.0;
      int n = 0, n_success = 0;
      while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        UniversalFoldRow row;
        row.model = model;
        row.fold = j.at("fold");
        row.norm = j.at("norm");
        row.final_accuracy = j.at("final_accuracy");
        row.outer_iterations = j.at("outer_iterations");
        row.success = j.at("success");
        rep.universal_folds.push_back(row);
        norm_sum += row.norm;
        ++n;
        n_success += row.success ? 1 : 0;
      }
      if (n > 0)
        rep.norms.push_back({"universal", model, norm_sum / n,
                             static_cast<double>(n_success) / n, n_success, n});
    }
  }

  const std::string transfer_root = a.run + "/transfer";
  if (fs::exists(transfer_root)) {
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(transfer_root))
      if (e.is_directory()) dirs.push_back(e.path().filename().string());
    std::sort(dirs.begin(), dirs.end());
    for (const std::string& d : dirs) {
      const std::string tj = transfer_root + "/" + d + "/transfer.json";
      if (!fs::exists(tj)) continue;
      const auto j = nlohmann::json::parse(read_text_file(tj));
      // directory convention: <attack>_<source>_to_<target>
      TransferRow row;
      const auto a1 = d.find('_');
      const auto a2 = d.find("_to_");
      row.attack = d.substr(0, a1);
      row.direction = d.substr(a1 + 1, a2 - a1 - 1) + "->" + d.substr(a2 + 4);
      if (j.at("kind") == "universal") {
        row.value = j.at("mean_accuracy");
        row.is_accuracy = true;
        row.evaluated = j.at("whole_test_accuracy_per_fold").size();
      } else {
        row.value = j.at("fooling_rate");
        row.evaluated = j.at("evaluated");
      }
      rep.transfers.push_back(row);
    }
  }

  if (fs::exists(a.run + "/embedding/coords.csv"))
    rep.embedding_file = "embedding/coords.csv";

  write_text_file(out_dir + "/report.json", rep.to_json());
  write_text_file(out_dir + "/tables.txt", rep.to_tables());
  std::cout << rep.to_tables();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial-attack laboratory for grayscale classifiers"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train->add_option("--dataset", ta.dataset, "mnist or fashion")->capture_default_str();
  train->add_option("--model", ta.model, "convnet or capsnet")->capture_default_str();
  train->add_option("--arch", ta.arch, "capsnet width preset: desk or paper")
      ->capture_default_str();
  train->add_option("--data-dir", ta.data_dir, "dataset directory (or CAPSLAB_DATA_DIR)");
  train->add_option("--out", ta.out, "output directory")->capture_default_str();
  train->add_option("--seed", ta.seed, "root seed")->capture_default_str();
  train->add_option("--epochs", ta.epochs)->capture_default_str();
  train->add_option("--batch", ta.batch)->capture_default_str();
  train->add_option("--micro-batch", ta.micro_batch)->capture_default_str();
  train->add_option("--lr", ta.lr)->capture_default_str();
  train->add_option("--train-limit", ta.train_limit, "training images used (0 = all)")
      ->capture_default_str();
  train->add_flag("--full-train-set", ta.full_train_set, "use every training image");
  train->add_option("--caps-conv-kernels", ta.caps_conv_kernels, "override stem width");
  train->add_option("--caps-primary-channels", ta.caps_primary_channels,
                    "override primary capsule channels");
  train->add_flag("--none-of-the-above", ta.none_of_the_above,
                  "route through an extra non-class capsule");
  train->add_flag("--quiet", ta.quiet, "suppress per-epoch logging");

  AttackArgs aa;
  CLI::App* attack = app.add_subcommand("attack", "run a per-sample attack");
  attack->add_option("--attack", aa.attack, "cw, boundary or deepfool")->capture_default_str();
  attack->add_option("--model-ckpt", aa.model_ckpt, "checkpoint to attack")->required();
  attack->add_option("--dataset", aa.dataset)->capture_default_str();
  attack->add_option("--data-dir", aa.data_dir);
  attack->add_option("--out", aa.out)->capture_default_str();
  attack->add_option("--seed", aa.seed)->capture_default_str();
  attack->add_option("--count", aa.count, "samples drawn from the test set")
      ->capture_default_str();
  attack->add_option("--workers", aa.workers)->capture_default_str();
  attack->add_option("--export-images", aa.export_images_count,
                     "write PGM triptychs for the first K samples");
  attack->add_option("--kappa", aa.suite.cw.kappa, "CW confidence")->capture_default_str();
  attack->add_option("--cw-steps", aa.suite.cw.adam_steps)->capture_default_str();
  attack->add_option("--cw-lr", aa.suite.cw.adam_lr)->capture_default_str();
  attack->add_option("--cw-search-steps", aa.suite.cw.search_steps)->capture_default_str();
  attack->add_option("--cw-initial-c", aa.suite.cw.initial_c)->capture_default_str();
  attack->add_option("--boundary-steps", aa.suite.boundary.max_steps)->capture_default_str();
  attack->add_option("--deepfool-iters", aa.suite.deepfool.max_iterations)
      ->capture_default_str();
  attack->add_option("--deepfool-cap", aa.suite.deepfool.step_norm_cap)->capture_default_str();

  UniversalArgs ua;
  CLI::App* universal = app.add_subcommand("universal", "universal perturbation per test fold");
  universal->add_option("--model-ckpt", ua.model_ckpt)->required();
  universal->add_option("--dataset", ua.dataset)->capture_default_str();
  universal->add_option("--data-dir", ua.data_dir);
  universal->add_option("--out", ua.out)->capture_default_str();
  universal->add_option("--seed", ua.seed)->capture_default_str();
  universal->add_option("--workers", ua.workers)->capture_default_str();
  universal->add_option("--eps", ua.suite.universal.epsilon, "FGSM step")->capture_default_str();
  universal->add_option("--batch-n", ua.suite.universal.batch_size)->capture_default_str();
  universal->add_option("--threshold", ua.suite.universal.accuracy_threshold)
      ->capture_default_str();
  universal->add_option("--max-outer", ua.suite.universal.max_outer_iterations)
      ->capture_default_str();
  universal->add_option("--eval-every", ua.suite.universal.eval_every)->capture_default_str();

  TransferArgs xa;
  CLI::App* transfer = app.add_subcommand("transfer", "apply stored perturbations to a model");
  transfer->add_option("--results", xa.results_dir, "attack or universal run directory")
      ->required();
  transfer->add_option("--target-ckpt", xa.target_ckpt)->required();
  transfer->add_option("--dataset", xa.dataset)->capture_default_str();
  transfer->add_option("--data-dir", xa.data_dir);
  transfer->add_option("--out", xa.out)->capture_default_str();
  transfer->add_flag("--universal", xa.universal, "treat results as universal deltas");

  EmbedArgs ea;
  CLI::App* embed = app.add_subcommand("embed", "t-SNE embedding of stored perturbations");
  embed->add_option("--deltas", ea.delta_files, "delta sidecar files")->required();
  embed->add_option("--label", ea.labels, "source label per delta file")->required();
  embed->add_option("--out", ea.out)->capture_default_str();
  embed->add_option("--seed", ea.seed)->capture_default_str();
  embed->add_option("--perplexity", ea.perplexity)->capture_default_str();
  embed->add_option("--iters", ea.iterations)->capture_default_str();

  ReportArgs ra;
  CLI::App* report = app.add_subcommand("report", "assemble tables from a run directory");
  report->add_option("--run", ra.run, "run root directory")->required();
  report->add_option("--dataset", ra.dataset)->capture_default_str();
  report->add_option("--data-dir", ra.data_dir);
  report->add_option("--out", ra.out, "defaults to <run>/report");
  report->add_option("--seed", ra.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  try {
    if (*train) return cmd_train(ta);
    if (*attack) return cmd_attack(aa);
    if (*universal) return cmd_universal(ua);
    if (*transfer) return cmd_transfer(xa);
    if (*embed) return cmd_embed(ea);
    if (*report) return cmd_report(ra);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
