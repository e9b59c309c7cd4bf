#include "capslab/harness.hpp"

#include <thread>

#include "json.hpp"

namespace capslab {

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers < 1) workers = 1;
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  const int count = std::min<int>(workers, static_cast<int>(n));
  pool.reserve(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(count))
          fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::cw: return "cw";
    case AttackKind::boundary: return "boundary";
    case AttackKind::deepfool: return "deepfool";
  }
  return "?";
}

std::string AttackSuiteConfig::config_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["workers"] = workers;
  j["cw_count"] = cw_count;
  j["iterative_count"] = iterative_count;
  j["cw"] = {{"kappa", cw.kappa},
             {"search_steps", cw.search_steps},
             {"initial_c", cw.initial_c},
             {"max_c", cw.max_c},
             {"adam_steps", cw.adam_steps},
             {"adam_lr", cw.adam_lr}};
  j["boundary"] = {{"gamma", boundary.gamma},
                   {"nu", boundary.nu},
                   {"max_steps", boundary.max_steps},
                   {"init_rejection_cap", boundary.init_rejection_cap},
                   {"adapt_window", boundary.adapt_window},
                   {"adapt_up", boundary.adapt_up},
                   {"adapt_down", boundary.adapt_down},
                   {"convergence_eps", boundary.convergence_eps}};
  j["deepfool"] = {{"max_iterations", deepfool.max_iterations},
                   {"step_norm_cap", deepfool.step_norm_cap},
                   {"overshoot", deepfool.overshoot}};
  j["universal"] = {{"accuracy_threshold", universal.accuracy_threshold},
                    {"epsilon", universal.epsilon},
                    {"batch_size", universal.batch_size},
                    {"max_outer_iterations", universal.max_outer_iterations},
                    {"eval_every", universal.eval_every}};
  return j.dump();
}

std::vector<AttackResult> run_attack_set(const Classifier& model, const LabeledDataset& test,
                                         AttackKind kind, const AttackSuiteConfig& cfg) {
  const int count = kind == AttackKind::cw ? cfg.cw_count : cfg.iterative_count;
  const auto samples =
      sample_attack_set(test, static_cast<std::size_t>(count), cfg.seed);
  std::vector<AttackResult> results(samples.size());
  const std::string name = attack_name(kind);
  parallel_for(samples.size(), cfg.workers, [&](std::size_t i) {
    const AttackSample& s = samples[i];
    const Tensor& x = test.images[s.index];
    const int truth = test.labels[s.index];
    AttackResult r;
    switch (kind) {
      case AttackKind::cw:
        r = cw_attack(model, x, truth, s.target, cfg.cw);
        break;
      case AttackKind::boundary: {
        Rng rng(derive_seed(cfg.seed, "attack/boundary", s.index));
        r = boundary_attack(model, x, truth, cfg.boundary, rng);
        break;
      }
      case AttackKind::deepfool:
        r = deepfool_attack(model, x, truth, cfg.deepfool);
        break;
    }
    r.sample_index = s.index;
    results[i] = std::move(r);
  });
  return results;
}

NormRow summarize_norms(const std::string& attack, const std::string& model,
                        const std::vector<AttackResult>& results) {
  NormRow row;
  row.attack = attack;
  row.model = model;
  row.n = static_cast<int>(results.size());
  double sum = 0.0;
  for (const AttackResult& r : results) {
    if (!r.success) continue;
    ++row.n_success;
    sum += r.norm;
  }
  if (row.n > 0) row.success_rate = static_cast<double>(row.n_success) / row.n;
  if (row.n_success > 0) row.mean_norm = sum / row.n_success;
  return row;
}

std::vector<UniversalResult> run_universal_folds(const Classifier& model,
                                                 const std::vector<LabeledDataset>& folds,
                                                 const AttackSuiteConfig& cfg) {
  std::vector<UniversalResult> out(folds.size());
  parallel_for(folds.size(), cfg.workers, [&](std::size_t f) {
    Rng rng(derive_seed(cfg.seed, "attack/universal", f));
    out[f] = universal_perturbation(model, folds[f], cfg.universal, rng);
  });
  return out;
}

std::string embedding_csv(const EmbeddingResult& emb, const std::vector<std::string>& models,
                          const std::vector<int>& folds) {
  if (models.size() != emb.points || folds.size() != emb.points)
    throw Error("embedding_csv: label count mismatch");
  std::string out = "point,x,y,source_model,fold\n";
  char buf[160];
  for (std::size_t i = 0; i < emb.points; ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%s,%d\n", i, emb.coords[2 * i],
                  emb.coords[2 * i + 1], models[i].c_str(), folds[i]);
    out += buf;
  }
  return out;
}

}  // namespace capslab
