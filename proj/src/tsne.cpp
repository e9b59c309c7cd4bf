#include "capslab/tsne.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "capslab/rng.hpp"

namespace capslab {
namespace {

// row-stochastic Gaussian affinities for row i at bandwidth beta
void row_affinities(const std::vector<double>& d2, std::size_t n, std::size_t i, double beta,
                    std::vector<double>& p) {
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    p[j] = j == i ? 0.0 : std::exp(-beta * d2[i * n + j]);
    sum += p[j];
  }
  if (sum <= 0.0) sum = 1e-300;
  for (std::size_t j = 0; j < n; ++j) p[j] /= sum;
}

double perplexity_of(const std::vector<double>& p) {
  double h = 0.0;
  for (const double v : p)
    if (v > 1e-300) h -= v * std::log2(v);
  return std::pow(2.0, h);
}

}  // namespace

double row_perplexity(const std::vector<double>& sq_dists, std::size_t i, double beta) {
  const std::size_t n = static_cast<std::size_t>(std::lround(std::sqrt(
      static_cast<double>(sq_dists.size()))));
  std::vector<double> p(n);
  row_affinities(sq_dists, n, i, beta, p);
  return perplexity_of(p);
}

EmbeddingResult tsne_embed(const std::vector<Tensor>& points, const TsneConfig& cfg) {
  const std::size_t n = points.size();
  if (n < 3) throw Error("tsne_embed: need at least 3 points");
  if (!(cfg.perplexity < static_cast<double>(n - 1) / 3.0))
    throw Error("tsne_embed: perplexity must be below (points-1)/3");
  const std::int64_t dim = points[0].numel();
  for (const Tensor& t : points)
    if (t.numel() != dim) throw ShapeError("tsne_embed", points[0].shape(), t.shape());

  EmbeddingResult out;
  out.points = n;

  // pairwise squared distances; jitter exact duplicates so bandwidth
  // bisection has something to work with
  std::vector<double> x(n * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < dim; ++k)
      x[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)] = points[i][k];

  Rng rng(derive_seed(cfg.seed, "tsne"));
  std::vector<double> d2(n * n, 0.0);
  auto compute_d2 = [&] {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double s = 0.0;
        for (std::int64_t k = 0; k < dim; ++k) {
          const double d = x[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)] -
                           x[j * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)];
          s += d * d;
        }
        d2[i * n + j] = d2[j * n + i] = s;
      }
  };
  compute_d2();
  bool has_dup = false;
  for (std::size_t i = 0; i < n && !has_dup; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (d2[i * n + j] == 0.0) {
        has_dup = true;
        break;
      }
  if (has_dup) {
    std::fprintf(stderr, "tsne_embed: duplicate points, applying seeded jitter\n");
    for (auto& v : x) v += 1e-6 * rng.normal();
    compute_d2();
    out.jittered = true;
  }

  // per-point bandwidth via bisection on beta
  std::vector<double> P(n * n, 0.0);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 256; ++it) {
      row_affinities(d2, n, i, beta, row);
      const double perp = perplexity_of(row);
      if (std::fabs(perp - cfg.perplexity) <= cfg.perplexity_tol) break;
      if (perp > cfg.perplexity) {  // too flat: increase beta
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    row_affinities(d2, n, i, beta, row);
    for (std::size_t j = 0; j < n; ++j) P[i * n + j] = row[j];
  }
  // symmetrize and floor
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = (P[i * n + j] + P[j * n + i]) / (2.0 * static_cast<double>(n));
      P[i * n + j] = P[j * n + i] = std::max(v, 1e-12);
    }
  for (std::size_t i = 0; i < n; ++i) P[i * n + i] = 0.0;

  // low-dimensional state
  std::vector<double> y(2 * n), vel(2 * n, 0.0), grad(2 * n);
  for (auto& v : y) v = 1e-4 * rng.normal();

  std::vector<double> Q(n * n);
  auto eval_q = [&](const std::vector<double>& yy) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dy0 = yy[2 * i] - yy[2 * j];
        const double dy1 = yy[2 * i + 1] - yy[2 * j + 1];
        const double q = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        Q[i * n + j] = Q[j * n + i] = q;
        sum += 2.0 * q;
      }
    return sum;
  };
  auto kl_of = [&](const std::vector<double>& yy, double exag) {
    const double qsum = eval_q(yy);
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double p = exag * P[i * n + j];
        const double q = std::max(Q[i * n + j] / qsum, 1e-300);
        if (p > 1e-300) kl += p * std::log(p / q);
      }
    return kl;
  };
  auto gradient = [&](const std::vector<double>& yy, double exag, std::vector<double>& g) {
    const double qsum = eval_q(yy);
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = Q[i * n + j];
        const double mult = 4.0 * (exag * P[i * n + j] - q / qsum) * q;
        g[2 * i] += mult * (yy[2 * i] - yy[2 * j]);
        g[2 * i + 1] += mult * (yy[2 * i + 1] - yy[2 * j + 1]);
      }
  };

  std::vector<double> cand(2 * n);
  double kl = kl_of(y, cfg.exaggeration);
  out.kl_trace.push_back(kl);
  out.exaggeration_iters = cfg.exaggeration_iters;
  double lr = cfg.learning_rate;
  for (int it = 0; it < cfg.iterations; ++it) {
    const bool exag_phase = it < cfg.exaggeration_iters;
    const double exag = exag_phase ? cfg.exaggeration : 1.0;
    const double momentum = it < cfg.momentum_switch_iter ? cfg.momentum_early : cfg.momentum_late;
    if (static_cast<int>(it) == cfg.exaggeration_iters) {
      // objective changes when exaggeration ends; restart the trace baseline
      kl = kl_of(y, 1.0);
      std::fill(vel.begin(), vel.end(), 0.0);
    }
    gradient(y, exag, grad);
    if (exag_phase) {
      for (std::size_t k = 0; k < 2 * n; ++k) {
        vel[k] = momentum * vel[k] - lr * grad[k];
        y[k] += vel[k];
      }
      kl = kl_of(y, exag);
      out.kl_trace.push_back(kl);
      continue;
    }
    // monotone phase: accept only non-increasing KL, backtracking on lr
    bool accepted = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      for (std::size_t k = 0; k < 2 * n; ++k) cand[k] = y[k] + momentum * vel[k] - lr * grad[k];
      const double cand_kl = kl_of(cand, 1.0);
      if (cand_kl <= kl + 1e-12) {
        for (std::size_t k = 0; k < 2 * n; ++k) {
          vel[k] = momentum * vel[k] - lr * grad[k];
          y[k] = cand[k];
        }
        kl = cand_kl;
        out.kl_trace.push_back(kl);
        accepted = true;
        break;
      }
      std::fill(vel.begin(), vel.end(), 0.0);  // kill momentum, shrink the step
      lr *= 0.5;
      if (lr < 1e-16) break;
    }
    if (!accepted) break;  // converged: no descent direction at the step floor
  }
  out.final_kl = kl;
  out.coords = std::move(y);
  return out;
}

}  // namespace capslab
