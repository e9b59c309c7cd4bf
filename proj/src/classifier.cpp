#include "capslab/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "capslab/layers.hpp"
#include "capslab/ops.hpp"

namespace capslab {

Tensor as_batch(const Tensor& image) {
  const auto& s = image.shape();
  if (s.size() == 2) return image.reshaped({1, 1, s[0], s[1]});
  if (s.size() == 3) return image.reshaped({1, s[0], s[1], s[2]});
  if (s.size() == 4) return image;
  throw ShapeError("as_batch", "expected 2-4 dims, got " + shape_str(s));
}

Tensor clip01_add(const Tensor& x, const Tensor& delta) {
  if (x.numel() != delta.numel()) throw ShapeError("clip01_add", x.shape(), delta.shape());
  Tensor out = x;
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::min(1.0, std::max(0.0, out[i] + delta[i]));
  return out;
}

Tensor Classifier::logits(const Tensor& x_batch) const {
  Tape t;
  TRef x = t.leaf(as_batch(x_batch), false);
  return logits_graph(t, x).value();
}

std::vector<int> Classifier::predict(const Tensor& x_batch) const {
  const Tensor z = logits(x_batch);
  const std::int64_t C = z.shape().back();
  const std::int64_t B = z.numel() / C;
  std::vector<int> out(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) {
    const double* row = z.data() + b * C;
    out[static_cast<std::size_t>(b)] =
        static_cast<int>(std::max_element(row, row + C) - row);
  }
  return out;
}

int Classifier::predict_one(const Tensor& image) const { return predict(as_batch(image))[0]; }

double Classifier::accuracy(const LabeledDataset& data, const Tensor* delta,
                            std::size_t eval_batch) const {
  if (data.size() == 0) throw Error("accuracy: empty dataset");
  std::size_t correct = 0;
  const std::int64_t hw = data.height * data.width;
  for (std::size_t at = 0; at < data.size(); at += eval_batch) {
    const std::size_t n = std::min(eval_batch, data.size() - at);
    Tensor batch = Tensor::uninit({static_cast<std::int64_t>(n), 1, data.height, data.width});
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor& img = data.images[at + i];
      double* dst = batch.data() + static_cast<std::int64_t>(i) * hw;
      if (delta) {
        for (std::int64_t j = 0; j < hw; ++j)
          dst[j] = std::min(1.0, std::max(0.0, img[j] + (*delta)[j]));
      } else {
        std::memcpy(dst, img.data(), sizeof(double) * static_cast<std::size_t>(hw));
      }
    }
    const auto pred = predict(batch);
    for (std::size_t i = 0; i < n; ++i)
      if (pred[i] == data.labels[at + i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Tensor Classifier::input_gradient(const Tensor& image, int logit_index) const {
  Tape t;
  TRef x = t.leaf(as_batch(image), true);
  TRef z = logits_graph(t, x);
  TRef zi = ops::pick(z, logit_index);
  t.backward(zi);
  return x.grad().reshaped(image.shape());
}

TrainHistory train_model(TrainableModel& model, const LabeledDataset& train,
                         const LabeledDataset& test, const TrainConfig& cfg) {
  if (train.size() == 0) throw Error("train: empty dataset");
  if (cfg.epochs < 1) throw Error("train: epochs must be >= 1");
  const std::size_t n_train =
      cfg.train_limit == 0 ? train.size() : std::min(cfg.train_limit, train.size());

  auto params = model.params();
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(acfg);

  TrainHistory hist;
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "train-shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    Rng mask_rng(derive_seed(cfg.seed, "train-mask", static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < n_train; at += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t bsz = std::min(static_cast<std::size_t>(cfg.batch), n_train - at);
      for (Param* p : params) p->zero_grad();
      double batch_loss = 0.0;
      // micro-batches accumulate grads of (sum losses) / bsz
      for (std::size_t mb = 0; mb < bsz; mb += static_cast<std::size_t>(cfg.micro_batch)) {
        const std::size_t m = std::min(static_cast<std::size_t>(cfg.micro_batch), bsz - mb);
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at + mb),
                                     order.begin() + static_cast<std::ptrdiff_t>(at + mb + m));
        Tensor x = train.batch(idx);
        std::vector<int> labels(m);
        for (std::size_t i = 0; i < m; ++i) labels[i] = train.labels[idx[i]];
        Tape tape;
        TRef xn = tape.leaf(std::move(x), false);
        ParamBinding pb;
        TRef loss = model.train_loss_graph(tape, xn, labels, mask_rng, pb);
        const double lv = loss.value().item();
        if (std::isnan(lv) || std::isinf(lv))
          throw Error("training diverged: loss=" + std::to_string(lv) + " at epoch " +
                      std::to_string(epoch) + ", batch " + std::to_string(batches));
        batch_loss += lv * static_cast<double>(m);
        // scale micro-batch mean loss to its share of the full batch mean
        TRef scaled = ops::scale(loss, static_cast<double>(m) / static_cast<double>(bsz));
        tape.backward(scaled);
        pb.fold();
      }
      opt.step(params);
      epoch_loss += batch_loss / static_cast<double>(bsz);
      ++batches;
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(batches));
    hist.test_accuracy.push_back(test.size() ? model.accuracy(test) : 0.0);
    if (cfg.verbose)
      std::fprintf(stderr, "epoch %d: loss %.5f, test acc %.4f\n", epoch,
                   hist.train_loss.back(), hist.test_accuracy.back());
  }
  return hist;
}

}  // namespace capslab
