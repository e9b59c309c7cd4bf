#include "capslab/convnet.hpp"

#include "json.hpp"

namespace capslab {
namespace O = ops;

std::string ConvNetConfig::to_json() const {
  nlohmann::ordered_json j;
  j["input_hw"] = input_hw;
  j["conv1_channels"] = conv1_channels;
  j["conv2_channels"] = conv2_channels;
  j["dense_units"] = dense_units;
  j["dropout_rate"] = dropout_rate;
  j["num_classes"] = num_classes;
  j["linear_only"] = linear_only;
  return j.dump();
}

ConvNetConfig ConvNetConfig::from_json(const std::string& js) {
  const auto j = nlohmann::json::parse(js);
  ConvNetConfig c;
  c.input_hw = j.at("input_hw");
  c.conv1_channels = j.at("conv1_channels");
  c.conv2_channels = j.at("conv2_channels");
  c.dense_units = j.at("dense_units");
  c.dropout_rate = j.at("dropout_rate");
  c.num_classes = j.at("num_classes");
  c.linear_only = j.at("linear_only");
  return c;
}

namespace {

int pooled_hw(int hw) { return ((hw - 4) / 2 - 4) / 2; }  // two conv5(valid)+pool2 blocks

int flat_features(const ConvNetConfig& c) {
  if (c.linear_only) return c.input_hw * c.input_hw;
  const int s = pooled_hw(c.input_hw);
  return c.conv2_channels * s * s;
}

}  // namespace

ConvNetModel::ConvNetModel(ConvNetConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
  Rng rng(derive_seed(init_seed, "convnet-init"));
  if (!cfg_.linear_only) {
    conv1_ = Conv2dLayer("conv1", 1, cfg_.conv1_channels, 5, 1, rng);
    conv2_ = Conv2dLayer("conv2", cfg_.conv1_channels, cfg_.conv2_channels, 5, 1, rng);
    bn1_ = BatchNorm2d("bn1", cfg_.conv1_channels);
    bn2_ = BatchNorm2d("bn2", cfg_.conv2_channels);
    dense1_ = DenseLayer("dense1", flat_features(cfg_), cfg_.dense_units, rng);
    dense2_ = DenseLayer("dense2", cfg_.dense_units, cfg_.num_classes, rng);
  } else {
    dense2_ = DenseLayer("dense2", flat_features(cfg_), cfg_.num_classes, rng);
  }
}

TRef ConvNetModel::body(Tape& t, TRef x, bool training, Rng* rng, ParamBinding* pb) const {
  const std::int64_t B = x.shape()[0];
  if (cfg_.linear_only) {
    TRef flat = O::reshape(x, {B, flat_features(cfg_)});
    return dense2_.forward(t, flat, pb);
  }
  TRef h = conv1_.forward(t, x, pb);
  h = bn1_.forward(t, h, training, pb);
  h = O::relu(h);
  h = O::max_pool2d(h, 2, 2);
  h = conv2_.forward(t, h, pb);
  h = bn2_.forward(t, h, training, pb);
  h = O::relu(h);
  h = O::max_pool2d(h, 2, 2);
  h = O::reshape(h, {B, flat_features(cfg_)});
  h = O::relu(dense1_.forward(t, h, pb));
  if (training && cfg_.dropout_rate > 0.0) h = dropout(t, h, cfg_.dropout_rate, *rng);
  return dense2_.forward(t, h, pb);
}

TRef ConvNetModel::logits_graph(Tape& t, TRef x) const {
  return body(t, x, /*training=*/false, nullptr, nullptr);
}

TRef ConvNetModel::loss_graph(Tape& t, TRef x, const std::vector<int>& labels) const {
  return O::cross_entropy_with_logits(body(t, x, false, nullptr, nullptr), labels);
}

Tensor ConvNetModel::probs(const Tensor& x_batch) const {
  return O::softmax_rows(logits(x_batch));
}

TRef ConvNetModel::train_loss_graph(Tape& t, TRef x, const std::vector<int>& labels, Rng& rng,
                                    ParamBinding& pb) {
  return O::cross_entropy_with_logits(body(t, x, true, &rng, &pb), labels);
}

std::vector<Param*> ConvNetModel::params() {
  if (cfg_.linear_only) return {&dense2_.w, &dense2_.b};
  return {&conv1_.w, &conv1_.b, &bn1_.gamma, &bn1_.beta, &conv2_.w, &conv2_.b,
          &bn2_.gamma, &bn2_.beta, &dense1_.w, &dense1_.b, &dense2_.w, &dense2_.b};
}

std::vector<std::pair<std::string, Tensor*>> ConvNetModel::state_blocks() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (Param* p : params()) out.push_back({p->name, &p->value});
  if (!cfg_.linear_only) {
    out.push_back({"bn1.run_mean", &bn1_.run_mean});
    out.push_back({"bn1.run_var", &bn1_.run_var});
    out.push_back({"bn2.run_mean", &bn2_.run_mean});
    out.push_back({"bn2.run_var", &bn2_.run_var});
  }
  return out;
}

}  // namespace capslab
