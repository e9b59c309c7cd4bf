#include "capslab/capsnet.hpp"

#include "json.hpp"

namespace capslab {
namespace O = ops;

TRef dynamic_routing(TRef u_hat, int iters, std::vector<Tensor>* coeff_trace) {
  if (iters < 1) throw DomainError("dynamic_routing: iters must be >= 1");
  const Shape& s = u_hat.shape();
  if (s.size() != 4) throw ShapeError("dynamic_routing", "expected [B,N,J,D], got " + shape_str(s));
  Tape& t = *u_hat.tape;
  TRef b_logits = t.constant(Tensor({s[0], s[1], s[2]}));  // [N,B,J]
  TRef v{};
  for (int it = 0; it < iters; ++it) {
    TRef c = O::softmax(b_logits, 2);  // simplex over output capsules
    if (coeff_trace) coeff_trace->push_back(c.value());
    v = O::squash(O::caps_weighted_sum(c, u_hat));  // [B,J,D]
    if (it + 1 < iters)
      b_logits = O::add(b_logits, O::caps_agreement(u_hat, v));
  }
  return v;
}

TRef margin_loss(TRef lengths, const std::vector<int>& labels, double m_plus, double m_minus,
                 double lambda) {
  const Shape& s = lengths.shape();
  if (s.size() != 2) throw ShapeError("margin_loss", "expected [B,K], got " + shape_str(s));
  const std::int64_t B = s[0], K = s[1];
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw ShapeError("margin_loss", "label count mismatch");
  Tensor onehot({B, K});
  for (std::int64_t b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= K)
      throw DomainError("margin_loss: label " + std::to_string(y) + " out of range");
    onehot[b * K + y] = 1.0;
  }
  Tape& t = *lengths.tape;
  TRef T = t.constant(onehot);
  TRef present = O::square(O::relu(O::add_scalar(O::neg(lengths), m_plus)));   // max(0, m+ - L)^2
  TRef absent = O::square(O::relu(O::add_scalar(lengths, -m_minus)));          // max(0, L - m-)^2
  TRef loss = O::add(O::mul(T, present),
                     O::scale(O::mul(O::add_scalar(O::neg(T), 1.0), absent), lambda));
  return O::scale(O::sum_all(loss), 1.0 / static_cast<double>(B));
}

TRef reconstruction_loss(TRef recon, TRef x_flat, double weight) {
  if (recon.shape() != x_flat.shape())
    throw ShapeError("reconstruction_loss", recon.shape(), x_flat.shape());
  const std::int64_t B = recon.shape()[0];
  TRef sse = O::sum_all(O::square(O::sub(recon, x_flat)));
  return O::scale(sse, weight / static_cast<double>(B));
}

std::string CapsNetConfig::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["input_hw"] = input_hw;
  j["conv1_channels"] = conv1_channels;
  j["conv2_channels"] = conv2_channels;
  j["primary_channels"] = primary_channels;
  j["primary_dim"] = primary_dim;
  j["class_count"] = class_count;
  j["class_dim"] = class_dim;
  j["routing_iters"] = routing_iters;
  j["none_of_the_above"] = none_of_the_above;
  j["decoder_hidden1"] = decoder_hidden1;
  j["decoder_hidden2"] = decoder_hidden2;
  j["m_plus"] = m_plus;
  j["m_minus"] = m_minus;
  j["lambda"] = lambda;
  j["recon_weight"] = recon_weight;
  j["eps_c"] = eps_c;
  return j.dump();
}

CapsNetConfig CapsNetConfig::from_json(const std::string& js) {
  const auto j = nlohmann::json::parse(js);
  CapsNetConfig c;
  c.variant = j.at("variant");
  c.input_hw = j.at("input_hw");
  c.conv1_channels = j.at("conv1_channels");
  c.conv2_channels = j.at("conv2_channels");
  c.primary_channels = j.at("primary_channels");
  c.primary_dim = j.at("primary_dim");
  c.class_count = j.at("class_count");
  c.class_dim = j.at("class_dim");
  c.routing_iters = j.at("routing_iters");
  c.none_of_the_above = j.at("none_of_the_above");
  c.decoder_hidden1 = j.at("decoder_hidden1");
  c.decoder_hidden2 = j.at("decoder_hidden2");
  c.m_plus = j.at("m_plus");
  c.m_minus = j.at("m_minus");
  c.lambda = j.at("lambda");
  c.recon_weight = j.at("recon_weight");
  c.eps_c = j.at("eps_c");
  return c;
}

CapsNetModel::CapsNetModel(CapsNetConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
  Rng rng(derive_seed(init_seed, "capsnet-init"));
  int hw = cfg_.input_hw;
  int stem_out = cfg_.conv1_channels;
  if (cfg_.variant == "mnist") {
    conv1_ = Conv2dLayer("conv1", 1, cfg_.conv1_channels, 9, 1, rng);
    hw = hw - 8;
  } else if (cfg_.variant == "fashion") {
    conv1_ = Conv2dLayer("conv1", 1, cfg_.conv1_channels, 3, 1, rng);
    const int c2 = cfg_.conv2_channels > 0 ? cfg_.conv2_channels : cfg_.conv1_channels;
    conv2_ = Conv2dLayer("conv2", cfg_.conv1_channels, c2, 3, 1, rng);
    stem_out = c2;
    hw = hw - 4;
  } else {
    throw DomainError("capsnet: unknown variant " + cfg_.variant);
  }
  primary_ = Conv2dLayer("primary", stem_out, cfg_.primary_channels * cfg_.primary_dim, 9, 2, rng);
  grid_ = (hw - 9) / 2 + 1;
  primary_count_ = cfg_.primary_channels * grid_ * grid_;
  routed_out_ = cfg_.class_count + (cfg_.none_of_the_above ? 1 : 0);
  w_caps_ = Param("caps.w", [&] {
    Tensor w({primary_count_, cfg_.primary_dim, routed_out_, cfg_.class_dim});
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.truncated_normal(0.05);
    return w;
  }());
  const int img = cfg_.input_hw * cfg_.input_hw;
  dec1_ = DenseLayer("decoder1", cfg_.class_dim, cfg_.decoder_hidden1, rng);
  dec2_ = DenseLayer("decoder2", cfg_.decoder_hidden1, cfg_.decoder_hidden2, rng);
  dec3_ = DenseLayer("decoder3", cfg_.decoder_hidden2, img, rng);
}

CapsNetModel::Caps CapsNetModel::caps_forward(Tape& t, TRef x, ParamBinding* pb,
                                              std::vector<Tensor>* coeff_trace) const {
  const std::int64_t B = x.shape()[0];
  TRef h = O::relu(conv1_.forward(t, x, pb));
  if (cfg_.variant == "fashion") h = O::relu(conv2_.forward(t, h, pb));
  TRef p = primary_.forward(t, h, pb);  // [B, P*D, g, g]
  const std::int64_t P = cfg_.primary_channels, D = cfg_.primary_dim, g = grid_;
  TRef u = O::reshape(p, {B, P, D, g * g});
  u = O::permute(u, {1, 3, 0, 2});            // capsule-major [P, g*g, B, D]
  u = O::reshape(u, {P * g * g, B, D});       // capsule vectors
  u = O::squash(u);
  TRef u_hat = O::caps_predict(u, param_leaf(t, w_caps_, pb));
  TRef v = dynamic_routing(u_hat, cfg_.routing_iters, coeff_trace);  // [B, J, class_dim]
  TRef v_class = cfg_.none_of_the_above
                     ? O::slice_axis(v, 1, 0, cfg_.class_count)
                     : v;
  TRef lengths = O::sqrt(O::sum_axes(O::square(v_class), {2}, false));  // [B, K]
  return {v_class, lengths};
}

TRef CapsNetModel::lengths_graph(Tape& t, TRef x, ParamBinding* pb,
                                 std::vector<Tensor>* coeff_trace) const {
  return caps_forward(t, x, pb, coeff_trace).lengths;
}

TRef CapsNetModel::logits_from_lengths(Tape& t, TRef lengths) const {
  (void)t;
  TRef clamped = O::clamp(lengths, cfg_.eps_c, 1.0 - cfg_.eps_c);
  return O::arctanh(O::add_scalar(O::scale(clamped, 2.0), -1.0));
}

TRef CapsNetModel::logits_graph(Tape& t, TRef x) const {
  return logits_from_lengths(t, lengths_graph(t, x));
}

TRef CapsNetModel::loss_graph(Tape& t, TRef x, const std::vector<int>& labels) const {
  TRef lengths = lengths_graph(t, x);
  return margin_loss(lengths, labels, cfg_.m_plus, cfg_.m_minus, cfg_.lambda);
}

Tensor CapsNetModel::probs(const Tensor& x_batch) const {
  Tape t;
  TRef x = t.leaf(as_batch(x_batch), false);
  return lengths_graph(t, x).value();
}

TRef CapsNetModel::train_loss_graph(Tape& t, TRef x, const std::vector<int>& labels, Rng& rng,
                                    ParamBinding& pb) {
  (void)rng;  // capsule training uses no dropout
  const std::int64_t B = x.shape()[0];
  const Caps caps = caps_forward(t, x, &pb, nullptr);
  TRef margin = margin_loss(caps.lengths, labels, cfg_.m_plus, cfg_.m_minus, cfg_.lambda);

  // decoder regularizer on the true-class capsule
  Tensor onehot({B, cfg_.class_count, 1});
  for (std::int64_t b = 0; b < B; ++b)
    onehot[b * cfg_.class_count + labels[static_cast<std::size_t>(b)]] = 1.0;
  TRef masked = O::sum_axes(O::mul(caps.v_class, t.constant(std::move(onehot))), {1}, false);
  TRef r = O::relu(dec1_.forward(t, masked, &pb));
  r = O::relu(dec2_.forward(t, r, &pb));
  TRef recon = O::sigmoid(dec3_.forward(t, r, &pb));
  TRef x_flat = O::reshape(x, {B, cfg_.input_hw * cfg_.input_hw});
  return O::add(margin, reconstruction_loss(recon, x_flat, cfg_.recon_weight));
}

std::vector<Param*> CapsNetModel::params() {
  std::vector<Param*> out{&conv1_.w, &conv1_.b};
  if (cfg_.variant == "fashion") {
    out.push_back(&conv2_.w);
    out.push_back(&conv2_.b);
  }
  out.insert(out.end(), {&primary_.w, &primary_.b, &w_caps_, &dec1_.w, &dec1_.b, &dec2_.w,
                         &dec2_.b, &dec3_.w, &dec3_.b});
  return out;
}

std::vector<std::pair<std::string, Tensor*>> CapsNetModel::state_blocks() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (Param* p : params()) out.push_back({p->name, &p->value});
  return out;
}

}  // namespace capslab
