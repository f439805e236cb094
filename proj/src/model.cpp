#include "xrdattn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "xrdattn/errors.hpp"

namespace xrdattn::model {

std::size_t ModelConfig::kernel_at(std::size_t layer) const {
  if (!kernels.empty()) return kernels.at(layer - 1);
  return kernel;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (input_len == 0) fail("input_len must be positive");
  if (n_conv_layers == 0) fail("n_conv_layers must be positive");
  if (filters == 0) fail("filters must be positive");
  if (!kernels.empty() && kernels.size() != n_conv_layers) fail("kernels must list one size per conv layer");
  for (std::size_t l = 1; l <= n_conv_layers; ++l) {
    if (kernel_at(l) == 0) fail("kernel sizes must be positive");
  }
  if (!(query_tap >= 1 && query_tap < kv_tap && kv_tap <= n_conv_layers)) {
    fail("need 1 <= query_tap < kv_tap <= n_conv_layers");
  }
  if (bn_layer_index > n_conv_layers) fail("bn_layer_index exceeds n_conv_layers");
  if (case_id < 1 || case_id > 3) fail("case must be 1, 2 or 3");
  if (mode_classes < 2) fail("mode_classes must be at least 2");
  if (rate_classes < 2) fail("rate_classes must be at least 2");
  if (loss_weights.size() != 3) fail("loss_weights needs three entries (voltage, mode, rate)");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_len", c.input_len},
                     {"n_conv_layers", c.n_conv_layers},
                     {"filters", c.filters},
                     {"kernel", c.kernel},
                     {"kernels", c.kernels},
                     {"bn_layer_index", c.bn_layer_index},
                     {"query_tap", c.query_tap},
                     {"kv_tap", c.kv_tap},
                     {"case", c.case_id},
                     {"mode_classes", c.mode_classes},
                     {"rate_classes", c.rate_classes},
                     {"loss_weights", c.loss_weights},
                     {"head_hidden", c.head_hidden},
                     {"scale_scores", c.scale_scores},
                     {"bn_momentum", c.bn_momentum},
                     {"voltage_loss", c.voltage_loss == VoltageLoss::LogCosh ? "log_cosh" : "acosh"}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.input_len = j.value("input_len", d.input_len);
  c.n_conv_layers = j.value("n_conv_layers", d.n_conv_layers);
  c.filters = j.value("filters", d.filters);
  c.kernel = j.value("kernel", d.kernel);
  c.kernels = j.value("kernels", d.kernels);
  c.bn_layer_index = j.value("bn_layer_index", d.bn_layer_index);
  c.query_tap = j.value("query_tap", d.query_tap);
  c.kv_tap = j.value("kv_tap", d.kv_tap);
  c.case_id = j.value("case", d.case_id);
  c.mode_classes = j.value("mode_classes", d.mode_classes);
  c.rate_classes = j.value("rate_classes", d.rate_classes);
  c.loss_weights = j.value("loss_weights", d.loss_weights);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.scale_scores = j.value("scale_scores", d.scale_scores);
  c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
  const std::string loss = j.value("voltage_loss", std::string("acosh"));
  if (loss == "acosh") {
    c.voltage_loss = VoltageLoss::AcoshSquare;
  } else if (loss == "log_cosh") {
    c.voltage_loss = VoltageLoss::LogCosh;
  } else {
    throw ConfigError("unknown voltage_loss '" + loss + "'");
  }
}

std::pair<Tensor, Tensor> attention(const Tensor& q, const Tensor& k, const Tensor& v, bool scale_scores) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: Q, K, V must share one [B, L, C] shape");
  }
  Tensor scores = ad::matmul(q, ad::transpose_last2(k));
  if (scale_scores) scores = ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(q.dim(2))));
  Tensor weights = ad::softmax(scores, -1);
  Tensor combined = ad::tanh(ad::matmul(weights, v));
  return {weights, combined};
}

namespace {

Tensor uniform(ad::Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

void require_finite(const Tensor& t, const std::string& where) {
  for (double x : t.data()) {
    if (!std::isfinite(x)) throw NonFiniteError("non-finite activation in " + where);
  }
}

Tensor clone_param(const Tensor& t) {
  Tensor c = t.detach();
  c.set_requires_grad(true);
  return c;
}

}  // namespace

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  std::mt19937_64 rng(seed);
  const std::size_t f = config.filters;
  for (std::size_t l = 1; l <= config.n_conv_layers; ++l) {
    const std::size_t k = config.kernel_at(l);
    const std::size_t cin = l == 1 ? 1 : f;
    const double bound = std::sqrt(6.0 / static_cast<double>(k * cin));
    m.conv_w_.push_back(uniform({k, cin, f}, bound, rng));
    m.conv_b_.push_back(Tensor::zeros({f}, true));
  }
  m.bn_gamma_ = Tensor::full({f}, 1.0, true);
  m.bn_beta_ = Tensor::zeros({f}, true);
  m.bn_state_ = ad::BatchNormState(f);

  const std::size_t flat = config.input_len * f;
  auto make_head = [&](std::size_t outputs) {
    Head h;
    std::size_t in = flat;
    if (config.head_hidden > 0) {
      h.hidden = Dense{uniform({flat, config.head_hidden}, std::sqrt(6.0 / static_cast<double>(flat)), rng),
                       Tensor::zeros({config.head_hidden}, true)};
      in = config.head_hidden;
    }
    h.out = Dense{uniform({in, outputs}, std::sqrt(3.0 / static_cast<double>(in)), rng),
                  Tensor::zeros({outputs}, true)};
    return h;
  };
  m.voltage_head_ = make_head(1);
  if (config.has_mode_head()) m.mode_head_ = make_head(config.mode_classes);
  if (config.has_rate_head()) m.rate_head_ = make_head(config.rate_classes);
  return m;
}

Tensor Model::apply_head(const Head& head, const Tensor& flat) const {
  Tensor h = flat;
  if (head.hidden) h = ad::relu(ad::dense(h, head.hidden->w, head.hidden->b));
  return ad::dense(h, head.out.w, head.out.b);
}

ForwardResult Model::forward(const Tensor& x, BnMode mode) {
  if (x.rank() != 3 || x.dim(1) != config_.input_len || x.dim(2) != 1) {
    throw ShapeError("model input must be [B, " + std::to_string(config_.input_len) + ", 1], got " +
                     ad::shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  ForwardResult r;
  Tensor h = x;
  for (std::size_t l = 1; l <= config_.n_conv_layers; ++l) {
    h = ad::conv1d(h, conv_w_[l - 1], conv_b_[l - 1]);
    if (l == config_.bn_layer_index) {
      h = ad::batchnorm1d(h, bn_gamma_, bn_beta_, bn_state_, mode, config_.bn_momentum);
    }
    r.pre_activations.push_back(h);
    h = ad::relu(h);
    require_finite(h, "conv" + std::to_string(l));
    if (l == config_.query_tap) r.attention.query = h;
    if (l == config_.kv_tap) r.attention.key = h;
  }
  r.attention.value = r.attention.key;
  auto [weights, combined] =
      attention(r.attention.query, r.attention.key, r.attention.value, config_.scale_scores);
  require_finite(weights, "attention weight");
  r.attention.weights = weights;
  r.attention.combined = combined;

  Tensor flat = ad::reshape(combined, {batch, config_.input_len * config_.filters});
  r.heads.voltage = ad::reshape(apply_head(voltage_head_, flat), {batch});
  if (mode_head_) r.heads.mode_logits = apply_head(*mode_head_, flat);
  if (rate_head_) r.heads.rate_logits = apply_head(*rate_head_, flat);
  require_finite(r.heads.voltage, "voltage head");
  return r;
}

std::vector<Parameter> Model::parameters() const {
  std::vector<Parameter> ps;
  for (std::size_t l = 0; l < conv_w_.size(); ++l) {
    ps.push_back({"conv" + std::to_string(l + 1) + ".w", conv_w_[l]});
    ps.push_back({"conv" + std::to_string(l + 1) + ".b", conv_b_[l]});
  }
  if (config_.bn_layer_index > 0) {
    const std::string bn = "bn" + std::to_string(config_.bn_layer_index);
    ps.push_back({bn + ".gamma", bn_gamma_});
    ps.push_back({bn + ".beta", bn_beta_});
  }
  auto add_head = [&ps](const std::string& name, const Head& h) {
    if (h.hidden) {
      ps.push_back({"head." + name + ".hidden.w", h.hidden->w});
      ps.push_back({"head." + name + ".hidden.b", h.hidden->b});
    }
    ps.push_back({"head." + name + ".w", h.out.w});
    ps.push_back({"head." + name + ".b", h.out.b});
  };
  add_head("voltage", voltage_head_);
  if (mode_head_) add_head("mode", *mode_head_);
  if (rate_head_) add_head("rate", *rate_head_);
  return ps;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : parameters()) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

Model Model::clone() const {
  Model m;
  m.config_ = config_;
  for (const auto& w : conv_w_) m.conv_w_.push_back(clone_param(w));
  for (const auto& b : conv_b_) m.conv_b_.push_back(clone_param(b));
  m.bn_gamma_ = clone_param(bn_gamma_);
  m.bn_beta_ = clone_param(bn_beta_);
  m.bn_state_ = bn_state_;
  auto copy_head = [](const Head& h) {
    Head c;
    if (h.hidden) c.hidden = Dense{clone_param(h.hidden->w), clone_param(h.hidden->b)};
    c.out = Dense{clone_param(h.out.w), clone_param(h.out.b)};
    return c;
  };
  m.voltage_head_ = copy_head(voltage_head_);
  if (mode_head_) m.mode_head_ = copy_head(*mode_head_);
  if (rate_head_) m.rate_head_ = copy_head(*rate_head_);
  return m;
}

LossBreakdown case_loss(const HeadOutputs& outputs, const Targets& targets, const ModelConfig& config) {
  if (!outputs.voltage.defined() || !targets.voltage.defined()) {
    throw ArityError("case " + std::to_string(config.case_id) + " needs a voltage output and target");
  }
  LossBreakdown br;
  std::vector<Tensor> losses;
  std::vector<double> weights;
  Tensor v = config.voltage_loss == VoltageLoss::LogCosh ? ad::log_cosh_loss(outputs.voltage, targets.voltage)
                                                         : ad::acosh_loss(outputs.voltage, targets.voltage);
  br.voltage = v.item();
  losses.push_back(v);
  weights.push_back(config.loss_weights[0]);
  if (config.has_mode_head()) {
    if (!outputs.mode_logits.defined() || !targets.mode.defined()) {
      throw ArityError("case " + std::to_string(config.case_id) + " needs mode logits and mode targets");
    }
    Tensor m = ad::cross_entropy(outputs.mode_logits, targets.mode);
    br.mode = m.item();
    losses.push_back(m);
    weights.push_back(config.loss_weights[1]);
  }
  if (config.has_rate_head()) {
    if (!outputs.rate_logits.defined() || !targets.rate.defined()) {
      throw ArityError("case 3 needs rate logits and rate targets");
    }
    Tensor r = ad::cross_entropy(outputs.rate_logits, targets.rate);
    br.rate = r.item();
    losses.push_back(r);
    weights.push_back(config.loss_weights[2]);
  }
  br.total = ad::weighted_sum_loss(losses, weights);
  return br;
}

}  // namespace xrdattn::model
