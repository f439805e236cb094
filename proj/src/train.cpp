#include "xrdattn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "xrdattn/errors.hpp"

namespace xrdattn::train {

void adam_update(std::span<double> param, std::span<const double> grad, std::vector<double>& m,
                 std::vector<double>& v, std::size_t t, const AdamConfig& c) {
  if (grad.size() != param.size()) throw ShapeError("adam: gradient and parameter sizes differ");
  if (t == 0) throw DomainError("adam: step index starts at 1");
  if (m.size() != param.size()) m.assign(param.size(), 0.0);
  if (v.size() != param.size()) v.assign(param.size(), 0.0);
  const double corr1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double corr2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = m[i] / corr1;
    const double vhat = v[i] / corr2;
    param[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.eps);
  }
}

void adam_step(const std::vector<model::Parameter>& params, AdamState& state, const AdamConfig& config) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor t = params[i].tensor;
    adam_update(t.data(), t.grad(), state.m[i], state.v[i], state.step, config);
  }
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (adam.learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.adam.learning_rate},
                     {"beta1", c.adam.beta1},
                     {"beta2", c.adam.beta2},
                     {"adam_eps", c.adam.eps},
                     {"seed", c.seed},
                     {"early_stop_patience", nullptr}};
  if (c.early_stop_patience) j["early_stop_patience"] = *c.early_stop_patience;
}

void to_json(nlohmann::json& j, const Metrics& m) {
  j = nlohmann::json{{"voltage_mae_norm", m.voltage_mae_norm},
                     {"voltage_mae_volts", m.voltage_mae_volts},
                     {"mode_accuracy", nullptr},
                     {"rate_accuracy", nullptr},
                     {"total_loss", m.total_loss},
                     {"samples", m.samples}};
  if (m.mode_accuracy) j["mode_accuracy"] = *m.mode_accuracy;
  if (m.rate_accuracy) j["rate_accuracy"] = *m.rate_accuracy;
}

nlohmann::json metrics_json(const TrainResult& result, const TrainConfig& config) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : result.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation", e.validation}});
  }
  return {{"case", result.model.config().case_id},
          {"model_config", result.model.config()},
          {"train_config", config},
          {"best_epoch", result.best_epoch},
          {"validation", result.validation},
          {"training", result.training},
          {"history", history}};
}

ad::Tensor make_input(const std::vector<preproc::ProcessedSample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw LengthError("empty batch");
  const std::size_t len = samples[indices[0]].x.size();
  std::vector<double> x;
  x.reserve(indices.size() * len);
  for (auto i : indices) {
    const auto& s = samples.at(i);
    if (s.x.size() != len) throw LengthError("samples have differing lengths");
    x.insert(x.end(), s.x.begin(), s.x.end());
  }
  return ad::Tensor::from({indices.size(), len, 1}, std::move(x));
}

model::Targets make_targets(const std::vector<preproc::ProcessedSample>& samples,
                            std::span<const std::size_t> indices) {
  if (indices.empty()) throw LengthError("empty batch");
  const std::size_t b = indices.size();
  const std::size_t mc = samples[indices[0]].mode_onehot.size();
  const std::size_t rc = samples[indices[0]].rate_onehot.size();
  std::vector<double> v, m, r;
  v.reserve(b);
  m.reserve(b * mc);
  r.reserve(b * rc);
  for (auto i : indices) {
    const auto& s = samples.at(i);
    v.push_back(s.voltage_norm);
    m.insert(m.end(), s.mode_onehot.begin(), s.mode_onehot.end());
    r.insert(r.end(), s.rate_onehot.begin(), s.rate_onehot.end());
  }
  model::Targets t;
  t.voltage = ad::Tensor::from({b}, std::move(v));
  t.mode = ad::Tensor::from({b, mc}, std::move(m));
  t.rate = ad::Tensor::from({b, rc}, std::move(r));
  return t;
}

namespace {

std::size_t argmax_row(std::span<const double> logits, std::size_t row, std::size_t classes) {
  const double* p = logits.data() + row * classes;
  return static_cast<std::size_t>(std::max_element(p, p + classes) - p);
}

}  // namespace

Metrics evaluate(model::Model& model, const std::vector<preproc::ProcessedSample>& samples,
                 const preproc::VoltageWindow& window, std::size_t chunk) {
  Metrics m;
  m.samples = samples.size();
  if (samples.empty()) return m;
  ad::NoGradGuard no_grad;
  const auto& cfg = model.config();
  double abs_err = 0.0, loss = 0.0;
  std::size_t mode_hits = 0, rate_hits = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
    const std::size_t end = std::min(samples.size(), begin + chunk);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    auto out = model.forward(make_input(samples, idx), ad::BnMode::Eval);
    auto targets = make_targets(samples, idx);
    loss += model::case_loss(out.heads, targets, cfg).total.item() * static_cast<double>(idx.size());
    auto pred = out.heads.voltage.data();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& s = samples[idx[k]];
      abs_err += std::abs(pred[k] - s.voltage_norm);
      if (cfg.has_mode_head() && argmax_row(out.heads.mode_logits.data(), k, cfg.mode_classes) == s.mode_class) {
        ++mode_hits;
      }
      if (cfg.has_rate_head() && argmax_row(out.heads.rate_logits.data(), k, cfg.rate_classes) == s.rate_class) {
        ++rate_hits;
      }
    }
  }
  const double n = static_cast<double>(samples.size());
  m.voltage_mae_norm = abs_err / n;
  m.voltage_mae_volts = m.voltage_mae_norm * (window.hi - window.lo);
  m.total_loss = loss / n;
  if (cfg.has_mode_head()) m.mode_accuracy = static_cast<double>(mode_hits) / n;
  if (cfg.has_rate_head()) m.rate_accuracy = static_cast<double>(rate_hits) / n;
  return m;
}

TrainResult train(model::Model model, const std::vector<preproc::ProcessedSample>& train_set,
                  const std::vector<preproc::ProcessedSample>& val_set, const TrainConfig& config,
                  const preproc::VoltageWindow& window, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw LengthError("training and validation sets must be non-empty");
  const auto& cfg = model.config();
  const std::size_t want_modes = cfg.mode_classes;
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& s : *set) {
      if (cfg.has_mode_head() && s.mode_onehot.size() != want_modes) {
        throw ArityError("mode targets do not match the model's mode classes");
      }
      if (cfg.has_rate_head() && s.rate_onehot.size() != cfg.rate_classes) {
        throw ArityError("rate targets do not match the model's rate classes");
      }
    }
  }

  TrainResult result;
  auto params = model.parameters();
  AdamState adam;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  double best_loss = INFINITY;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(rng() % (i + 1))]);
    }
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      try {
        model.zero_grad();
        auto out = model.forward(make_input(train_set, idx), ad::BnMode::Train);
        auto loss = model::case_loss(out.heads, make_targets(train_set, idx), cfg);
        const double value = loss.total.item();
        if (!std::isfinite(value)) throw NonFiniteError("loss is not finite");
        ad::backward(loss.total);
        adam_step(params, adam, config.adam);
        loss_sum += value * static_cast<double>(idx.size());
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_no),
                             static_cast<long>(epoch), static_cast<long>(batch_no));
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.validation = evaluate(model, val_set, window);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.validation.total_loss < best_loss || result.best_epoch == 0) {
      best_loss = rec.validation.total_loss;
      result.best_epoch = epoch;
      result.model = model.clone();
      since_best = 0;
    } else if (config.early_stop_patience && ++since_best >= *config.early_stop_patience) {
      break;
    }
  }
  result.validation = evaluate(result.model, val_set, window);
  result.training = evaluate(result.model, train_set, window);
  return result;
}

}  // namespace xrdattn::train
