#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "xrdattn/model.hpp"
#include "xrdattn/preproc.hpp"

namespace xrdattn::train {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers, one pair per parameter.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of a single parameter buffer at step t >= 1.
void adam_update(std::span<double> param, std::span<const double> grad, std::vector<double>& m,
                 std::vector<double>& v, std::size_t t, const AdamConfig& config);

/// Advances state.step and updates every parameter from its accumulated grad.
void adam_step(const std::vector<model::Parameter>& params, AdamState& state, const AdamConfig& config);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  AdamConfig adam;
  std::uint64_t seed = 7;
  /// Stop after this many epochs without validation improvement; off when unset.
  std::optional<std::size_t> early_stop_patience;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);

/// Table-I style numbers for one dataset.
struct Metrics {
  double voltage_mae_norm = 0.0;
  double voltage_mae_volts = 0.0;
  std::optional<double> mode_accuracy;
  std::optional<double> rate_accuracy;
  double total_loss = 0.0;
  std::size_t samples = 0;
};

void to_json(nlohmann::json& j, const Metrics& m);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  Metrics validation;
};

struct TrainResult {
  model::Model model;  // parameters of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  Metrics validation;
  Metrics training;
};

nlohmann::json metrics_json(const TrainResult& result, const TrainConfig& config);

/// Stacks samples into model input [B, L, 1] and targets.
ad::Tensor make_input(const std::vector<preproc::ProcessedSample>& samples, std::span<const std::size_t> indices);
model::Targets make_targets(const std::vector<preproc::ProcessedSample>& samples,
                            std::span<const std::size_t> indices);

/// Eval-mode metrics over a whole set. `window` converts MAE to volts.
Metrics evaluate(model::Model& model, const std::vector<preproc::ProcessedSample>& samples,
                 const preproc::VoltageWindow& window, std::size_t chunk = 128);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam training with per-epoch seeded shuffling. Batch norm runs in train
/// mode for updates and eval mode for validation. The returned model is the
/// one with the lowest validation loss. Throws NonFiniteError carrying the
/// epoch and batch if the loss or an activation stops being finite.
TrainResult train(model::Model model, const std::vector<preproc::ProcessedSample>& train_set,
                  const std::vector<preproc::ProcessedSample>& val_set, const TrainConfig& config,
                  const preproc::VoltageWindow& window, const EpochCallback& on_epoch = {});

}  // namespace xrdattn::train
