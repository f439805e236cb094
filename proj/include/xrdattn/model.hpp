#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xrdattn/ops.hpp"
#include "xrdattn/tensor.hpp"

namespace xrdattn::model {

using ad::BnMode;
using ad::Tensor;

enum class VoltageLoss { AcoshSquare, LogCosh };

/// Network hyperparameters. Layer indices are 1-based, as in the layer
/// numbering "conv1 .. conv10".
struct ModelConfig {
  std::size_t input_len = 256;
  std::size_t n_conv_layers = 10;
  std::size_t filters = 32;
  std::size_t kernel = 4;
  /// Optional per-layer kernel sizes; when non-empty it overrides `kernel`
  /// and must have n_conv_layers entries.
  std::vector<std::size_t> kernels;
  std::size_t bn_layer_index = 7;
  std::size_t query_tap = 6;
  std::size_t kv_tap = 10;
  int case_id = 1;
  std::size_t mode_classes = 4;
  std::size_t rate_classes = 2;
  std::vector<double> loss_weights{1.0, 1.0, 1.0};
  /// 0 = heads are a single dense layer on the flattened Combination.
  std::size_t head_hidden = 0;
  /// Divide Q.K^T by sqrt(channels); off to match the plain f(Q K^T) form.
  bool scale_scores = false;
  double bn_momentum = 0.1;
  VoltageLoss voltage_loss = VoltageLoss::AcoshSquare;

  std::size_t kernel_at(std::size_t layer) const;  // 1-based
  bool has_mode_head() const { return case_id >= 2; }
  bool has_rate_head() const { return case_id >= 3; }
  /// Throws ConfigError when an invariant fails.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Q/K/V taps, the attention weight and the Combination output of a forward pass.
struct AttentionArtifacts {
  Tensor query;     // [B, L, C]
  Tensor key;       // [B, L, C]
  Tensor value;     // [B, L, C] (same tensor as key)
  Tensor weights;   // [B, L, L], rows (fixed query) sum to 1
  Tensor combined;  // [B, L, C], tanh(A V)
};

struct HeadOutputs {
  Tensor voltage;      // [B]
  Tensor mode_logits;  // [B, mode_classes], case >= 2
  Tensor rate_logits;  // [B, rate_classes], case 3
};

struct ForwardResult {
  HeadOutputs heads;
  AttentionArtifacts attention;
  /// Inputs of every trunk relu, layer by layer.
  std::vector<Tensor> pre_activations;
};

struct Targets {
  Tensor voltage;  // [B] normalized voltage
  Tensor mode;     // [B, mode_classes] one-hot
  Tensor rate;     // [B, rate_classes] one-hot
};

struct LossBreakdown {
  Tensor total;
  double voltage = 0.0;
  std::optional<double> mode;
  std::optional<double> rate;
};

/// A named learnable tensor.
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// A = softmax(Q K^T) over the key axis, combined = tanh(A V).
std::pair<Tensor, Tensor> attention(const Tensor& q, const Tensor& k, const Tensor& v, bool scale_scores = false);

class Model {
 public:
  Model() = default;
  /// Builds and initializes a model; identical seeds give identical parameters.
  static Model build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// x: [B, input_len, 1].
  ForwardResult forward(const Tensor& x, BnMode mode);

  std::vector<Parameter> parameters() const;
  std::size_t parameter_count() const;
  ad::BatchNormState& bn_state() { return bn_state_; }
  const ad::BatchNormState& bn_state() const { return bn_state_; }

  void zero_grad();
  /// Deep copy; parameters do not alias.
  Model clone() const;

 private:
  struct Dense {
    Tensor w, b;
  };
  struct Head {
    std::optional<Dense> hidden;
    Dense out;
  };

  Tensor apply_head(const Head& head, const Tensor& flat) const;

  ModelConfig config_;
  std::vector<Tensor> conv_w_;
  std::vector<Tensor> conv_b_;
  Tensor bn_gamma_, bn_beta_;
  ad::BatchNormState bn_state_;
  Head voltage_head_;
  std::optional<Head> mode_head_;
  std::optional<Head> rate_head_;
};

/// Weighted sum of the heads' losses; throws ArityError if the targets do not
/// cover the heads required by the case.
LossBreakdown case_loss(const HeadOutputs& outputs, const Targets& targets, const ModelConfig& config);

}  // namespace xrdattn::model
