#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csn/attention.hpp"
#include "csn/tensor.hpp"
#include "json.hpp"

namespace csn {

/// Raised when a ModelConfig violates its invariants.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t lookback = 96;
  std::size_t horizon = 16;
  std::size_t n_features = 1;  // channels D seen by the model
  std::size_t n_scales = 3;
  std::size_t patch_len = 16;
  std::size_t decomp_kernel = 25;
  std::size_t hidden_dim = 16;
  Variant variant = Variant::CrossDualKey;
  bool instance_norm = true;

  void validate() const;
  /// Sequence length at scale m (1-based): ceil(T / 2^(m-1)).
  std::size_t scale_length(std::size_t m) const;
  AttentionConfig attention_config() const { return {patch_len, variant, n_features}; }
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Temporal FC (T_m -> hidden -> H) followed by a residual channel FC (D -> D).
struct EncoderWeights {
  Tensor temporal_w1, temporal_b1;
  Tensor temporal_w2, temporal_b2;
  Tensor channel_w, channel_b;
};

struct ScaleParams {
  EncoderWeights seasonal;
  EncoderWeights trend;
  std::optional<AttentionWeights> attention;  // scales m >= 2 only
  Tensor gate_logit;                          // shape [1]
};

struct ForecasterParams {
  std::vector<ScaleParams> scales;
  Tensor fusion_w;  // [M*H, H], shared across channels
  Tensor fusion_b;  // [H]

  static ForecasterParams init(const ModelConfig& config, std::uint64_t seed);
  /// Stable-ordered (name, handle) pairs; handles share storage with the params.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::size_t parameter_count() const;
  ForecasterParams deep_copy() const;
};

struct ScaleOutput {
  Tensor y;           // [B, H, D], before gating
  Tensor y_seasonal;  // seasonal-encoder branch alone
  Tensor y_trend;
  std::optional<AttentionRecord> record;
};

struct ForwardResult {
  Tensor prediction;  // [B, H, D]
  std::vector<ScaleOutput> scales;
};

/// trend = moving_average(x, kernel) along time; seasonal = x - trend.
std::pair<Tensor, Tensor> decompose(const Tensor& x, std::size_t kernel);

Tensor encoder_forward(const Tensor& component, const EncoderWeights& w);

/// One scale of the network. Scales m >= 2 take the interpolated scale-1
/// forecast and seasonal forecast as keys and refine x residually.
ScaleOutput scale_forward(const Tensor& x, const std::optional<std::pair<Tensor, Tensor>>& keys,
                          const ScaleParams& params, const ModelConfig& config, std::size_t scale_index);

ForwardResult model_forward(const Tensor& x, const ForecasterParams& params, const ModelConfig& config);

/// Records for scales 2..M in scale order; batch-averaged when requested.
std::vector<AttentionRecord> capture_attention(const std::vector<ScaleOutput>& scales, bool batch_average = false);

nlohmann::json records_to_json(const std::vector<AttentionRecord>& records);
std::vector<AttentionRecord> records_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelConfig config;
  ForecasterParams params;
  nlohmann::json extra;  // caller metadata stored next to the config
};

/// Binary archive: magic, config JSON text, then (name, shape, raw
/// little-endian float64 buffer) per parameter.
void save_checkpoint(const std::string& path, const ModelConfig& config, const ForecasterParams& params,
                     const nlohmann::json& extra = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

}  // namespace csn
