#include "csn/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "csn/ops.hpp"

namespace csn {

namespace {

constexpr double kNormEps = 1e-5;
constexpr char kCheckpointMagic[8] = {'C', 'S', 'N', 'C', 'K', 'P', 'T', '1'};

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

EncoderWeights init_encoder(std::size_t in_len, const ModelConfig& c, std::mt19937_64& rng) {
  const double b1 = 1.0 / std::sqrt(static_cast<double>(in_len));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(c.hidden_dim));
  const double bc = 1.0 / std::sqrt(static_cast<double>(c.n_features));
  return EncoderWeights{uniform({in_len, c.hidden_dim}, b1, rng),     uniform({c.hidden_dim}, b1, rng),
                        uniform({c.hidden_dim, c.horizon}, b2, rng),  uniform({c.horizon}, b2, rng),
                        uniform({c.n_features, c.n_features}, bc, rng), uniform({c.n_features}, bc, rng)};
}

Tensor copy_param(const Tensor& t) { return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true); }

EncoderWeights copy_encoder(const EncoderWeights& e) {
  return {copy_param(e.temporal_w1), copy_param(e.temporal_b1), copy_param(e.temporal_w2),
          copy_param(e.temporal_b2), copy_param(e.channel_w),   copy_param(e.channel_b)};
}

void push_encoder(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                  const EncoderWeights& e) {
  out.emplace_back(prefix + ".temporal_w1", e.temporal_w1);
  out.emplace_back(prefix + ".temporal_b1", e.temporal_b1);
  out.emplace_back(prefix + ".temporal_w2", e.temporal_w2);
  out.emplace_back(prefix + ".temporal_b2", e.temporal_b2);
  out.emplace_back(prefix + ".channel_w", e.channel_w);
  out.emplace_back(prefix + ".channel_b", e.channel_b);
}

nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

template <typename T>
void write_pod(std::ostream& out, T value) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
}

template <typename T>
T read_pod(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  in.read(bytes.data(), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace

void ModelConfig::validate() const {
  if (lookback < 1 || horizon < 1 || n_features < 1) throw ConfigError("lookback, horizon and n_features must be >= 1");
  if (n_scales < 1) throw ConfigError("n_scales must be >= 1");
  if (patch_len < 1) throw ConfigError("patch_len must be >= 1");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
  if (n_scales > 32 || lookback < patch_len * (std::size_t{1} << (n_scales - 1))) {
    throw ConfigError("coarsest scale cannot hold one patch: lookback " + std::to_string(lookback) + " / 2^" +
                      std::to_string(n_scales - 1) + " < patch " + std::to_string(patch_len));
  }
  if (decomp_kernel % 2 == 0) throw ConfigError("decomp_kernel must be odd");
  if (decomp_kernel > 2 * scale_length(n_scales) - 1) {
    throw ConfigError("decomp_kernel exceeds 2*T_M - 1 at the coarsest scale");
  }
}

std::size_t ModelConfig::scale_length(std::size_t m) const {
  const std::size_t factor = std::size_t{1} << (m - 1);
  return (lookback + factor - 1) / factor;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"lookback", c.lookback},           {"horizon", c.horizon},
          {"n_features", c.n_features},       {"n_scales", c.n_scales},
          {"patch_len", c.patch_len},         {"decomp_kernel", c.decomp_kernel},
          {"hidden_dim", c.hidden_dim},       {"variant", std::string(variant_name(c.variant))},
          {"instance_norm", c.instance_norm}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.lookback = j.at("lookback").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.n_features = j.at("n_features").get<std::size_t>();
  c.n_scales = j.at("n_scales").get<std::size_t>();
  c.patch_len = j.at("patch_len").get<std::size_t>();
  c.decomp_kernel = j.at("decomp_kernel").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.instance_norm = j.at("instance_norm").get<bool>();
  return c;
}

ForecasterParams ForecasterParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ForecasterParams p;
  for (std::size_t m = 1; m <= config.n_scales; ++m) {
    const std::size_t len = config.scale_length(m);
    ScaleParams s;
    s.seasonal = init_encoder(len, config, rng);
    s.trend = init_encoder(len, config, rng);
    if (m >= 2) {
      s.attention = AttentionWeights::random(config.n_features, config.variant != Variant::SelfAttention, rng);
    }
    s.gate_logit = Tensor::zeros({1}, true);
    p.scales.push_back(std::move(s));
  }
  const std::size_t fused = config.n_scales * config.horizon;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fused));
  p.fusion_w = uniform({fused, config.horizon}, bound, rng);
  p.fusion_b = uniform({config.horizon}, bound, rng);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ForecasterParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const auto prefix = "scale" + std::to_string(i + 1);
    const auto& s = scales[i];
    push_encoder(out, prefix + ".seasonal", s.seasonal);
    push_encoder(out, prefix + ".trend", s.trend);
    if (s.attention) {
      out.emplace_back(prefix + ".attention.w_q", s.attention->w_q);
      out.emplace_back(prefix + ".attention.w_k", s.attention->w_k);
      out.emplace_back(prefix + ".attention.w_v", s.attention->w_v);
      if (s.attention->w_lq) {
        out.emplace_back(prefix + ".attention.w_lq", *s.attention->w_lq);
        out.emplace_back(prefix + ".attention.w_lk", *s.attention->w_lk);
        out.emplace_back(prefix + ".attention.w_lv", *s.attention->w_lv);
      }
    }
    out.emplace_back(prefix + ".gate", s.gate_logit);
  }
  out.emplace_back("fusion.w", fusion_w);
  out.emplace_back("fusion.b", fusion_b);
  return out;
}

std::size_t ForecasterParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

ForecasterParams ForecasterParams::deep_copy() const {
  ForecasterParams p;
  for (const auto& s : scales) {
    ScaleParams c;
    c.seasonal = copy_encoder(s.seasonal);
    c.trend = copy_encoder(s.trend);
    if (s.attention) {
      AttentionWeights a{copy_param(s.attention->w_q), copy_param(s.attention->w_k), copy_param(s.attention->w_v),
                         {}, {}, {}};
      if (s.attention->w_lq) {
        a.w_lq = copy_param(*s.attention->w_lq);
        a.w_lk = copy_param(*s.attention->w_lk);
        a.w_lv = copy_param(*s.attention->w_lv);
      }
      c.attention = std::move(a);
    }
    c.gate_logit = copy_param(s.gate_logit);
    p.scales.push_back(std::move(c));
  }
  p.fusion_w = copy_param(fusion_w);
  p.fusion_b = copy_param(fusion_b);
  return p;
}

std::pair<Tensor, Tensor> decompose(const Tensor& x, std::size_t kernel) {
  Tensor trend = moving_average(x, kernel, 1);
  return {sub(x, trend), trend};
}

Tensor encoder_forward(const Tensor& component, const EncoderWeights& w) {
  if (component.rank() != 3) throw DimensionError("encoder expects [B, T, D]");
  if (component.dim(1) != w.temporal_w1.dim(0) || component.dim(2) != w.channel_w.dim(0)) {
    throw DimensionError("encoder weights do not match input " + shape_str(component.shape()));
  }
  Tensor along_time = transpose_last2(component);  // [B, D, T]
  Tensor hidden = gelu(add(matmul(along_time, w.temporal_w1), w.temporal_b1));
  Tensor projected = transpose_last2(add(matmul(hidden, w.temporal_w2), w.temporal_b2));  // [B, H, D]
  return add(projected, add(matmul(projected, w.channel_w), w.channel_b));
}

ScaleOutput scale_forward(const Tensor& x, const std::optional<std::pair<Tensor, Tensor>>& keys,
                          const ScaleParams& params, const ModelConfig& config, std::size_t scale_index) {
  ScaleOutput out;
  Tensor refined = x;
  if (scale_index >= 2) {
    if (!keys) throw std::invalid_argument("scale_forward: scales >= 2 need keys from scale 1");
    if (!params.attention) throw std::invalid_argument("scale_forward: attention weights missing");
    auto [context, record] =
        cross_patch_attention(x, keys->first, keys->second, config.attention_config(), *params.attention, scale_index);
    refined = add(x, context);
    out.record = std::move(record);
  }
  auto [seasonal, trend] = decompose(refined, config.decomp_kernel);
  out.y_seasonal = encoder_forward(seasonal, params.seasonal);
  out.y_trend = encoder_forward(trend, params.trend);
  out.y = add(out.y_seasonal, out.y_trend);
  return out;
}

ForwardResult model_forward(const Tensor& input, const ForecasterParams& params, const ModelConfig& config) {
  if (input.rank() != 3 || input.dim(1) != config.lookback || input.dim(2) != config.n_features) {
    throw DimensionError("model input " + shape_str(input.shape()) + " does not match config");
  }
  if (params.scales.size() != config.n_scales) throw ConfigError("parameter set has the wrong number of scales");
  for (double v : input.data()) {
    if (!std::isfinite(v)) throw NumericError("model input contains a non-finite value");
  }
  const std::size_t T = config.lookback;
  const std::size_t H = config.horizon;

  Tensor x = input;
  Tensor mu;
  Tensor sd;
  if (config.instance_norm) {
    mu = mean_axis(x, 1, true);  // [B, 1, D]
    Tensor centered = sub(x, expand_axis(mu, 1, T));
    sd = sqrt(add_scalar(mean_axis(square(centered), 1, true), kNormEps));
    x = div(centered, expand_axis(sd, 1, T));
  }

  ForwardResult result;
  std::vector<Tensor> gated;
  for (std::size_t m = 1; m <= config.n_scales; ++m) {
    Tensor xm = m == 1 ? x : avg_downsample(x, std::size_t{1} << (m - 1), 1);
    std::optional<std::pair<Tensor, Tensor>> keys;
    if (m >= 2) {
      const std::size_t len = config.scale_length(m);
      const auto& first = result.scales.front();
      keys.emplace(linear_interp(first.y, len, 1), linear_interp(first.y_seasonal, len, 1));
    }
    result.scales.push_back(scale_forward(xm, keys, params.scales[m - 1], config, m));
    gated.push_back(mul(result.scales.back().y, sigmoid(params.scales[m - 1].gate_logit)));
  }

  Tensor stacked = transpose_last2(concat(gated, 1));  // [B, D, M*H]
  Tensor fused = transpose_last2(add(matmul(stacked, params.fusion_w), params.fusion_b));  // [B, H, D]
  if (config.instance_norm) fused = add(mul(fused, expand_axis(sd, 1, H)), expand_axis(mu, 1, H));
  result.prediction = fused;
  return result;
}

std::vector<AttentionRecord> capture_attention(const std::vector<ScaleOutput>& scales, bool batch_average) {
  std::vector<AttentionRecord> out;
  for (const auto& s : scales) {
    if (!s.record) continue;
    out.push_back(batch_average ? s.record->batch_mean() : *s.record);
  }
  return out;
}

nlohmann::json records_to_json(const std::vector<AttentionRecord>& records) {
  auto arr = nlohmann::json::array();
  for (const auto& r : records) {
    arr.push_back({{"scale_index", r.scale_index},
                   {"patch_len", r.patch_len},
                   {"seq_len", r.seq_len},
                   {"patch_weights", tensor_to_json(r.patch_weights)},
                   {"local_weights", tensor_to_json(r.local_weights)}});
  }
  return arr;
}

std::vector<AttentionRecord> records_from_json(const nlohmann::json& j) {
  std::vector<AttentionRecord> out;
  for (const auto& item : j) {
    AttentionRecord r;
    r.scale_index = item.at("scale_index").get<std::size_t>();
    r.patch_len = item.at("patch_len").get<std::size_t>();
    r.seq_len = item.at("seq_len").get<std::size_t>();
    r.patch_weights = tensor_from_json(item.at("patch_weights"));
    r.local_weights = tensor_from_json(item.at("local_weights"));
    out.push_back(std::move(r));
  }
  return out;
}

void save_checkpoint(const std::string& path, const ModelConfig& config, const ForecasterParams& params,
                     const nlohmann::json& extra) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  const std::string header = nlohmann::json{{"model", to_json(config)}, {"extra", extra}}.dump();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const auto named = params.named_parameters();
  write_pod<std::uint64_t>(out, named.size());
  for (const auto& [name, t] : named) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto extent : t.shape()) write_pod<std::uint64_t>(out, extent);
    for (double v : t.data()) write_pod<double>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  const auto header_len = read_pod<std::uint64_t>(in);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  const auto meta = nlohmann::json::parse(header);

  Checkpoint ck;
  ck.config = model_config_from_json(meta.at("model"));
  ck.extra = meta.value("extra", nlohmann::json::object());
  ck.params = ForecasterParams::init(ck.config, 0);
  auto named = ck.params.named_parameters();

  const auto count = read_pod<std::uint64_t>(in);
  if (count != named.size()) throw std::runtime_error("checkpoint parameter count does not match its config");
  for (auto& [expected_name, tensor] : named) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != expected_name) throw std::runtime_error("checkpoint parameter '" + name + "' where '" + expected_name + "' expected");
    const auto rank = read_pod<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& extent : shape) extent = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
    if (shape != tensor.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": " + shape_str(shape) + " vs " +
                               shape_str(tensor.shape()));
    }
    auto& data = tensor.impl()->data;
    for (auto& v : data) v = read_pod<double>(in);
  }
  return ck;
}

}  // namespace csn
