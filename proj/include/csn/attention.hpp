#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>

#include "csn/tensor.hpp"

namespace csn {

/// The four attention configurations compared in the ablation study.
enum class Variant {
  SelfAttention,   // full-sequence self-attention, no patching
  PatchAttention,  // patch + local attention, keys from the input itself
  CrossSharedKey,  // patch + local attention, both keys from the scale-1 forecast
  CrossDualKey,    // patch key from the scale-1 forecast, local key from its seasonal part
};

std::string_view variant_name(Variant v);
/// Accepts the snake_case names (self_attention, patch_attention,
/// cross_shared_key, cross_dual_key).
Variant parse_variant(std::string_view name);

struct AttentionConfig {
  std::size_t patch_len = 16;
  Variant variant = Variant::CrossDualKey;
  std::size_t model_dim = 1;
};

/// Projection matrices, D x D, applied as row-vector products x W. The local
/// set is absent for the self-attention variant.
struct AttentionWeights {
  Tensor w_q, w_k, w_v;
  std::optional<Tensor> w_lq, w_lk, w_lv;

  static AttentionWeights identity(std::size_t dim, bool with_local = true);
  static AttentionWeights random(std::size_t dim, bool with_local, std::mt19937_64& rng);
};

/// Attention weights captured from one forward pass at one scale.
/// patch_weights: [B, N, N]; local_weights: [B, N, P, P]. The self-attention
/// variant is stored as N = T patches of length 1.
struct AttentionRecord {
  Tensor patch_weights;
  Tensor local_weights;
  std::size_t scale_index = 0;
  std::size_t patch_len = 0;
  std::size_t seq_len = 0;

  std::size_t batch() const { return patch_weights.dim(0); }
  std::size_t num_patches() const { return patch_weights.dim(1); }

  /// Batch-averaged copy (B = 1).
  AttentionRecord batch_mean() const;
};

struct AttentionOutput {
  Tensor context;  // [B, N, P, D]
  Tensor weights;  // [B, N, N] for patch attention, [B, N, P, P] for local
};

/// Global attention across mean-pooled patches. Values are pooled from the
/// query stream; the context is broadcast across the positions of each patch.
AttentionOutput patch_attention(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                                std::size_t patch_len);

/// Attention among the positions inside each patch; queries and values from
/// the query stream, keys from the (time-aligned) key stream.
AttentionOutput local_attention(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                                std::size_t patch_len);

/// softmax(Q K^T / sqrt(D)) V over the whole sequence with Q, K, V projected
/// from x. Returns context [B, T, D] and weights [B, T, T].
std::pair<Tensor, Tensor> self_attention(const Tensor& x, const AttentionWeights& w);

/// Cross-patch attention for one scale: dispatches on the variant and
/// returns the context C (same shape as x) with the captured weights.
std::pair<Tensor, AttentionRecord> cross_patch_attention(const Tensor& x, const Tensor& key_forecast,
                                                         const Tensor& key_seasonal, const AttentionConfig& config,
                                                         const AttentionWeights& w, std::size_t scale_index = 0);

}  // namespace csn
