#include "csn/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "csn/ops.hpp"

namespace csn {

namespace {

Tensor identity_matrix(std::size_t n) {
  Tensor eye = Tensor::zeros({n, n}, true);
  auto data = eye.mutable_data();
  for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
  return eye;
}

Tensor uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(rows * cols);
  for (auto& v : values) v = dist(rng);
  return Tensor({rows, cols}, std::move(values), true);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// softmax(q k^T / sqrt(dim)) over the last axis of q k^T.
Tensor attention_weights(const Tensor& q, const Tensor& k) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  return softmax_lastdim(scale(matmul(q, transpose_last2(k)), inv_sqrt_d));
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::SelfAttention:
      return "self_attention";
    case Variant::PatchAttention:
      return "patch_attention";
    case Variant::CrossSharedKey:
      return "cross_shared_key";
    case Variant::CrossDualKey:
      return "cross_dual_key";
  }
  throw std::invalid_argument("unknown attention variant");
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::SelfAttention, Variant::PatchAttention, Variant::CrossSharedKey, Variant::CrossDualKey}) {
    if (variant_name(v) == name) return v;
  }
  throw std::invalid_argument("unknown attention variant '" + std::string(name) + "'");
}

AttentionWeights AttentionWeights::identity(std::size_t dim, bool with_local) {
  AttentionWeights w{identity_matrix(dim), identity_matrix(dim), identity_matrix(dim), {}, {}, {}};
  if (with_local) {
    w.w_lq = identity_matrix(dim);
    w.w_lk = identity_matrix(dim);
    w.w_lv = identity_matrix(dim);
  }
  return w;
}

AttentionWeights AttentionWeights::random(std::size_t dim, bool with_local, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  AttentionWeights w;
  w.w_q = uniform_matrix(dim, dim, bound, rng);
  w.w_k = uniform_matrix(dim, dim, bound, rng);
  w.w_v = uniform_matrix(dim, dim, bound, rng);
  if (with_local) {
    w.w_lq = uniform_matrix(dim, dim, bound, rng);
    w.w_lk = uniform_matrix(dim, dim, bound, rng);
    w.w_lv = uniform_matrix(dim, dim, bound, rng);
  }
  return w;
}

AttentionRecord AttentionRecord::batch_mean() const {
  AttentionRecord out = *this;
  out.patch_weights = mean_axis(patch_weights.detach(), 0, true);
  out.local_weights = mean_axis(local_weights.detach(), 0, true);
  return out;
}

AttentionOutput patch_attention(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                                std::size_t patch_len) {
  require_same_shape(queries, keys, "patch_attention");
  const std::size_t B = queries.dim(0);
  const std::size_t D = queries.dim(2);
  Tensor pooled_q = mean_axis(patchify(queries, patch_len), 2);  // [B, N, D]
  Tensor pooled_k = mean_axis(patchify(keys, patch_len), 2);
  const std::size_t N = pooled_q.dim(1);

  Tensor q = matmul(pooled_q, w.w_q);
  Tensor k = matmul(pooled_k, w.w_k);
  Tensor v = matmul(pooled_q, w.w_v);
  Tensor weights = attention_weights(q, k);  // [B, N, N]
  Tensor context = matmul(weights, v);       // [B, N, D]
  context = expand_axis(reshape(context, {B, N, 1, D}), 2, patch_len);
  return {context, weights};
}

AttentionOutput local_attention(const Tensor& queries, const Tensor& keys, const AttentionWeights& w,
                                std::size_t patch_len) {
  require_same_shape(queries, keys, "local_attention");
  if (!w.w_lq || !w.w_lk || !w.w_lv) throw std::invalid_argument("local_attention: local projections missing");
  const std::size_t B = queries.dim(0);
  const std::size_t D = queries.dim(2);
  Tensor patches_q = patchify(queries, patch_len);
  const std::size_t N = patches_q.dim(1);
  Tensor local_q = reshape(patches_q, {B * N, patch_len, D});
  Tensor local_k = reshape(patchify(keys, patch_len), {B * N, patch_len, D});

  Tensor q = matmul(local_q, *w.w_lq);
  Tensor k = matmul(local_k, *w.w_lk);
  Tensor v = matmul(local_q, *w.w_lv);
  Tensor weights = attention_weights(q, k);  // [B*N, P, P]
  Tensor context = matmul(weights, v);       // [B*N, P, D]
  return {reshape(context, {B, N, patch_len, D}), reshape(weights, {B, N, patch_len, patch_len})};
}

std::pair<Tensor, Tensor> self_attention(const Tensor& x, const AttentionWeights& w) {
  Tensor q = matmul(x, w.w_q);
  Tensor k = matmul(x, w.w_k);
  Tensor v = matmul(x, w.w_v);
  Tensor weights = attention_weights(q, k);
  return {matmul(weights, v), weights};
}

std::pair<Tensor, AttentionRecord> cross_patch_attention(const Tensor& x, const Tensor& key_forecast,
                                                         const Tensor& key_seasonal, const AttentionConfig& config,
                                                         const AttentionWeights& w, std::size_t scale_index) {
  if (x.rank() != 3) throw DimensionError("cross_patch_attention expects [B, T, D], got " + shape_str(x.shape()));
  require_same_shape(x, key_forecast, "cross_patch_attention (forecast key)");
  require_same_shape(x, key_seasonal, "cross_patch_attention (seasonal key)");
  const std::size_t B = x.dim(0);
  const std::size_t T = x.dim(1);

  AttentionRecord record;
  record.scale_index = scale_index;
  record.seq_len = T;

  if (config.variant == Variant::SelfAttention) {
    auto [context, weights] = self_attention(x, w);
    record.patch_len = 1;
    record.patch_weights = weights.detach();
    record.local_weights = Tensor::ones({B, T, 1, 1});
    return {context, record};
  }

  const Tensor* patch_key = nullptr;
  const Tensor* local_key = nullptr;
  switch (config.variant) {
    case Variant::PatchAttention:
      patch_key = &x;
      local_key = &x;
      break;
    case Variant::CrossSharedKey:
      patch_key = &key_forecast;
      local_key = &key_forecast;
      break;
    case Variant::CrossDualKey:
      patch_key = &key_forecast;
      local_key = &key_seasonal;
      break;
    default:
      throw std::invalid_argument("cross_patch_attention: unknown variant");
  }

  auto patch = patch_attention(x, *patch_key, w, config.patch_len);
  auto local = local_attention(x, *local_key, w, config.patch_len);
  Tensor context = unpatchify(add(patch.context, local.context), T);

  record.patch_len = config.patch_len;
  record.patch_weights = patch.weights.detach();
  record.local_weights = local.weights.detach();
  return {context, record};
}

}  // namespace csn
