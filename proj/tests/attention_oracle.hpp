#pragma once

// Scalar-loop reference for cross-patch attention on one batch element. Shares
// no code with the library beyond reading weight values.

#include <cmath>
#include <vector>

#include "csn/attention.hpp"

namespace csn::testing {

using Mat = std::vector<std::vector<double>>;  // [time][feature]

struct OracleResult {
  Mat context;                      // [T][D]
  Mat patch_weights;                // [N][N]
  std::vector<Mat> local_weights;   // [N][P][P]
};

inline Mat to_mat(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = t.data()[offset + r * cols + c];
  return m;
}

inline std::vector<double> project(const std::vector<double>& row, const Mat& w) {
  std::vector<double> out(w[0].size(), 0.0);
  for (std::size_t i = 0; i < row.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[i] * w[i][j];
  return out;
}

inline std::vector<double> softmax_row(const std::vector<double>& logits) {
  double total = 0.0;
  std::vector<double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) total += (e[i] = std::exp(logits[i]));
  for (auto& v : e) v /= total;
  return e;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Attention of query rows q over key rows k, values v.
inline std::pair<Mat, Mat> attend(const Mat& q, const Mat& k, const Mat& v, double scale) {
  Mat weights, out;
  for (const auto& qi : q) {
    std::vector<double> logits;
    for (const auto& kj : k) logits.push_back(dot(qi, kj) / scale);
    auto a = softmax_row(logits);
    std::vector<double> ctx(v[0].size(), 0.0);
    for (std::size_t j = 0; j < v.size(); ++j)
      for (std::size_t d = 0; d < ctx.size(); ++d) ctx[d] += a[j] * v[j][d];
    weights.push_back(a);
    out.push_back(ctx);
  }
  return {weights, out};
}

// Patch index n covers times [nP, nP+P), replicating the last step past T.
inline std::vector<double> at_time(const Mat& x, std::size_t t) { return x[std::min(t, x.size() - 1)]; }

inline OracleResult oracle_cross_patch(const Mat& x, const Mat& k1, const Mat& k2, std::size_t P, Variant variant,
                                       const AttentionWeights& w) {
  const std::size_t T = x.size();
  const std::size_t D = x[0].size();
  const double scale = std::sqrt(static_cast<double>(D));
  const Mat wq = to_mat(w.w_q, D, D), wk = to_mat(w.w_k, D, D), wv = to_mat(w.w_v, D, D);
  OracleResult r;
  r.context.assign(T, std::vector<double>(D, 0.0));

  if (variant == Variant::SelfAttention) {
    Mat q, k, v;
    for (const auto& row : x) {
      q.push_back(project(row, wq));
      k.push_back(project(row, wk));
      v.push_back(project(row, wv));
    }
    auto [a, ctx] = attend(q, k, v, scale);
    r.patch_weights = a;
    r.context = ctx;
    return r;
  }

  const Mat& patch_key = variant == Variant::PatchAttention ? x : k1;
  const Mat& local_key = variant == Variant::CrossDualKey ? k2 : patch_key;
  const std::size_t N = (T + P - 1) / P;

  Mat pq, pk, pv;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> mq(D, 0.0), mk(D, 0.0);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t d = 0; d < D; ++d) {
        mq[d] += at_time(x, n * P + p)[d] / static_cast<double>(P);
        mk[d] += at_time(patch_key, n * P + p)[d] / static_cast<double>(P);
      }
    }
    pq.push_back(project(mq, wq));
    pk.push_back(project(mk, wk));
    pv.push_back(project(mq, wv));
  }
  auto [ap, cp] = attend(pq, pk, pv, scale);
  r.patch_weights = ap;

  const Mat wlq = to_mat(*w.w_lq, D, D), wlk = to_mat(*w.w_lk, D, D), wlv = to_mat(*w.w_lv, D, D);
  for (std::size_t n = 0; n < N; ++n) {
    Mat lq, lk, lv;
    for (std::size_t p = 0; p < P; ++p) {
      lq.push_back(project(at_time(x, n * P + p), wlq));
      lk.push_back(project(at_time(local_key, n * P + p), wlk));
      lv.push_back(project(at_time(x, n * P + p), wlv));
    }
    auto [al, cl] = attend(lq, lk, lv, scale);
    r.local_weights.push_back(al);
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t t = n * P + p;
      if (t >= T) continue;
      for (std::size_t d = 0; d < D; ++d) r.context[t][d] = cp[n][d] + cl[p][d];
    }
  }
  return r;
}

}  // namespace csn::testing
