#include "csn/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "csn/io.hpp"
#include "csn/ops.hpp"

namespace csn {

namespace {

// Per-scale saliency at the scale's own resolution: s_P[patch(t)] * s_L[t].
std::vector<double> scale_saliency(const AttributionSummary*, const AttentionRecord& record) {
  const AttentionRecord avg = record.batch() > 1 ? record.batch_mean() : record;
  const std::size_t N = avg.num_patches();
  const std::size_t P = avg.patch_len;
  const auto& ap = avg.patch_weights.data();   // [1, N, N]
  const auto& al = avg.local_weights.data();   // [1, N, P, P]
  if (avg.local_weights.numel() != N * P * P) throw DimensionError("attention record local weights have the wrong size");
  std::vector<double> patch_mass(N, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t n = 0; n < N; ++n) patch_mass[n] += ap[i * N + n] / static_cast<double>(N);
  std::vector<double> out(avg.seq_len, 0.0);
  for (std::size_t t = 0; t < avg.seq_len; ++t) {
    const std::size_t n = t / P;
    const std::size_t p = t % P;
    double local_mass = 0.0;
    for (std::size_t i = 0; i < P; ++i) local_mass += al[(n * P + i) * P + p];
    out[t] = patch_mass[n] * local_mass / static_cast<double>(P);
  }
  return out;
}

std::vector<double> window_means(const double* window, std::size_t T, std::size_t F) {
  std::vector<double> means(F, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < F; ++j) means[j] += window[t * F + j];
  for (auto& m : means) m /= static_cast<double>(T);
  return means;
}

std::vector<int> temporal_mask(std::size_t T, const std::vector<std::size_t>& positions) {
  std::vector<int> mask(T, 0);
  for (auto p : positions) mask[p] = 1;
  return mask;
}

}  // namespace

SaliencyVector aggregate_saliency(const std::vector<AttentionRecord>& records, std::size_t lookback) {
  if (records.empty()) {
    throw std::invalid_argument("temporal saliency needs attention records; use a model with n_scales >= 2");
  }
  std::vector<double> total(lookback, 0.0);
  for (const auto& record : records) {
    const auto s = scale_saliency(nullptr, record);
    const Tensor up = linear_interp(Tensor::vector(s), lookback);
    for (std::size_t t = 0; t < lookback; ++t) total[t] += up.data()[t] / static_cast<double>(records.size());
  }
  const double peak = *std::max_element(total.begin(), total.end());
  if (peak > 0.0) {
    for (auto& v : total) v /= peak;
  }
  return {total};
}

SaliencyVector model_saliency(const Forecaster& model, const WindowDataset& data, Split split,
                              std::size_t batch_size) {
  const auto& starts = data.windows(split);
  if (starts.empty()) throw std::invalid_argument("cannot compute saliency over an empty split");
  NoGradGuard no_grad;
  std::vector<AttentionRecord> sums;
  for (std::size_t begin = 0; begin < starts.size(); begin += batch_size) {
    const std::size_t end = std::min(starts.size(), begin + batch_size);
    const auto result = model_forward(data.inputs({starts.data() + begin, end - begin}), model.params, model.config);
    auto records = capture_attention(result.scales, false);
    for (std::size_t r = 0; r < records.size(); ++r) {
      // Sum over the batch now; divide by the window count at the end.
      Tensor ps = scale(mean_axis(records[r].patch_weights, 0, true), static_cast<double>(end - begin));
      Tensor ls = scale(mean_axis(records[r].local_weights, 0, true), static_cast<double>(end - begin));
      if (sums.size() <= r) {
        records[r].patch_weights = ps;
        records[r].local_weights = ls;
        sums.push_back(records[r]);
      } else {
        sums[r].patch_weights = add(sums[r].patch_weights, ps);
        sums[r].local_weights = add(sums[r].local_weights, ls);
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(starts.size());
  for (auto& s : sums) {
    s.patch_weights = scale(s.patch_weights, inv);
    s.local_weights = scale(s.local_weights, inv);
  }
  return aggregate_saliency(sums, data.lookback);
}

std::vector<std::size_t> top_positions(const std::vector<double>& values, std::size_t k) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

Agreement saliency_agreement(const std::vector<double>& saliency, const std::vector<int>& truth) {
  if (saliency.size() != truth.size()) throw DimensionError("saliency and truth lengths differ");
  const auto k = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), 1));
  if (k == 0) throw std::invalid_argument("ground truth has no salient steps");
  if (k == truth.size()) throw std::invalid_argument("ground truth marks every step salient");
  Agreement a;
  a.k = k;
  std::size_t hits = 0;
  for (auto p : top_positions(saliency, k)) hits += truth[p] == 1 ? 1 : 0;
  a.precision_at_k = static_cast<double>(hits) / static_cast<double>(k);
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] != 1) continue;
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (truth[j] == 1) continue;
      wins += saliency[i] > saliency[j] ? 1.0 : (saliency[i] == saliency[j] ? 0.5 : 0.0);
      ++pairs;
    }
  }
  a.rank_auc = wins / static_cast<double>(pairs);
  return a;
}

Tensor perturb(const Tensor& windows, const std::vector<int>& mask, PerturbMode mode) {
  if (windows.rank() != 2 && windows.rank() != 3) throw DimensionError("perturb expects [T, F] or [B, T, F]");
  const std::size_t B = windows.rank() == 3 ? windows.dim(0) : 1;
  const std::size_t T = windows.dim(-2);
  const std::size_t F = windows.dim(-1);
  const bool per_feature = mask.size() == T * F;
  if (!per_feature && mask.size() != T) {
    throw DimensionError("perturb mask has " + std::to_string(mask.size()) + " entries for a " + std::to_string(T) +
                         "x" + std::to_string(F) + " window");
  }
  std::vector<double> out(windows.data().begin(), windows.data().end());
  for (std::size_t b = 0; b < B; ++b) {
    double* w = out.data() + b * T * F;
    const auto means = window_means(w, T, F);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < F; ++j) {
        const bool inside = (per_feature ? mask[t * F + j] : mask[t]) != 0;
        const bool replace = mode == PerturbMode::Keep ? !inside : inside;
        if (replace) w[t * F + j] = means[j];
      }
    }
  }
  return Tensor(windows.shape(), std::move(out));
}

Faithfulness::Faithfulness(const Forecaster& model, const WindowDataset& data, Split split)
    : model_(model), data_(data), split_(split) {
  const std::vector<int> none(data.lookback, 0);
  e_full_ = perturbed_error(none, PerturbMode::Remove);
  e_blank_ = perturbed_error(none, PerturbMode::Keep);
}

double Faithfulness::perturbed_error(const std::vector<int>& mask, PerturbMode mode) const {
  return evaluate([&](const Tensor& x) { return model_.predict(perturb(x, mask, mode)); }, data_, split_).mse;
}

double Faithfulness::normalized(double error) const {
  if (degenerate()) return 0.0;
  return std::clamp((error - e_full_) / (e_blank_ - e_full_), 0.0, 1.0);
}

std::size_t Faithfulness::count_for(double ratio) const {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("ratio must lie in (0, 1]");
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(data_.lookback) - 1e-9));
}

double Faithfulness::sufficiency_at(const SaliencyVector& s, std::size_t k) const {
  if (s.values.size() != data_.lookback) throw DimensionError("saliency length differs from lookback");
  if (k >= data_.lookback) return normalized(e_full_);
  return normalized(perturbed_error(temporal_mask(data_.lookback, top_positions(s.values, k)), PerturbMode::Keep));
}

double Faithfulness::comprehensiveness_at(const SaliencyVector& s, std::size_t k) const {
  if (s.values.size() != data_.lookback) throw DimensionError("saliency length differs from lookback");
  if (k == 0) return normalized(e_full_);
  if (k >= data_.lookback) return normalized(e_blank_);
  return normalized(perturbed_error(temporal_mask(data_.lookback, top_positions(s.values, k)), PerturbMode::Remove));
}

double Faithfulness::sufficiency(const SaliencyVector& s, double ratio) const {
  return sufficiency_at(s, count_for(ratio));
}

double Faithfulness::comprehensiveness(const SaliencyVector& s, double ratio) const {
  return comprehensiveness_at(s, count_for(ratio));
}

double sufficiency(const Forecaster& model, const WindowDataset& data, const SaliencyVector& saliency, double ratio) {
  return Faithfulness(model, data).sufficiency(saliency, ratio);
}

double comprehensiveness(const Forecaster& model, const WindowDataset& data, const SaliencyVector& saliency,
                         double ratio) {
  return Faithfulness(model, data).comprehensiveness(saliency, ratio);
}

std::vector<double> feature_ablation(const Forecaster& model, const WindowDataset& data, Split split) {
  const std::size_t T = data.lookback;
  const std::size_t F = data.cols;
  const double e_full = evaluate(model, data, split).mse;
  std::vector<double> scores(F);
  for (std::size_t j = 0; j < F; ++j) {
    std::vector<int> mask(T * F, 0);
    for (std::size_t t = 0; t < T; ++t) mask[t * F + j] = 1;
    const double e = evaluate([&](const Tensor& x) { return model.predict(perturb(x, mask, PerturbMode::Remove)); },
                              data, split)
                         .mse;
    scores[j] = (e - e_full) / std::max(e_full, 1e-12);
  }
  return scores;
}

double IntegratedGradients::total() const {
  double s = 0.0;
  for (double v : attribution.data()) s += v;
  return s;
}

double IntegratedGradients::completeness_gap() const {
  const double delta = f_input - f_baseline;
  const double err = std::fabs(total() - delta);
  return std::fabs(delta) > 0.0 ? err / std::fabs(delta) : err;
}

IntegratedGradients integrated_gradients(const BatchFunction& f, const Tensor& window, std::size_t steps,
                                         const std::optional<Tensor>& baseline) {
  if (steps < 1) throw std::invalid_argument("integrated gradients needs steps >= 1");
  if (window.rank() != 2) throw DimensionError("integrated gradients expects a [T, F] window");
  const std::size_t T = window.dim(0);
  const std::size_t F = window.dim(1);
  Tensor base = baseline ? *baseline : perturb(window, std::vector<int>(T, 0), PerturbMode::Keep);
  if (base.shape() != window.shape()) throw DimensionError("baseline shape differs from the window");

  const auto& x = window.data();
  const auto& xb = base.data();
  std::vector<double> path(steps * T * F);
  for (std::size_t k = 0; k < steps; ++k) {
    const double alpha = static_cast<double>(k + 1) / static_cast<double>(steps);
    for (std::size_t i = 0; i < T * F; ++i) path[k * T * F + i] = xb[i] + alpha * (x[i] - xb[i]);
  }
  Tensor points({steps, T, F}, std::move(path), true);
  {
    Tape tape;
    tape.backward(sum(f(points)));
  }
  const auto grads = points.grad();
  std::vector<double> attribution(T * F, 0.0);
  for (std::size_t k = 0; k < steps; ++k)
    for (std::size_t i = 0; i < T * F; ++i) attribution[i] += grads[k * T * F + i];
  for (std::size_t i = 0; i < T * F; ++i) attribution[i] *= (x[i] - xb[i]) / static_cast<double>(steps);

  IntegratedGradients ig;
  ig.attribution = Tensor({T, F}, std::move(attribution));
  NoGradGuard no_grad;
  ig.f_input = sum(f(reshape(window, {1, T, F}))).item();
  ig.f_baseline = sum(f(reshape(base, {1, T, F}))).item();
  return ig;
}

IntegratedGradients integrated_gradients(const Forecaster& model, const Tensor& window, std::size_t steps,
                                         const std::optional<Tensor>& baseline) {
  return integrated_gradients([&](const Tensor& x) { return model.forward_targets(x); }, window, steps, baseline);
}

AttributionSummary attribution_summary(const Forecaster& model, const WindowDataset& data, Split split,
                                       std::size_t n_windows, std::size_t steps) {
  const auto& starts = data.windows(split);
  if (starts.empty()) throw std::invalid_argument("cannot attribute over an empty split");
  n_windows = std::max<std::size_t>(1, std::min(n_windows, starts.size()));
  const std::size_t T = data.lookback;
  const std::size_t F = data.cols;
  AttributionSummary out;
  out.map.assign(T * F, 0.0);
  for (std::size_t w = 0; w < n_windows; ++w) {
    const std::size_t start = starts[w * starts.size() / n_windows];
    const Tensor window = reshape(data.inputs({&start, 1}), {T, F});
    const auto ig = integrated_gradients(model, window, steps);
    out.max_completeness_gap = std::max(out.max_completeness_gap, ig.completeness_gap());
    for (std::size_t i = 0; i < T * F; ++i) out.map[i] += std::fabs(ig.attribution.data()[i]) / static_cast<double>(n_windows);
  }
  out.feature_importance.assign(F, 0.0);
  out.temporal.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < F; ++j) {
      out.feature_importance[j] += out.map[t * F + j] / static_cast<double>(T);
      out.temporal[t] += out.map[t * F + j] / static_cast<double>(F);
    }
  }
  return out;
}

nlohmann::json ExplainReport::to_json() const {
  nlohmann::json j;
  j["lookback"] = lookback;
  j["channels"] = channels;
  j["saliency"] = saliency.values;
  j["feature_importance"] = {{"ablation", ablation_importance},
                             {"integrated_gradients", attribution.feature_importance}};
  j["temporal_attribution"] = attribution.temporal;
  j["ig_max_completeness_gap"] = attribution.max_completeness_gap;
  j["ratios"] = ratios;
  j["sufficiency"] = sufficiency;
  j["comprehensiveness"] = comprehensiveness;
  j["e_full"] = e_full;
  j["e_blank"] = e_blank;
  j["degenerate"] = degenerate;
  if (agreement) {
    j["agreement"] = {{"k", agreement->k},
                      {"precision_at_k", agreement->precision_at_k},
                      {"rank_auc", agreement->rank_auc}};
  }
  return j;
}

ExplainReport explain(const Forecaster& model, const WindowDataset& data, const ExplainOptions& options,
                      const std::optional<SaliencyTruth>& truth) {
  ExplainReport report;
  report.lookback = data.lookback;
  report.channels = data.columns;
  report.saliency = model_saliency(model, data, options.split);
  report.ablation_importance = feature_ablation(model, data, options.split);
  report.attribution = attribution_summary(model, data, options.split, options.ig_windows, options.ig_steps);
  Faithfulness faith(model, data, options.split);
  report.e_full = faith.full_error();
  report.e_blank = faith.blank_error();
  report.degenerate = faith.degenerate();
  report.ratios = options.ratios;
  for (double r : options.ratios) {
    report.sufficiency.push_back(faith.sufficiency(report.saliency, r));
    report.comprehensiveness.push_back(faith.comprehensiveness(report.saliency, r));
  }
  if (truth) {
    if (truth->lookback != data.lookback) {
      throw std::invalid_argument("truth mask lookback " + std::to_string(truth->lookback) +
                                  " differs from the model lookback " + std::to_string(data.lookback));
    }
    report.agreement = saliency_agreement(report.saliency.values, truth->temporal);
  }
  return report;
}

}  // namespace csn
