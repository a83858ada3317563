#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csn/attention.hpp"
#include "csn/synthgen.hpp"
#include "csn/train.hpp"
#include "json.hpp"

namespace csn {

/// Non-negative per-lookback-step importance, max-normalized to 1.
struct SaliencyVector {
  std::vector<double> values;
};

/// Column mass of patch attention times column mass of local attention, per
/// scale, linearly upsampled to `lookback`, averaged over scales and
/// max-normalized. Batched records are averaged over the batch first.
SaliencyVector aggregate_saliency(const std::vector<AttentionRecord>& records, std::size_t lookback);

/// Runs the model over a split and aggregates the window-averaged attention.
SaliencyVector model_saliency(const Forecaster& model, const WindowDataset& data, Split split,
                              std::size_t batch_size = 256);

struct Agreement {
  std::size_t k = 0;
  double precision_at_k = 0.0;
  double rank_auc = 0.0;
};

/// precision@k with k = number of truly salient steps, and the probability a
/// salient step outranks a non-salient one (ties count half).
Agreement saliency_agreement(const std::vector<double>& saliency, const std::vector<int>& truth);

/// Positions of the k largest values; ties broken by lower index.
std::vector<std::size_t> top_positions(const std::vector<double>& values, std::size_t k);

enum class PerturbMode { Keep, Remove };

/// Mean-replacement perturbation of [T, F] or [B, T, F] windows. `mask` has T
/// (temporal) or T*F entries. Keep replaces positions outside the mask with
/// that feature's window mean; Remove replaces positions inside it.
Tensor perturb(const Tensor& windows, const std::vector<int>& mask, PerturbMode mode);

/// Perturbation-based faithfulness scores on one split. Errors are MSEs on the
/// target channels; both scores are normalized by (e_blank - e_full).
class Faithfulness {
 public:
  Faithfulness(const Forecaster& model, const WindowDataset& data, Split split = Split::Test);

  double sufficiency(const SaliencyVector& saliency, double ratio) const;
  double comprehensiveness(const SaliencyVector& saliency, double ratio) const;
  double sufficiency_at(const SaliencyVector& saliency, std::size_t k) const;
  double comprehensiveness_at(const SaliencyVector& saliency, std::size_t k) const;

  double full_error() const { return e_full_; }
  double blank_error() const { return e_blank_; }
  /// True when blanking the input does not hurt the model; both scores are 0.
  bool degenerate() const { return e_blank_ <= e_full_; }

  /// Target-channel MSE with every window perturbed by `mask`.
  double perturbed_error(const std::vector<int>& mask, PerturbMode mode) const;

 private:
  double normalized(double error) const;
  std::size_t count_for(double ratio) const;

  const Forecaster& model_;
  const WindowDataset& data_;
  Split split_;
  double e_full_ = 0.0;
  double e_blank_ = 0.0;
};

double sufficiency(const Forecaster& model, const WindowDataset& data, const SaliencyVector& saliency, double ratio);
double comprehensiveness(const Forecaster& model, const WindowDataset& data, const SaliencyVector& saliency,
                         double ratio);

/// score_j = (MSE with channel j mean-replaced over the window - e_full) / e_full.
std::vector<double> feature_ablation(const Forecaster& model, const WindowDataset& data, Split split = Split::Test);

struct IntegratedGradients {
  Tensor attribution;  // [T, F]
  double f_input = 0.0;
  double f_baseline = 0.0;

  double total() const;
  /// |sum(attribution) - (f_input - f_baseline)| / |f_input - f_baseline|.
  double completeness_gap() const;
};

/// Maps a batch [B, T, F] to outputs whose sum is attributed; must not mix
/// batch rows.
using BatchFunction = std::function<Tensor(const Tensor&)>;

/// Right Riemann sum of the path integral from `baseline` (default: the
/// per-feature window mean) to `window`, attributing the sum of outputs.
IntegratedGradients integrated_gradients(const BatchFunction& f, const Tensor& window, std::size_t steps,
                                         const std::optional<Tensor>& baseline = std::nullopt);
IntegratedGradients integrated_gradients(const Forecaster& model, const Tensor& window, std::size_t steps,
                                         const std::optional<Tensor>& baseline = std::nullopt);

struct AttributionSummary {
  std::vector<double> feature_importance;  // mean |IG| over steps and windows, per channel
  std::vector<double> temporal;            // mean |IG| over channels and windows, per step
  std::vector<double> map;                 // mean |IG|, T x F row-major
  double max_completeness_gap = 0.0;
};

/// IG over `n_windows` windows spread evenly across the split.
AttributionSummary attribution_summary(const Forecaster& model, const WindowDataset& data, Split split,
                                       std::size_t n_windows, std::size_t steps);

struct ExplainReport {
  std::size_t lookback = 0;
  std::vector<std::string> channels;
  SaliencyVector saliency;
  std::vector<double> ablation_importance;
  AttributionSummary attribution;
  std::vector<double> ratios;
  std::vector<double> sufficiency;
  std::vector<double> comprehensiveness;
  double e_full = 0.0;
  double e_blank = 0.0;
  bool degenerate = false;
  std::optional<Agreement> agreement;

  nlohmann::json to_json() const;
};

struct ExplainOptions {
  std::vector<double> ratios{0.1, 0.2, 0.5};
  std::size_t ig_windows = 32;
  std::size_t ig_steps = 64;
  Split split = Split::Test;
};

ExplainReport explain(const Forecaster& model, const WindowDataset& data, const ExplainOptions& options,
                      const std::optional<SaliencyTruth>& truth = std::nullopt);

}  // namespace csn
