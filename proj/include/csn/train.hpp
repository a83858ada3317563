#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "csn/io.hpp"
#include "csn/model.hpp"
#include "csn/tensor.hpp"

namespace csn {

enum class Split { Train, Val, Test };

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

/// Sliding windows over a standardized table. Splits are chronological over
/// window start positions; the first T+H-1 windows of the validation and test
/// splits are purged so no window shares a row with an earlier split.
struct WindowDataset {
  std::vector<std::string> columns;
  std::vector<double> data;  // rows x cols, standardized with train statistics
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::vector<std::size_t> target_columns;
  std::vector<double> mean;    // per column, train rows only
  std::vector<double> stddev;
  std::size_t train_rows = 0;  // rows [0, train_rows) produced the statistics
  std::vector<std::size_t> train, val, test;  // window start rows

  const std::vector<std::size_t>& windows(Split split) const;
  std::size_t total_windows() const { return rows + 1 - lookback - horizon; }
  /// [B, T, cols] input windows.
  Tensor inputs(std::span<const std::size_t> starts) const;
  /// [B, H, n_targets] future values of the target columns.
  Tensor targets(std::span<const std::size_t> starts) const;
};

WindowDataset make_windows(const CsvTable& table, std::size_t lookback, std::size_t horizon,
                           std::vector<std::size_t> target_columns, SplitFractions fractions = {});

/// A trained (or trainable) model together with the channels it is scored on.
struct Forecaster {
  ModelConfig config;
  ForecasterParams params;
  std::vector<std::size_t> target_channels;

  /// [B, H, n_targets]; records on the active tape when inputs/params need grad.
  Tensor forward_targets(const Tensor& x) const;
  /// Inference without recording.
  Tensor predict(const Tensor& x) const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 42;
  std::size_t patience = 5;  // epochs without validation improvement before stopping; 0 = never
  std::size_t max_train_windows = 0;  // 0 = all; otherwise a chronological prefix
  bool verbose = false;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::size_t step = 0;
};

/// One bias-corrected adaptive-moment update, in place.
void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, AdamState& state,
               const TrainConfig& config);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct History {
  std::vector<double> train_mse;
  std::vector<double> val_mse;
  std::size_t best_epoch = 0;  // 1-based
  bool early_stopped = false;

  std::string to_csv() const;
};

/// Minimizes target-channel MSE; leaves the best-validation parameters in
/// `model`. Deterministic for a fixed seed.
History train(Forecaster& model, const WindowDataset& data, const TrainConfig& config);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

using Predictor = std::function<Tensor(const Tensor&)>;

Metrics evaluate(const Predictor& predict, const WindowDataset& data, Split split, std::size_t batch_size = 256);
Metrics evaluate(const Forecaster& model, const WindowDataset& data, Split split);

}  // namespace csn
