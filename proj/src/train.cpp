#include "csn/train.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "csn/ops.hpp"

namespace csn {

namespace {

constexpr double kAdamEps = 1e-8;

std::size_t floor_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

Tensor select_channels(const Tensor& x, const std::vector<std::size_t>& channels) {
  const std::size_t D = x.shape().back();
  if (channels.size() == D) {
    bool identity = true;
    for (std::size_t i = 0; i < D; ++i) identity = identity && channels[i] == i;
    if (identity) return x;
  }
  std::vector<std::vector<std::pair<std::size_t, double>>> taps;
  for (auto c : channels) taps.push_back({{c, 1.0}});
  return apply_axis_map(x, -1, AxisMap::build(D, taps));
}

}  // namespace

const std::vector<std::size_t>& WindowDataset::windows(Split split) const {
  switch (split) {
    case Split::Train:
      return train;
    case Split::Val:
      return val;
    case Split::Test:
      return test;
  }
  throw std::invalid_argument("unknown split");
}

Tensor WindowDataset::inputs(std::span<const std::size_t> starts) const {
  std::vector<double> out;
  out.reserve(starts.size() * lookback * cols);
  for (auto s : starts) {
    const auto first = data.begin() + static_cast<std::ptrdiff_t>(s * cols);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(lookback * cols));
  }
  return Tensor({starts.size(), lookback, cols}, std::move(out));
}

Tensor WindowDataset::targets(std::span<const std::size_t> starts) const {
  std::vector<double> out;
  out.reserve(starts.size() * horizon * target_columns.size());
  for (auto s : starts) {
    for (std::size_t h = 0; h < horizon; ++h) {
      const std::size_t row = s + lookback + h;
      for (auto c : target_columns) out.push_back(data[row * cols + c]);
    }
  }
  return Tensor({starts.size(), horizon, target_columns.size()}, std::move(out));
}

WindowDataset make_windows(const CsvTable& table, std::size_t lookback, std::size_t horizon,
                           std::vector<std::size_t> target_columns, SplitFractions fractions) {
  if (lookback < 1 || horizon < 1) throw std::invalid_argument("lookback and horizon must be >= 1");
  if (table.rows < lookback + horizon) {
    throw std::invalid_argument("need at least lookback + horizon = " + std::to_string(lookback + horizon) +
                                " rows, have " + std::to_string(table.rows));
  }
  const double total = fractions.train + fractions.val + fractions.test;
  if (std::fabs(total - 1.0) > 1e-9 || fractions.train <= 0.0 || fractions.val < 0.0 || fractions.test < 0.0) {
    throw std::invalid_argument("split fractions must be non-negative, with train > 0, and sum to 1");
  }
  if (target_columns.empty()) throw std::invalid_argument("at least one target column required");
  for (auto c : target_columns) {
    if (c >= table.cols()) throw std::invalid_argument("target column out of range");
  }

  WindowDataset ds;
  ds.columns = table.columns;
  ds.rows = table.rows;
  ds.cols = table.cols();
  ds.lookback = lookback;
  ds.horizon = horizon;
  ds.target_columns = std::move(target_columns);

  const std::size_t n_windows = ds.total_windows();
  const std::size_t n_test = floor_count(fractions.test, n_windows);
  const std::size_t n_val = floor_count(fractions.val, n_windows);
  const std::size_t n_train = n_windows - n_val - n_test;
  const std::size_t gap = lookback + horizon - 1;
  for (std::size_t s = 0; s < n_train; ++s) ds.train.push_back(s);
  for (std::size_t s = n_train + gap; s < n_train + n_val; ++s) ds.val.push_back(s);
  for (std::size_t s = n_train + n_val + gap; s < n_windows; ++s) ds.test.push_back(s);

  ds.train_rows = n_train - 1 + lookback + horizon;
  ds.mean.assign(ds.cols, 0.0);
  ds.stddev.assign(ds.cols, 0.0);
  for (std::size_t c = 0; c < ds.cols; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < ds.train_rows; ++r) m += table.at(r, c);
    m /= static_cast<double>(ds.train_rows);
    double var = 0.0;
    for (std::size_t r = 0; r < ds.train_rows; ++r) var += (table.at(r, c) - m) * (table.at(r, c) - m);
    const double sd = std::sqrt(var / static_cast<double>(ds.train_rows));
    ds.mean[c] = m;
    ds.stddev[c] = sd > 1e-12 ? sd : 1.0;
  }
  ds.data.resize(table.values.size());
  for (std::size_t r = 0; r < ds.rows; ++r)
    for (std::size_t c = 0; c < ds.cols; ++c) ds.data[r * ds.cols + c] = (table.at(r, c) - ds.mean[c]) / ds.stddev[c];
  return ds;
}

Tensor Forecaster::forward_targets(const Tensor& x) const {
  return select_channels(model_forward(x, params, config).prediction, target_channels);
}

Tensor Forecaster::predict(const Tensor& x) const {
  NoGradGuard no_grad;
  return forward_targets(x);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("moment coefficients must lie in [0, 1)");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"beta1", c.beta1},                 {"beta2", c.beta2},           {"seed", c.seed},
          {"patience", c.patience},           {"max_train_windows", c.max_train_windows}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig d) {
  d.learning_rate = j.value("learning_rate", d.learning_rate);
  d.batch_size = j.value("batch_size", d.batch_size);
  d.epochs = j.value("epochs", d.epochs);
  d.beta1 = j.value("beta1", d.beta1);
  d.beta2 = j.value("beta2", d.beta2);
  d.seed = j.value("seed", d.seed);
  d.verbose = j.value("verbose", d.verbose);
  d.patience = j.value("patience", d.patience);
  d.max_train_windows = j.value("max_train_windows", d.max_train_windows);
  return d;
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, AdamState& state,
               const TrainConfig& config) {
  if (grads.size() != params.size()) throw DimensionError("adam_step: gradient count does not match parameters");
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.numel(), 0.0);
      state.second.emplace_back(p.numel(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k].impl()->data;
    const auto& g = grads[k];
    if (g.size() != values.size()) throw DimensionError("adam_step: gradient shape mismatch");
    auto& m = state.first[k];
    auto& v = state.second[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      values[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
    }
  }
}

std::string History::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_mse,val_mse\n";
  for (std::size_t e = 0; e < train_mse.size(); ++e) {
    out << (e + 1) << ',' << format_double(train_mse[e]) << ',' << format_double(val_mse[e]) << '\n';
  }
  return out.str();
}

History train(Forecaster& model, const WindowDataset& data, const TrainConfig& config) {
  config.validate();
  std::vector<std::size_t> order = data.train;
  if (config.max_train_windows > 0 && order.size() > config.max_train_windows) order.resize(config.max_train_windows);
  if (order.empty()) throw std::invalid_argument("training split is empty");

  std::vector<Tensor> params;
  for (auto& [name, t] : model.params.named_parameters()) params.push_back(t);
  std::vector<std::vector<double>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params) best.emplace_back(p.data().begin(), p.data().end());
  };
  snapshot();

  std::mt19937_64 rng(config.seed);
  AdamState adam;
  History history;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::vector<double>> grads(params.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::span<const std::size_t> batch(order.data() + begin, end - begin);
      const Tensor x = data.inputs(batch);
      const Tensor y = data.targets(batch);
      double batch_loss = 0.0;
      try {
        Tape tape;
        Tensor loss = mse_loss(model.forward_targets(x), y);
        batch_loss = loss.item();
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", batch starting " +
                               std::to_string(begin) + ": " + e.what());
      }
      if (!std::isfinite(batch_loss)) throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch));
      for (std::size_t k = 0; k < params.size(); ++k) {
        grads[k] = params[k].grad();
        params[k].zero_grad();
      }
      adam_step(params, grads, adam, config);
      loss_sum += batch_loss * static_cast<double>(end - begin);
    }
    const double train_mse = loss_sum / static_cast<double>(order.size());
    const double val_mse = data.val.empty() ? train_mse : evaluate(model, data, Split::Val).mse;
    history.train_mse.push_back(train_mse);
    history.val_mse.push_back(val_mse);
    if (config.verbose) {
      std::cerr << "epoch " << epoch << " train_mse " << train_mse << " val_mse " << val_mse << '\n';
    }
    if (val_mse < best_val) {
      best_val = val_mse;
      history.best_epoch = epoch;
      since_best = 0;
      snapshot();
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      history.early_stopped = true;
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::copy(best[k].begin(), best[k].end(), params[k].impl()->data.begin());
  }
  return history;
}

Metrics evaluate(const Predictor& predict, const WindowDataset& data, Split split, std::size_t batch_size) {
  const auto& starts = data.windows(split);
  if (starts.empty()) throw std::invalid_argument("cannot evaluate an empty split");
  double se = 0.0;
  double ae = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < starts.size(); begin += batch_size) {
    const std::size_t end = std::min(starts.size(), begin + batch_size);
    std::span<const std::size_t> batch(starts.data() + begin, end - begin);
    const Tensor pred = predict(data.inputs(batch));
    const Tensor truth = data.targets(batch);
    if (pred.shape() != truth.shape()) throw DimensionError("prediction shape does not match targets");
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const double d = pred.data()[i] - truth.data()[i];
      se += d * d;
      ae += std::fabs(d);
    }
    count += pred.numel();
  }
  return {se / static_cast<double>(count), ae / static_cast<double>(count)};
}

Metrics evaluate(const Forecaster& model, const WindowDataset& data, Split split) {
  return evaluate([&](const Tensor& x) { return model.predict(x); }, data, split);
}

}  // namespace csn
