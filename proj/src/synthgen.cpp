#include "csn/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include "csn/io.hpp"

namespace csn {

namespace {

constexpr double kArCoefficient = 0.8;
constexpr double kSinusoidAmplitude = 2.0;
constexpr double kMinPeriod = 20.0;
constexpr double kMaxPeriod = 60.0;
constexpr std::uint64_t kTargetStream = 0x9E3779B97F4A7C15ULL;

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
  return out;
}

std::vector<std::size_t> join(std::initializer_list<std::vector<std::size_t>> parts) {
  std::set<std::size_t> all;
  for (const auto& p : parts) all.insert(p.begin(), p.end());
  return {all.begin(), all.end()};
}

void zscore(std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (double& x : v) x = sd > 0.0 ? (x - m) / sd : 0.0;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_features == 0) throw std::invalid_argument("synth spec needs at least one feature");
  for (auto j : important_features) {
    if (j >= n_features) throw std::invalid_argument("important feature index out of range in " + name);
  }
  for (auto l : important_lags) {
    if (l < 1) throw std::invalid_argument("lags must be >= 1 in " + name);
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
}

std::size_t SynthSpec::max_lag() const {
  return important_lags.empty() ? 0 : *std::max_element(important_lags.begin(), important_lags.end());
}

std::size_t SaliencyTruth::salient_steps() const {
  return static_cast<std::size_t>(std::count(temporal.begin(), temporal.end(), 1));
}

nlohmann::json to_json(const SynthSpec& s) {
  return {{"name", s.name},
          {"important_lags", s.important_lags},
          {"important_features", s.important_features},
          {"noise_sigma", s.noise_sigma},
          {"n_features", s.n_features},
          {"n_samples", s.n_samples},
          {"seed", s.seed},
          {"use_current_values", s.use_current_values}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.name = j.value("name", std::string("custom"));
  s.important_lags = j.at("important_lags").get<std::vector<std::size_t>>();
  s.important_features = j.at("important_features").get<std::vector<std::size_t>>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.n_features = j.value("n_features", std::size_t{6});
  s.n_samples = j.value("n_samples", std::size_t{10000});
  s.seed = j.value("seed", std::uint64_t{42});
  s.use_current_values = j.value("use_current_values", true);
  std::sort(s.important_lags.begin(), s.important_lags.end());
  std::sort(s.important_features.begin(), s.important_features.end());
  s.validate();
  return s;
}

std::vector<std::string> builtin_names() { return {"SYN1", "SYN2", "SYN3", "SYN4", "SYN5", "SYN6", "SYN7", "SYN8"}; }

SynthSpec builtin_spec(const std::string& name) {
  SynthSpec s;
  s.name = name;
  if (name == "SYN1") {
    s.important_lags = range(1, 15);
    s.important_features = {0, 1};
    s.noise_sigma = 0.01;
  } else if (name == "SYN2") {
    s.important_lags = join({range(1, 5), range(9, 10), range(15, 16), {18, 20}, range(25, 26), range(35, 36),
                             range(50, 52), range(91, 95)});
    s.important_features = {0, 2};
    s.noise_sigma = 0.05;
  } else if (name == "SYN3") {
    s.important_lags = join({range(9, 10), range(15, 16), {18}, range(20, 25), {31, 34}, range(60, 65)});
    s.important_features = {1, 2};
    s.noise_sigma = 0.08;
  } else if (name == "SYN4") {
    s.important_lags = join({range(9, 10), range(15, 16), range(18, 21), range(41, 42), range(45, 46)});
    s.important_features = {1, 2};
    s.noise_sigma = 0.10;
  } else if (name == "SYN5") {
    s.important_lags = range(71, 77);
    s.important_features = {1, 2};
    s.noise_sigma = 0.06;
  } else if (name == "SYN6") {
    s.important_lags = range(48, 57);
    s.important_features = {0, 2};
    s.noise_sigma = 0.05;
  } else if (name == "SYN7") {
    s.important_lags = join({{60}, range(62, 69)});
    s.important_features = {0, 1};
    s.noise_sigma = 0.02;
  } else if (name == "SYN8") {
    s.important_lags = join({range(71, 77), range(48, 57)});
    s.important_features = {0, 1, 2};
    s.noise_sigma = 0.11;
  } else {
    throw std::invalid_argument("unknown synthetic dataset '" + name + "' (expected SYN1..SYN8)");
  }
  return s;
}

Tensor generate_features(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_samples;
  const std::size_t F = spec.n_features;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> period_dist(kMinPeriod, kMaxPeriod);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> innovation(0.0, 1.0);
  const double stationary_sd = 1.0 / std::sqrt(1.0 - kArCoefficient * kArCoefficient);

  std::vector<double> out(n * F);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < F; ++j) {
    const double period = period_dist(rng);
    const double phase = phase_dist(rng);
    double ar = stationary_sd * innovation(rng);
    for (std::size_t t = 0; t < n; ++t) {
      if (t > 0) ar = kArCoefficient * ar + innovation(rng);
      column[t] = ar + kSinusoidAmplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
    }
    zscore(column);
    for (std::size_t t = 0; t < n; ++t) out[t * F + j] = column[t];
  }
  return Tensor({n, F}, std::move(out));
}

Tensor generate_target(const Tensor& features, const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = features.dim(0);
  const std::size_t F = features.dim(1);
  const std::size_t L = spec.max_lag();
  if (n <= L) throw std::invalid_argument("n_samples must exceed the largest lag");
  std::mt19937_64 rng(spec.seed ^ kTargetStream);
  std::uniform_real_distribution<double> magnitude(0.5, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  // Coefficients: current-value weight c_j, then one weight per lag with sign
  // alternating by lag order (+, -, +, ...).
  const std::size_t nf = spec.important_features.size();
  const std::size_t nl = spec.important_lags.size();
  std::vector<double> current(nf);
  std::vector<double> lagged(nf * nl);
  for (std::size_t a = 0; a < nf; ++a) {
    current[a] = spec.use_current_values ? magnitude(rng) : 0.0;
    for (std::size_t k = 0; k < nl; ++k) lagged[a * nl + k] = (k % 2 == 0 ? 1.0 : -1.0) * magnitude(rng);
  }

  const auto& x = features.data();
  std::vector<double> y(n - L);
  for (std::size_t t = L; t < n; ++t) {
    double v = 0.0;
    for (std::size_t a = 0; a < nf; ++a) {
      const std::size_t j = spec.important_features[a];
      v += current[a] * x[t * F + j];
      for (std::size_t k = 0; k < nl; ++k) v += lagged[a * nl + k] * x[(t - spec.important_lags[k]) * F + j];
    }
    y[t - L] = v;
  }
  zscore(y);
  for (double& v : y) v += spec.noise_sigma * noise(rng);
  zscore(y);
  const std::size_t len = y.size();
  return Tensor({len}, std::move(y));
}

SynthDataset generate_dataset(const SynthSpec& spec) {
  Tensor all = generate_features(spec);
  Tensor target = generate_target(all, spec);
  const std::size_t L = spec.max_lag();
  const std::size_t F = spec.n_features;
  const std::size_t rows = spec.n_samples - L;
  std::vector<double> kept(all.data().begin() + static_cast<std::ptrdiff_t>(L * F), all.data().end());
  return SynthDataset{spec, Tensor({rows, F}, std::move(kept)), target};
}

SaliencyTruth ground_truth_mask(const SynthSpec& spec, std::size_t lookback) {
  if (lookback <= spec.max_lag()) {
    throw std::invalid_argument("lookback " + std::to_string(lookback) + " must exceed the largest lag " +
                                std::to_string(spec.max_lag()));
  }
  SaliencyTruth truth;
  truth.lookback = lookback;
  truth.n_features = spec.n_features;
  truth.mask.assign(lookback * spec.n_features, 0);
  truth.temporal.assign(lookback, 0);
  for (auto lag : spec.important_lags) {
    const std::size_t t = lookback - lag;
    for (auto j : spec.important_features) truth.mask[t * spec.n_features + j] = 1;
    if (!spec.important_features.empty()) truth.temporal[t] = 1;
  }
  return truth;
}

void export_dataset(const SynthDataset& data, const std::string& dir, const std::string& stem) {
  const std::size_t rows = data.features.dim(0);
  const std::size_t F = data.features.dim(1);
  CsvTable table;
  for (std::size_t j = 0; j < F; ++j) table.columns.push_back("feat_" + std::to_string(j));
  table.columns.push_back("target");
  table.rows = rows;
  table.values.reserve(rows * (F + 1));
  const auto& x = data.features.data();
  const auto& y = data.target.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < F; ++j) table.values.push_back(x[r * F + j]);
    table.values.push_back(y[r]);
  }
  const auto base = std::filesystem::path(dir) / stem;
  write_csv(base.string() + ".csv", table);
  write_text(base.string() + ".json", to_json(data.spec).dump(2) + "\n");
}

void export_truth_csv(const SaliencyTruth& truth, const std::string& path) {
  CsvTable table;
  for (std::size_t j = 0; j < truth.n_features; ++j) table.columns.push_back("feat_" + std::to_string(j));
  table.rows = truth.lookback;
  for (int v : truth.mask) table.values.push_back(v);
  write_csv(path, table);
}

SaliencyTruth read_truth_csv(const std::string& path) {
  const auto table = read_csv(path);
  SaliencyTruth truth;
  truth.lookback = table.rows;
  truth.n_features = table.cols();
  truth.temporal.assign(table.rows, 0);
  for (std::size_t t = 0; t < table.rows; ++t) {
    for (std::size_t j = 0; j < table.cols(); ++j) {
      const int v = table.at(t, j) != 0.0 ? 1 : 0;
      truth.mask.push_back(v);
      truth.temporal[t] |= v;
    }
  }
  return truth;
}

}  // namespace csn
