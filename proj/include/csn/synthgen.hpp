#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "csn/tensor.hpp"
#include "json.hpp"

namespace csn {

/// Declarative recipe for a synthetic dataset with known saliency.
struct SynthSpec {
  std::string name;
  std::vector<std::size_t> important_lags;      // sorted, each >= 1
  std::vector<std::size_t> important_features;  // sorted feature indices
  double noise_sigma = 0.0;
  std::size_t n_features = 6;
  std::size_t n_samples = 10000;
  std::uint64_t seed = 42;
  bool use_current_values = true;  // include the c_j * X_{t,j} terms

  void validate() const;
  std::size_t max_lag() const;
};

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

/// Binary (lag, feature) ground truth over a lookback window.
struct SaliencyTruth {
  std::size_t lookback = 0;
  std::size_t n_features = 0;
  std::vector<int> mask;      // lookback x n_features, row-major
  std::vector<int> temporal;  // lookback; any() over features

  int at(std::size_t t, std::size_t j) const { return mask[t * n_features + j]; }
  std::size_t salient_steps() const;
};

/// Built-in recipes SYN1..SYN8.
SynthSpec builtin_spec(const std::string& name);
std::vector<std::string> builtin_names();

/// [n_samples, n_features]: independent AR(1) (coefficient 0.8, unit
/// innovations) plus a sinusoid per feature, z-scored per feature.
Tensor generate_features(const SynthSpec& spec);

/// Target aligned with features rows max_lag..n_samples-1 (the first max_lag
/// rows are dropped), z-scored.
Tensor generate_target(const Tensor& features, const SynthSpec& spec);

struct SynthDataset {
  SynthSpec spec;
  Tensor features;  // [n_samples - max_lag, n_features]
  Tensor target;    // [n_samples - max_lag]
};

SynthDataset generate_dataset(const SynthSpec& spec);

SaliencyTruth ground_truth_mask(const SynthSpec& spec, std::size_t lookback);

/// Writes <dir>/<stem>.csv (feat_0..feat_{F-1},target) and <dir>/<stem>.json.
void export_dataset(const SynthDataset& data, const std::string& dir, const std::string& stem);
void export_truth_csv(const SaliencyTruth& truth, const std::string& path);
SaliencyTruth read_truth_csv(const std::string& path);

}  // namespace csn
