// csn: generate synthetic data, train, explain and run ablation sweeps.
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csn/commands.hpp"
#include "csn/io.hpp"

namespace {

using nlohmann::json;

template <typename T>
void put(json& j, const std::string& key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  return json::parse(csn::read_text(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale cross-attention forecaster"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out;

  // gen
  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset, its spec and ground-truth mask");
  std::optional<std::string> gen_dataset, gen_spec;
  std::optional<std::size_t> gen_samples, gen_lookback;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--dataset", gen_dataset, "SYN1..SYN8");
  gen->add_option("--spec", gen_spec, "JSON generator spec file");
  gen->add_option("--samples", gen_samples, "Series length before dropping the lag warm-up");
  gen->add_option("--seed", gen_seed);
  gen->add_option("--lookback", gen_lookback, "Lookback of the ground-truth mask");
  gen->add_option("--config", config_path);
  gen->add_option("--out", out);

  // train
  auto* tr = app.add_subcommand("train", "Train a model and write checkpoint, history, config and metrics");
  std::optional<std::string> data, target, variant;
  std::optional<std::size_t> lookback, horizon, scales, patch, epochs, hidden, kernel, batch, samples;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<double> lr;
  bool verbose = false;
  tr->add_option("--data", data, "CSV file or SYN1..SYN8");
  tr->add_option("--target", target, "Target column name or index (default: last column)");
  tr->add_option("--variant", variant, "self_attention|patch_attention|cross_shared_key|cross_dual_key");
  tr->add_option("--lookback", lookback);
  tr->add_option("--horizon", horizon);
  tr->add_option("--scales", scales);
  tr->add_option("--patch", patch);
  tr->add_option("--hidden", hidden);
  tr->add_option("--kernel", kernel, "Moving-average kernel (odd)");
  tr->add_option("--epochs", epochs);
  tr->add_option("--batch", batch);
  tr->add_option("--lr", lr);
  tr->add_option("--seed", seed, "Initialization and shuffling seed");
  tr->add_option("--data-seed", data_seed, "Generator seed for SYN datasets");
  tr->add_option("--samples", samples, "Generator length for SYN datasets");
  tr->add_flag("--verbose", verbose);
  tr->add_option("--config", config_path);
  tr->add_option("--out", out);

  // explain
  auto* ex = app.add_subcommand("explain", "Saliency, attribution and faithfulness report for a checkpoint");
  std::optional<std::string> checkpoint, ex_data, truth;
  std::optional<std::vector<double>> ratios;
  std::optional<std::size_t> ig_windows, ig_steps;
  ex->add_option("--checkpoint", checkpoint);
  ex->add_option("--data", ex_data, "Defaults to the data the checkpoint was trained on");
  ex->add_option("--truth", truth, "Ground-truth mask CSV");
  ex->add_option("--ratios", ratios)->delimiter(',');
  ex->add_option("--ig-windows", ig_windows);
  ex->add_option("--ig-steps", ig_steps);
  ex->add_option("--config", config_path);
  ex->add_option("--out", out);

  // ablation
  auto* ab = app.add_subcommand("ablation", "Train every dataset x variant x seed and tabulate test MSE/MAE");
  std::optional<std::vector<std::string>> datasets, variants;
  std::optional<std::vector<std::uint64_t>> seeds;
  ab->add_option("--datasets,--dataset", datasets)->delimiter(',');
  ab->add_option("--variants", variants)->delimiter(',');
  ab->add_option("--seeds", seeds)->delimiter(',');
  ab->add_option("--lookback", lookback);
  ab->add_option("--horizon", horizon);
  ab->add_option("--scales", scales);
  ab->add_option("--patch", patch);
  ab->add_option("--hidden", hidden);
  ab->add_option("--epochs", epochs);
  ab->add_option("--samples", samples);
  ab->add_option("--config", config_path);
  ab->add_option("--out", out);

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = load_config_file(config_path);
    json flags = json::object();
    put(flags, "out", out);

    json model = json::object();
    put(model, "lookback", lookback);
    put(model, "horizon", horizon);
    put(model, "n_scales", scales);
    put(model, "patch_len", patch);
    put(model, "hidden_dim", hidden);
    put(model, "decomp_kernel", kernel);
    put(model, "variant", variant);
    json train = json::object();
    put(train, "epochs", epochs);
    put(train, "batch_size", batch);
    put(train, "learning_rate", lr);
    put(train, "seed", seed);
    if (verbose) train["verbose"] = true;

    json resolved;
    if (*gen) {
      put(flags, "dataset", gen_dataset);
      put(flags, "spec", gen_spec);
      put(flags, "samples", gen_samples);
      put(flags, "seed", gen_seed);
      put(flags, "lookback", gen_lookback);
      resolved = csn::run_gen(csn::merge_config(cfg, flags));
    } else if (*tr) {
      put(flags, "data", data);
      put(flags, "data_seed", data_seed);
      put(flags, "samples", samples);
      if (target) {
        // Numeric targets select by index.
        const bool numeric = !target->empty() && target->find_first_not_of("0123456789") == std::string::npos;
        flags["target"] = numeric ? json(std::stoll(*target)) : json(*target);
      }
      flags["model"] = model;
      flags["train"] = train;
      resolved = csn::run_train(csn::merge_config(cfg, flags));
    } else if (*ex) {
      put(flags, "checkpoint", checkpoint);
      put(flags, "data", ex_data);
      put(flags, "truth", truth);
      put(flags, "ratios", ratios);
      put(flags, "ig_windows", ig_windows);
      put(flags, "ig_steps", ig_steps);
      resolved = csn::run_explain(csn::merge_config(cfg, flags));
    } else if (*ab) {
      put(flags, "datasets", datasets);
      put(flags, "variants", variants);
      put(flags, "seeds", seeds);
      put(flags, "samples", samples);
      flags["model"] = model;
      flags["train"] = train;
      resolved = csn::run_ablation(csn::merge_config(cfg, flags));
      const auto failed = resolved.value("failed_runs", json::array());
      if (!failed.empty()) {
        std::cerr << failed.size() << " ablation run(s) failed\n";
        std::cout << resolved["out"].get<std::string>() << '\n';
        return 1;
      }
    }
    std::cout << resolved["out"].get<std::string>() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
