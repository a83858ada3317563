#include "csn/commands.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "csn/explain.hpp"
#include "csn/model.hpp"
#include "csn/synthgen.hpp"

namespace fs = std::filesystem;

namespace csn {

namespace {

bool is_builtin(const std::string& name) {
  for (const auto& b : builtin_names()) {
    if (b == name) return true;
  }
  return false;
}

std::string out_dir(const nlohmann::json& config) {
  const auto out = config.value("out", std::string());
  if (out.empty()) throw std::invalid_argument("no output directory given");
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path.string(), j.dump(2) + "\n"); }

CsvTable table_from_dataset(const SynthDataset& data) {
  const std::size_t rows = data.features.dim(0);
  const std::size_t F = data.features.dim(1);
  CsvTable table;
  for (std::size_t j = 0; j < F; ++j) table.columns.push_back("feat_" + std::to_string(j));
  table.columns.push_back("target");
  table.rows = rows;
  table.values.reserve(rows * (F + 1));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < F; ++j) table.values.push_back(data.features.data()[r * F + j]);
    table.values.push_back(data.target.data()[r]);
  }
  return table;
}

SynthSpec spec_for(const nlohmann::json& config, const std::string& name) {
  SynthSpec spec = builtin_spec(name);
  spec.seed = config.at("data_seed").get<std::uint64_t>();
  spec.n_samples = config.at("samples").get<std::size_t>();
  return spec;
}

// Resolves model/train sections and the data source; throws on any invalid
// setting so nothing is written for a bad config.
struct TrainSetup {
  nlohmann::json resolved;
  CsvTable table;
  std::size_t target = 0;
  ModelConfig model;
  TrainConfig train;
};

TrainSetup prepare_train(const nlohmann::json& config) {
  TrainSetup s;
  s.resolved = merge_config(default_train_config(), config);
  auto& r = s.resolved;
  if (r.value("data", std::string()).empty()) throw std::invalid_argument("train needs --data");
  s.table = load_table(r);
  s.target = resolve_target(s.table, r["target"]);
  r["target"] = s.table.columns[s.target];
  r["model"]["n_features"] = s.table.cols();
  s.model = model_config_from_json(r["model"]);
  s.model.validate();
  s.train = train_config_from_json(r["train"]);
  s.train.validate();
  r["model"] = to_json(s.model);
  r["train"] = to_json(s.train);
  if (s.table.rows < s.model.lookback + s.model.horizon) {
    throw std::invalid_argument("data has " + std::to_string(s.table.rows) + " rows; lookback + horizon needs " +
                                std::to_string(s.model.lookback + s.model.horizon));
  }
  return s;
}

std::vector<std::string> string_list(const nlohmann::json& j) {
  if (j.is_string()) {
    std::vector<std::string> out;
    std::stringstream in(j.get<std::string>());
    std::string item;
    while (std::getline(in, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }
  return j.get<std::vector<std::string>>();
}

}  // namespace

nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overlay) {
  if (overlay.is_null()) return base;
  if (!overlay.is_object() || !base.is_object()) return overlay;
  for (const auto& [key, value] : overlay.items()) {
    if (value.is_null()) continue;
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      base[key] = merge_config(base[key], value);
    } else {
      base[key] = value;
    }
  }
  return base;
}

std::string default_out_dir(const std::string& name) {
  const char* root = std::getenv("CSN_OUT_ROOT");
  return (fs::path(root != nullptr && *root != '\0' ? root : "runs") / name).string();
}

nlohmann::json default_gen_config() {
  return {{"command", "gen"}, {"dataset", "SYN1"}, {"spec", nullptr},      {"samples", 10000},
          {"seed", 42},       {"lookback", 96},    {"out", std::string()}};
}

nlohmann::json default_train_config() {
  ModelConfig model;
  model.n_features = 0;  // taken from the data
  TrainConfig train;
  return {{"command", "train"}, {"data", std::string()}, {"data_seed", 42},         {"samples", 10000},
          {"target", nullptr},  {"model", to_json(model)}, {"train", to_json(train)}, {"out", std::string()}};
}

nlohmann::json default_explain_config() {
  ExplainOptions o;
  return {{"command", "explain"}, {"checkpoint", std::string()}, {"data", nullptr},
          {"truth", nullptr},     {"ratios", o.ratios},          {"ig_windows", o.ig_windows},
          {"ig_steps", o.ig_steps}, {"out", std::string()}};
}

nlohmann::json default_ablation_config() {
  nlohmann::json variants = nlohmann::json::array();
  for (auto v : {Variant::SelfAttention, Variant::PatchAttention, Variant::CrossSharedKey, Variant::CrossDualKey}) {
    variants.push_back(std::string(variant_name(v)));
  }
  auto base = default_train_config();
  return {{"command", "ablation"},
          {"datasets", {"SYN1"}},
          {"variants", variants},
          {"seeds", {42}},
          {"data_seed", 42},
          {"samples", 10000},
          {"target", nullptr},
          {"model", base["model"]},
          {"train", base["train"]},
          {"out", std::string()}};
}

CsvTable load_table(const nlohmann::json& config) {
  const auto source = config.at("data").get<std::string>();
  if (is_builtin(source)) return table_from_dataset(generate_dataset(spec_for(config, source)));
  if (!fs::exists(source)) throw std::invalid_argument("data '" + source + "' is neither SYN1..SYN8 nor a readable file");
  return read_csv(source);
}

std::size_t resolve_target(const CsvTable& table, const nlohmann::json& target) {
  if (table.cols() == 0) throw std::invalid_argument("data has no columns");
  if (target.is_null()) return table.cols() - 1;
  if (target.is_number_integer()) {
    const auto idx = target.get<long long>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= table.cols()) {
      throw std::invalid_argument("target column index " + std::to_string(idx) + " out of range");
    }
    return static_cast<std::size_t>(idx);
  }
  return table.column_index(target.get<std::string>());
}

nlohmann::json run_gen(const nlohmann::json& config) {
  auto r = merge_config(default_gen_config(), config);
  SynthSpec spec;
  if (!r["spec"].is_null()) {
    spec = synth_spec_from_json(nlohmann::json::parse(read_text(r["spec"].get<std::string>())));
    r["dataset"] = spec.name;
  } else {
    spec = builtin_spec(r["dataset"].get<std::string>());
  }
  spec.seed = r["seed"].get<std::uint64_t>();
  spec.n_samples = r["samples"].get<std::size_t>();
  const auto lookback = r["lookback"].get<std::size_t>();
  const auto truth = ground_truth_mask(spec, lookback);
  if (r["out"].get<std::string>().empty()) r["out"] = default_out_dir("gen_" + spec.name + "_s" + std::to_string(spec.seed));
  const fs::path dir = out_dir(r);

  const auto data = generate_dataset(spec);
  const std::string stem = spec.name;
  export_dataset(data, dir.string(), stem);
  export_truth_csv(truth, (dir / (stem + "_truth.csv")).string());
  write_json(dir / "config.json", r);
  return r;
}

nlohmann::json run_train(const nlohmann::json& config) {
  auto s = prepare_train(config);
  auto& r = s.resolved;
  if (r["out"].get<std::string>().empty()) {
    r["out"] = default_out_dir("train_" + fs::path(r["data"].get<std::string>()).stem().string() + "_" +
                               std::string(variant_name(s.model.variant)) + "_s" + std::to_string(s.train.seed));
  }
  const fs::path dir = out_dir(r);

  const auto data = make_windows(s.table, s.model.lookback, s.model.horizon, {s.target});
  Forecaster model{s.model, ForecasterParams::init(s.model, s.train.seed), {s.target}};
  const auto history = train(model, data, s.train);
  const auto test = evaluate(model, data, Split::Test);
  const auto val = evaluate(model, data, Split::Val);

  fs::create_directories(dir);
  save_checkpoint((dir / "checkpoint.bin").string(), model.config, model.params,
                  {{"data", r["data"]},
                   {"data_seed", r["data_seed"]},
                   {"samples", r["samples"]},
                   {"target", r["target"]},
                   {"train", r["train"]}});
  write_text((dir / "history.csv").string(), history.to_csv());
  write_json(dir / "metrics.json", {{"test_mse", test.mse},
                                    {"test_mae", test.mae},
                                    {"val_mse", val.mse},
                                    {"val_mae", val.mae},
                                    {"best_epoch", history.best_epoch},
                                    {"epochs_run", history.train_mse.size()},
                                    {"early_stopped", history.early_stopped},
                                    {"parameters", model.params.parameter_count()},
                                    {"windows", {{"train", data.train.size()},
                                                 {"val", data.val.size()},
                                                 {"test", data.test.size()}}}});
  write_json(dir / "config.json", r);
  return r;
}

nlohmann::json run_explain(const nlohmann::json& config) {
  auto r = merge_config(default_explain_config(), config);
  const auto ck_path = r["checkpoint"].get<std::string>();
  if (ck_path.empty()) throw std::invalid_argument("explain needs --checkpoint");
  auto ck = load_checkpoint(ck_path);

  // Data source and target default to what the checkpoint was trained on.
  nlohmann::json data_cfg = {{"data", ck.extra.value("data", std::string())},
                             {"data_seed", ck.extra.value("data_seed", 42)},
                             {"samples", ck.extra.value("samples", 10000)},
                             {"target", ck.extra.value("target", nlohmann::json())}};
  if (!r["data"].is_null()) data_cfg["data"] = r["data"];
  r["data"] = data_cfg["data"];
  const auto table = load_table(data_cfg);
  if (table.cols() != ck.config.n_features) {
    throw std::invalid_argument("data has " + std::to_string(table.cols()) + " columns but the checkpoint expects " +
                                std::to_string(ck.config.n_features));
  }
  const auto target = resolve_target(table, data_cfg["target"]);

  std::optional<SaliencyTruth> truth;
  if (!r["truth"].is_null()) {
    truth = read_truth_csv(r["truth"].get<std::string>());
    if (truth->lookback != ck.config.lookback) {
      throw std::invalid_argument("truth mask lookback " + std::to_string(truth->lookback) +
                                  " does not match the checkpoint lookback " + std::to_string(ck.config.lookback));
    }
  }
  ExplainOptions options;
  options.ratios = r["ratios"].get<std::vector<double>>();
  options.ig_windows = r["ig_windows"].get<std::size_t>();
  options.ig_steps = r["ig_steps"].get<std::size_t>();
  for (double ratio : options.ratios) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("ratios must lie in (0, 1]");
  }
  if (r["out"].get<std::string>().empty()) {
    r["out"] = (fs::path(ck_path).parent_path() / "explain").string();
  }
  const fs::path dir = out_dir(r);

  const auto data = make_windows(table, ck.config.lookback, ck.config.horizon, {target});
  const Forecaster model{ck.config, ck.params, {target}};
  const auto report = explain(model, data, options, truth);
  const std::size_t T = report.lookback;
  const std::size_t F = report.channels.size();

  fs::create_directories(dir);
  write_json(dir / "report.json", report.to_json());

  CsvTable sal;
  sal.columns = {"step", "saliency", "ig_temporal"};
  if (truth) sal.columns.push_back("truth");
  sal.rows = T;
  for (std::size_t t = 0; t < T; ++t) {
    sal.values.push_back(static_cast<double>(t));
    sal.values.push_back(report.saliency.values[t]);
    sal.values.push_back(report.attribution.temporal[t]);
    if (truth) sal.values.push_back(truth->temporal[t]);
  }
  write_csv((dir / "saliency.csv").string(), sal);
  write_pgm((dir / "saliency.pgm").string(), report.saliency.values, 1, T);

  CsvTable attr;
  attr.columns = report.channels;
  attr.rows = T;
  attr.values = report.attribution.map;
  write_csv((dir / "attribution.csv").string(), attr);
  // Heatmap rows are channels, columns are lookback steps.
  std::vector<double> transposed(F * T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < F; ++j) transposed[j * T + t] = report.attribution.map[t * F + j];
  write_pgm((dir / "attribution.pgm").string(), transposed, F, T);
  write_pgm((dir / "attribution_temporal.pgm").string(), report.attribution.temporal, 1, T);

  write_json(dir / "config.json", r);
  return r;
}

nlohmann::json run_ablation(const nlohmann::json& config) {
  auto r = merge_config(default_ablation_config(), config);
  r["datasets"] = string_list(r["datasets"]);
  r["variants"] = string_list(r["variants"]);
  const auto datasets = r["datasets"].get<std::vector<std::string>>();
  const auto variants = r["variants"].get<std::vector<std::string>>();
  const auto seeds = r["seeds"].get<std::vector<std::uint64_t>>();
  if (datasets.empty() || variants.empty() || seeds.empty()) {
    throw std::invalid_argument("ablation needs at least one dataset, variant and seed");
  }
  for (const auto& v : variants) parse_variant(v);
  if (r["out"].get<std::string>().empty()) r["out"] = default_out_dir("ablation");
  const fs::path dir = out_dir(r);
  fs::create_directories(dir);

  CsvTable runs;
  runs.columns = {"seed", "mse", "mae", "ok"};
  CsvTable table;
  table.columns = {"mse", "mae", "runs_ok", "runs_failed"};
  std::vector<std::string> row_labels;
  std::vector<std::string> failures;
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> cell;

  for (const auto& ds : datasets) {
    for (const auto& v : variants) {
      double mse = 0.0, mae = 0.0;
      std::size_t ok = 0, failed = 0;
      for (auto seed : seeds) {
        const std::string name = ds + "_" + v + "_s" + std::to_string(seed);
        nlohmann::json sub = {{"data", ds},
                              {"data_seed", r["data_seed"]},
                              {"samples", r["samples"]},
                              {"target", r["target"]},
                              {"model", r["model"]},
                              {"train", r["train"]},
                              {"out", (dir / "runs" / name).string()}};
        sub["model"]["variant"] = v;
        sub["train"]["seed"] = seed;
        try {
          run_train(sub);
          const auto m = nlohmann::json::parse(read_text((dir / "runs" / name / "metrics.json").string()));
          mse += m["test_mse"].get<double>();
          mae += m["test_mae"].get<double>();
          ++ok;
        } catch (const std::exception& e) {
          ++failed;
          failures.push_back(name + ": " + e.what());
          std::cerr << "ablation run " << name << " failed: " << e.what() << '\n';
        }
      }
      const double n = static_cast<double>(ok);
      const double avg_mse = ok > 0 ? mse / n : std::nan("");
      const double avg_mae = ok > 0 ? mae / n : std::nan("");
      cell[{ds, v}] = {avg_mse, avg_mae};
      row_labels.push_back(ds + "," + v);
      table.values.insert(table.values.end(),
                          {avg_mse, avg_mae, static_cast<double>(ok), static_cast<double>(failed)});
      ++table.rows;
    }
  }

  std::ostringstream csv;
  csv << "dataset,variant,mse,mae,runs_ok,runs_failed\n";
  for (std::size_t i = 0; i < table.rows; ++i) {
    csv << row_labels[i];
    for (std::size_t c = 0; c < table.cols(); ++c) {
      const double v = table.at(i, c);
      csv << ',' << (c < 2 ? (std::isnan(v) ? std::string("nan") : format_double(v)) : std::to_string(static_cast<long>(v)));
    }
    csv << '\n';
  }
  write_text((dir / "ablation.csv").string(), csv.str());

  // Markdown: one row per variant, an MSE and MAE column per dataset.
  std::ostringstream md;
  md << "| Variant |";
  for (const auto& ds : datasets) md << ' ' << ds << " MSE | " << ds << " MAE |";
  md << "\n|---|";
  for (std::size_t i = 0; i < datasets.size(); ++i) md << "---|---|";
  md << '\n';
  char buf[32];
  for (const auto& v : variants) {
    md << "| " << v << " |";
    for (const auto& ds : datasets) {
      const auto [mse, mae] = cell[{ds, v}];
      std::snprintf(buf, sizeof buf, " %.4f | %.4f |", mse, mae);
      md << buf;
    }
    md << '\n';
  }
  md << "\nAveraged over seeds:";
  for (auto s : seeds) md << ' ' << s;
  md << '\n';
  if (!failures.empty()) {
    md << "\nFailed runs:\n";
    for (const auto& f : failures) md << "- " << f << '\n';
  }
  write_text((dir / "ablation.md").string(), md.str());
  r["failed_runs"] = failures;
  write_json(dir / "config.json", r);
  return r;
}

}  // namespace csn
