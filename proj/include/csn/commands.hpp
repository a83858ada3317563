#pragma once

#include <string>

#include "csn/io.hpp"
#include "csn/train.hpp"
#include "json.hpp"

namespace csn {

// Each command takes a partial JSON config, fills in defaults, writes its
// artifacts plus the resolved config.json under "out", and returns the
// resolved config. Feeding that config back reproduces the run.

nlohmann::json default_gen_config();
nlohmann::json default_train_config();
nlohmann::json default_explain_config();
nlohmann::json default_ablation_config();

/// Recursive merge; keys in `overlay` win, nulls in `overlay` are ignored.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overlay);

/// Output directory when none is given: $CSN_OUT_ROOT (or "runs") / name.
std::string default_out_dir(const std::string& name);

nlohmann::json run_gen(const nlohmann::json& config);
nlohmann::json run_train(const nlohmann::json& config);
nlohmann::json run_explain(const nlohmann::json& config);
nlohmann::json run_ablation(const nlohmann::json& config);

/// "SYN1".."SYN8" generate a dataset in memory (seed "data_seed", length
/// "samples"); anything else is read as a CSV path.
CsvTable load_table(const nlohmann::json& config);

/// Column index for config["target"]: a name, an index, or null for the last column.
std::size_t resolve_target(const CsvTable& table, const nlohmann::json& target);

}  // namespace csn
