#pragma once

#include <string>
#include <vector>

#include "eitphys/cli/config.hpp"
#include "eitphys/sigproc/report.hpp"

namespace eitphys::cli {

// Phantom dataset generation into cfg.data_dir (refuses a non-empty
// directory without force; manifest.json is written last).
void cmd_generate(const ExperimentConfig& cfg, bool force);

// Reads a dataset, aligns every record, writes the aligned dataset to
// out_dir, prints residual lags per record.
void cmd_align(const ExperimentConfig& cfg, const std::string& out_dir, bool force);

// Trains one task/variant; writes checkpoint + training log CSV to out_dir.
std::string cmd_train(const ExperimentConfig& cfg);

// Evaluates a checkpoint against cfg's dataset/split; writes metrics.csv,
// summary.json and SVG plots under out_dir.
sigproc::MetricsReport cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);

// Full experiment: train + evaluate (all three variants for task 5 when
// all_variants is set) and emit metrics.csv, summary.json, plots.
sigproc::MetricsReport cmd_run(const ExperimentConfig& cfg);

// Merges summary.json files into one combined metrics.csv + stdout table.
void cmd_report(const std::vector<std::string>& summaries, const std::string& out_csv);

}  // namespace eitphys::cli
