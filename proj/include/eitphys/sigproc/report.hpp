#pragma once

#include <span>
#include <string>
#include <vector>

#include "eitphys/sigproc/ops.hpp"

namespace eitphys::sigproc {

// One row of the metrics report: a (task, split, variant) combination
// aggregated over all evaluated test segments.
struct TaskMetrics {
    std::string task;
    std::string split;
    std::string variant;
    int segments = 0;
    double target_mean = 0.0;
    double target_sd = 0.0;
    double rmse = 0.0;
    double shifted_rmse = 0.0;
    double dtw = 0.0;
    int plus = 0;
    int circle = 0;
    int minus = 0;
    std::string unit;
};

struct MetricsReport {
    std::vector<TaskMetrics> rows;
};

// Deterministic fixed-precision CSV (no timestamps), one row per task/split.
void write_metrics_csv(const std::string& path, const MetricsReport& report);

void write_summary_json(const std::string& path, const MetricsReport& report);

// Single-panel target-vs-prediction plot with the rating in the caption.
void write_svg_pair(const std::string& path, std::span<const double> pred,
                    std::span<const double> tgt, const std::string& title, Rating rating);

std::string format_double(double v);

}  // namespace eitphys::sigproc
