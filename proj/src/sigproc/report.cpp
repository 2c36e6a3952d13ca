#include "eitphys/sigproc/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "eitphys/common.hpp"

namespace eitphys::sigproc {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream f(path);
    if (!f) throw UsageError("cannot write " + path);
    f << "task,split,variant,segments,target_mean,target_sd,rmse,shifted_rmse,dtw,"
         "plus,circle,minus,unit\n";
    for (const auto& r : report.rows) {
        f << r.task << ',' << r.split << ',' << r.variant << ',' << r.segments << ','
          << format_double(r.target_mean) << ',' << format_double(r.target_sd) << ','
          << format_double(r.rmse) << ',' << format_double(r.shifted_rmse) << ','
          << format_double(r.dtw) << ',' << r.plus << ',' << r.circle << ',' << r.minus << ','
          << r.unit << '\n';
    }
}

void write_summary_json(const std::string& path, const MetricsReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"task", r.task},
                        {"split", r.split},
                        {"variant", r.variant},
                        {"segments", r.segments},
                        {"target_mean", r.target_mean},
                        {"target_sd", r.target_sd},
                        {"rmse", r.rmse},
                        {"shifted_rmse", r.shifted_rmse},
                        {"dtw", r.dtw},
                        {"visual", {{"plus", r.plus}, {"circle", r.circle}, {"minus", r.minus}}},
                        {"unit", r.unit}});
    }
    std::ofstream f(path);
    if (!f) throw UsageError("cannot write " + path);
    f << nlohmann::json{{"rows", rows}}.dump(2) << '\n';
}

void write_svg_pair(const std::string& path, std::span<const double> pred,
                    std::span<const double> tgt, const std::string& title, Rating rating) {
    if (pred.empty() || tgt.empty()) throw UsageError("write_svg_pair: empty series");
    constexpr int width = 640, height = 240, pad = 34;
    double lo = pred[0], hi = pred[0];
    for (double v : pred) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : tgt) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-12) {
        lo -= 1.0;
        hi += 1.0;
    }
    const auto n = std::max(pred.size(), tgt.size());
    auto polyline = [&](std::span<const double> xs) {
        std::string pts;
        for (size_t i = 0; i < xs.size(); ++i) {
            const double x = pad + (width - 2.0 * pad) * static_cast<double>(i) /
                                       static_cast<double>(n - 1);
            const double y =
                height - pad - (height - 2.0 * pad) * (xs[i] - lo) / (hi - lo);
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x, y);
            pts += buf;
        }
        return pts;
    };

    std::ofstream f(path);
    if (!f) throw UsageError("cannot write " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << pad << "\" y=\"18\" font-size=\"13\" font-family=\"sans-serif\">" << title
      << "  [rating " << rating_name(rating) << "]</text>\n"
      << "<polyline fill=\"none\" stroke=\"#444444\" stroke-width=\"1.4\" points=\""
      << polyline(tgt) << "\"/>\n"
      << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.2\" points=\""
      << polyline(pred) << "\"/>\n"
      << "<text x=\"" << width - 150 << "\" y=\"18\" font-size=\"11\" fill=\"#444444\" "
         "font-family=\"sans-serif\">target</text>\n"
      << "<text x=\"" << width - 90 << "\" y=\"18\" font-size=\"11\" fill=\"#d62728\" "
         "font-family=\"sans-serif\">prediction</text>\n"
      << "</svg>\n";
}

}  // namespace eitphys::sigproc
