#include "eitphys/cli/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "eitphys/nets/checkpoint.hpp"
#include "eitphys/rng.hpp"
#include "eitphys/sigproc/align.hpp"

namespace eitphys::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void cmd_generate(const ExperimentConfig& cfg, bool force) {
    phantom::generate_dataset(cfg.phantom, cfg.data_dir, force);
    std::cout << "generated " << cfg.phantom.patients * cfg.phantom.records_per_patient
              << " records (" << cfg.phantom.patients << " patients x "
              << cfg.phantom.records_per_patient << ") in " << cfg.data_dir << "\n";
}

void cmd_align(const ExperimentConfig& cfg, const std::string& out_dir, bool force) {
    const auto index = phantom::load_dataset_index(cfg.data_dir);
    const fs::path root(out_dir);
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!force) {
            throw ConfigError("output directory " + out_dir +
                              " exists and is not empty (use --force to overwrite)");
        }
        fs::remove_all(root);
    }
    fs::create_directories(root / "records");
    for (const auto& ref : index.records) {
        const auto rec = phantom::load_record(ref.path);
        const auto aligned = sigproc::align_records(rec);
        phantom::write_record((root / "records" / ref.record_id).string(), aligned);
        std::cout << ref.record_id << ": injected eit=" << rec.meta.injected_eit_lag
                  << " monitor=" << rec.meta.injected_monitor_lag
                  << " -> residual eit=" << aligned.meta.residual_eit_lag
                  << " monitor=" << aligned.meta.residual_monitor_lag
                  << (aligned.meta.unalignable ? " [unalignable]" : "") << "\n";
    }
    fs::copy_file(fs::path(cfg.data_dir) / "manifest.json", root / "manifest.json",
                  fs::copy_options::overwrite_existing);
    std::cout << "aligned dataset written to " << out_dir << "\n";
}

namespace {

struct PreparedData {
    std::vector<phantom::Segment> train;
    std::vector<phantom::Segment> test;
    phantom::GlobalStats stats;
};

// Loads, aligns and crops the dataset for the configured split. Crop seeds
// derive from the dataset seed and record ordinal so every task/variant in a
// run sees identical segments.
PreparedData prepare_data(const ExperimentConfig& cfg) {
    const auto index = phantom::load_dataset_index(cfg.data_dir);
    const auto sp = phantom::split(index, cfg.split);
    if (sp.train.empty() || sp.test.empty()) {
        throw ConfigError("dataset " + cfg.data_dir + " has no precomputed " +
                          split_name(cfg.split) + " split (too few patients/records)");
    }
    PreparedData out;
    out.stats = index.stats;
    auto collect = [&](const std::vector<size_t>& ids, std::vector<phantom::Segment>& dst) {
        for (size_t i : ids) {
            const auto rec = phantom::load_record(index.records[i].path);
            const auto aligned = sigproc::align_records(rec);
            if (aligned.meta.unalignable) {
                std::cerr << "warning: record " << rec.meta.record_id
                          << " unalignable, excluded\n";
                continue;
            }
            auto segs = phantom::crop_segments(aligned, cfg.train.crops_per_record,
                                               Rng::derive(index.config.seed, 0xC0 + i));
            for (auto& s : segs) dst.push_back(std::move(s));
        }
    };
    collect(sp.train, out.train);
    collect(sp.test, out.test);
    if (out.train.empty() || out.test.empty()) {
        throw ConfigError("no usable segments after alignment/cropping");
    }
    return out;
}

std::string checkpoint_name(const ExperimentConfig& cfg, nets::Variant variant) {
    std::string name = std::string("checkpoint_") + training::task_name(cfg.train.task);
    if (cfg.train.task == training::TaskId::Transpulmonary) {
        name += std::string("_") + nets::variant_name(variant);
    }
    return name + ".ckpt";
}

std::string run_one(const ExperimentConfig& cfg, nets::Variant variant, const PreparedData& data,
                    sigproc::MetricsReport& report) {
    training::TrainConfig tc = cfg.train;
    tc.variant = variant;
    const auto mc = training::model_config_for(tc.task, variant, cfg.model);
    nets::Model<float> model(mc, tc.seed);

    const std::string tag = cfg.train.task == training::TaskId::Transpulmonary
                                ? std::string(training::task_name(tc.task)) + "_" +
                                      nets::variant_name(variant)
                                : std::string(training::task_name(tc.task));
    std::cout << "training " << tag << ": " << data.train.size() << " segments, " << tc.epochs
              << " epochs\n";

    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    std::ofstream log(out / ("train_log_" + tag + ".csv"));
    log << "step,lr,loss\n";
    auto result = training::train(model, data.train, tc, data.stats,
                                  [&](const training::TrainLogRow& row) {
                                      log << row.step << ','
                                          << sigproc::format_double(row.lr) << ','
                                          << sigproc::format_double(row.loss) << std::endl;
                                      if (row.step % 25 == 0) {
                                          std::cout << "  step " << row.step << " loss "
                                                    << row.loss << std::endl;
                                      }
                                  });
    log.close();

    // Checkpoint: parameters + optimizer state + config + epoch + history.
    std::vector<std::pair<std::string, std::vector<float>>> extra;
    for (size_t i = 0; i < result.optimizer.size(); ++i) {
        const auto& pname = model.parameters()[i].first;
        extra.emplace_back("opt.m." + pname, result.optimizer.first_moment(i));
        extra.emplace_back("opt.v." + pname, result.optimizer.second_moment(i));
    }
    json meta;
    meta["task"] = training::task_name(tc.task);
    meta["variant"] = static_cast<int>(variant);
    meta["epochs"] = tc.epochs;
    meta["opt_steps"] = result.optimizer.step_count();
    meta["seed"] = tc.seed;
    meta["split"] = split_name(cfg.split);
    meta["epoch_loss"] = result.epoch_loss;
    const std::string ckpt_path = (out / checkpoint_name(cfg, variant)).string();
    nets::save_checkpoint(ckpt_path, model, extra, meta);

    training::EvalOptions eo;
    eo.split_label = split_name(cfg.split);
    eo.svg_dir = (out / "plots" / tag).string();
    fs::remove_all(eo.svg_dir);  // no stale plots from a previous run
    auto row = training::evaluate(model, data.test, tc.task, variant, data.stats, eo);
    report.rows.push_back(row);
    std::cout << "  " << tag << ": rmse=" << row.rmse << " dtw=" << row.dtw << " +" << row.plus
              << " o" << row.circle << " -" << row.minus << " (" << row.segments
              << " segments)\n";
    return ckpt_path;
}

}  // namespace

std::string cmd_train(const ExperimentConfig& cfg) {
    const auto data = prepare_data(cfg);
    sigproc::MetricsReport report;
    return run_one(cfg, cfg.train.variant, data, report);
}

sigproc::MetricsReport cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
    auto ckpt = nets::load_checkpoint(checkpoint_path);
    const auto data = prepare_data(cfg);
    const auto task = training::task_from_name(ckpt.meta.at("task").get<std::string>());
    const auto variant = static_cast<nets::Variant>(ckpt.meta.at("variant").get<int>());

    training::EvalOptions eo;
    eo.split_label = split_name(cfg.split);
    eo.svg_dir = (fs::path(cfg.out_dir) / "plots" /
                  (std::string(training::task_name(task)) + "_eval"))
                     .string();
    fs::remove_all(eo.svg_dir);
    sigproc::MetricsReport report;
    report.rows.push_back(
        training::evaluate(*ckpt.model, data.test, task, variant, data.stats, eo));
    fs::create_directories(cfg.out_dir);
    sigproc::write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), report);
    sigproc::write_summary_json((fs::path(cfg.out_dir) / "summary.json").string(), report);
    return report;
}

sigproc::MetricsReport cmd_run(const ExperimentConfig& cfg) {
    const auto data = prepare_data(cfg);
    sigproc::MetricsReport report;
    if (cfg.train.task == training::TaskId::Transpulmonary && cfg.variant_all) {
        for (nets::Variant v : {nets::Variant::EitOnly, nets::Variant::EitJointOutputs,
                                nets::Variant::EitPlusPaw}) {
            run_one(cfg, v, data, report);
        }
    } else {
        run_one(cfg, cfg.train.variant, data, report);
    }
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    sigproc::write_metrics_csv((out / "metrics.csv").string(), report);
    sigproc::write_summary_json((out / "summary.json").string(), report);
    std::cout << "report written to " << (out / "metrics.csv").string() << "\n";
    return report;
}

void cmd_report(const std::vector<std::string>& summaries, const std::string& out_csv) {
    sigproc::MetricsReport merged;
    for (const auto& path : summaries) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open summary " + path);
        const json j = json::parse(f);
        for (const auto& r : j.at("rows")) {
            sigproc::TaskMetrics row;
            row.task = r.at("task");
            row.split = r.at("split");
            row.variant = r.value("variant", "");
            row.segments = r.at("segments");
            row.target_mean = r.at("target_mean");
            row.target_sd = r.at("target_sd");
            row.rmse = r.at("rmse");
            row.shifted_rmse = r.at("shifted_rmse");
            row.dtw = r.at("dtw");
            row.plus = r.at("visual").at("plus");
            row.circle = r.at("visual").at("circle");
            row.minus = r.at("visual").at("minus");
            row.unit = r.at("unit");
            merged.rows.push_back(row);
        }
    }
    if (!out_csv.empty()) sigproc::write_metrics_csv(out_csv, merged);
    for (const auto& r : merged.rows) {
        std::cout << r.task << (r.variant.empty() ? "" : "/" + r.variant) << " [" << r.split
                  << "] rmse=" << r.rmse << " shifted=" << r.shifted_rmse << " dtw=" << r.dtw
                  << " +" << r.plus << " o" << r.circle << " -" << r.minus << "\n";
    }
}

}  // namespace eitphys::cli
