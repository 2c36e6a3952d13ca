#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eitphys/cli/commands.hpp"
#include "eitphys/cli/config.hpp"
#include "eitphys/common.hpp"

using namespace eitphys;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string data_dir;
    int64_t seed = -1;
    int patients = -1;
    int records = -1;
    std::string task;
    int variant = -1;
    std::string split;
    bool all_variants = false;

    void add_to(CLI::App* app) {
        app->add_option("--config", config_path, "experiment config file");
        app->add_option("--out", out_dir, "output directory");
        app->add_option("--data", data_dir, "dataset directory");
        app->add_option("--seed", seed, "override phantom and training seed");
        app->add_option("--patients", patients, "phantom patient count");
        app->add_option("--records", records, "records per patient");
        app->add_option("--task", task, "task: volume|flow|paw|pab|ptp");
        app->add_option("--variant", variant, "transpulmonary variant 1..3");
        app->add_option("--split", split, "split scheme: intra|inter");
        app->add_flag("--all-variants", all_variants, "task 5: run variants 1-3");
    }

    cli::ExperimentConfig resolve() const {
        cli::ExperimentConfig cfg = config_path.empty()
                                        ? cli::ExperimentConfig{}
                                        : cli::ExperimentConfig::from_file(config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        if (seed >= 0) {
            cfg.phantom.seed = static_cast<uint64_t>(seed);
            cfg.train.seed = static_cast<uint64_t>(seed);
        }
        if (patients >= 0) cfg.phantom.patients = patients;
        if (records >= 0) cfg.phantom.records_per_patient = records;
        if (!task.empty()) cfg.train.task = training::task_from_name(task);
        if (variant >= 0) {
            if (variant < 1 || variant > 3) throw ConfigError("--variant must be 1..3");
            cfg.train.variant = static_cast<nets::Variant>(variant);
        }
        if (!split.empty()) cfg.split = cli::split_from_name(split);
        if (all_variants) cfg.variant_all = true;
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic EIT-to-physiology pipeline: phantom generation, alignment, "
                 "CNN-BiLSTM training and evaluation"};
    app.require_subcommand(1);

    CommonFlags generate_flags, align_flags, train_flags, eval_flags, run_flags;
    bool force_generate = false, force_align = false;
    std::string align_out, eval_ckpt, report_out;
    std::vector<std::string> report_inputs;
    bool config_defaults = false;

    auto* c_gen = app.add_subcommand("generate", "generate a phantom dataset");
    generate_flags.add_to(c_gen);
    c_gen->add_flag("--force", force_generate, "overwrite a non-empty output directory");

    auto* c_align = app.add_subcommand("align", "align all records of a dataset");
    align_flags.add_to(c_align);
    c_align->add_option("--aligned-out", align_out, "directory for the aligned dataset")
        ->required();
    c_align->add_flag("--force", force_align, "overwrite a non-empty output directory");

    auto* c_train = app.add_subcommand("train", "train one task/variant");
    train_flags.add_to(c_train);

    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_flags.add_to(c_eval);
    c_eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

    auto* c_run = app.add_subcommand("run", "train + evaluate + report");
    run_flags.add_to(c_run);

    auto* c_report = app.add_subcommand("report", "merge summary.json files into one CSV");
    c_report->add_option("summaries", report_inputs, "summary.json files")->required();
    c_report->add_option("--out", report_out, "combined CSV path");

    auto* c_config = app.add_subcommand("config", "print configuration");
    c_config->add_flag("--defaults", config_defaults, "print the default config file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_gen->parsed()) {
            cli::cmd_generate(generate_flags.resolve(), force_generate);
        } else if (c_align->parsed()) {
            cli::cmd_align(align_flags.resolve(), align_out, force_align);
        } else if (c_train->parsed()) {
            const auto path = cli::cmd_train(train_flags.resolve());
            std::cout << "checkpoint written to " << path << "\n";
        } else if (c_eval->parsed()) {
            cli::cmd_eval(eval_flags.resolve(), eval_ckpt);
        } else if (c_run->parsed()) {
            cli::cmd_run(run_flags.resolve());
        } else if (c_report->parsed()) {
            cli::cmd_report(report_inputs, report_out);
        } else if (c_config->parsed()) {
            (void)config_defaults;
            std::cout << cli::ExperimentConfig{}.to_text();
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
