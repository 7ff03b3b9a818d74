// Command-line front end: dataset generation, training, evaluation,
// single-image prediction, multi-camera/temporal fusion and PR-curve plots.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pyrocc/commands.hpp"
#include "pyrocc/config.hpp"

namespace {

pyrocc::RunConfig load_config(const std::string& path) {
    if (path.empty()) return pyrocc::RunConfig{};
    return pyrocc::RunConfig::load(path);
}

// Timestamps are confined to this log file; every other output is a pure
// function of the inputs and --seed.
void append_run_log(const std::string& out_dir, int argc, char** argv) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    std::ofstream log(std::filesystem::path(out_dir) / "run.log", std::ios::app);
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    log << now << " |";
    for (int i = 0; i < argc; ++i) log << " " << argv[i];
    log << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pyrocc: birds-eye-view semantic occupancy grids from monocular images"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, variant, split = "val";
    std::uint64_t seed = 1;
    int scene_id = -1;
    int sample_index = 0;
    bool static_only = false;
    std::vector<std::string> report_files;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run configuration file (key = value lines)");
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--out", out_dir, "output directory");
    };

    CLI::App* gen = app.add_subcommand("generate-data", "generate a synthetic dataset");
    add_common(gen);

    CLI::App* train = app.add_subcommand("train", "train an occupancy network");
    add_common(train);
    train->add_option("--checkpoint", checkpoint, "resume from this checkpoint");
    train->add_option("--variant", variant, "architecture variant: baseline, D, DP or DPT")
        ->check(CLI::IsMember({"baseline", "D", "DP", "DPT"}));

    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
    evaluate->add_option("--split", split, "dataset split")->check(CLI::IsMember({"train", "val"}));

    CLI::App* predict = app.add_subcommand("predict", "predict one sample's occupancy grid");
    add_common(predict);
    predict->add_option("--checkpoint", checkpoint, "checkpoint to run")->required();
    predict->add_option("--split", split, "dataset split")->check(CLI::IsMember({"train", "val"}));
    predict->add_option("--index", sample_index, "sample index within the split");

    CLI::App* fuse = app.add_subcommand("fuse", "fuse a scene's frames into a world grid");
    add_common(fuse);
    fuse->add_option("--checkpoint", checkpoint, "checkpoint to run")->required();
    fuse->add_option("--scene", scene_id, "scene id to fuse (default: first val scene)");
    fuse->add_flag("--static-only", static_only, "accumulate only the static class subset");

    CLI::App* plot = app.add_subcommand("plot-pr", "render precision-recall curve images");
    add_common(plot);
    plot->add_option("files", report_files, "pr_<class>.csv files from evaluate")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        pyrocc::RunConfig cfg = load_config(config_path);
        if (gen->parsed()) {
            append_run_log(out_dir.empty() ? cfg.data_dir : out_dir, argc, argv);
            pyrocc::commands::run_generate_data(cfg, seed, out_dir);
        } else if (train->parsed()) {
            if (!variant.empty()) cfg.model_variant = variant;
            std::string dir = out_dir.empty() ? "out" : out_dir;
            append_run_log(dir, argc, argv);
            pyrocc::commands::run_train(cfg, seed, dir, checkpoint);
        } else if (evaluate->parsed()) {
            std::string dir = out_dir.empty() ? "out" : out_dir;
            append_run_log(dir, argc, argv);
            pyrocc::commands::run_evaluate(cfg, checkpoint, split, dir);
        } else if (predict->parsed()) {
            std::string dir = out_dir.empty() ? "out" : out_dir;
            append_run_log(dir, argc, argv);
            pyrocc::commands::run_predict(checkpoint, cfg, split, sample_index, dir);
        } else if (fuse->parsed()) {
            std::string dir = out_dir.empty() ? "out" : out_dir;
            append_run_log(dir, argc, argv);
            if (scene_id < 0) {
                pyrocc::io::DiskDataset val(cfg.data_dir, "val");
                pyrocc::check(val.size() > 0, "fuse: no val scenes; pass --scene");
                scene_id = val.entries().front().scene_id;
            }
            pyrocc::commands::run_fuse(checkpoint, cfg, scene_id, static_only, dir);
        } else if (plot->parsed()) {
            std::string dir = out_dir.empty() ? "out" : out_dir;
            append_run_log(dir, argc, argv);
            pyrocc::commands::run_plot_pr(report_files, dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
