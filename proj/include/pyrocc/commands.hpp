#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <thread>

#include "pyrocc/config.hpp"
#include "pyrocc/eval.hpp"
#include "pyrocc/image.hpp"
#include "pyrocc/io.hpp"
#include "pyrocc/losses.hpp"
#include "pyrocc/network.hpp"
#include "pyrocc/occupancy.hpp"

namespace pyrocc::commands {

namespace fs = std::filesystem;

inline Tensor<float> to_float_image(const Tensor<std::uint8_t>& img) {
    Tensor<float> out(img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(img[i]) / 255.0f;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_network(const std::string& path, OccupancyNetwork<float>& net,
                         const RunConfig& cfg, std::uint64_t step,
                         const std::vector<Tensor<float>>* velocity = nullptr) {
    std::vector<io::NamedTensor> tensors;
    auto params = net.params();
    for (const auto& p : params) tensors.push_back({p.name, *p.value});
    if (velocity) {
        check(velocity->size() == params.size(), "save_network: velocity list mismatch");
        for (std::size_t i = 0; i < params.size(); ++i)
            tensors.push_back({"momentum." + params[i].name, (*velocity)[i]});
    }
    io::write_checkpoint(path, cfg.serialize(), step, tensors);
}

struct LoadedModel {
    RunConfig config;
    OccupancyNetwork<float> net;
    std::uint64_t step = 0;
    std::vector<Tensor<float>> velocity;  // empty if the checkpoint had none
};

inline LoadedModel load_model(const std::string& path) {
    io::Checkpoint ck = io::read_checkpoint(path);
    LoadedModel m;
    m.config = RunConfig::parse(ck.config_text);
    m.step = ck.step;
    m.net = OccupancyNetwork<float>(m.config.network());
    std::map<std::string, const io::NamedTensor*> by_name;
    for (const auto& t : ck.tensors) by_name[t.name] = &t;
    auto params = m.net.params();
    for (const auto& p : params) {
        auto it = by_name.find(p.name);
        check(it != by_name.end(), "checkpoint: missing tensor " + p.name);
        check(it->second->value.shape() == p.value->shape(),
              "checkpoint: shape mismatch for " + p.name);
        *p.value = it->second->value;
    }
    bool have_momentum = by_name.count("momentum." + params[0].name) > 0;
    if (have_momentum) {
        for (const auto& p : params) {
            auto it = by_name.find("momentum." + p.name);
            check(it != by_name.end(), "checkpoint: missing momentum for " + p.name);
            m.velocity.push_back(it->second->value);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Dataset helpers
// ---------------------------------------------------------------------------

inline std::vector<Sample> load_all(const io::SampleSource& source) {
    std::vector<Sample> samples;
    samples.reserve(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) samples.push_back(source.load(i));
    return samples;
}

/// Per-class dataset-level IoU of a model over a set of samples.
inline std::vector<double> dataset_iou(OccupancyNetwork<float>& net,
                                       const std::vector<Sample>& samples, unsigned threads = 0) {
    std::size_t n_classes = samples.empty() ? 0 : samples[0].class_names.size();
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, 2u * static_cast<unsigned>(samples.size()) + 1u);
    std::vector<std::vector<ClassCounts>> partial(threads,
                                                  std::vector<ClassCounts>(n_classes));
    std::vector<OccupancyNetwork<float>> replicas(threads, net);
    std::size_t chunk = (samples.size() + threads - 1) / threads;
    parallel_for(
        threads,
        [&](std::size_t t) {
            for (std::size_t i = t * chunk; i < std::min(samples.size(), (t + 1) * chunk); ++i) {
                const Sample& s = samples[i];
                Tensor<float> logits = replicas[t].forward(to_float_image(s.image), s.camera);
                std::size_t plane = s.visibility.size();
                for (std::size_t c = 0; c < n_classes; ++c)
                    for (std::size_t j = 0; j < plane; ++j) {
                        if (!s.visibility[j]) continue;
                        bool pred = logits[c * plane + j] > 0.0f;  // p > 0.5
                        bool target = s.labels[c * plane + j] != 0;
                        if (pred && target)
                            ++partial[t][c].tp;
                        else if (pred)
                            ++partial[t][c].fp;
                        else if (target)
                            ++partial[t][c].fn;
                    }
            }
        },
        threads);
    std::vector<ClassCounts> total(n_classes);
    for (const auto& p : partial)
        for (std::size_t c = 0; c < n_classes; ++c) total[c] += p[c];
    std::vector<double> out;
    for (const auto& c : total) out.push_back(c.iou());
    return out;
}

// ---------------------------------------------------------------------------
// generate-data
// ---------------------------------------------------------------------------

inline std::vector<double> run_generate_data(const RunConfig& cfg, std::uint64_t seed,
                                             const std::string& out_dir,
                                             std::ostream& log = std::cout) {
    std::string dir = out_dir.empty() ? cfg.data_dir : out_dir;
    auto freqs =
        io::build_dataset(seed, cfg.data_scenes, cfg.data_val_scenes, cfg.datagen(), dir);
    log << "dataset written to " << dir << " (" << cfg.data_scenes << " scenes, "
        << cfg.data_frames_per_scene << " frame(s) each)\n";
    log << "train-split class frequencies:\n";
    for (std::size_t c = 0; c < cfg.data_classes.size(); ++c)
        log << "  " << cfg.data_classes[c] << " " << freqs[c] << "\n";
    return freqs;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutcome {
    std::uint64_t steps_done = 0;
    double last_loss = 0.0;
    std::vector<double> last_period_iou;  // per class, from training batches
    std::string checkpoint_path;
};

/// Called once per log period; returning false stops training early.
using TrainMonitor =
    std::function<bool(std::uint64_t step, double loss, const std::vector<double>& period_iou)>;

inline TrainOutcome run_train(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir,
                              const std::string& resume = "", std::ostream& log = std::cout,
                              const TrainMonitor& monitor = {}) {
    fs::create_directories(out_dir);
    io::DiskDataset dataset(cfg.data_dir, "train");
    check(dataset.size() > 0, "train: dataset has no training samples");
    check(dataset.classes() == cfg.data_classes,
          "train: dataset classes do not match the configured class list");
    std::vector<Sample> samples = load_all(dataset);

    std::vector<double> freqs = io::read_frequencies(
        (fs::path(cfg.data_dir) / "frequencies.txt").string(), cfg.data_classes);
    ClassWeights weights = class_weights(freqs);

    OccupancyNetwork<float> net(cfg.network());
    std::vector<Tensor<float>> init_velocity;
    std::uint64_t start_step = 0;
    if (!resume.empty()) {
        LoadedModel m = load_model(resume);
        check(m.config.network() == cfg.network(), "train: resume checkpoint architecture differs");
        net = std::move(m.net);
        init_velocity = std::move(m.velocity);
        start_step = m.step;
    } else {
        net.init(seed);
    }

    nn::SgdOptimizer<float> opt(cfg.train_lr, cfg.train_momentum);
    auto master_params = net.params();
    if (!init_velocity.empty()) opt.velocity() = std::move(init_velocity);

    unsigned threads = cfg.train_threads > 0 ? static_cast<unsigned>(cfg.train_threads)
                                             : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(cfg.train_batch));
    std::vector<OccupancyNetwork<float>> replicas(threads, net);
    std::vector<nn::ParamList<float>> replica_params;
    for (auto& r : replicas) replica_params.push_back(r.params());

    auto diag = cfg.schedule();
    log << "training variant " << cfg.model_variant << " on " << samples.size()
        << " samples, batch " << cfg.train_batch << ", lr " << cfg.train_lr << "\n";
    for (const auto& lvl : diag.levels)
        log << "  level " << lvl.k << ": stride " << lvl.stride << ", band >= " << lvl.z_near
            << " m, sampling interval at band near edge "
            << sampling_interval(cfg.focal(), cfg.grid_resolution * 2, lvl.stride,
                                 std::max(lvl.z_near, 1e-9))
            << " px\n";

    TrainOutcome outcome;
    double period_loss = 0.0;
    std::size_t period_items = 0;
    std::vector<ClassCounts> period_counts(cfg.data_classes.size());
    std::vector<std::vector<ClassCounts>> thread_counts(
        threads, std::vector<ClassCounts>(cfg.data_classes.size()));
    std::vector<double> batch_losses(cfg.train_batch);

    std::uint64_t total_steps = static_cast<std::uint64_t>(cfg.train_steps);
    std::uint64_t step = start_step;
    for (; step < total_steps; ++step) {
        // Per-step draw keyed by (seed, step) so resumed runs continue the
        // identical sample sequence.
        auto rng = make_rng(seed, 7000 + step);
        std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
        std::vector<std::size_t> batch(cfg.train_batch);
        for (auto& b : batch) b = pick(rng);

        for (unsigned t = 0; t < threads; ++t)
            for (std::size_t i = 0; i < master_params.size(); ++i)
                *replica_params[t][i].value = *master_params[i].value;

        std::size_t per = (batch.size() + threads - 1) / threads;
        parallel_for(
            threads,
            [&](std::size_t t) {
                replicas[t].zero_grad();
                for (std::size_t i = t * per; i < std::min(batch.size(), (t + 1) * per); ++i) {
                    const Sample& s = samples[batch[i]];
                    Tensor<float> logits =
                        replicas[t].forward(to_float_image(s.image), s.camera);
                    batch_losses[i] = total_loss(logits, s.labels, weights.alpha, s.visibility,
                                                 cfg.train_lambda);
                    Tensor<float> grad = total_loss_grad(logits, s.labels, weights.alpha,
                                                         s.visibility, cfg.train_lambda);
                    grad *= static_cast<float>(1.0 / batch.size());
                    replicas[t].backward(grad);
                    std::size_t plane = s.visibility.size();
                    for (std::size_t c = 0; c < cfg.data_classes.size(); ++c)
                        for (std::size_t j = 0; j < plane; ++j) {
                            if (!s.visibility[j]) continue;
                            bool pred = logits[c * plane + j] > 0.0f;
                            bool target = s.labels[c * plane + j] != 0;
                            if (pred && target)
                                ++thread_counts[t][c].tp;
                            else if (pred)
                                ++thread_counts[t][c].fp;
                            else if (target)
                                ++thread_counts[t][c].fn;
                        }
                }
            },
            threads);
        for (auto& tc : thread_counts)
            for (std::size_t c = 0; c < tc.size(); ++c) {
                period_counts[c] += tc[c];
                tc[c] = ClassCounts{};
            }

        double step_loss = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) step_loss += batch_losses[i];
        step_loss /= static_cast<double>(batch.size());
        if (!std::isfinite(step_loss)) {
            std::ostringstream msg;
            msg << "training diverged: non-finite loss at step " << step + 1 << " (lr "
                << cfg.train_lr << ", batch " << cfg.train_batch << ")";
            throw std::runtime_error(msg.str());
        }
        period_loss += step_loss;
        ++period_items;

        for (std::size_t i = 0; i < master_params.size(); ++i) {
            master_params[i].grad->zero();
            for (unsigned t = 0; t < threads; ++t)
                *master_params[i].grad += *replica_params[t][i].grad;
        }
        opt.step(master_params);

        bool last = step + 1 == total_steps;
        if ((step + 1) % static_cast<std::uint64_t>(cfg.train_log_every) == 0 || last) {
            std::vector<double> iou;
            for (const auto& c : period_counts) iou.push_back(c.iou());
            double epoch = static_cast<double>((step + 1) * batch.size()) /
                           static_cast<double>(samples.size());
            log << "step " << step + 1 << " (epoch " << epoch << ") loss "
                << period_loss / period_items << " train IoU [";
            for (std::size_t c = 0; c < iou.size(); ++c)
                log << (c ? " " : "") << cfg.data_classes[c] << "=" << iou[c];
            log << "]" << std::endl;
            outcome.last_loss = period_loss / period_items;
            outcome.last_period_iou = iou;
            period_loss = 0.0;
            period_items = 0;
            std::fill(period_counts.begin(), period_counts.end(), ClassCounts{});
            if (monitor && !monitor(step + 1, outcome.last_loss, iou)) {
                ++step;
                break;
            }
        }
        if (cfg.train_checkpoint_every > 0 &&
            (step + 1) % static_cast<std::uint64_t>(cfg.train_checkpoint_every) == 0 && !last) {
            std::string path =
                (fs::path(out_dir) / ("checkpoint_step" + std::to_string(step + 1) + ".pyro"))
                    .string();
            save_network(path, net, cfg, step + 1, &opt.velocity());
        }
    }

    outcome.steps_done = step;
    outcome.checkpoint_path = (fs::path(out_dir) / "checkpoint.pyro").string();
    save_network(outcome.checkpoint_path, net, cfg, step, &opt.velocity());
    log << "checkpoint written to " << outcome.checkpoint_path << std::endl;
    return outcome;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

inline EvalReport run_evaluate(const RunConfig& run_cfg, const std::string& checkpoint,
                               const std::string& split, const std::string& out_dir,
                               std::ostream& log = std::cout) {
    LoadedModel m = load_model(checkpoint);
    io::DiskDataset dataset(run_cfg.data_dir, split);
    check(dataset.size() > 0, "evaluate: no samples in split " + split);
    check(dataset.classes() == m.config.data_classes,
          "evaluate: dataset classes do not match the checkpoint");
    std::vector<Sample> samples = load_all(dataset);

    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(samples.size()));
    std::vector<OccupancyNetwork<float>> replicas(threads, m.net);
    std::vector<Evaluator> partial(threads,
                                   Evaluator(m.config.data_classes, run_cfg.eval_threshold_step));
    std::size_t chunk = (samples.size() + threads - 1) / threads;
    parallel_for(
        threads,
        [&](std::size_t t) {
            for (std::size_t i = t * chunk; i < std::min(samples.size(), (t + 1) * chunk); ++i) {
                const Sample& s = samples[i];
                Tensor<float> logits = replicas[t].forward(to_float_image(s.image), s.camera);
                Tensor<double> probs(logits.shape());
                for (std::size_t j = 0; j < probs.size(); ++j)
                    probs[j] = sigmoid(static_cast<double>(logits[j]));
                partial[t].add(probs, s.labels, s.visibility);
            }
        },
        threads);
    for (unsigned t = 1; t < threads; ++t) partial[0].merge(partial[t]);
    EvalReport report = partial[0].report("subset", run_cfg.eval_subset);

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream csv(fs::path(out_dir) / "eval_report.csv");
        csv << report_csv(report);
        std::ofstream summary(fs::path(out_dir) / "summary.txt");
        summary << report_summary(report);
        for (std::size_t c = 0; c < report.classes.size(); ++c) {
            if (report.counts[c].tp + report.counts[c].fn == 0) {
                log << "warning: class " << report.classes[c]
                    << " has no positive ground truth; PR curve omitted\n";
                continue;
            }
            std::ofstream pr(fs::path(out_dir) / ("pr_" + report.classes[c] + ".csv"));
            pr << pr_csv(report.pr[c]);
        }
    }
    log << report_summary(report);
    return report;
}

// ---------------------------------------------------------------------------
// predict and fuse
// ---------------------------------------------------------------------------

inline Rgb class_display_color(const std::string& name) {
    return scene_class_color(scene_class_index(name));
}

/// Fig-style map rendering: per cell, the highest-index class whose fused
/// probability exceeds 0.5; near rows at the bottom.
inline Image8 render_occupancy(const OccupancyGrid& grid,
                               const std::vector<Pose2>& trajectory = {}) {
    int Z = grid.spec.depth_cells(), X = grid.spec.width_cells();
    Image8 img(X, Z, {24, 24, 24});
    for (int r = 0; r < Z; ++r) {
        for (int c = 0; c < X; ++c) {
            int best = -1;
            for (std::size_t k = 0; k < grid.num_classes(); ++k)
                if (sigmoid(grid.logodds(k, r, c)) > 0.5) best = static_cast<int>(k);
            if (best >= 0)
                img.set(c, Z - 1 - r, class_display_color(grid.class_names[best]));
        }
    }
    Pose2 world_to_grid = grid.frame.inverse();
    for (std::size_t i = 0; i + 1 < trajectory.size(); ++i) {
        Vec2 a = world_to_grid.apply({trajectory[i].tx, trajectory[i].tz});
        Vec2 b = world_to_grid.apply({trajectory[i + 1].tx, trajectory[i + 1].tz});
        draw_line(img, static_cast<int>(grid.spec.col_of(a.x) + 0.5),
                  Z - 1 - static_cast<int>(grid.spec.row_of(a.z) + 0.5),
                  static_cast<int>(grid.spec.col_of(b.x) + 0.5),
                  Z - 1 - static_cast<int>(grid.spec.row_of(b.z) + 0.5), {255, 255, 255});
    }
    return img;
}

inline OccupancyGrid prediction_grid(const Tensor<float>& logits, const Sample& s) {
    OccupancyGrid g;
    g.spec = s.grid;
    g.frame = s.camera.pose;
    g.class_names = s.class_names;
    g.prior.assign(s.class_names.size(), 0.0);  // p0 = 0.5
    g.logodds = logits.cast<double>();
    return g;
}

inline OccupancyGrid run_predict(const std::string& checkpoint, const RunConfig& run_cfg,
                                 const std::string& split, int index, const std::string& out_dir,
                                 std::ostream& log = std::cout) {
    LoadedModel m = load_model(checkpoint);
    io::DiskDataset dataset(run_cfg.data_dir, split);
    check(index >= 0 && static_cast<std::size_t>(index) < dataset.size(),
          "predict: sample index out of range");
    Sample s = dataset.load(static_cast<std::size_t>(index));
    Tensor<float> logits = m.net.forward(to_float_image(s.image), s.camera);
    OccupancyGrid grid = prediction_grid(logits, s);
    clamp_evidence(grid);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        io::write_grid((fs::path(out_dir) / "prediction.ogrid").string(), grid);
        write_bmp((fs::path(out_dir) / "prediction.bmp").string(), render_occupancy(grid));
        write_bmp((fs::path(out_dir) / "input.bmp").string(), tensor_to_image(s.image));
        log << "prediction written to " << out_dir << "\n";
    }
    return grid;
}

struct FuseOutcome {
    OccupancyGrid world;
    std::vector<CameraPrediction> frames;  // per-timestep single-camera predictions
    std::vector<Pose2> trajectory;
};

inline GridSpec world_grid_spec(const RunConfig& cfg) {
    double half = cfg.fuse_world_extent / 2.0;
    return GridSpec{-half, half, half, cfg.fuse_world_resolution};
}

inline FuseOutcome run_fuse(const std::string& checkpoint, const RunConfig& run_cfg, int scene_id,
                            bool static_only, const std::string& out_dir,
                            std::ostream& log = std::cout) {
    LoadedModel m = load_model(checkpoint);
    io::DiskDataset dataset(run_cfg.data_dir, "all");
    std::vector<std::size_t> frame_index;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (dataset.entries()[i].scene_id == scene_id) frame_index.push_back(i);
    check(!frame_index.empty(), "fuse: scene not found in dataset");
    std::sort(frame_index.begin(), frame_index.end(), [&](std::size_t a, std::size_t b) {
        return dataset.entries()[a].frame_id < dataset.entries()[b].frame_id;
    });
    for (std::size_t i = 0; i < frame_index.size(); ++i)
        check(dataset.entries()[frame_index[i]].frame_id == static_cast<int>(i),
              "fuse: pose gap in sequence (missing frame)");

    FuseOutcome out;
    for (std::size_t i : frame_index) {
        Sample s = dataset.load(i);
        CameraPrediction pred;
        pred.camera = s.camera;
        pred.logits = m.net.forward(to_float_image(s.image), s.camera);
        out.frames.push_back(std::move(pred));
        out.trajectory.push_back(s.camera.pose);
    }

    std::vector<std::size_t> static_indices;
    if (static_only) {
        for (const auto& name : run_cfg.fuse_static_classes)
            for (std::size_t c = 0; c < m.config.data_classes.size(); ++c)
                if (m.config.data_classes[c] == name) static_indices.push_back(c);
        check(!static_indices.empty(), "fuse: no configured static class is in the model");
    }

    std::vector<std::vector<CameraPrediction>> timesteps;
    for (const auto& f : out.frames) timesteps.push_back({f});
    GridSpec world_spec = world_grid_spec(run_cfg);
    Pose2 world_frame = default_world_frame(out.frames.front().camera.pose);
    std::vector<double> priors(m.config.data_classes.size(), run_cfg.fuse_prior);
    out.world = accumulate_temporal(timesteps, m.config.grid(), world_spec, world_frame,
                                    m.config.data_classes, priors, static_indices);

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        io::write_grid((fs::path(out_dir) / "world.ogrid").string(), out.world);
        write_bmp((fs::path(out_dir) / "world.bmp").string(),
                  render_occupancy(out.world, out.trajectory));
        log << "fused " << out.frames.size() << " frames of scene " << scene_id << " into "
            << out_dir << "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// plot-pr
// ---------------------------------------------------------------------------

inline int run_plot_pr(const std::vector<std::string>& report_files, const std::string& out_dir,
                       std::ostream& log = std::cout) {
    fs::create_directories(out_dir);
    int rendered = 0;
    for (const auto& file : report_files) {
        std::ifstream in(file);
        if (!in) throw std::runtime_error("plot-pr: cannot open " + file);
        std::ostringstream buf;
        buf << in.rdbuf();
        std::vector<PRPoint> curve = pr_from_csv(buf.str());
        if (curve.size() < 2) {
            log << "warning: " << file << " has no usable curve; skipped\n";
            continue;
        }
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : curve) pts.emplace_back(p.recall, p.precision);
        Image8 img = render_pr_plot(pts);
        std::string stem = fs::path(file).stem().string();
        write_bmp((fs::path(out_dir) / (stem + ".bmp")).string(), img);
        ++rendered;
    }
    return rendered;
}

}  // namespace pyrocc::commands
