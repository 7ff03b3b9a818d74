#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "pyrocc/datagen.hpp"
#include "pyrocc/geometry.hpp"
#include "pyrocc/io.hpp"
#include "pyrocc/network.hpp"

namespace pyrocc {

/// Every run parameter, serializable as line-based "section.key = value"
/// text. Defaults complete an end-to-end run at desk scale; the published
/// training settings (lr 0.1, momentum 0.9) are the defaults, with the batch
/// size reduced from 12 to 4.
struct RunConfig {
    // data
    std::string data_dir = "dataset";
    int data_scenes = 40;
    int data_val_scenes = 8;
    int data_frames_per_scene = 1;
    int data_image_size = 256;
    std::vector<std::string> data_classes = {"drivable", "crossing", "walkway",
                                             "carpark",  "vehicle",  "pedestrian"};
    int data_max_vehicles = 8;
    int data_max_pedestrians = 4;
    int data_ray_count = 720;

    // camera
    double camera_focal = 0.0;  // pixels; 0 = image width (53 deg FoV)
    double camera_height = 1.5;

    // grid
    double grid_z_min = 1.0;
    double grid_z_max = 50.0;
    double grid_x_half = 25.0;
    double grid_resolution = 0.25;

    // model
    std::string model_variant = "DPT";
    std::vector<int> model_stem_widths = {16, 24};
    std::vector<int> model_backbone_widths = {32, 64, 96, 128, 128};
    int model_fpn_channels = 48;
    int model_bev_channels = 48;
    int model_bottleneck = 0;
    int model_conv_kernel = 3;
    int model_topdown_channels = 16;
    int model_topdown_blocks = 8;
    int model_upsample_block = 5;
    int model_norm_groups = 8;
    std::string model_schedule = "table1";  // or "eq9"
    double model_y_min = -1.0;
    double model_y_max = 3.0;

    // train
    int train_steps = 2000;
    int train_batch = 4;
    double train_lr = 0.1;
    double train_momentum = 0.9;
    double train_lambda = 0.001;
    int train_checkpoint_every = 500;
    int train_log_every = 50;
    int train_threads = 0;  // 0 = hardware concurrency

    // eval
    double eval_threshold_step = 0.02;
    std::vector<std::string> eval_subset = {"drivable", "crossing", "walkway", "carpark"};

    // fuse
    double fuse_world_extent = 100.0;
    double fuse_world_resolution = 0.25;
    double fuse_prior = 0.5;
    std::vector<std::string> fuse_static_classes = {"drivable", "crossing", "walkway", "carpark"};

    bool operator==(const RunConfig&) const = default;

    double focal() const { return camera_focal > 0.0 ? camera_focal : data_image_size; }

    GridSpec grid() const { return GridSpec{grid_z_min, grid_z_max, grid_x_half, grid_resolution}; }

    DatagenConfig datagen() const {
        DatagenConfig cfg;
        cfg.image_width = data_image_size;
        cfg.image_height = data_image_size;
        cfg.focal = focal();
        cfg.camera_height = camera_height;
        cfg.grid = grid();
        cfg.classes = data_classes;
        cfg.frames_per_scene = data_frames_per_scene;
        cfg.max_vehicles = data_max_vehicles;
        cfg.max_pedestrians = data_max_pedestrians;
        cfg.ray_count = data_ray_count;
        return cfg;
    }

    PyramidSchedule schedule() const {
        GridSpec fgrid = grid().at_resolution(grid_resolution * 2.0);
        if (model_schedule == "table1") return PyramidSchedule::table1(model_y_min, model_y_max);
        if (model_schedule == "eq9")
            return PyramidSchedule::from_focal(focal(), fgrid.resolution, fgrid, model_y_min,
                                               model_y_max);
        throw std::invalid_argument("unknown schedule mode: " + model_schedule);
    }

    NetworkConfig network() const {
        NetworkConfig cfg;
        cfg.variant = parse_variant(model_variant);
        cfg.stem_widths = model_stem_widths;
        cfg.backbone_widths = model_backbone_widths;
        cfg.fpn_channels = model_fpn_channels;
        cfg.bev_channels = model_bev_channels;
        cfg.bottleneck = model_bottleneck;
        cfg.conv_kernel = model_conv_kernel;
        cfg.topdown_channels = model_topdown_channels;
        cfg.topdown_blocks = model_topdown_blocks;
        cfg.upsample_block = model_upsample_block;
        cfg.norm_groups = model_norm_groups;
        cfg.num_classes = static_cast<int>(data_classes.size());
        cfg.image_width = data_image_size;
        cfg.image_height = data_image_size;
        cfg.focal = focal();
        cfg.grid = grid();
        cfg.schedule = schedule();
        return cfg;
    }

    std::string serialize() const;
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);

private:
    template <typename Self, typename F>
    static void visit(Self& self, F&& f) {
        f("data.dir", self.data_dir);
        f("data.scenes", self.data_scenes);
        f("data.val_scenes", self.data_val_scenes);
        f("data.frames_per_scene", self.data_frames_per_scene);
        f("data.image_size", self.data_image_size);
        f("data.classes", self.data_classes);
        f("data.max_vehicles", self.data_max_vehicles);
        f("data.max_pedestrians", self.data_max_pedestrians);
        f("data.ray_count", self.data_ray_count);
        f("camera.focal", self.camera_focal);
        f("camera.height", self.camera_height);
        f("grid.z_min", self.grid_z_min);
        f("grid.z_max", self.grid_z_max);
        f("grid.x_half", self.grid_x_half);
        f("grid.resolution", self.grid_resolution);
        f("model.variant", self.model_variant);
        f("model.stem_widths", self.model_stem_widths);
        f("model.backbone_widths", self.model_backbone_widths);
        f("model.fpn_channels", self.model_fpn_channels);
        f("model.bev_channels", self.model_bev_channels);
        f("model.bottleneck", self.model_bottleneck);
        f("model.conv_kernel", self.model_conv_kernel);
        f("model.topdown_channels", self.model_topdown_channels);
        f("model.topdown_blocks", self.model_topdown_blocks);
        f("model.upsample_block", self.model_upsample_block);
        f("model.norm_groups", self.model_norm_groups);
        f("model.schedule", self.model_schedule);
        f("model.y_min", self.model_y_min);
        f("model.y_max", self.model_y_max);
        f("train.steps", self.train_steps);
        f("train.batch", self.train_batch);
        f("train.lr", self.train_lr);
        f("train.momentum", self.train_momentum);
        f("train.lambda", self.train_lambda);
        f("train.checkpoint_every", self.train_checkpoint_every);
        f("train.log_every", self.train_log_every);
        f("train.threads", self.train_threads);
        f("eval.threshold_step", self.eval_threshold_step);
        f("eval.subset", self.eval_subset);
        f("fuse.world_extent", self.fuse_world_extent);
        f("fuse.world_resolution", self.fuse_world_resolution);
        f("fuse.prior", self.fuse_prior);
        f("fuse.static_classes", self.fuse_static_classes);
    }
};

namespace detail {

inline std::string field_to_string(const std::string& v) { return v; }
inline std::string field_to_string(int v) { return std::to_string(v); }
inline std::string field_to_string(double v) { return io::format_double(v); }
inline std::string field_to_string(const std::vector<std::string>& v) { return io::join_csv(v); }
inline std::string field_to_string(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

inline void field_from_string(const std::string& s, std::string& v) { v = s; }
inline void field_from_string(const std::string& s, int& v) { v = std::stoi(s); }
inline void field_from_string(const std::string& s, double& v) { v = std::stod(s); }
inline void field_from_string(const std::string& s, std::vector<std::string>& v) {
    v = io::split_csv(s);
}
inline void field_from_string(const std::string& s, std::vector<int>& v) {
    v.clear();
    for (const auto& item : io::split_csv(s)) v.push_back(std::stoi(item));
}

}  // namespace detail

inline std::string RunConfig::serialize() const {
    std::ostringstream out;
    visit(*this, [&out](const char* key, const auto& field) {
        out << key << " = " << detail::field_to_string(field) << "\n";
    });
    return out.str();
}

inline RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    auto kv = io::parse_kv(text);
    for (const auto& [key, value] : kv) {
        bool matched = false;
        visit(cfg, [&](const char* name, auto& field) {
            if (key == name) {
                detail::field_from_string(value, field);
                matched = true;
            }
        });
        check(matched, "RunConfig: unknown key: " + key);
    }
    return cfg;
}

inline RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("RunConfig: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

}  // namespace pyrocc
