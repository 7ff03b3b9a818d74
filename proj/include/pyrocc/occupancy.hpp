#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pyrocc/geometry.hpp"
#include "pyrocc/tensor.hpp"

namespace pyrocc {

inline double sigmoid(double l) {
    if (l >= 0.0) return 1.0 / (1.0 + std::exp(-l));
    double e = std::exp(l);
    return e / (1.0 + e);
}

/// log(p / (1-p)). Inverse of sigmoid on (0, 1).
inline double to_logodds(double p) {
    check_domain(p > 0.0 && p < 1.0, "to_logodds: probability must lie strictly in (0, 1)");
    return std::log(p / (1.0 - p));
}

/// Prior log-odds l0 for a class with prior occupancy probability p0.
inline double prior_logodds(double p0) { return to_logodds(p0); }

/// Evidence magnitude cap applied after each fusion step so arbitrarily long
/// accumulations stay finite.
inline constexpr double kLogOddsClamp = 50.0;

/// Per-class, per-cell log-odds on a metric BEV lattice with a declared
/// frame. The unit of fusion and evaluation. Values are kept in double so
/// fusion algebra holds to tight tolerances; the on-disk dump narrows to
/// float32.
struct OccupancyGrid {
    GridSpec spec;
    Pose2 frame;
    std::vector<std::string> class_names;
    std::vector<double> prior;  // per-class prior log-odds l0
    Tensor<double> logodds;     // C x depth_cells x width_cells

    std::size_t num_classes() const { return class_names.size(); }

    static OccupancyGrid prior_grid(const GridSpec& spec, const Pose2& frame,
                                    std::vector<std::string> classes,
                                    const std::vector<double>& prior_probs) {
        check(classes.size() == prior_probs.size(), "prior_grid: class/prior count mismatch");
        OccupancyGrid g;
        g.spec = spec;
        g.frame = frame;
        g.class_names = std::move(classes);
        g.prior.reserve(prior_probs.size());
        for (double p : prior_probs) g.prior.push_back(prior_logodds(p));
        g.logodds = Tensor<double>({g.class_names.size(), static_cast<std::size_t>(spec.depth_cells()),
                                    static_cast<std::size_t>(spec.width_cells())});
        for (std::size_t c = 0; c < g.class_names.size(); ++c)
            for (std::size_t i = 0; i < g.logodds.dim(1) * g.logodds.dim(2); ++i)
                g.logodds[c * g.logodds.dim(1) * g.logodds.dim(2) + i] = g.prior[c];
        return g;
    }
};

inline void check_compatible(const OccupancyGrid& a, const OccupancyGrid& b, const char* op) {
    check(a.spec == b.spec, std::string(op) + ": grid specs differ");
    check(a.frame == b.frame, std::string(op) + ": grid frames differ (resample first)");
    check(a.class_names == b.class_names, std::string(op) + ": class lists differ");
    check(a.prior == b.prior, std::string(op) + ": priors differ");
}

/// Folds one observation into the running estimate:
/// l_{1:t} = l_{1:t-1} + l_t - l0. Written as obs + (acc - l0) so fusing an
/// observation into a fresh prior grid returns the observation bit-exactly.
/// The update itself is exact (commutative and associative up to FP
/// reassociation); the fusion drivers cap the result once at the end with
/// clamp_evidence(), which keeps long accumulations bounded without making
/// the outcome depend on observation order.
inline OccupancyGrid fuse(const OccupancyGrid& accumulated, const OccupancyGrid& observation) {
    check_compatible(accumulated, observation, "fuse");
    OccupancyGrid out = observation;
    std::size_t plane = out.logodds.dim(1) * out.logodds.dim(2);
    for (std::size_t c = 0; c < out.num_classes(); ++c) {
        double l0 = out.prior[c];
        for (std::size_t i = 0; i < plane; ++i) {
            std::size_t k = c * plane + i;
            out.logodds[k] = observation.logodds[k] + (accumulated.logodds[k] - l0);
        }
    }
    return out;
}

/// Caps accumulated log-odds to +-kLogOddsClamp.
inline void clamp_evidence(OccupancyGrid& grid, double limit = kLogOddsClamp) {
    for (std::size_t i = 0; i < grid.logodds.size(); ++i)
        grid.logodds[i] = std::clamp(grid.logodds[i], -limit, limit);
}

/// Per-class occupancy probabilities, sigmoid of the log-odds.
inline Tensor<double> to_probabilities(const OccupancyGrid& grid) {
    Tensor<double> out(grid.logodds.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(grid.logodds[i]);
    return out;
}

/// Resamples a grid into target_frame on the same lattice spec. Cells with no
/// source coverage take the prior log-odds, contributing zero evidence to any
/// later fusion.
inline OccupancyGrid transform_grid(const OccupancyGrid& grid, const Pose2& target_frame) {
    OccupancyGrid out = grid;
    out.frame = target_frame;
    out.logodds =
        resample_planar(grid.logodds, grid.spec, grid.frame, grid.spec, target_frame, grid.prior);
    return out;
}

/// Resamples a grid onto a different lattice (spec + frame).
inline OccupancyGrid resample_grid(const OccupancyGrid& grid, const GridSpec& target_spec,
                                   const Pose2& target_frame) {
    OccupancyGrid out;
    out.spec = target_spec;
    out.frame = target_frame;
    out.class_names = grid.class_names;
    out.prior = grid.prior;
    out.logodds =
        resample_planar(grid.logodds, grid.spec, grid.frame, target_spec, target_frame, grid.prior);
    return out;
}

/// One camera's prediction: per-class logits on the camera-frame output grid,
/// consumed directly as log-odds.
struct CameraPrediction {
    Tensor<float> logits;  // C x depth x width on `spec`
    CameraModel camera;
};

/// World grid frame used by the fusion commands: axis-aligned, centered on
/// the first ego position.
inline Pose2 default_world_frame(const Pose2& first_pose) {
    return Pose2{0.0, first_pose.tx, first_pose.tz};
}

/// Fuses per-camera logit grids into one world-frame grid. Each prediction is
/// treated as log-odds in its camera frame, resampled into the world lattice,
/// and folded in with fuse(); cells outside every camera's coverage remain at
/// the prior.
inline OccupancyGrid fuse_cameras(std::span<const CameraPrediction> predictions,
                                  const GridSpec& camera_spec, const GridSpec& world_spec,
                                  const Pose2& world_frame,
                                  const std::vector<std::string>& class_names,
                                  const std::vector<double>& prior_probs) {
    OccupancyGrid world = OccupancyGrid::prior_grid(world_spec, world_frame, class_names, prior_probs);
    for (const CameraPrediction& pred : predictions) {
        check(pred.logits.rank() == 3 && pred.logits.dim(0) == class_names.size(),
              "fuse_cameras: prediction class count mismatch");
        OccupancyGrid local;
        local.spec = camera_spec;
        local.frame = pred.camera.pose;
        local.class_names = class_names;
        local.prior = world.prior;
        local.logodds = pred.logits.cast<double>();
        world = fuse(world, resample_grid(local, world_spec, world_frame));
    }
    clamp_evidence(world);
    return world;
}

/// Left-fold of fuse_cameras over timesteps. When static_class_indices is
/// non-empty only those classes are accumulated (the output grid carries just
/// that subset, in the given order).
inline OccupancyGrid accumulate_temporal(
    std::span<const std::vector<CameraPrediction>> timesteps, const GridSpec& camera_spec,
    const GridSpec& world_spec, const Pose2& world_frame,
    const std::vector<std::string>& class_names, const std::vector<double>& prior_probs,
    const std::vector<std::size_t>& static_class_indices = {}) {
    std::vector<std::string> classes = class_names;
    std::vector<double> priors = prior_probs;
    if (!static_class_indices.empty()) {
        classes.clear();
        priors.clear();
        for (std::size_t idx : static_class_indices) {
            check(idx < class_names.size(), "accumulate_temporal: static class index out of range");
            classes.push_back(class_names[idx]);
            priors.push_back(prior_probs[idx]);
        }
    }
    OccupancyGrid world = OccupancyGrid::prior_grid(world_spec, world_frame, classes, priors);
    std::size_t plane =
        static_cast<std::size_t>(camera_spec.depth_cells()) * camera_spec.width_cells();
    for (const auto& frame : timesteps) {
        std::vector<CameraPrediction> selected;
        selected.reserve(frame.size());
        for (const CameraPrediction& pred : frame) {
            if (static_class_indices.empty()) {
                selected.push_back(pred);
                continue;
            }
            CameraPrediction sub;
            sub.camera = pred.camera;
            sub.logits = Tensor<float>({classes.size(), pred.logits.dim(1), pred.logits.dim(2)});
            for (std::size_t c = 0; c < static_class_indices.size(); ++c)
                for (std::size_t i = 0; i < plane; ++i)
                    sub.logits[c * plane + i] = pred.logits[static_class_indices[c] * plane + i];
            selected.push_back(std::move(sub));
        }
        world = fuse(world, fuse_cameras(selected, camera_spec, world_spec, world_frame, classes,
                                         priors));
    }
    clamp_evidence(world);
    return world;
}

}  // namespace pyrocc
