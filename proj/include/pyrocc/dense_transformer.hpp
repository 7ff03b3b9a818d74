#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pyrocc/geometry.hpp"
#include "pyrocc/nn.hpp"
#include "pyrocc/tensor.hpp"

namespace pyrocc {

struct DenseTransformerConfig {
    int in_channels = 0;   // C_in of the cropped image feature map
    int in_height = 0;     // cropped height H_k
    int width = 0;         // feature-map width W
    int bottleneck = 0;    // B
    int out_channels = 0;  // C_out of the BEV features
    int depth_bins = 0;    // Z: polar depth rows produced by this level
    int conv_kernel = 3;

    void validate() const {
        check(in_channels > 0 && in_height > 0 && width > 0 && bottleneck > 0 &&
                  out_channels > 0 && depth_bins > 0,
              "DenseTransformerConfig: all dimensions must be positive");
        check(bottleneck < in_channels * in_height,
              "DenseTransformerConfig: bottleneck must compress C_in * H_in");
        check(conv_kernel % 2 == 1, "DenseTransformerConfig: conv kernel must be odd");
    }

    /// (C_in*H_in + 1)*B collapse parameters plus (B*k + 1)*C_out*Z expand
    /// parameters.
    std::size_t param_count() const {
        return (static_cast<std::size_t>(in_channels) * in_height + 1) * bottleneck +
               (static_cast<std::size_t>(bottleneck) * conv_kernel + 1) *
                   static_cast<std::size_t>(out_channels) * depth_bins;
    }
};

/// Maps a cropped image feature map to a Cartesian BEV band: collapses each
/// feature column (all channels and rows at one image column) to a bottleneck
/// vector, expands along depth with a width-wise 1D convolution into a polar
/// C x Z x W map, and resamples the width axis to the BEV lattice.
template <typename T>
class DenseTransformer {
public:
    DenseTransformer() = default;

    explicit DenseTransformer(const DenseTransformerConfig& cfg)
        : cfg_(cfg),
          collapse_(cfg.in_channels * cfg.in_height, cfg.bottleneck),
          expand_(cfg.bottleneck, cfg.out_channels * cfg.depth_bins, cfg.conv_kernel) {
        cfg.validate();
    }

    const DenseTransformerConfig& config() const { return cfg_; }

    void init(std::mt19937_64& rng) {
        collapse_.init(rng);
        expand_.init(rng);
    }

    /// C_in x H_in x W -> B x W. Each width position is an independent affine
    /// map of its flattened column, shared across positions, followed by a
    /// rectification.
    Tensor<T> collapse_vertical(const Tensor<T>& features) {
        check(features.rank() == 3 && static_cast<int>(features.dim(0)) == cfg_.in_channels &&
                  static_cast<int>(features.dim(1)) == cfg_.in_height &&
                  static_cast<int>(features.dim(2)) == cfg_.width,
              "collapse_vertical: feature shape does not match config");
        Tensor<T> flat = flatten_columns(features);
        return act_.forward(collapse_.forward(flat));
    }

    Tensor<T> collapse_vertical_backward(const Tensor<T>& grad) {
        Tensor<T> gflat = collapse_.backward(act_.backward(grad));
        return unflatten_columns(gflat);
    }

    /// B x W -> C_out x Z x W. Width-wise same-padded 1D convolution whose
    /// C_out*Z output rows are reshaped channel-major:
    /// out[c, z, w] = conv_out[c*Z + z, w].
    Tensor<T> expand_depth(const Tensor<T>& bottleneck) {
        check(bottleneck.rank() == 2 && static_cast<int>(bottleneck.dim(0)) == cfg_.bottleneck &&
                  static_cast<int>(bottleneck.dim(1)) == cfg_.width,
              "expand_depth: bottleneck shape does not match config");
        Tensor<T> polar = expand_.forward(bottleneck);
        polar.reshape({static_cast<std::size_t>(cfg_.out_channels),
                       static_cast<std::size_t>(cfg_.depth_bins),
                       static_cast<std::size_t>(cfg_.width)});
        return polar;
    }

    Tensor<T> expand_depth_backward(Tensor<T> grad) {
        grad.reshape({static_cast<std::size_t>(cfg_.out_channels) * cfg_.depth_bins,
                      static_cast<std::size_t>(cfg_.width)});
        return expand_.backward(grad);
    }

    /// Full layer: collapse -> expand -> width resampling onto the BEV band.
    Tensor<T> forward(const Tensor<T>& features, const SamplingIndex& index) {
        check(index.width_polar == cfg_.width && index.rows == cfg_.depth_bins,
              "DenseTransformer: sampling index does not match config");
        Tensor<T> polar = expand_depth(collapse_vertical(features));
        return sample_width(polar, index);
    }

    Tensor<T> backward(const Tensor<T>& grad_bev, const SamplingIndex& index) {
        Tensor<T> gpolar = sample_width_backward(grad_bev, index);
        return collapse_vertical_backward(expand_depth_backward(std::move(gpolar)));
    }

    void collect(const std::string& prefix, nn::ParamList<T>& out) {
        collapse_.collect(prefix + ".collapse", out);
        expand_.collect(prefix + ".expand", out);
    }

    nn::Linear<T>& collapse_layer() { return collapse_; }
    nn::Conv1d<T>& expand_layer() { return expand_; }

private:
    Tensor<T> flatten_columns(const Tensor<T>& features) const {
        std::size_t C = features.dim(0), H = features.dim(1), W = features.dim(2);
        Tensor<T> flat({C * H, W});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w) flat(c * H + h, w) = features(c, h, w);
        return flat;
    }

    Tensor<T> unflatten_columns(const Tensor<T>& flat) const {
        std::size_t C = cfg_.in_channels, H = cfg_.in_height, W = cfg_.width;
        Tensor<T> features({C, H, W});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w) features(c, h, w) = flat(c * H + h, w);
        return features;
    }

    DenseTransformerConfig cfg_;
    nn::Linear<T> collapse_;
    nn::ReLU<T> act_;
    nn::Conv1d<T> expand_;
};

/// Five dense transformers, one per feature scale, each owning a depth band
/// of the BEV grid. Outputs are concatenated along depth: the level-0 (finest
/// stride) band occupies the far rows.
template <typename T>
class TransformerPyramid {
public:
    TransformerPyramid() = default;

    /// feature_widths/crop_heights describe the already-cropped per-level
    /// inputs; `grid` is the pre-topdown BEV lattice the bands tile.
    TransformerPyramid(const PyramidSchedule& schedule, const GridSpec& grid,
                       const std::vector<int>& feature_widths, const std::vector<int>& crop_heights,
                       int in_channels, int bottleneck, int out_channels, int conv_kernel)
        : schedule_(schedule), grid_(grid), out_channels_(out_channels) {
        schedule.validate(grid);
        check(feature_widths.size() == schedule.levels.size() &&
                  crop_heights.size() == schedule.levels.size(),
              "TransformerPyramid: per-level shape list mismatch");
        for (std::size_t k = 0; k < schedule.levels.size(); ++k) {
            DenseTransformerConfig cfg;
            cfg.in_channels = in_channels;
            cfg.in_height = crop_heights[k];
            cfg.width = feature_widths[k];
            cfg.bottleneck = bottleneck;
            cfg.out_channels = out_channels;
            cfg.depth_bins = schedule.band_row_count(static_cast<int>(k), grid);
            cfg.conv_kernel = conv_kernel;
            configs_.push_back(cfg);
            // Levels whose depth band collapsed to zero rows (clamped
            // focal-derived schedules) carry no transformer.
            if (cfg.depth_bins > 0)
                levels_.emplace_back(std::in_place, cfg);
            else
                levels_.emplace_back(std::nullopt);
        }
    }

    std::size_t num_levels() const { return levels_.size(); }
    bool level_active(std::size_t k) const { return levels_[k].has_value(); }
    DenseTransformer<T>& level(std::size_t k) { return *levels_[k]; }
    const DenseTransformerConfig& level_config(std::size_t k) const { return configs_[k]; }
    const GridSpec& grid() const { return grid_; }
    const PyramidSchedule& schedule() const { return schedule_; }

    void init(std::mt19937_64& rng) {
        for (auto& lvl : levels_)
            if (lvl) lvl->init(rng);
    }

    /// Per-level width-resampling indices for the given camera intrinsics.
    std::vector<SamplingIndex> build_indices(const CameraModel& camera) const {
        std::vector<SamplingIndex> out;
        for (std::size_t k = 0; k < levels_.size(); ++k) {
            double lo = schedule_.levels[k].z_near;
            double hi = schedule_.band_far(static_cast<int>(k), grid_);
            out.push_back(polar_to_cartesian_index(camera, grid_, lo, hi,
                                                   schedule_.levels[k].stride,
                                                   configs_[k].width));
        }
        return out;
    }

    /// Cropped per-level features -> C_out x depth_cells x width_cells BEV map.
    Tensor<T> forward(const std::vector<Tensor<T>>& features,
                      const std::vector<SamplingIndex>& indices) {
        check(features.size() == levels_.size() && indices.size() == levels_.size(),
              "TransformerPyramid: expected one feature map and index per level");
        std::size_t C = static_cast<std::size_t>(out_channels_);
        std::size_t Z = static_cast<std::size_t>(grid_.depth_cells());
        std::size_t X = static_cast<std::size_t>(grid_.width_cells());
        Tensor<T> bev({C, Z, X});
        for (std::size_t k = 0; k < levels_.size(); ++k) {
            if (!levels_[k]) continue;
            auto [r0, r1] = schedule_.band_rows(static_cast<int>(k), grid_);
            Tensor<T> band = levels_[k]->forward(features[k], indices[k]);
            for (std::size_t c = 0; c < C; ++c)
                for (int r = r0; r < r1; ++r)
                    for (std::size_t x = 0; x < X; ++x)
                        bev(c, static_cast<std::size_t>(r), x) =
                            band(c, static_cast<std::size_t>(r - r0), x);
        }
        return bev;
    }

    /// Splits the BEV gradient back into bands and runs each level's backward.
    std::vector<Tensor<T>> backward(const Tensor<T>& grad_bev,
                                    const std::vector<SamplingIndex>& indices) {
        std::vector<Tensor<T>> grads;
        std::size_t C = grad_bev.dim(0), X = grad_bev.dim(2);
        for (std::size_t k = 0; k < levels_.size(); ++k) {
            if (!levels_[k]) {
                grads.emplace_back(Tensor<T>({static_cast<std::size_t>(configs_[k].in_channels),
                                              static_cast<std::size_t>(configs_[k].in_height),
                                              static_cast<std::size_t>(configs_[k].width)}));
                continue;
            }
            auto [r0, r1] = schedule_.band_rows(static_cast<int>(k), grid_);
            Tensor<T> band({C, static_cast<std::size_t>(r1 - r0), X});
            for (std::size_t c = 0; c < C; ++c)
                for (int r = r0; r < r1; ++r)
                    for (std::size_t x = 0; x < X; ++x)
                        band(c, static_cast<std::size_t>(r - r0), x) =
                            grad_bev(c, static_cast<std::size_t>(r), x);
            grads.push_back(levels_[k]->backward(band, indices[k]));
        }
        return grads;
    }

    void collect(const std::string& prefix, nn::ParamList<T>& out) {
        for (std::size_t k = 0; k < levels_.size(); ++k)
            if (levels_[k]) levels_[k]->collect(prefix + ".level" + std::to_string(k), out);
    }

private:
    PyramidSchedule schedule_;
    GridSpec grid_;
    int out_channels_ = 0;
    std::vector<DenseTransformerConfig> configs_;
    std::vector<std::optional<DenseTransformer<T>>> levels_;
};

}  // namespace pyrocc
