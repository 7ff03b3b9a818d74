#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pyrocc/dense_transformer.hpp"
#include "pyrocc/geometry.hpp"
#include "pyrocc/nn.hpp"
#include "pyrocc/tensor.hpp"

namespace pyrocc {

/// Ablation variants: baseline warps features with the flat-ground
/// homography; D adds a single dense transformer at one scale; DP the full
/// transformer pyramid; DPT additionally the BEV topdown network.
enum class Variant { kBaseline, kD, kDP, kDPT };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::kBaseline: return "baseline";
        case Variant::kD: return "D";
        case Variant::kDP: return "DP";
        case Variant::kDPT: return "DPT";
    }
    return "?";
}

inline Variant parse_variant(const std::string& name) {
    if (name == "baseline") return Variant::kBaseline;
    if (name == "D") return Variant::kD;
    if (name == "DP") return Variant::kDP;
    if (name == "DPT") return Variant::kDPT;
    throw std::invalid_argument("unknown variant: " + name);
}

struct NetworkConfig {
    Variant variant = Variant::kDPT;
    std::vector<int> stem_widths = {16, 24};          // strides 2 and 4
    std::vector<int> backbone_widths = {32, 64, 96, 128, 128};  // strides 8..128
    int fpn_channels = 48;
    int bev_channels = 48;
    int bottleneck = 0;  // 0 -> fpn_channels
    int conv_kernel = 3;
    int topdown_channels = 16;
    int topdown_blocks = 8;
    int upsample_block = 5;  // 1-based slot of the transposed-conv block
    int norm_groups = 8;
    int num_classes = 2;
    int image_width = 256;
    int image_height = 256;
    double focal = 256.0;  // reference focal length the crop heights are sized for
    GridSpec grid = GridSpec::output_grid();
    PyramidSchedule schedule = PyramidSchedule::table1();

    GridSpec feature_grid() const { return grid.at_resolution(grid.resolution * 2.0); }
    int bottleneck_size() const { return bottleneck > 0 ? bottleneck : fpn_channels; }

    void validate() const {
        check(stem_widths.size() == 2, "NetworkConfig: expected two stem widths");
        check(backbone_widths.size() == 5, "NetworkConfig: expected five backbone widths");
        check(num_classes > 0, "NetworkConfig: need at least one class");
        check(topdown_blocks >= 1 && upsample_block >= 1 && upsample_block <= topdown_blocks,
              "NetworkConfig: upsample block out of range");
        check(image_width % 128 == 0 || image_width == 64,
              "NetworkConfig: image width must be divisible by 128 (or the 64 px desk size)");
        check(image_height % 128 == 0 || image_height == 64,
              "NetworkConfig: image height must be divisible by 128 (or the 64 px desk size)");
        schedule.validate(feature_grid());
    }

    bool operator==(const NetworkConfig&) const = default;
};

/// Spatial size of the stride-2^(k+3) feature map for an input extent n,
/// following the conv arithmetic of the stem + stages (sizes never drop
/// below 1).
inline int backbone_feature_size(int n, int level) {
    int size = n;
    for (int i = 0; i < level + 3; ++i) size = std::max(1, (size + 2 - 3) / 2 + 1);
    return size;
}

/// The four-stage occupancy network. forward() maps an RGB image and its
/// camera to per-class pre-sigmoid logits on the output grid; logits double
/// as log-odds for the fusion pipeline.
template <typename T>
class OccupancyNetwork {
public:
    OccupancyNetwork() = default;

    explicit OccupancyNetwork(const NetworkConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        const auto& bw = cfg.backbone_widths;
        stem_conv1_ = nn::Conv2d<T>(3, cfg.stem_widths[0], 3, 2);
        stem_norm1_ = nn::GroupNorm<T>(cfg.stem_widths[0], cfg.norm_groups);
        stem_conv2_ = nn::Conv2d<T>(cfg.stem_widths[0], cfg.stem_widths[1], 3, 2);
        stem_norm2_ = nn::GroupNorm<T>(cfg.stem_widths[1], cfg.norm_groups);
        int prev = cfg.stem_widths[1];
        for (int k = 0; k < 5; ++k) {
            stages_.emplace_back(prev, bw[k], 2, cfg.norm_groups);
            prev = bw[k];
        }
        for (int k = 0; k < 5; ++k)
            laterals_.emplace_back(bw[k], cfg.fpn_channels, 1, 1, 0);

        GridSpec fgrid = cfg.feature_grid();
        if (cfg.variant == Variant::kDP || cfg.variant == Variant::kDPT) {
            std::vector<int> widths, heights;
            int min_flat = 1 << 30;
            for (int k = 0; k < 5; ++k) {
                widths.push_back(backbone_feature_size(cfg.image_width, k));
                heights.push_back(level_crop_height(k));
                min_flat = std::min(min_flat, cfg.fpn_channels * heights.back());
            }
            // The bottleneck must compress even the smallest cropped column.
            int bottleneck = std::min(cfg.bottleneck_size(), min_flat - 1);
            pyramid_.emplace(cfg.schedule, fgrid, widths, heights, cfg.fpn_channels,
                             std::max(1, bottleneck), cfg.bev_channels, cfg.conv_kernel);
        } else if (cfg.variant == Variant::kD) {
            // One transformer on the stride-16 map covering the full depth
            // range; cropped at the grid near bound, which spans the whole
            // feature map height for any practical camera.
            DenseTransformerConfig tc;
            tc.in_channels = cfg.fpn_channels;
            tc.in_height = std::min(crop_height(cfg.focal, 16.0, fgrid.z_min, cfg.schedule.y_min,
                                                cfg.schedule.y_max),
                                    backbone_feature_size(cfg.image_height, 1));
            tc.width = backbone_feature_size(cfg.image_width, 1);
            tc.bottleneck =
                std::max(1, std::min(cfg.bottleneck_size(), cfg.fpn_channels * tc.in_height - 1));
            tc.out_channels = cfg.bev_channels;
            tc.depth_bins = fgrid.depth_cells();
            tc.conv_kernel = cfg.conv_kernel;
            single_.emplace(tc);
        }

        if (cfg.variant == Variant::kDPT) {
            topdown_proj_ = nn::Conv2d<T>(cfg.bev_channels, cfg.topdown_channels, 1, 1, 0);
            for (int i = 1; i <= cfg.topdown_blocks; ++i) {
                if (i == cfg.upsample_block)
                    topdown_up_.emplace(cfg.topdown_channels, cfg.topdown_channels, 4, 2, 1);
                else
                    topdown_blocks_.emplace_back(cfg.topdown_channels, cfg.topdown_channels, 1,
                                                 cfg.norm_groups);
            }
            topdown_norm_ = nn::GroupNorm<T>(cfg.topdown_channels, cfg.norm_groups);
        }

        int head_in = cfg.variant == Variant::kDPT ? cfg.topdown_channels : cfg.bev_channels;
        head_ = nn::Conv2d<T>(head_in, cfg.num_classes, 1, 1, 0);
    }

    const NetworkConfig& config() const { return cfg_; }

    void init(std::uint64_t seed) {
        auto rng = make_rng(seed, 17);
        stem_conv1_.init(rng);
        stem_conv2_.init(rng);
        for (auto& s : stages_) s.init(rng);
        for (auto& l : laterals_) l.init(rng);
        if (pyramid_) pyramid_->init(rng);
        if (single_) single_->init(rng);
        if (cfg_.variant == Variant::kDPT) {
            topdown_proj_.init(rng);
            for (auto& b : topdown_blocks_) b.init(rng);
            topdown_up_->init(rng);
        }
        head_.init(rng);
    }

    /// Backbone: two strided stem convs then five strided residual stages,
    /// emitting feature maps at strides 8, 16, 32, 64 and 128.
    std::vector<FeatureMap<T>> backbone_forward(const Tensor<T>& image) {
        check(image.rank() == 3 && image.dim(0) == 3, "backbone: image must be 3 x H x W");
        check(static_cast<int>(image.dim(1)) == cfg_.image_height &&
                  static_cast<int>(image.dim(2)) == cfg_.image_width,
              "backbone: image size does not match the configured input size");
        Tensor<T> x = stem_act1_.forward(stem_norm1_.forward(stem_conv1_.forward(image)));
        x = stem_act2_.forward(stem_norm2_.forward(stem_conv2_.forward(x)));
        std::vector<FeatureMap<T>> maps;
        for (int k = 0; k < 5; ++k) {
            x = stages_[k].forward(x);
            maps.push_back({x, 1 << (k + 3)});
        }
        return maps;
    }

    void backbone_backward(std::vector<Tensor<T>> grads) {
        Tensor<T> g = std::move(grads[4]);
        for (int k = 4; k >= 0; --k) {
            Tensor<T> gin = stages_[k].backward(g);
            if (k > 0) {
                g = std::move(grads[k - 1]);
                g += gin;
            } else {
                g = std::move(gin);
            }
        }
        g = stem_conv2_.backward(stem_norm2_.backward(stem_act2_.backward(g)));
        stem_conv1_.backward(stem_norm1_.backward(stem_act1_.backward(g)));
    }

    /// FPN: out_k = lateral_k(in_k) + 2x-upsampled out_{k+1}; the coarsest
    /// level passes through its lateral projection alone.
    std::vector<FeatureMap<T>> fpn_forward(const std::vector<FeatureMap<T>>& maps) {
        check(maps.size() == 5, "fpn: expected five feature maps");
        std::vector<Tensor<T>> lat(5);
        for (int k = 0; k < 5; ++k) lat[k] = laterals_[k].forward(maps[k].data);
        std::vector<FeatureMap<T>> out(5);
        out[4] = {lat[4], maps[4].stride};
        for (int k = 3; k >= 0; --k) {
            Tensor<T> up = nn::upsample_nearest(out[k + 1].data, lat[k].dim(1), lat[k].dim(2));
            up += lat[k];
            out[k] = {std::move(up), maps[k].stride};
        }
        return out;
    }

    /// Topdown BEV network: 8 residual blocks around one learned 2x
    /// upsampling, then a trailing normalization + activation. 98x100 BEV
    /// features come out at 196x200.
    Tensor<T> topdown_forward(const Tensor<T>& bev) {
        check(cfg_.variant == Variant::kDPT, "topdown_forward: only the DPT variant has a topdown");
        Tensor<T> x = topdown_proj_.forward(bev);
        int block_idx = 0;
        for (int i = 1; i <= cfg_.topdown_blocks; ++i) {
            if (i == cfg_.upsample_block)
                x = topdown_up_->forward(x);
            else
                x = topdown_blocks_[block_idx++].forward(x);
        }
        return topdown_act_.forward(topdown_norm_.forward(x));
    }

    Tensor<T> topdown_backward(const Tensor<T>& grad) {
        Tensor<T> g = topdown_norm_.backward(topdown_act_.backward(grad));
        int block_idx = static_cast<int>(topdown_blocks_.size());
        for (int i = cfg_.topdown_blocks; i >= 1; --i) {
            if (i == cfg_.upsample_block)
                g = topdown_up_->backward(g);
            else
                g = topdown_blocks_[--block_idx].backward(g);
        }
        return topdown_proj_.backward(g);
    }

    /// Full forward pass to per-class logits on the output grid.
    Tensor<T> forward(const Tensor<T>& image, const CameraModel& camera) {
        check(camera.image_width == cfg_.image_width && camera.image_height == cfg_.image_height,
              "forward: camera does not match the configured image size");
        auto maps = backbone_forward(image);
        auto fpn = fpn_forward(maps);
        fpn_shapes_.clear();
        for (const auto& m : fpn) fpn_shapes_.push_back(m.data.shape());

        Tensor<T> bev;
        GridSpec fgrid = cfg_.feature_grid();
        switch (cfg_.variant) {
            case Variant::kDPT:
            case Variant::kDP: {
                indices_ = pyramid_->build_indices(camera);
                std::vector<Tensor<T>> cropped(5);
                crop_rows_.assign(5, 0);
                for (int k = 0; k < 5; ++k) {
                    const auto& cfg = pyramid_->level_config(k);
                    crop_rows_[k] = level_crop_start(k, camera, static_cast<int>(fpn[k].data.dim(1)),
                                                     cfg.in_height);
                    cropped[k] = crop_vertical(fpn[k].data, crop_rows_[k], cfg.in_height);
                }
                bev = pyramid_->forward(cropped, indices_);
                break;
            }
            case Variant::kD: {
                const auto& tc = single_->config();
                single_index_ = polar_to_cartesian_index(camera, fgrid, fgrid.z_min, fgrid.z_max,
                                                         16, tc.width);
                crop_rows_.assign(5, 0);
                crop_rows_[1] = level_crop_start(-1, camera, static_cast<int>(fpn[1].data.dim(1)),
                                                 tc.in_height);
                Tensor<T> cropped = crop_vertical(fpn[1].data, crop_rows_[1], tc.in_height);
                bev = single_->forward(cropped, single_index_);
                break;
            }
            case Variant::kBaseline: {
                bev = ipm_warp(fpn[1], camera, fgrid);
                ipm_camera_ = camera;
                break;
            }
        }

        Tensor<T> logits;
        if (cfg_.variant == Variant::kDPT) {
            logits = head_.forward(topdown_forward(bev));
        } else {
            Tensor<T> low = head_.forward(bev);
            logits = nn::upsample_nearest(low, static_cast<std::size_t>(cfg_.grid.depth_cells()),
                                          static_cast<std::size_t>(cfg_.grid.width_cells()));
        }
        return logits;
    }

    /// Backpropagates dL/dlogits through the whole network, accumulating
    /// parameter gradients.
    void backward(const Tensor<T>& grad_logits) {
        Tensor<T> gbev;
        if (cfg_.variant == Variant::kDPT) {
            gbev = topdown_backward(head_.backward(grad_logits));
        } else {
            GridSpec fgrid = cfg_.feature_grid();
            Tensor<T> glow = nn::upsample_nearest_backward(
                grad_logits, static_cast<std::size_t>(fgrid.depth_cells()),
                static_cast<std::size_t>(fgrid.width_cells()));
            gbev = head_.backward(glow);
        }

        std::vector<Tensor<T>> gfpn(5);
        for (int k = 0; k < 5; ++k) gfpn[k] = Tensor<T>(fpn_shapes_[k]);
        GridSpec fgrid = cfg_.feature_grid();
        switch (cfg_.variant) {
            case Variant::kDPT:
            case Variant::kDP: {
                auto gcropped = pyramid_->backward(gbev, indices_);
                for (int k = 0; k < 5; ++k)
                    scatter_vertical(gcropped[k], crop_rows_[k], gfpn[k]);
                break;
            }
            case Variant::kD: {
                Tensor<T> gc = single_->backward(gbev, single_index_);
                scatter_vertical(gc, crop_rows_[1], gfpn[1]);
                break;
            }
            case Variant::kBaseline: {
                gfpn[1] = ipm_warp_backward(gbev, 16, fpn_shapes_[1][1], fpn_shapes_[1][2],
                                            ipm_camera_, fgrid);
                break;
            }
        }
        backbone_backward(fpn_backward_impl(gfpn));
    }

    void collect(nn::ParamList<T>& out) {
        stem_conv1_.collect("stem.conv1", out);
        stem_norm1_.collect("stem.norm1", out);
        stem_conv2_.collect("stem.conv2", out);
        stem_norm2_.collect("stem.norm2", out);
        for (int k = 0; k < 5; ++k)
            stages_[k].collect("backbone.stage" + std::to_string(k), out);
        for (int k = 0; k < 5; ++k)
            laterals_[k].collect("fpn.lateral" + std::to_string(k), out);
        if (pyramid_) pyramid_->collect("pyramid", out);
        if (single_) single_->collect("transformer", out);
        if (cfg_.variant == Variant::kDPT) {
            topdown_proj_.collect("topdown.proj", out);
            int block_idx = 0;
            for (int i = 1; i <= cfg_.topdown_blocks; ++i) {
                if (i == cfg_.upsample_block)
                    topdown_up_->collect("topdown.block" + std::to_string(i) + ".up", out);
                else
                    topdown_blocks_[block_idx++].collect("topdown.block" + std::to_string(i), out);
            }
            topdown_norm_.collect("topdown.norm", out);
        }
        head_.collect("head", out);
    }

    nn::ParamList<T> params() {
        nn::ParamList<T> out;
        collect(out);
        return out;
    }

    void zero_grad() {
        auto p = params();
        nn::zero_grads(p);
    }

    TransformerPyramid<T>* pyramid() { return pyramid_ ? &*pyramid_ : nullptr; }
    DenseTransformer<T>* single_transformer() { return single_ ? &*single_ : nullptr; }
    nn::Conv2d<T>& lateral(int k) { return laterals_[k]; }
    nn::Conv2d<T>& head() { return head_; }

private:
    int level_crop_height(int k) const {
        int h_feat = backbone_feature_size(cfg_.image_height, k);
        int h = crop_height(cfg_.focal, static_cast<double>(cfg_.schedule.levels[k].stride),
                            cfg_.schedule.levels[k].z_near, cfg_.schedule.y_min,
                            cfg_.schedule.y_max);
        return std::min(h, h_feat);
    }

    /// First cropped row: the projection of y_min at the band's near depth,
    /// clamped so the window fits the map. k = -1 addresses the full-depth
    /// single-transformer crop (stride 16, near depth = grid z_min).
    int level_crop_start(int k, const CameraModel& camera, int h_feat, int h_crop) const {
        double stride = k >= 0 ? cfg_.schedule.levels[k].stride : 16.0;
        double z = k >= 0 ? cfg_.schedule.levels[k].z_near : cfg_.feature_grid().z_min;
        double v_top = (camera.f * cfg_.schedule.y_min / z + camera.v0) / stride;
        int r0 = static_cast<int>(std::floor(v_top));
        return std::clamp(r0, 0, std::max(0, h_feat - h_crop));
    }

    static Tensor<T> crop_vertical(const Tensor<T>& x, int r0, int h) {
        std::size_t C = x.dim(0), W = x.dim(2);
        Tensor<T> out({C, static_cast<std::size_t>(h), W});
        for (std::size_t c = 0; c < C; ++c)
            for (int r = 0; r < h; ++r)
                for (std::size_t w = 0; w < W; ++w)
                    out(c, static_cast<std::size_t>(r), w) =
                        x(c, static_cast<std::size_t>(r0 + r), w);
        return out;
    }

    static void scatter_vertical(const Tensor<T>& grad, int r0, Tensor<T>& out) {
        std::size_t C = grad.dim(0), H = grad.dim(1), W = grad.dim(2);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t w = 0; w < W; ++w)
                    out(c, r0 + r, w) += grad(c, r, w);
    }

    std::vector<Tensor<T>> fpn_backward_impl(const std::vector<Tensor<T>>& grads) {
        std::vector<Tensor<T>> total(5);
        total[0] = grads[0];
        for (int k = 1; k < 5; ++k) {
            total[k] = grads[k];
            total[k] += nn::upsample_nearest_backward(total[k - 1], grads[k].dim(1), grads[k].dim(2));
        }
        std::vector<Tensor<T>> out(5);
        for (int k = 0; k < 5; ++k) out[k] = laterals_[k].backward(total[k]);
        return out;
    }

    NetworkConfig cfg_;

    nn::Conv2d<T> stem_conv1_, stem_conv2_;
    nn::GroupNorm<T> stem_norm1_, stem_norm2_;
    nn::ReLU<T> stem_act1_, stem_act2_;
    std::vector<nn::ResidualBlock<T>> stages_;
    std::vector<nn::Conv2d<T>> laterals_;

    std::optional<TransformerPyramid<T>> pyramid_;
    std::optional<DenseTransformer<T>> single_;
    std::vector<SamplingIndex> indices_;
    SamplingIndex single_index_;
    std::vector<int> crop_rows_;
    CameraModel ipm_camera_;

    nn::Conv2d<T> topdown_proj_;
    std::vector<nn::ResidualBlock<T>> topdown_blocks_;
    std::optional<nn::ConvTranspose2d<T>> topdown_up_;
    nn::GroupNorm<T> topdown_norm_;
    nn::ReLU<T> topdown_act_;

    nn::Conv2d<T> head_;
    std::vector<std::vector<std::size_t>> fpn_shapes_;
};

}  // namespace pyrocc
