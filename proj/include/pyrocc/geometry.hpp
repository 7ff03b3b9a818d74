#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "pyrocc/tensor.hpp"

namespace pyrocc {

struct Vec2 {
    double x = 0.0;  // lateral, positive right of the optical axis
    double z = 0.0;  // forward depth
};

/// Planar rigid transform mapping local (x, z) coordinates into a parent
/// frame. angle = 0 faces the parent +z axis; positive angles turn the local
/// +z axis toward parent +x.
struct Pose2 {
    double angle = 0.0;
    double tx = 0.0;
    double tz = 0.0;

    Vec2 apply(const Vec2& p) const {
        double c = std::cos(angle), s = std::sin(angle);
        return {c * p.x + s * p.z + tx, -s * p.x + c * p.z + tz};
    }

    /// Rotates a direction without translating it.
    Vec2 rotate(const Vec2& p) const {
        double c = std::cos(angle), s = std::sin(angle);
        return {c * p.x + s * p.z, -s * p.x + c * p.z};
    }

    Pose2 inverse() const {
        double c = std::cos(angle), s = std::sin(angle);
        return {-angle, -(c * tx - s * tz), -(s * tx + c * tz)};
    }

    /// this ∘ other: first apply `other`, then this.
    Pose2 compose(const Pose2& other) const {
        Vec2 t = apply({other.tx, other.tz});
        return {angle + other.angle, t.x, t.z};
    }

    bool operator==(const Pose2&) const = default;
};

/// Pinhole camera with a planar rigid pose (camera frame -> world frame).
/// camera_height is the optical center's height above the ground plane and
/// is only consulted by the homography warp.
struct CameraModel {
    double f = 128.0;   // focal length, pixels
    double u0 = 127.5;  // horizontal principal point, pixels
    double v0 = 127.5;  // vertical principal point, pixels
    int image_width = 256;
    int image_height = 256;
    Pose2 pose;
    double camera_height = 1.5;

    void validate() const {
        check_domain(f > 0.0, "CameraModel: focal length must be positive");
        check_domain(u0 >= 0.0 && u0 < image_width, "CameraModel: u0 out of range");
        check_domain(std::isfinite(pose.tx) && std::isfinite(pose.tz) && std::isfinite(pose.angle),
                     "CameraModel: pose must be finite");
    }
};

/// Metric birds-eye-view lattice. Rows index depth (row 0 nearest z_min),
/// columns index lateral position (col 0 at -x_half_extent). Extents must be
/// exact multiples of the resolution.
struct GridSpec {
    double z_min = 1.0;
    double z_max = 50.0;
    double x_half_extent = 25.0;
    double resolution = 0.25;

    int depth_cells() const { return exact_cells(z_max - z_min, "depth extent"); }
    int width_cells() const { return exact_cells(2.0 * x_half_extent, "width extent"); }

    double cell_center_z(int row) const { return z_min + (row + 0.5) * resolution; }
    double cell_center_x(int col) const { return -x_half_extent + (col + 0.5) * resolution; }

    /// Continuous (fractional) row/col of a metric point; cell centers land
    /// on integer values.
    double row_of(double z) const { return (z - z_min) / resolution - 0.5; }
    double col_of(double x) const { return (x + x_half_extent) / resolution - 0.5; }

    bool contains(const Vec2& p) const {
        return p.z >= z_min && p.z <= z_max && p.x >= -x_half_extent && p.x <= x_half_extent;
    }

    /// The paper-default output lattice: [1, 50] x [-25, 25] at 0.25 m,
    /// i.e. 196 x 200 cells.
    static GridSpec output_grid() { return GridSpec{1.0, 50.0, 25.0, 0.25}; }

    /// Same extents at the pre-topdown 0.5 m resolution (98 x 100 cells).
    static GridSpec feature_grid() { return GridSpec{1.0, 50.0, 25.0, 0.5}; }

    GridSpec at_resolution(double res) const { return GridSpec{z_min, z_max, x_half_extent, res}; }

    bool operator==(const GridSpec&) const = default;

private:
    int exact_cells(double extent, const char* what) const {
        check_domain(resolution > 0.0, "GridSpec: resolution must be positive");
        double cells = extent / resolution;
        long long n = std::llround(cells);
        check(n > 0 && std::abs(cells - static_cast<double>(n)) < 1e-9,
              std::string("GridSpec: ") + what + " is not an exact multiple of the resolution");
        return static_cast<int>(n);
    }
};

// ---------------------------------------------------------------------------
// Pyramid schedule
// ---------------------------------------------------------------------------

/// z_k = f * dx / s_k: the depth at which one BEV cell maps to exactly one
/// feature-map pixel at downsampling factor s_k.
inline double depth_boundary(double f, double delta_x, double s) {
    check_domain(f > 0.0 && delta_x > 0.0 && s > 0.0, "depth_boundary: inputs must be positive");
    return f * delta_x / s;
}

/// du = f * dx / (s * z): pixel spacing between adjacent BEV cells of a
/// depth row when resampling a polar map at factor s. Below 1 the map is
/// oversampled (blur far from the camera); above 1 cells skip pixels and
/// alias near the camera.
inline double sampling_interval(double f, double delta_x, double s, double z) {
    check_domain(f > 0.0 && delta_x > 0.0 && s > 0.0, "sampling_interval: inputs must be positive");
    check_domain(z > 0.0, "sampling_interval: depth must be positive");
    return f * delta_x / (s * z);
}

/// Cropped feature-map height (rows) covering the world-space vertical range
/// [y_min, y_max] at the band's near depth z_k. Rounds up so the declared
/// range is never lost.
inline int crop_height(double f, double s, double z, double y_min, double y_max) {
    check_domain(f > 0.0 && s > 0.0, "crop_height: f and s must be positive");
    check_domain(z > 0.0, "crop_height: depth must be positive");
    check_domain(y_max > y_min, "crop_height: degenerate vertical range");
    return static_cast<int>(std::ceil(f * (y_max - y_min) / (s * z)));
}

struct PyramidLevel {
    int k = 0;
    int stride = 8;     // s_k = 2^(k+3)
    double z_near = 0;  // near edge of this level's depth band
};

/// Downsampling factors, depth bands and vertical crop of the transformer
/// pyramid. Level k covers depths [z_near_k, z_near_{k-1}), with the level-0
/// band closed at the grid far bound. Bands tile [z_min, z_max] exactly.
struct PyramidSchedule {
    std::vector<PyramidLevel> levels;
    double y_min = -1.0;
    double y_max = 3.0;
    double f_ref = 624.0;  // focal length the depth boundaries were derived for

    /// The published five-level schedule: s_k in {8,...,128},
    /// z_k in {39, 19.5, 9, 4.5, 1}.
    static PyramidSchedule table1(double y_min = -1.0, double y_max = 3.0) {
        PyramidSchedule sched;
        sched.y_min = y_min;
        sched.y_max = y_max;
        sched.f_ref = 624.0;
        const double z[5] = {39.0, 19.5, 9.0, 4.5, 1.0};
        for (int k = 0; k < 5; ++k) sched.levels.push_back({k, 1 << (k + 3), z[k]});
        return sched;
    }

    /// Boundaries computed from z_k = f*dx/s_k for the given focal length,
    /// snapped to the grid's cell lattice and clamped to its near bound so
    /// the bands still tile [z_min, z_max]. Levels whose band collapses onto
    /// the near bound end up with zero depth rows.
    static PyramidSchedule from_focal(double f, double delta_x, const GridSpec& grid,
                                      double y_min = -1.0, double y_max = 3.0) {
        PyramidSchedule sched;
        sched.y_min = y_min;
        sched.y_max = y_max;
        sched.f_ref = f;
        double prev = grid.z_max;
        for (int k = 0; k < 5; ++k) {
            int s = 1 << (k + 3);
            double z = depth_boundary(f, delta_x, s);
            double snapped =
                grid.z_min + std::llround((z - grid.z_min) / grid.resolution) * grid.resolution;
            snapped = std::clamp(snapped, grid.z_min, prev);
            if (k == 4) snapped = grid.z_min;
            sched.levels.push_back({k, s, snapped});
            prev = snapped;
        }
        return sched;
    }

    double band_far(int k, const GridSpec& grid) const {
        return k == 0 ? grid.z_max : levels[k - 1].z_near;
    }

    /// Grid rows [first, last) covered by level k at the grid's resolution.
    std::pair<int, int> band_rows(int k, const GridSpec& grid) const {
        double lo = levels[k].z_near, hi = band_far(k, grid);
        int r0 = static_cast<int>(std::llround((lo - grid.z_min) / grid.resolution));
        int r1 = static_cast<int>(std::llround((hi - grid.z_min) / grid.resolution));
        return {r0, r1};
    }

    int band_row_count(int k, const GridSpec& grid) const {
        auto [r0, r1] = band_rows(k, grid);
        return r1 - r0;
    }

    void validate(const GridSpec& grid) const {
        check(!levels.empty(), "PyramidSchedule: no levels");
        for (std::size_t k = 0; k < levels.size(); ++k) {
            check_domain(levels[k].z_near >= grid.z_min, "PyramidSchedule: z_k below grid z_min");
            if (k > 0)
                check_domain(levels[k].z_near <= levels[k - 1].z_near,
                             "PyramidSchedule: z_k must be non-increasing in k");
        }
        check_domain(std::abs(levels.back().z_near - grid.z_min) < 1e-9,
                     "PyramidSchedule: deepest band must reach grid z_min");
        // All band edges must land on the cell lattice.
        for (std::size_t k = 0; k < levels.size(); ++k) {
            double edge = (levels[k].z_near - grid.z_min) / grid.resolution;
            check_domain(std::abs(edge - std::llround(edge)) < 1e-9,
                         "PyramidSchedule: band edge off the cell lattice");
        }
    }

    bool operator==(const PyramidSchedule&) const = default;
};

inline bool operator==(const PyramidLevel& a, const PyramidLevel& b) {
    return a.k == b.k && a.stride == b.stride && a.z_near == b.z_near;
}

// ---------------------------------------------------------------------------
// Polar -> Cartesian resampling
// ---------------------------------------------------------------------------

/// Fractional polar-map column for every BEV cell of a depth band, plus an
/// in-view flag. Valid entries lie in [0, W_polar - 1]; out-of-view cells are
/// flagged, never clamped.
struct SamplingIndex {
    int rows = 0;       // depth rows covered (the band's cell count)
    int cols = 0;       // BEV width cells
    int width_polar = 0;
    std::vector<double> column;   // rows*cols fractional polar columns
    std::vector<std::uint8_t> valid;

    double col(int r, int c) const { return column[static_cast<std::size_t>(r) * cols + c]; }
    bool is_valid(int r, int c) const { return valid[static_cast<std::size_t>(r) * cols + c] != 0; }
};

/// Builds the width-resampling index for the depth band [band_lo, band_hi) of
/// `grid` as seen by `camera` through a polar feature map of downsampling
/// factor s with W_polar columns. Cell (x, z) maps to column (f*x/z + u0)/s.
inline SamplingIndex polar_to_cartesian_index(const CameraModel& camera, const GridSpec& grid,
                                              double band_lo, double band_hi, int s, int w_polar) {
    check(band_lo >= grid.z_min - 1e-9 && band_hi <= grid.z_max + 1e-9,
          "polar_to_cartesian_index: band outside grid depth range");
    SamplingIndex idx;
    idx.cols = grid.width_cells();
    idx.width_polar = w_polar;
    int r0 = static_cast<int>(std::llround((band_lo - grid.z_min) / grid.resolution));
    int r1 = static_cast<int>(std::llround((band_hi - grid.z_min) / grid.resolution));
    idx.rows = std::max(0, r1 - r0);
    idx.column.assign(static_cast<std::size_t>(idx.rows) * idx.cols, 0.0);
    idx.valid.assign(static_cast<std::size_t>(idx.rows) * idx.cols, 0);
    for (int r = 0; r < idx.rows; ++r) {
        double z = grid.cell_center_z(r0 + r);
        for (int c = 0; c < idx.cols; ++c) {
            double x = grid.cell_center_x(c);
            double u = camera.f * x / z + camera.u0;
            double col = u / s;
            std::size_t i = static_cast<std::size_t>(r) * idx.cols + c;
            if (col >= 0.0 && col <= static_cast<double>(w_polar - 1)) {
                idx.column[i] = col;
                idx.valid[i] = 1;
            }
        }
    }
    return idx;
}

/// Resamples a polar feature map (C x Z x W) along width only: output cell
/// (c, z, x) linearly interpolates the two nearest polar columns at that
/// row's fractional index. Invalid (out-of-view) cells produce zeros.
template <typename T>
Tensor<T> sample_width(const Tensor<T>& polar, const SamplingIndex& idx) {
    check(polar.rank() == 3, "sample_width: polar map must be C x Z x W");
    check(static_cast<int>(polar.dim(1)) == idx.rows, "sample_width: depth row count mismatch");
    check(static_cast<int>(polar.dim(2)) == idx.width_polar, "sample_width: polar width mismatch");
    std::size_t C = polar.dim(0), Z = polar.dim(1), X = static_cast<std::size_t>(idx.cols);
    Tensor<T> out({C, Z, X});
    std::size_t W = polar.dim(2);
    for (std::size_t z = 0; z < Z; ++z) {
        for (std::size_t x = 0; x < X; ++x) {
            if (!idx.is_valid(static_cast<int>(z), static_cast<int>(x))) continue;
            double col = idx.col(static_cast<int>(z), static_cast<int>(x));
            if (W == 1) {
                for (std::size_t c = 0; c < C; ++c) out(c, z, x) = polar(c, z, 0);
                continue;
            }
            std::size_t c0 = std::min(static_cast<std::size_t>(col), W - 2);
            T w1 = static_cast<T>(col - static_cast<double>(c0));
            T w0 = static_cast<T>(1) - w1;
            for (std::size_t c = 0; c < C; ++c)
                out(c, z, x) = w0 * polar(c, z, c0) + w1 * polar(c, z, c0 + 1);
        }
    }
    return out;
}

/// Adjoint of sample_width: scatters BEV gradients back onto polar columns.
template <typename T>
Tensor<T> sample_width_backward(const Tensor<T>& grad_out, const SamplingIndex& idx) {
    check(grad_out.rank() == 3, "sample_width_backward: gradient must be C x Z x X");
    check(static_cast<int>(grad_out.dim(1)) == idx.rows &&
              static_cast<int>(grad_out.dim(2)) == idx.cols,
          "sample_width_backward: shape mismatch");
    std::size_t C = grad_out.dim(0), Z = grad_out.dim(1), X = grad_out.dim(2);
    std::size_t W = static_cast<std::size_t>(idx.width_polar);
    Tensor<T> grad_polar({C, Z, W});
    for (std::size_t z = 0; z < Z; ++z) {
        for (std::size_t x = 0; x < X; ++x) {
            if (!idx.is_valid(static_cast<int>(z), static_cast<int>(x))) continue;
            double col = idx.col(static_cast<int>(z), static_cast<int>(x));
            std::size_t c0 = static_cast<std::size_t>(col);
            if (W == 1) {
                for (std::size_t c = 0; c < C; ++c) grad_polar(c, z, 0) += grad_out(c, z, x);
                continue;
            }
            if (c0 + 1 >= W) c0 = W - 2;
            T w1 = static_cast<T>(col - static_cast<double>(c0));
            T w0 = static_cast<T>(1) - w1;
            for (std::size_t c = 0; c < C; ++c) {
                grad_polar(c, z, c0) += w0 * grad_out(c, z, x);
                grad_polar(c, z, c0 + 1) += w1 * grad_out(c, z, x);
            }
        }
    }
    return grad_polar;
}

// ---------------------------------------------------------------------------
// Inverse perspective mapping
// ---------------------------------------------------------------------------

/// Warps an image-space feature map onto the BEV grid through the flat-ground
/// homography: cell (x, z) samples image point (f*x/z + u0, f*h/z + v0)
/// scaled by 1/stride, with bilinear interpolation and zeros outside view.
template <typename T>
Tensor<T> ipm_warp(const FeatureMap<T>& features, const CameraModel& camera,
                   const GridSpec& grid) {
    check_domain(camera.camera_height > 0.0, "ipm_warp: camera height must be positive");
    check(features.data.rank() == 3, "ipm_warp: features must be C x H x W");
    std::size_t C = features.data.dim(0), H = features.data.dim(1), W = features.data.dim(2);
    int Z = grid.depth_cells(), X = grid.width_cells();
    Tensor<T> out({C, static_cast<std::size_t>(Z), static_cast<std::size_t>(X)});
    double s = static_cast<double>(features.stride);
    for (int r = 0; r < Z; ++r) {
        double z = grid.cell_center_z(r);
        double v = (camera.f * camera.camera_height / z + camera.v0) / s;
        for (int c = 0; c < X; ++c) {
            double x = grid.cell_center_x(c);
            double u = (camera.f * x / z + camera.u0) / s;
            if (u < 0.0 || u > static_cast<double>(W - 1) || v < 0.0 ||
                v > static_cast<double>(H - 1))
                continue;
            std::size_t u0i = std::min(static_cast<std::size_t>(u), W - (W > 1 ? 2 : 1));
            std::size_t v0i = std::min(static_cast<std::size_t>(v), H - (H > 1 ? 2 : 1));
            T wu = static_cast<T>(u - static_cast<double>(u0i));
            T wv = static_cast<T>(v - static_cast<double>(v0i));
            std::size_t u1i = std::min(u0i + 1, W - 1), v1i = std::min(v0i + 1, H - 1);
            for (std::size_t ch = 0; ch < C; ++ch) {
                T top = (1 - wu) * features.data(ch, v0i, u0i) + wu * features.data(ch, v0i, u1i);
                T bot = (1 - wu) * features.data(ch, v1i, u0i) + wu * features.data(ch, v1i, u1i);
                out(ch, r, c) = (1 - wv) * top + wv * bot;
            }
        }
    }
    return out;
}

/// Adjoint of ipm_warp for backpropagation.
template <typename T>
Tensor<T> ipm_warp_backward(const Tensor<T>& grad_out, int stride, std::size_t H, std::size_t W,
                            const CameraModel& camera, const GridSpec& grid) {
    std::size_t C = grad_out.dim(0);
    Tensor<T> grad_in({C, H, W});
    int Z = grid.depth_cells(), X = grid.width_cells();
    double s = static_cast<double>(stride);
    for (int r = 0; r < Z; ++r) {
        double z = grid.cell_center_z(r);
        double v = (camera.f * camera.camera_height / z + camera.v0) / s;
        for (int c = 0; c < X; ++c) {
            double x = grid.cell_center_x(c);
            double u = (camera.f * x / z + camera.u0) / s;
            if (u < 0.0 || u > static_cast<double>(W - 1) || v < 0.0 ||
                v > static_cast<double>(H - 1))
                continue;
            std::size_t u0i = std::min(static_cast<std::size_t>(u), W - (W > 1 ? 2 : 1));
            std::size_t v0i = std::min(static_cast<std::size_t>(v), H - (H > 1 ? 2 : 1));
            T wu = static_cast<T>(u - static_cast<double>(u0i));
            T wv = static_cast<T>(v - static_cast<double>(v0i));
            std::size_t u1i = std::min(u0i + 1, W - 1), v1i = std::min(v0i + 1, H - 1);
            for (std::size_t ch = 0; ch < C; ++ch) {
                T g = grad_out(ch, r, c);
                grad_in(ch, v0i, u0i) += (1 - wu) * (1 - wv) * g;
                grad_in(ch, v0i, u1i) += wu * (1 - wv) * g;
                grad_in(ch, v1i, u0i) += (1 - wu) * wv * g;
                grad_in(ch, v1i, u1i) += wu * wv * g;
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// Rigid-pose grid resampling
// ---------------------------------------------------------------------------

/// Resamples per-class planar data (C x Z x X on src_spec/src_frame) onto a
/// target lattice by bilinear interpolation at cell centers mapped through
/// target_frame^-1 * src_frame. Target cells without full source coverage
/// take fill[c].
template <typename T>
Tensor<T> resample_planar(const Tensor<T>& data, const GridSpec& src_spec, const Pose2& src_frame,
                          const GridSpec& dst_spec, const Pose2& dst_frame,
                          const std::vector<T>& fill) {
    check(data.rank() == 3, "resample_planar: data must be C x Z x X");
    std::size_t C = data.dim(0);
    check(fill.size() == C, "resample_planar: fill size mismatch");
    check(static_cast<int>(data.dim(1)) == src_spec.depth_cells() &&
              static_cast<int>(data.dim(2)) == src_spec.width_cells(),
          "resample_planar: data does not match source spec");
    int Zd = dst_spec.depth_cells(), Xd = dst_spec.width_cells();
    std::size_t Zs = data.dim(1), Xs = data.dim(2);
    Tensor<T> out({C, static_cast<std::size_t>(Zd), static_cast<std::size_t>(Xd)});
    Pose2 dst_to_src = src_frame.inverse().compose(dst_frame);
    for (int r = 0; r < Zd; ++r) {
        for (int c = 0; c < Xd; ++c) {
            Vec2 p = dst_to_src.apply({dst_spec.cell_center_x(c), dst_spec.cell_center_z(r)});
            double fr = src_spec.row_of(p.z);
            double fc = src_spec.col_of(p.x);
            long long r0 = static_cast<long long>(std::floor(fr));
            long long c0 = static_cast<long long>(std::floor(fc));
            double wr = fr - static_cast<double>(r0);
            double wc = fc - static_cast<double>(c0);
            // Accumulate only in-range corners; reject cells whose
            // interpolation weight is not fully covered by the source.
            double wsum = 0.0;
            double w[4] = {(1 - wr) * (1 - wc), (1 - wr) * wc, wr * (1 - wc), wr * wc};
            long long rr[4] = {r0, r0, r0 + 1, r0 + 1};
            long long cc[4] = {c0, c0 + 1, c0, c0 + 1};
            bool ok[4];
            for (int i = 0; i < 4; ++i) {
                ok[i] = rr[i] >= 0 && rr[i] < static_cast<long long>(Zs) && cc[i] >= 0 &&
                        cc[i] < static_cast<long long>(Xs);
                if (ok[i]) wsum += w[i];
            }
            bool covered = wsum >= 1.0 - 1e-9;
            for (std::size_t ch = 0; ch < C; ++ch) {
                if (!covered) {
                    out(ch, r, c) = fill[ch];
                    continue;
                }
                double acc = 0.0;
                for (int i = 0; i < 4; ++i)
                    if (ok[i] && w[i] != 0.0)
                        acc += w[i] * static_cast<double>(
                                          data(ch, static_cast<std::size_t>(rr[i]),
                                               static_cast<std::size_t>(cc[i])));
                out(ch, r, c) = static_cast<T>(acc);
            }
        }
    }
    return out;
}

}  // namespace pyrocc
