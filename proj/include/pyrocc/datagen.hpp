#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "pyrocc/geometry.hpp"
#include "pyrocc/image.hpp"
#include "pyrocc/tensor.hpp"

namespace pyrocc {

using Polygon = std::vector<Vec2>;

/// Fixed semantic registry for the synthetic world. The first four are the
/// static map layers; vehicle and pedestrian are box-shaped agents.
enum class SceneClass : int {
    kDrivable = 0,
    kCrossing = 1,
    kWalkway = 2,
    kCarpark = 3,
    kVehicle = 4,
    kPedestrian = 5,
};

inline constexpr int kNumSceneClasses = 6;
inline constexpr int kNumStaticClasses = 4;

inline const std::array<std::string, kNumSceneClasses>& scene_class_names() {
    static const std::array<std::string, kNumSceneClasses> names = {
        "drivable", "crossing", "walkway", "carpark", "vehicle", "pedestrian"};
    return names;
}

inline int scene_class_index(const std::string& name) {
    const auto& names = scene_class_names();
    for (int i = 0; i < kNumSceneClasses; ++i)
        if (names[i] == name) return i;
    throw std::invalid_argument("unknown class name: " + name);
}

struct OrientedBox {
    int class_id = static_cast<int>(SceneClass::kVehicle);
    double cx = 0.0, cz = 0.0;   // footprint center, world meters
    double length = 4.5;         // extent along the yaw axis
    double width = 2.0;
    double height = 1.6;
    double yaw = 0.0;
};

/// The ground-plane rectangle under a box: four corners of the length x width
/// rectangle rotated to the box yaw.
inline Polygon box_footprint(const OrientedBox& box) {
    check_domain(box.length > 0 && box.width > 0 && box.height > 0,
                 "box_footprint: box extents must be positive");
    Pose2 pose{box.yaw, box.cx, box.cz};
    double hl = box.length / 2.0, hw = box.width / 2.0;
    return {pose.apply({hw, hl}), pose.apply({hw, -hl}), pose.apply({-hw, -hl}),
            pose.apply({-hw, hl})};
}

/// Vector ground truth: per static class a list of world-frame polygons,
/// plus oriented boxes and the ego trajectory the cameras follow.
struct SceneDescription {
    std::array<std::vector<Polygon>, kNumStaticClasses> static_layers;
    std::vector<OrientedBox> objects;
    std::vector<Pose2> ego_trajectory;

    const std::vector<Polygon>& layer(SceneClass c) const {
        return static_layers[static_cast<int>(c)];
    }
    std::vector<Polygon>& layer(SceneClass c) { return static_layers[static_cast<int>(c)]; }
};

// ---------------------------------------------------------------------------
// Point-in-polygon and overlap predicates
// ---------------------------------------------------------------------------

/// Even-odd membership with points on an edge counting as inside.
inline bool point_in_polygon(const Vec2& p, const Polygon& poly) {
    std::size_t n = poly.size();
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = poly[j];
        const Vec2& b = poly[i];
        // On-edge test: collinear and within the segment's bounding box.
        double cross = (b.x - a.x) * (p.z - a.z) - (b.z - a.z) * (p.x - a.x);
        if (std::abs(cross) < 1e-12 &&
            p.x >= std::min(a.x, b.x) - 1e-12 && p.x <= std::max(a.x, b.x) + 1e-12 &&
            p.z >= std::min(a.z, b.z) - 1e-12 && p.z <= std::max(a.z, b.z) + 1e-12)
            return true;
        if ((a.z <= p.z) != (b.z <= p.z)) {
            double x_cross = a.x + (p.z - a.z) * (b.x - a.x) / (b.z - a.z);
            if (p.x < x_cross) inside = !inside;
        }
    }
    return inside;
}

/// Separating-axis overlap test for convex polygons.
inline bool convex_polygons_overlap(const Polygon& a, const Polygon& b) {
    auto separated_by_edge_normals = [](const Polygon& p, const Polygon& q) {
        std::size_t n = p.size();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            double nx = -(p[i].z - p[j].z);
            double nz = p[i].x - p[j].x;
            double pmin = 1e300, pmax = -1e300, qmin = 1e300, qmax = -1e300;
            for (const Vec2& v : p) {
                double d = nx * v.x + nz * v.z;
                pmin = std::min(pmin, d);
                pmax = std::max(pmax, d);
            }
            for (const Vec2& v : q) {
                double d = nx * v.x + nz * v.z;
                qmin = std::min(qmin, d);
                qmax = std::max(qmax, d);
            }
            if (pmax < qmin || qmax < pmin) return true;
        }
        return false;
    };
    return !separated_by_edge_normals(a, b) && !separated_by_edge_normals(b, a);
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

/// Scanline-rasterizes a polygon given in the grid's own frame: a cell is set
/// iff its center lies inside under the even-odd rule, with on-edge centers
/// counting as inside.
inline Tensor<std::uint8_t> rasterize_polygon_local(const Polygon& poly, const GridSpec& grid) {
    check(poly.size() >= 3, "rasterize_polygon: polygon needs at least 3 vertices");
    int Z = grid.depth_cells(), X = grid.width_cells();
    Tensor<std::uint8_t> out({static_cast<std::size_t>(Z), static_cast<std::size_t>(X)});
    std::vector<double> crossings;
    std::vector<std::pair<double, double>> spans;  // closed on-row horizontal edges
    for (int r = 0; r < Z; ++r) {
        double z = grid.cell_center_z(r);
        crossings.clear();
        spans.clear();
        std::size_t n = poly.size();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Vec2& a = poly[j];
            const Vec2& b = poly[i];
            if (a.z == z && b.z == z) {
                spans.emplace_back(std::min(a.x, b.x), std::max(a.x, b.x));
                continue;
            }
            if ((a.z <= z) != (b.z <= z))
                crossings.push_back(a.x + (z - a.z) * (b.x - a.x) / (b.z - a.z));
        }
        std::sort(crossings.begin(), crossings.end());
        for (std::size_t i = 0; i + 1 < crossings.size(); i += 2)
            spans.emplace_back(crossings[i], crossings[i + 1]);
        for (const auto& [lo, hi] : spans) {
            int c0 = static_cast<int>(std::ceil(grid.col_of(lo)));
            int c1 = static_cast<int>(std::floor(grid.col_of(hi)));
            for (int c = std::max(0, c0); c <= std::min(X - 1, c1); ++c) out(r, c) = 1;
        }
    }
    return out;
}

/// Rasterizes a world-frame polygon onto a camera-frame grid: the annotation
/// is first mapped into the camera coordinate system through the pose.
inline Tensor<std::uint8_t> rasterize_polygon(const Polygon& world_poly, const CameraModel& camera,
                                              const GridSpec& grid) {
    Pose2 world_to_cam = camera.pose.inverse();
    Polygon local;
    local.reserve(world_poly.size());
    for (const Vec2& p : world_poly) local.push_back(world_to_cam.apply(p));
    return rasterize_polygon_local(local, grid);
}

/// Rasterizes a world-frame polygon onto an arbitrary grid frame.
inline Tensor<std::uint8_t> rasterize_polygon_frame(const Polygon& world_poly, const Pose2& frame,
                                                    const GridSpec& grid) {
    Pose2 world_to_frame = frame.inverse();
    Polygon local;
    local.reserve(world_poly.size());
    for (const Vec2& p : world_poly) local.push_back(world_to_frame.apply(p));
    return rasterize_polygon_local(local, grid);
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

struct DatagenConfig {
    int image_width = 256;
    int image_height = 256;
    double focal = 256.0;        // pixels; 53 deg horizontal FoV at 256 px
    double camera_height = 1.5;  // meters above ground
    GridSpec grid = GridSpec::output_grid();
    std::vector<std::string> classes = {"drivable", "crossing", "walkway",
                                        "carpark",  "vehicle",  "pedestrian"};
    int frames_per_scene = 1;
    int max_vehicles = 8;
    int max_pedestrians = 4;
    int ray_count = 720;

    CameraModel camera_at(const Pose2& pose) const {
        CameraModel cam;
        cam.f = focal;
        cam.u0 = (image_width - 1) / 2.0;
        cam.v0 = (image_height - 1) / 2.0;
        cam.image_width = image_width;
        cam.image_height = image_height;
        cam.pose = pose;
        cam.camera_height = camera_height;
        return cam;
    }

    std::vector<int> class_ids() const {
        std::vector<int> ids;
        for (const auto& name : classes) ids.push_back(scene_class_index(name));
        return ids;
    }
};

namespace detail {

/// Band polygon offset from a polyline: points shifted by [lo, hi] along the
/// left normal, walked forward on one side and back on the other.
inline Polygon offset_band(const std::vector<Vec2>& line, const std::vector<Vec2>& normals,
                           double lo, double hi) {
    Polygon poly;
    poly.reserve(line.size() * 2);
    for (std::size_t i = 0; i < line.size(); ++i)
        poly.push_back({line[i].x + normals[i].x * hi, line[i].z + normals[i].z * hi});
    for (std::size_t i = line.size(); i-- > 0;)
        poly.push_back({line[i].x + normals[i].x * lo, line[i].z + normals[i].z * lo});
    return poly;
}

inline Polygon local_rect(const Pose2& pose, double x_lo, double x_hi, double z_lo, double z_hi) {
    return {pose.apply({x_lo, z_lo}), pose.apply({x_hi, z_lo}), pose.apply({x_hi, z_hi}),
            pose.apply({x_lo, z_hi})};
}

}  // namespace detail

/// Deterministic synthetic scene: a curved road band with walkway strips,
/// optional crossings and carpark, plus vehicles and pedestrians placed
/// without footprint overlap. The ego trajectory follows the road.
inline SceneDescription generate_scene(std::uint64_t seed, const DatagenConfig& cfg) {
    auto rng = make_rng(seed, 101);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    SceneDescription scene;

    // Centerline: piecewise-constant curvature, sampled every 2 m. The ego
    // starts at arclength 40 (world origin) heading +z.
    const double ds = 2.0;
    const int n_pts = 81;           // s in [-40, 120] around the ego start
    const int ego_start_idx = 20;   // s = 0
    double k1 = uniform(-0.010, 0.010), k2 = uniform(-0.010, 0.010), k3 = uniform(-0.010, 0.010);
    std::vector<Vec2> line(n_pts), normals(n_pts);
    std::vector<double> headings(n_pts);
    {
        // Integrate forward from the ego start, then backward.
        headings[ego_start_idx] = 0.0;
        line[ego_start_idx] = {0.0, 0.0};
        auto kappa = [&](int i) { return i < n_pts / 3 ? k1 : (i < 2 * n_pts / 3 ? k2 : k3); };
        for (int i = ego_start_idx + 1; i < n_pts; ++i) {
            headings[i] = headings[i - 1] + kappa(i - 1) * ds;
            line[i] = {line[i - 1].x + std::sin(headings[i - 1]) * ds,
                       line[i - 1].z + std::cos(headings[i - 1]) * ds};
        }
        for (int i = ego_start_idx - 1; i >= 0; --i) {
            headings[i] = headings[i + 1] - kappa(i) * ds;
            line[i] = {line[i + 1].x - std::sin(headings[i]) * ds,
                       line[i + 1].z - std::cos(headings[i]) * ds};
        }
        for (int i = 0; i < n_pts; ++i) {
            double c = std::cos(headings[i]), s = std::sin(headings[i]);
            normals[i] = {c, -s};  // left normal of direction (s, c)
        }
    }

    double half_width = uniform(3.5, 6.5);
    scene.layer(SceneClass::kDrivable)
        .push_back(detail::offset_band(line, normals, -half_width, half_width));

    double walk_width = uniform(1.5, 2.5);
    bool walk_left = unit(rng) < 0.9, walk_right = unit(rng) < 0.9;
    if (walk_left)
        scene.layer(SceneClass::kWalkway)
            .push_back(detail::offset_band(line, normals, half_width + 0.3,
                                           half_width + 0.3 + walk_width));
    if (walk_right)
        scene.layer(SceneClass::kWalkway)
            .push_back(detail::offset_band(line, normals, -half_width - 0.3 - walk_width,
                                           -half_width - 0.3));

    auto pose_at = [&](double s) {
        double idx = (s + 40.0) / ds;
        int i = std::clamp(static_cast<int>(idx), 0, n_pts - 2);
        double t = idx - i;
        double heading = headings[i] + (headings[i + 1] - headings[i]) * t;
        return Pose2{heading, line[i].x + (line[i + 1].x - line[i].x) * t,
                     line[i].z + (line[i + 1].z - line[i].z) * t};
    };

    int n_crossings = static_cast<int>(uniform(0.0, 3.0));  // 0..2
    for (int i = 0; i < n_crossings; ++i) {
        double s = uniform(8.0, 85.0);
        scene.layer(SceneClass::kCrossing)
            .push_back(detail::local_rect(pose_at(s), -half_width, half_width, -1.5, 1.5));
    }

    if (unit(rng) < 0.4) {
        double s = uniform(5.0, 80.0);
        double side = unit(rng) < 0.5 ? 1.0 : -1.0;
        double lo = side * (half_width + 2.5), hi = side * (half_width + 2.5 + 10.0);
        scene.layer(SceneClass::kCarpark)
            .push_back(detail::local_rect(pose_at(s), std::min(lo, hi), std::max(lo, hi), -8.0, 8.0));
    }

    // Ego trajectory: along the lane at a seeded offset and speed.
    double ego_offset = uniform(-1.0, 1.0) * std::max(0.0, half_width - 1.8);
    double speed = uniform(4.0, 7.0);
    for (int t = 0; t < std::max(1, cfg.frames_per_scene); ++t) {
        Pose2 p = pose_at(t * speed);
        Vec2 n = {std::cos(p.angle), -std::sin(p.angle)};
        scene.ego_trajectory.push_back(
            {p.angle + uniform(-0.02, 0.02), p.tx + n.x * ego_offset, p.tz + n.z * ego_offset});
    }

    auto overlaps_existing = [&](const Polygon& fp) {
        for (const OrientedBox& other : scene.objects)
            if (convex_polygons_overlap(fp, box_footprint(other))) return true;
        // Keep a clearance corridor around the ego positions.
        for (const Pose2& ego : scene.ego_trajectory)
            if (convex_polygons_overlap(fp, detail::local_rect(ego, -1.2, 1.2, -2.4, 2.4)))
                return true;
        return false;
    };

    int n_vehicles = static_cast<int>(uniform(0.0, cfg.max_vehicles + 1.0));
    n_vehicles = std::min(n_vehicles, cfg.max_vehicles);
    for (int i = 0; i < n_vehicles; ++i) {
        for (int attempt = 0; attempt < 40; ++attempt) {
            double s = uniform(-15.0, 95.0);
            Pose2 road = pose_at(s);
            double lat = uniform(-(half_width - 1.3), half_width - 1.3);
            OrientedBox box;
            box.class_id = static_cast<int>(SceneClass::kVehicle);
            box.yaw = road.angle + uniform(-0.06, 0.06);
            Vec2 n = {std::cos(road.angle), -std::sin(road.angle)};
            box.cx = road.tx + n.x * lat;
            box.cz = road.tz + n.z * lat;
            box.length = uniform(4.0, 5.2);
            box.width = uniform(1.7, 2.1);
            box.height = uniform(1.35, 1.85);
            if (!overlaps_existing(box_footprint(box))) {
                scene.objects.push_back(box);
                break;
            }
        }
    }

    int n_peds = static_cast<int>(uniform(0.0, cfg.max_pedestrians + 1.0));
    n_peds = std::min(n_peds, cfg.max_pedestrians);
    for (int i = 0; i < n_peds; ++i) {
        for (int attempt = 0; attempt < 40; ++attempt) {
            double s = uniform(-5.0, 90.0);
            Pose2 road = pose_at(s);
            double side = unit(rng) < 0.5 ? 1.0 : -1.0;
            double lat = side * uniform(half_width + 0.5, half_width + 0.3 + walk_width);
            OrientedBox box;
            box.class_id = static_cast<int>(SceneClass::kPedestrian);
            box.yaw = uniform(-3.1, 3.1);
            Vec2 n = {std::cos(road.angle), -std::sin(road.angle)};
            box.cx = road.tx + n.x * lat;
            box.cz = road.tz + n.z * lat;
            box.length = uniform(0.4, 0.65);
            box.width = uniform(0.4, 0.65);
            box.height = uniform(1.55, 1.9);
            if (!overlaps_existing(box_footprint(box))) {
                scene.objects.push_back(box);
                break;
            }
        }
    }

    return scene;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline Rgb scene_class_color(int class_id) {
    static const std::array<Rgb, kNumSceneClasses> palette = {{
        {62, 62, 70},     // drivable
        {228, 228, 228},  // crossing
        {178, 148, 108},  // walkway
        {92, 112, 160},   // carpark
        {196, 44, 38},    // vehicle
        {236, 201, 44},   // pedestrian
    }};
    return palette[static_cast<std::size_t>(class_id)];
}

inline constexpr Rgb kSkyColor{142, 178, 232};
inline constexpr Rgb kOffroadColor{140, 158, 132};

/// Flat-ground perspective render: static layers are painted on the ground
/// plane by class color (crossing over walkway over drivable over carpark),
/// then boxes are drawn far-to-near as upright class-colored rectangles of
/// their projected screen extent.
inline Tensor<std::uint8_t> render_image(const SceneDescription& scene, const CameraModel& camera,
                                         int width, int height) {
    check_domain(camera.camera_height > 0.0, "render_image: camera must sit above the ground");
    Tensor<std::uint8_t> img({3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
    auto put = [&](int u, int v, Rgb c) {
        img(0, static_cast<std::size_t>(v), static_cast<std::size_t>(u)) = c.r;
        img(1, static_cast<std::size_t>(v), static_cast<std::size_t>(u)) = c.g;
        img(2, static_cast<std::size_t>(v), static_cast<std::size_t>(u)) = c.b;
    };

    const SceneClass paint_order[4] = {SceneClass::kCarpark, SceneClass::kDrivable,
                                       SceneClass::kWalkway, SceneClass::kCrossing};
    const double far_clip = 90.0;
    for (int v = 0; v < height; ++v) {
        for (int u = 0; u < width; ++u) {
            double dv = v - camera.v0;
            if (dv <= 0.0) {
                put(u, v, kSkyColor);
                continue;
            }
            double z = camera.f * camera.camera_height / dv;
            if (z > far_clip) {
                put(u, v, kOffroadColor);
                continue;
            }
            double x = (u - camera.u0) * z / camera.f;
            Vec2 world = camera.pose.apply({x, z});
            Rgb color = kOffroadColor;
            for (SceneClass layer : paint_order)
                for (const Polygon& poly : scene.layer(layer))
                    if (point_in_polygon(world, poly)) {
                        color = scene_class_color(static_cast<int>(layer));
                        break;
                    }
            put(u, v, color);
        }
    }

    // Boxes, far to near.
    Pose2 world_to_cam = camera.pose.inverse();
    std::vector<std::pair<double, const OrientedBox*>> order;
    for (const OrientedBox& box : scene.objects) {
        Vec2 local = world_to_cam.apply({box.cx, box.cz});
        if (local.z > 0.5) order.emplace_back(local.z, &box);
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [z_center, boxp] : order) {
        Polygon fp = box_footprint(*boxp);
        double u_min = 1e300, u_max = -1e300;
        for (const Vec2& corner : fp) {
            Vec2 local = world_to_cam.apply(corner);
            double zc = std::max(local.z, 0.3);
            double u = camera.f * local.x / zc + camera.u0;
            u_min = std::min(u_min, u);
            u_max = std::max(u_max, u);
        }
        double v_bottom = camera.f * camera.camera_height / z_center + camera.v0;
        double v_top = v_bottom - camera.f * boxp->height / z_center;
        int u0i = std::max(0, static_cast<int>(std::ceil(u_min)));
        int u1i = std::min(width - 1, static_cast<int>(std::floor(u_max)));
        int v0i = std::max(0, static_cast<int>(std::ceil(v_top)));
        int v1i = std::min(height - 1, static_cast<int>(std::floor(v_bottom)));
        Rgb color = scene_class_color(boxp->class_id);
        for (int v = v0i; v <= v1i; ++v)
            for (int u = u0i; u <= u1i; ++u) put(u, v, color);
    }
    return img;
}

// ---------------------------------------------------------------------------
// Visibility
// ---------------------------------------------------------------------------

/// First intersection parameter of ray o + t*d with a polygon boundary, or
/// +inf if the ray misses it.
inline double ray_polygon_hit(const Vec2& origin, const Vec2& dir, const Polygon& poly) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = poly[j];
        const Vec2& b = poly[i];
        double ex = b.x - a.x, ez = b.z - a.z;
        double denom = dir.x * ez - dir.z * ex;
        if (std::abs(denom) < 1e-15) continue;
        double t = ((a.x - origin.x) * ez - (a.z - origin.z) * ex) / denom;
        double s = ((a.x - origin.x) * dir.z - (a.z - origin.z) * dir.x) / denom;
        if (t > 1e-9 && s >= 0.0 && s <= 1.0) best = std::min(best, t);
    }
    return best;
}

/// Simulated planar lidar: ray_count rays spread over the horizontal FoV from
/// the camera origin, each truncated at its first object-footprint
/// intersection. A cell is visible iff its center's image column lies within
/// the FoV and at least one surviving ray segment crosses the cell.
inline Tensor<std::uint8_t> visibility_mask(const SceneDescription& scene,
                                            const CameraModel& camera, const GridSpec& grid,
                                            int ray_count) {
    check(ray_count >= grid.width_cells(), "visibility_mask: too few rays for the grid width");
    int Z = grid.depth_cells(), X = grid.width_cells();
    Tensor<std::uint8_t> mask({static_cast<std::size_t>(Z), static_cast<std::size_t>(X)});

    Pose2 world_to_cam = camera.pose.inverse();
    std::vector<Polygon> blockers;
    for (const OrientedBox& box : scene.objects) {
        Polygon fp = box_footprint(box);
        for (Vec2& p : fp) p = world_to_cam.apply(p);
        blockers.push_back(std::move(fp));
    }

    double theta_min = std::atan2(0.0 - camera.u0, camera.f);
    double theta_max = std::atan2(camera.image_width - 1.0 - camera.u0, camera.f);
    double x_lo = -grid.x_half_extent, x_hi = grid.x_half_extent;
    double z_lo = grid.z_min, z_hi = grid.z_max;

    Tensor<std::uint8_t> ray_hit({static_cast<std::size_t>(Z), static_cast<std::size_t>(X)});
    for (int i = 0; i < ray_count; ++i) {
        double theta = theta_min + (i + 0.5) * (theta_max - theta_min) / ray_count;
        Vec2 dir{std::sin(theta), std::cos(theta)};
        double t_hit = std::numeric_limits<double>::infinity();
        for (const Polygon& poly : blockers)
            t_hit = std::min(t_hit, ray_polygon_hit({0.0, 0.0}, dir, poly));

        // Clip to the grid rectangle (slab method).
        double t0 = 0.0, t1 = std::min(t_hit, 1e6);
        auto clip = [&](double d, double lo, double hi, double o) {
            if (std::abs(d) < 1e-15) {
                if (o < lo || o > hi) t1 = -1.0;
                return;
            }
            double ta = (lo - o) / d, tb = (hi - o) / d;
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
        };
        clip(dir.x, x_lo, x_hi, 0.0);
        clip(dir.z, z_lo, z_hi, 0.0);
        if (t1 <= t0) continue;

        // Grid traversal: mark every cell whose entry parameter precedes the
        // segment end.
        double px = dir.x * t0, pz = dir.z * t0;
        int cx = std::clamp(static_cast<int>((px - x_lo) / grid.resolution), 0, X - 1);
        int cz = std::clamp(static_cast<int>((pz - z_lo) / grid.resolution), 0, Z - 1);
        int step_x = dir.x > 0 ? 1 : -1, step_z = dir.z > 0 ? 1 : -1;
        double t_max_x = dir.x != 0.0
                             ? (x_lo + (cx + (step_x > 0 ? 1 : 0)) * grid.resolution) / dir.x
                             : std::numeric_limits<double>::infinity();
        double t_max_z = dir.z != 0.0
                             ? (z_lo + (cz + (step_z > 0 ? 1 : 0)) * grid.resolution) / dir.z
                             : std::numeric_limits<double>::infinity();
        double t_delta_x = dir.x != 0.0 ? grid.resolution / std::abs(dir.x)
                                        : std::numeric_limits<double>::infinity();
        double t_delta_z = dir.z != 0.0 ? grid.resolution / std::abs(dir.z)
                                        : std::numeric_limits<double>::infinity();
        double t = t0;
        while (t < t1 - 1e-12) {
            ray_hit(static_cast<std::size_t>(cz), static_cast<std::size_t>(cx)) = 1;
            if (t_max_x < t_max_z) {
                t = t_max_x;
                t_max_x += t_delta_x;
                cx += step_x;
                if (cx < 0 || cx >= X) break;
            } else {
                t = t_max_z;
                t_max_z += t_delta_z;
                cz += step_z;
                if (cz < 0 || cz >= Z) break;
            }
        }
    }

    for (int r = 0; r < Z; ++r) {
        double z = grid.cell_center_z(r);
        for (int c = 0; c < X; ++c) {
            double u = camera.f * grid.cell_center_x(c) / z + camera.u0;
            bool in_fov = u >= 0.0 && u <= camera.image_width - 1.0;
            mask(r, c) = (in_fov && ray_hit(r, c)) ? 1 : 0;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

/// One training/eval record: rendered image, its camera, per-class binary
/// label grids and the visibility mask, all on the output GridSpec. Labels
/// are not visibility-masked at generation time; masking happens in the loss
/// and the evaluator.
struct Sample {
    int scene_id = 0;
    int frame_id = 0;
    Tensor<std::uint8_t> image;       // 3 x H x W
    CameraModel camera;
    std::vector<std::string> class_names;
    GridSpec grid;
    Tensor<std::uint8_t> labels;      // C x depth x width
    Tensor<std::uint8_t> visibility;  // depth x width
};

inline Tensor<std::uint8_t> rasterize_labels(const SceneDescription& scene,
                                             const CameraModel& camera, const GridSpec& grid,
                                             const std::vector<int>& class_ids) {
    int Z = grid.depth_cells(), X = grid.width_cells();
    Tensor<std::uint8_t> labels(
        {class_ids.size(), static_cast<std::size_t>(Z), static_cast<std::size_t>(X)});
    for (std::size_t c = 0; c < class_ids.size(); ++c) {
        int id = class_ids[c];
        std::vector<const Polygon*> polys;
        std::vector<Polygon> storage;
        if (id < kNumStaticClasses) {
            for (const Polygon& p : scene.static_layers[id]) polys.push_back(&p);
        } else {
            for (const OrientedBox& box : scene.objects)
                if (box.class_id == id) storage.push_back(box_footprint(box));
            for (const Polygon& p : storage) polys.push_back(&p);
        }
        for (const Polygon* poly : polys) {
            Tensor<std::uint8_t> one = rasterize_polygon(*poly, camera, grid);
            for (int i = 0; i < Z * X; ++i)
                labels[c * Z * X + i] |= one[i];
        }
    }
    return labels;
}

inline Sample make_sample(const SceneDescription& scene, int scene_id, int frame_id,
                          const DatagenConfig& cfg) {
    check(frame_id >= 0 && frame_id < static_cast<int>(scene.ego_trajectory.size()),
          "make_sample: frame_id out of range");
    Sample s;
    s.scene_id = scene_id;
    s.frame_id = frame_id;
    s.camera = cfg.camera_at(scene.ego_trajectory[frame_id]);
    s.class_names = cfg.classes;
    s.grid = cfg.grid;
    s.image = render_image(scene, s.camera, cfg.image_width, cfg.image_height);
    s.labels = rasterize_labels(scene, s.camera, cfg.grid, cfg.class_ids());
    s.visibility = visibility_mask(scene, s.camera, cfg.grid, cfg.ray_count);
    return s;
}

}  // namespace pyrocc
