#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pyrocc/occupancy.hpp"

using namespace pyrocc;

namespace {

OccupancyGrid random_grid(const GridSpec& spec, double prior_p, std::uint64_t seed,
                          std::size_t classes = 2) {
    std::vector<std::string> names;
    std::vector<double> priors;
    for (std::size_t c = 0; c < classes; ++c) {
        names.push_back("c" + std::to_string(c));
        priors.push_back(prior_p);
    }
    OccupancyGrid g = OccupancyGrid::prior_grid(spec, Pose2{}, names, priors);
    auto rng = make_rng(seed, 1);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    for (std::size_t i = 0; i < g.logodds.size(); ++i) g.logodds[i] = dist(rng);
    return g;
}

const GridSpec kSmall{0.0, 4.0, 2.0, 0.5};

}  // namespace

TEST_CASE("log-odds conversions") {
    CHECK(to_logodds(0.5) == Catch::Approx(0.0).margin(1e-15));
    CHECK(to_logodds(0.8) == Catch::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK_THROWS_AS(to_logodds(0.0), std::domain_error);
    CHECK_THROWS_AS(to_logodds(1.0), std::domain_error);
    CHECK(prior_logodds(0.1) == Catch::Approx(-2.1972245773362196).epsilon(1e-10));
    CHECK(prior_logodds(0.9) == Catch::Approx(+2.1972245773362196).epsilon(1e-10));
    for (double p = 0.001; p < 0.999; p += 0.0173)
        CHECK(sigmoid(to_logodds(p)) == Catch::Approx(p).margin(1e-12));
    // No overflow over the wide log-odds range.
    for (double l = -100.0; l <= 100.0; l += 7.3) {
        double p = sigmoid(l);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("fuse: the prior grid is the identity, bit-exactly") {
    OccupancyGrid prior = OccupancyGrid::prior_grid(kSmall, Pose2{}, {"c0", "c1"}, {0.3, 0.7});
    OccupancyGrid x = random_grid(kSmall, 0.3, 11);
    x.prior = prior.prior;
    OccupancyGrid fused = fuse(prior, x);
    for (std::size_t i = 0; i < x.logodds.size(); ++i) CHECK(fused.logodds[i] == x.logodds[i]);
}

TEST_CASE("fuse: two p=0.8 observations give p=16/17") {
    OccupancyGrid a = OccupancyGrid::prior_grid(kSmall, Pose2{}, {"c0"}, {0.5});
    OccupancyGrid b = a;
    a.logodds.fill(to_logodds(0.8));
    b.logodds.fill(to_logodds(0.8));
    OccupancyGrid fused = fuse(a, b);
    Tensor<double> p = to_probabilities(fused);
    for (std::size_t i = 0; i < p.size(); ++i)
        CHECK(p[i] == Catch::Approx(16.0 / 17.0).margin(1e-9));
}

TEST_CASE("fuse: mirrored evidence cancels to the prior") {
    OccupancyGrid x = random_grid(kSmall, 0.5, 13);
    OccupancyGrid mirror = x;
    for (std::size_t i = 0; i < x.logodds.size(); ++i) mirror.logodds[i] = -x.logodds[i];
    OccupancyGrid fused = fuse(x, mirror);
    Tensor<double> p = to_probabilities(fused);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("fuse: frame/spec mismatches are contract errors") {
    OccupancyGrid a = random_grid(kSmall, 0.5, 1);
    OccupancyGrid b = a;
    b.frame = Pose2{0.1, 0.0, 0.0};
    CHECK_THROWS_AS(fuse(a, b), std::invalid_argument);
    OccupancyGrid c = random_grid(GridSpec{0.0, 4.0, 2.0, 1.0}, 0.5, 2);
    CHECK_THROWS_AS(fuse(a, c), std::invalid_argument);
}

TEST_CASE("fusion is commutative and associative in log-odds") {
    for (std::uint64_t trial = 0; trial < 25; ++trial) {
        OccupancyGrid a = random_grid(kSmall, 0.4, 100 + trial);
        OccupancyGrid b = random_grid(kSmall, 0.4, 200 + trial);
        OccupancyGrid c = random_grid(kSmall, 0.4, 300 + trial);
        b.prior = a.prior;
        c.prior = a.prior;
        OccupancyGrid ab = fuse(a, b), ba = fuse(b, a);
        for (std::size_t i = 0; i < ab.logodds.size(); ++i)
            CHECK(ab.logodds[i] == Catch::Approx(ba.logodds[i]).margin(1e-9));
        OccupancyGrid ab_c = fuse(fuse(a, b), c);
        OccupancyGrid a_bc = fuse(a, fuse(b, c));
        for (std::size_t i = 0; i < ab_c.logodds.size(); ++i)
            CHECK(ab_c.logodds[i] == Catch::Approx(a_bc.logodds[i]).margin(1e-9));
    }
}

TEST_CASE("to_probabilities matches the sigmoid oracle") {
    OccupancyGrid g = random_grid(kSmall, 0.5, 17);
    Tensor<double> p = to_probabilities(g);
    for (std::size_t i = 0; i < p.size(); ++i)
        CHECK(p[i] == Catch::Approx(1.0 / (1.0 + std::exp(-g.logodds[i]))).margin(1e-12));
}

namespace {

CameraPrediction constant_prediction(const GridSpec& spec, const Pose2& pose, float logit,
                                     std::size_t classes = 1) {
    CameraPrediction pred;
    pred.logits = Tensor<float>::full({classes, static_cast<std::size_t>(spec.depth_cells()),
                                       static_cast<std::size_t>(spec.width_cells())},
                                      logit);
    pred.camera.pose = pose;
    return pred;
}

}  // namespace

TEST_CASE("fuse_cameras: single camera at a lattice-aligned pose pads with prior") {
    GridSpec cam_spec{1.0, 5.0, 2.0, 0.5};
    GridSpec world_spec{-8.0, 8.0, 8.0, 0.5};
    CameraPrediction pred = constant_prediction(cam_spec, Pose2{}, 1.25f);
    OccupancyGrid world = fuse_cameras(std::span(&pred, 1), cam_spec, world_spec, Pose2{}, {"c0"},
                                       {0.5});
    // The camera lattice is aligned with the world lattice, so every camera
    // cell lands exactly and everything else stays at the prior.
    int covered = 0;
    for (int r = 0; r < world_spec.depth_cells(); ++r)
        for (int c = 0; c < world_spec.width_cells(); ++c) {
            double z = world_spec.cell_center_z(r), x = world_spec.cell_center_x(c);
            bool inside = z > cam_spec.z_min && z < cam_spec.z_max &&
                          std::abs(x) < cam_spec.x_half_extent;
            if (inside) {
                CHECK(world.logodds(0, r, c) == Catch::Approx(1.25).margin(1e-9));
                ++covered;
            } else {
                CHECK(world.logodds(0, r, c) == 0.0);
            }
        }
    CHECK(covered == cam_spec.depth_cells() * cam_spec.width_cells());
}

TEST_CASE("fuse_cameras: disjoint and overlapping coverage") {
    GridSpec cam_spec{1.0, 5.0, 2.0, 0.5};
    GridSpec world_spec{-16.0, 16.0, 16.0, 0.5};
    float l8 = static_cast<float>(to_logodds(0.8));

    SECTION("disjoint cameras do not interact") {
        std::vector<CameraPrediction> preds = {
            constant_prediction(cam_spec, Pose2{0.0, -8.0, 0.0}, l8),
            constant_prediction(cam_spec, Pose2{0.0, 8.0, 0.0}, l8)};
        OccupancyGrid world =
            fuse_cameras(preds, cam_spec, world_spec, Pose2{}, {"c0"}, {0.5});
        double z = 3.0;
        int r = static_cast<int>(std::llround(world_spec.row_of(z)));
        int c_left = static_cast<int>(std::llround(world_spec.col_of(-8.0)));
        int c_right = static_cast<int>(std::llround(world_spec.col_of(8.0)));
        int c_mid = static_cast<int>(std::llround(world_spec.col_of(0.0)));
        CHECK(sigmoid(world.logodds(0, r, c_left)) == Catch::Approx(0.8).margin(1e-6));
        CHECK(sigmoid(world.logodds(0, r, c_right)) == Catch::Approx(0.8).margin(1e-6));
        CHECK(world.logodds(0, r, c_mid) == 0.0);
    }

    SECTION("50% overlap doubles the evidence there") {
        std::vector<CameraPrediction> preds = {
            constant_prediction(cam_spec, Pose2{0.0, -2.0, 0.0}, l8),
            constant_prediction(cam_spec, Pose2{0.0, 2.0, 0.0}, l8)};
        OccupancyGrid world =
            fuse_cameras(preds, cam_spec, world_spec, Pose2{}, {"c0"}, {0.5});
        double z = 3.0;
        int r = static_cast<int>(std::llround(world_spec.row_of(z)));
        int overlap = static_cast<int>(std::llround(world_spec.col_of(0.0)));
        int only_a = static_cast<int>(std::llround(world_spec.col_of(-3.0)));
        int only_b = static_cast<int>(std::llround(world_spec.col_of(3.0)));
        CHECK(sigmoid(world.logodds(0, r, overlap)) == Catch::Approx(16.0 / 17.0).margin(1e-9));
        CHECK(sigmoid(world.logodds(0, r, only_a)) == Catch::Approx(0.8).margin(1e-6));
        CHECK(sigmoid(world.logodds(0, r, only_b)) == Catch::Approx(0.8).margin(1e-6));
    }
}

TEST_CASE("accumulate_temporal: fold properties") {
    GridSpec cam_spec{1.0, 5.0, 2.0, 0.5};
    GridSpec world_spec{-8.0, 8.0, 8.0, 0.5};
    auto rng = make_rng(4, 0);
    std::uniform_real_distribution<double> pos(-1.0, 1.0);
    std::vector<std::vector<CameraPrediction>> timesteps;
    for (int t = 0; t < 6; ++t) {
        CameraPrediction pred =
            constant_prediction(cam_spec, Pose2{0.15 * pos(rng), pos(rng), pos(rng)}, 0.0f, 2);
        auto r2 = make_rng(50 + t, 0);
        std::uniform_real_distribution<float> logit(-3.0f, 3.0f);
        for (std::size_t i = 0; i < pred.logits.size(); ++i) pred.logits[i] = logit(r2);
        timesteps.push_back({pred});
    }
    std::vector<std::string> classes = {"drivable", "vehicle"};
    std::vector<double> priors = {0.5, 0.5};

    OccupancyGrid one = accumulate_temporal(std::span(timesteps.data(), 1), cam_spec, world_spec,
                                            Pose2{}, classes, priors);
    OccupancyGrid direct =
        fuse_cameras(timesteps[0], cam_spec, world_spec, Pose2{}, classes, priors);
    for (std::size_t i = 0; i < one.logodds.size(); ++i)
        CHECK(one.logodds[i] == Catch::Approx(direct.logodds[i]).margin(1e-12));

    OccupancyGrid all =
        accumulate_temporal(timesteps, cam_spec, world_spec, Pose2{}, classes, priors);
    std::vector<std::vector<CameraPrediction>> shuffled = {timesteps[4], timesteps[1], timesteps[5],
                                                           timesteps[0], timesteps[3], timesteps[2]};
    OccupancyGrid permuted =
        accumulate_temporal(shuffled, cam_spec, world_spec, Pose2{}, classes, priors);
    for (std::size_t i = 0; i < all.logodds.size(); ++i)
        CHECK(all.logodds[i] == Catch::Approx(permuted.logodds[i]).margin(1e-9));

    SECTION("repeated confident observations grow monotonically") {
        CameraPrediction confident = constant_prediction(cam_spec, Pose2{}, 2.0f);
        OccupancyGrid world =
            OccupancyGrid::prior_grid(world_spec, Pose2{}, {"c0"}, {0.5});
        double prev = 0.0;
        for (int t = 0; t < 5; ++t) {
            world = fuse(world, fuse_cameras(std::span(&confident, 1), cam_spec, world_spec,
                                             Pose2{}, {"c0"}, {0.5}));
            int r = static_cast<int>(std::llround(world_spec.row_of(3.0)));
            int c = static_cast<int>(std::llround(world_spec.col_of(0.0)));
            CHECK(world.logodds(0, r, c) > prev);
            prev = world.logodds(0, r, c);
        }
    }

    SECTION("static-only accumulation keeps just the static subset") {
        OccupancyGrid statics = accumulate_temporal(timesteps, cam_spec, world_spec, Pose2{},
                                                    classes, priors, {0});
        REQUIRE(statics.class_names == std::vector<std::string>{"drivable"});
        for (std::size_t i = 0; i < statics.logodds.size(); ++i)
            CHECK(statics.logodds[i] == Catch::Approx(all.logodds[i]).margin(1e-9));
    }
}

TEST_CASE("clamp_evidence caps accumulated log-odds") {
    OccupancyGrid g = random_grid(kSmall, 0.5, 23);
    g.logodds[0] = 120.0;
    g.logodds[1] = -3000.0;
    clamp_evidence(g);
    CHECK(g.logodds[0] == 50.0);
    CHECK(g.logodds[1] == -50.0);
}
