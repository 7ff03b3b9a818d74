#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pyrocc/network.hpp"

using namespace pyrocc;

namespace {

NetworkConfig tiny_config(Variant variant) {
    NetworkConfig cfg;
    cfg.variant = variant;
    cfg.stem_widths = {4, 6};
    cfg.backbone_widths = {8, 8, 8, 8, 8};
    cfg.fpn_channels = 8;
    cfg.bev_channels = 8;
    cfg.topdown_channels = 8;
    cfg.norm_groups = 4;
    cfg.num_classes = 2;
    cfg.image_width = 64;
    cfg.image_height = 64;
    cfg.focal = 64.0;
    return cfg;
}

CameraModel camera_for(const NetworkConfig& cfg) {
    CameraModel cam;
    cam.f = cfg.focal;
    cam.u0 = (cfg.image_width - 1) / 2.0;
    cam.v0 = (cfg.image_height - 1) / 2.0;
    cam.image_width = cfg.image_width;
    cam.image_height = cfg.image_height;
    return cam;
}

Tensor<float> random_image(int h, int w, std::uint64_t seed) {
    Tensor<float> img({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    auto rng = make_rng(seed, 0);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = unit(rng);
    return img;
}

const Tensor<float>* find_param(const nn::ParamList<float>& params, const std::string& name) {
    for (const auto& p : params)
        if (p.name == name) return p.value;
    return nullptr;
}

}  // namespace

TEST_CASE("backbone emits five maps with the configured strides and widths") {
    NetworkConfig cfg;  // defaults: 256 px, widths {32,64,96,128,128}
    OccupancyNetwork<float> net(cfg);
    net.init(3);
    Tensor<float> image = random_image(256, 256, 5);
    auto maps = net.backbone_forward(image);
    REQUIRE(maps.size() == 5);
    std::vector<std::size_t> sizes = {32, 16, 8, 4, 2};
    for (int k = 0; k < 5; ++k) {
        CHECK(maps[k].stride == (1 << (k + 3)));
        CHECK(maps[k].data.dim(0) == static_cast<std::size_t>(cfg.backbone_widths[k]));
        CHECK(maps[k].data.dim(1) == sizes[k]);
        CHECK(maps[k].data.dim(2) == sizes[k]);
    }

    SECTION("zero image with fresh (zero) biases gives zero maps") {
        Tensor<float> zero({3, 256, 256});
        auto zmaps = net.backbone_forward(zero);
        for (const auto& m : zmaps)
            for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(m.data[i] == 0.0f);
    }

    SECTION("indivisible input size is a contract error") {
        Tensor<float> bad({3, 192, 192});
        CHECK_THROWS_AS(net.backbone_forward(bad), std::invalid_argument);
    }
}

TEST_CASE("fpn matches the two-line recursive oracle") {
    NetworkConfig cfg = tiny_config(Variant::kDPT);
    OccupancyNetwork<float> net(cfg);
    net.init(7);
    Tensor<float> image = random_image(64, 64, 9);
    auto maps = net.backbone_forward(image);
    auto fpn = net.fpn_forward(maps);

    // Oracle: out[4] = lat4(in4); out[k] = lat_k(in_k) + up2(out[k+1]).
    std::vector<Tensor<float>> oracle(5);
    oracle[4] = net.lateral(4).forward(maps[4].data);
    for (int k = 3; k >= 0; --k) {
        oracle[k] = net.lateral(k).forward(maps[k].data);
        Tensor<float> up =
            nn::upsample_nearest(oracle[k + 1], oracle[k].dim(1), oracle[k].dim(2));
        oracle[k] += up;
    }
    for (int k = 0; k < 5; ++k) {
        REQUIRE(fpn[k].data.shape() == oracle[k].shape());
        for (std::size_t i = 0; i < oracle[k].size(); ++i)
            CHECK(fpn[k].data[i] == Catch::Approx(oracle[k][i]).margin(1e-6));
    }

    SECTION("coarsest level passes through its lateral projection") {
        for (std::size_t i = 0; i < oracle[4].size(); ++i)
            CHECK(fpn[4].data[i] == Catch::Approx(net.lateral(4).forward(maps[4].data)[i]).margin(1e-6));
    }

    SECTION("zeroed coarser levels leave the finer lateral alone") {
        auto zeroed = maps;
        for (int k = 1; k < 5; ++k) zeroed[k].data.zero();
        auto out = net.fpn_forward(zeroed);
        Tensor<float> lat0 = net.lateral(0).forward(maps[0].data);
        for (std::size_t i = 0; i < lat0.size(); ++i)
            CHECK(out[0].data[i] == Catch::Approx(lat0[i]).margin(1e-6));
    }
}

TEST_CASE("topdown doubles 98x100 to 196x200 and starts as its projection") {
    NetworkConfig cfg = tiny_config(Variant::kDPT);
    OccupancyNetwork<float> net(cfg);
    net.init(11);
    Tensor<float> bev({8, 98, 100});
    auto rng = make_rng(13, 0);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (std::size_t i = 0; i < bev.size(); ++i) bev[i] = dist(rng);

    Tensor<float> out = net.topdown_forward(bev);
    REQUIRE(out.shape() == std::vector<std::size_t>{8, 196, 200});

    // Fresh residual branches are zero-initialized, so the stack reduces to
    // proj -> transposed conv -> trailing norm/activation. Rebuild that
    // pipeline from the checkpointed weights and compare.
    auto params = net.params();
    nn::Conv2d<float> proj(8, 8, 1, 1, 0);
    proj.weight() = *find_param(params, "topdown.proj.weight");
    proj.bias() = *find_param(params, "topdown.proj.bias");
    nn::ConvTranspose2d<float> up(8, 8, 4, 2, 1);
    nn::ParamList<float> up_params;
    up.collect("up", up_params);
    *up_params[0].value = *find_param(params, "topdown.block5.up.weight");
    *up_params[1].value = *find_param(params, "topdown.block5.up.bias");
    nn::GroupNorm<float> norm(8, 4);
    norm.gamma() = *find_param(params, "topdown.norm.gamma");
    norm.beta() = *find_param(params, "topdown.norm.beta");
    nn::ReLU<float> act;
    Tensor<float> manual = act.forward(norm.forward(up.forward(proj.forward(bev))));
    REQUIRE(manual.shape() == out.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out[i] == Catch::Approx(manual[i]).margin(1e-5));
}

TEST_CASE("forward produces logits of the contracted shape for every variant") {
    for (Variant v : {Variant::kBaseline, Variant::kD, Variant::kDP, Variant::kDPT}) {
        NetworkConfig cfg = tiny_config(v);
        OccupancyNetwork<float> net(cfg);
        net.init(17);
        CameraModel cam = camera_for(cfg);
        Tensor<float> image = random_image(64, 64, 19);
        Tensor<float> logits = net.forward(image, cam);
        REQUIRE(logits.shape() == std::vector<std::size_t>{2, 196, 200});
        CHECK(logits.all_finite());
        for (std::size_t i = 0; i < logits.size(); i += 997) {
            double p = sigmoid_t(static_cast<double>(logits[i]));
            CHECK(p > 0.0);
            CHECK(p < 1.0);
        }
        // Determinism: bit-identical repeat.
        Tensor<float> again = net.forward(image, cam);
        bool identical = true;
        for (std::size_t i = 0; i < logits.size(); ++i)
            if (again[i] != logits[i]) identical = false;
        CHECK(identical);
    }
}

TEST_CASE("variant capacity is monotone: baseline < D < DP < DPT") {
    std::vector<std::size_t> counts;
    for (Variant v : {Variant::kBaseline, Variant::kD, Variant::kDP, Variant::kDPT}) {
        NetworkConfig cfg;  // desk defaults at 256 px
        cfg.variant = v;
        OccupancyNetwork<float> net(cfg);
        counts.push_back(nn::param_count(net.params()));
    }
    CHECK(counts[0] < counts[1]);
    CHECK(counts[1] < counts[2]);
    CHECK(counts[2] < counts[3]);
}

TEST_CASE("end-to-end gradients flow (spot check, D variant)") {
    NetworkConfig cfg = tiny_config(Variant::kD);
    OccupancyNetwork<double> net(cfg);
    net.init(23);
    CameraModel cam = camera_for(cfg);
    Tensor<double> image({3, 64, 64});
    auto rng = make_rng(29, 0);
    std::uniform_real_distribution<double> unit(0.05, 0.95);
    for (std::size_t i = 0; i < image.size(); ++i) image[i] = unit(rng);

    Tensor<double> w({2, 196, 200});
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = dist(rng) * 1e-3;

    auto loss = [&]() {
        Tensor<double> y = net.forward(image, cam);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
        return s;
    };
    net.zero_grad();
    net.forward(image, cam);
    net.backward(w);
    auto params = net.params();

    std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
    int checked = 0;
    double h = 1e-5;
    while (checked < 12) {
        const auto& p = params[pick_param(rng)];
        std::uniform_int_distribution<std::size_t> pick_idx(0, p.value->size() - 1);
        std::size_t i = pick_idx(rng);
        double saved = (*p.value)[i];
        (*p.value)[i] = saved + h;
        double up = loss();
        (*p.value)[i] = saved - h;
        double down = loss();
        (*p.value)[i] = saved;
        double fd = (up - down) / (2.0 * h);
        double analytic = (*p.grad)[i];
        double denom = std::max({1e-6, std::abs(fd), std::abs(analytic)});
        INFO(p.name << "[" << i << "] analytic " << analytic << " fd " << fd);
        CHECK(std::abs(fd - analytic) / denom < 1e-3);
        ++checked;
    }
}
