#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pyrocc/dense_transformer.hpp"

using namespace pyrocc;

namespace {

DenseTransformerConfig small_config() {
    DenseTransformerConfig cfg;
    cfg.in_channels = 3;
    cfg.in_height = 4;
    cfg.width = 6;
    cfg.bottleneck = 5;
    cfg.out_channels = 2;
    cfg.depth_bins = 4;
    cfg.conv_kernel = 3;
    return cfg;
}

void randomize(Tensor<double>& t, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
}

SamplingIndex identity_like_index(int rows, int cols, int w_polar, std::uint64_t seed) {
    SamplingIndex idx;
    idx.rows = rows;
    idx.cols = cols;
    idx.width_polar = w_polar;
    auto rng = make_rng(seed, 2);
    std::uniform_real_distribution<double> col(0.0, w_polar - 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < rows * cols; ++i) {
        bool valid = unit(rng) > 0.15;
        idx.valid.push_back(valid);
        idx.column.push_back(valid ? col(rng) : 0.0);
    }
    return idx;
}

}  // namespace

TEST_CASE("parameter count follows the closed form") {
    DenseTransformerConfig cfg = small_config();
    DenseTransformer<double> layer(cfg);
    nn::ParamList<double> params;
    layer.collect("t", params);
    CHECK(nn::param_count(params) == cfg.param_count());
    // (C_in*H_in + 1)*B + (B*k + 1)*C_out*Z
    CHECK(cfg.param_count() == (3 * 4 + 1) * 5 + (5 * 3 + 1) * 2 * 4);
}

TEST_CASE("bottleneck must compress the flattened column") {
    DenseTransformerConfig cfg = small_config();
    cfg.bottleneck = cfg.in_channels * cfg.in_height;  // not a bottleneck
    CHECK_THROWS_AS(DenseTransformer<double>(cfg), std::invalid_argument);
}

TEST_CASE("collapse_vertical: zero input with zero bias gives zero") {
    DenseTransformer<double> layer(small_config());
    auto rng = make_rng(3, 0);
    layer.init(rng);
    Tensor<double> zero({3, 4, 6});
    Tensor<double> out = layer.collapse_vertical(zero);
    REQUIRE(out.shape() == std::vector<std::size_t>{5, 6});
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("collapse_vertical: identity-like weights copy flattened entries") {
    // B = C_in*H_in - 1 rows of the identity: output w-th column equals the
    // first B entries of the flattened feature column (inputs kept positive
    // so the rectification is inert).
    DenseTransformerConfig cfg = small_config();
    cfg.bottleneck = cfg.in_channels * cfg.in_height - 1;  // 11
    DenseTransformer<double> layer(cfg);
    layer.collapse_layer().weight().zero();
    layer.collapse_layer().bias().zero();
    for (int b = 0; b < cfg.bottleneck; ++b) layer.collapse_layer().weight()(b, b) = 1.0;
    Tensor<double> x({3, 4, 6});
    auto rng = make_rng(4, 0);
    std::uniform_real_distribution<double> pos(0.1, 2.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = pos(rng);
    Tensor<double> out = layer.collapse_vertical(x);
    for (int b = 0; b < cfg.bottleneck; ++b)
        for (std::size_t w = 0; w < 6; ++w) {
            std::size_t c = b / 4, h = b % 4;
            CHECK(out(b, w) == Catch::Approx(x(c, h, w)).margin(1e-12));
        }
}

TEST_CASE("collapse_vertical matches a per-column matrix-vector oracle") {
    DenseTransformer<double> layer(small_config());
    auto rng = make_rng(5, 0);
    layer.init(rng);
    Tensor<double> x({3, 4, 6});
    randomize(x, rng);
    Tensor<double> out = layer.collapse_vertical(x);
    auto& W = layer.collapse_layer().weight();
    auto& b = layer.collapse_layer().bias();
    for (std::size_t w = 0; w < 6; ++w)
        for (int o = 0; o < 5; ++o) {
            double acc = b[o];
            for (int c = 0; c < 3; ++c)
                for (int h = 0; h < 4; ++h) acc += W(o, c * 4 + h) * x(c, h, w);
            acc = std::max(acc, 0.0);  // rectification
            CHECK(out(o, w) == Catch::Approx(acc).margin(1e-6));
        }
}

TEST_CASE("expand_depth: identity-extraction kernel reproduces bottleneck rows") {
    DenseTransformerConfig cfg = small_config();
    cfg.bottleneck = cfg.out_channels * cfg.depth_bins;  // 8, still < 12
    DenseTransformer<double> layer(cfg);
    layer.expand_layer().weight().zero();
    layer.expand_layer().bias().zero();
    for (int r = 0; r < cfg.out_channels * cfg.depth_bins; ++r)
        layer.expand_layer().weight()(r, r * 3 + 1) = 1.0;  // center tap of row r
    Tensor<double> bottleneck({8, 6});
    auto rng = make_rng(6, 0);
    randomize(bottleneck, rng);
    Tensor<double> out = layer.expand_depth(bottleneck);
    REQUIRE(out.shape() == std::vector<std::size_t>{2, 4, 6});
    for (int c = 0; c < 2; ++c)
        for (int z = 0; z < 4; ++z)
            for (std::size_t w = 0; w < 6; ++w)
                CHECK(out(c, z, w) == Catch::Approx(bottleneck(c * 4 + z, w)).margin(1e-12));
}

TEST_CASE("expand_depth: zero kernel with bias gives a constant map") {
    DenseTransformer<double> layer(small_config());
    layer.expand_layer().weight().zero();
    for (std::size_t i = 0; i < layer.expand_layer().bias().size(); ++i)
        layer.expand_layer().bias()[i] = 0.25 * static_cast<double>(i);
    Tensor<double> bottleneck({5, 6});
    auto rng = make_rng(7, 0);
    randomize(bottleneck, rng);
    Tensor<double> out = layer.expand_depth(bottleneck);
    for (int c = 0; c < 2; ++c)
        for (int z = 0; z < 4; ++z)
            for (std::size_t w = 0; w < 6; ++w)
                CHECK(out(c, z, w) == Catch::Approx(0.25 * (c * 4 + z)).margin(1e-12));
}

TEST_CASE("expand_depth matches a sliding-window oracle") {
    DenseTransformer<double> layer(small_config());
    auto rng = make_rng(8, 0);
    layer.init(rng);
    Tensor<double> bottleneck({5, 6});
    randomize(bottleneck, rng);
    Tensor<double> out = layer.expand_depth(bottleneck);
    auto& W = layer.expand_layer().weight();
    auto& bias = layer.expand_layer().bias();
    for (int row = 0; row < 8; ++row)
        for (long long w = 0; w < 6; ++w) {
            double acc = bias[row];
            for (int b = 0; b < 5; ++b)
                for (int dk = 0; dk < 3; ++dk) {
                    long long iw = w + dk - 1;
                    if (iw < 0 || iw >= 6) continue;
                    acc += W(row, b * 3 + dk) * bottleneck(b, static_cast<std::size_t>(iw));
                }
            CHECK(out(row / 4, row % 4, w) == Catch::Approx(acc).margin(1e-6));
        }
}

TEST_CASE("transformer_forward composes collapse, expand and resampling") {
    DenseTransformer<double> layer(small_config());
    auto rng = make_rng(9, 0);
    layer.init(rng);
    Tensor<double> x({3, 4, 6});
    randomize(x, rng);
    SamplingIndex idx = identity_like_index(4, 9, 6, 31);

    SECTION("zero parameters give zero BEV features") {
        nn::ParamList<double> params;
        layer.collect("t", params);
        for (auto& p : params) p.value->zero();
        Tensor<double> out = layer.forward(x, idx);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
    }

    SECTION("pipeline equals the three-stage composition") {
        Tensor<double> expected = sample_width(layer.expand_depth(layer.collapse_vertical(x)), idx);
        Tensor<double> out = layer.forward(x, idx);
        REQUIRE(out.shape() == expected.shape());
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out[i] == Catch::Approx(expected[i]).margin(1e-12));
    }

    SECTION("gradient check on every parameter") {
        nn::ParamList<double> params;
        layer.collect("t", params);
        Tensor<double> w({2, 4, 9});
        randomize(w, rng);
        nn::zero_grads(params);
        Tensor<double> out = layer.forward(x, idx);
        layer.backward(w, idx);
        double h = 1e-5;
        for (const auto& p : params)
            for (std::size_t i = 0; i < p.value->size(); ++i) {
                double saved = (*p.value)[i];
                auto eval = [&](double v) {
                    (*p.value)[i] = v;
                    Tensor<double> y = layer.forward(x, idx);
                    double s = 0.0;
                    for (std::size_t j = 0; j < y.size(); ++j) s += y[j] * w[j];
                    return s;
                };
                double fd = (eval(saved + h) - eval(saved - h)) / (2.0 * h);
                (*p.value)[i] = saved;
                double analytic = (*p.grad)[i];
                double rel =
                    std::abs(fd - analytic) / std::max({1.0, std::abs(fd), std::abs(analytic)});
                INFO(p.name << "[" << i << "]");
                CHECK(rel < 1e-4);
            }
    }
}

TEST_CASE("pyramid: bands concatenate along depth with locality") {
    GridSpec fgrid = GridSpec::feature_grid();
    PyramidSchedule sched = PyramidSchedule::table1();
    CameraModel cam;
    cam.f = 256.0;
    cam.u0 = 127.5;
    cam.v0 = 127.5;
    cam.image_width = 256;
    cam.image_height = 256;
    std::vector<int> widths = {32, 16, 8, 4, 2};
    std::vector<int> heights = {3, 3, 3, 3, 2};
    TransformerPyramid<double> pyramid(sched, fgrid, widths, heights, 4, 6, 3, 3);
    auto rng = make_rng(12, 0);
    pyramid.init(rng);

    std::vector<Tensor<double>> features;
    for (int k = 0; k < 5; ++k) {
        Tensor<double> f({4, static_cast<std::size_t>(heights[k]), static_cast<std::size_t>(widths[k])});
        randomize(f, rng);
        features.push_back(std::move(f));
    }
    auto indices = pyramid.build_indices(cam);
    Tensor<double> bev = pyramid.forward(features, indices);
    REQUIRE(bev.shape() == std::vector<std::size_t>{3, 98, 100});

    SECTION("zeroing one level's params zeroes exactly its rows") {
        for (int k = 0; k < 5; ++k) {
            TransformerPyramid<double> copy = pyramid;
            nn::ParamList<double> params;
            copy.level(k).collect("lvl", params);
            for (auto& p : params) p.value->zero();
            Tensor<double> out = copy.forward(features, indices);
            auto [r0, r1] = sched.band_rows(k, fgrid);
            bool outside_changed = false;
            for (std::size_t c = 0; c < 3; ++c)
                for (int r = 0; r < 98; ++r)
                    for (std::size_t x = 0; x < 100; ++x) {
                        if (r >= r0 && r < r1) {
                            CHECK(out(c, r, x) == 0.0);
                        } else if (out(c, r, x) != bev(c, r, x)) {
                            outside_changed = true;
                        }
                    }
            CHECK_FALSE(outside_changed);
        }
    }

    SECTION("depth-band locality: perturbing level j only affects band j") {
        for (int j = 0; j < 5; ++j) {
            std::vector<Tensor<double>> perturbed = features;
            perturbed[j][0] += 0.5;
            perturbed[j][perturbed[j].size() / 2] -= 0.25;
            Tensor<double> out = pyramid.forward(perturbed, indices);
            auto [r0, r1] = sched.band_rows(j, fgrid);
            for (std::size_t c = 0; c < 3; ++c)
                for (int r = 0; r < 98; ++r)
                    for (std::size_t x = 0; x < 100; ++x)
                        if (r < r0 || r >= r1)
                            CHECK(out(c, r, x) == bev(c, r, x));
        }
    }

    SECTION("deterministic: identical inputs give bit-identical outputs") {
        Tensor<double> again = pyramid.forward(features, indices);
        for (std::size_t i = 0; i < bev.size(); ++i) CHECK(again[i] == bev[i]);
    }
}

TEST_CASE("width locality respects the kernel reach") {
    DenseTransformerConfig cfg = small_config();
    DenseTransformer<double> layer(cfg);
    auto rng = make_rng(14, 0);
    layer.init(rng);
    Tensor<double> x({3, 4, 6});
    randomize(x, rng);
    SamplingIndex idx = identity_like_index(4, 9, 6, 77);
    Tensor<double> base = layer.forward(x, idx);
    for (std::size_t w = 0; w < 6; ++w) {
        Tensor<double> perturbed = x;
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 4; ++h) perturbed(c, h, w) += 0.37;
        Tensor<double> out = layer.forward(perturbed, idx);
        double reach = cfg.conv_kernel / 2 + 1;
        for (int z = 0; z < 4; ++z)
            for (int xc = 0; xc < 9; ++xc) {
                if (std::abs(out(0, z, xc) - base(0, z, xc)) < 1e-12) continue;
                CHECK(idx.is_valid(z, xc));
                CHECK(std::abs(idx.col(z, xc) - static_cast<double>(w)) <= reach);
            }
    }
}
