#pragma once

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pyrocc/tensor.hpp"

namespace pyrocc::nn {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

/// Named view of one parameter tensor and its gradient buffer.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
std::size_t param_count(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value->size();
    return n;
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
    for (const auto& p : params) p.grad->zero();
}

/// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <typename T>
void fan_in_uniform(Tensor<T>& w, std::size_t fan_in, std::mt19937_64& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------
// im2col helpers
// ---------------------------------------------------------------------------

inline std::size_t conv_out_size(std::size_t in, int k, int stride, int pad) {
    long long out = (static_cast<long long>(in) + 2LL * pad - k) / stride + 1;
    check(out >= 1, "conv: output size would be empty");
    return static_cast<std::size_t>(out);
}

template <typename T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, std::vector<T>& cols,
            std::size_t h_out, std::size_t w_out) {
    std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    cols.assign(C * k * k * h_out * w_out, T{});
    std::size_t row = 0;
    for (std::size_t c = 0; c < C; ++c) {
        for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj, ++row) {
                T* dst = cols.data() + row * h_out * w_out;
                for (std::size_t oy = 0; oy < h_out; ++oy) {
                    long long iy = static_cast<long long>(oy) * stride + di - pad;
                    if (iy < 0 || iy >= static_cast<long long>(H)) {
                        dst += w_out;
                        continue;
                    }
                    const T* src = &x(c, static_cast<std::size_t>(iy), 0);
                    for (std::size_t ox = 0; ox < w_out; ++ox, ++dst) {
                        long long ix = static_cast<long long>(ox) * stride + dj - pad;
                        if (ix >= 0 && ix < static_cast<long long>(W)) *dst = src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const std::vector<T>& cols, int k, int stride, int pad, Tensor<T>& x,
            std::size_t h_out, std::size_t w_out) {
    std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    x.zero();
    std::size_t row = 0;
    for (std::size_t c = 0; c < C; ++c) {
        for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj, ++row) {
                const T* src = cols.data() + row * h_out * w_out;
                for (std::size_t oy = 0; oy < h_out; ++oy) {
                    long long iy = static_cast<long long>(oy) * stride + di - pad;
                    if (iy < 0 || iy >= static_cast<long long>(H)) {
                        src += w_out;
                        continue;
                    }
                    T* dst = &x(c, static_cast<std::size_t>(iy), 0);
                    for (std::size_t ox = 0; ox < w_out; ++ox, ++src) {
                        long long ix = static_cast<long long>(ox) * stride + dj - pad;
                        if (ix >= 0 && ix < static_cast<long long>(W)) dst[ix] += *src;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Layers. Each caches what its backward pass needs; backward() accumulates
// into the parameter gradients and returns the input gradient.
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_c, int out_c, int k, int stride = 1, int pad = -1)
        : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad < 0 ? k / 2 : pad) {
        weight_ = Tensor<T>({static_cast<std::size_t>(out_c),
                             static_cast<std::size_t>(in_c) * k * k});
        bias_ = Tensor<T>({static_cast<std::size_t>(out_c)});
        wgrad_ = Tensor<T>(weight_.shape());
        bgrad_ = Tensor<T>(bias_.shape());
    }

    void init(std::mt19937_64& rng) { fan_in_uniform(weight_, weight_.dim(1), rng); bias_.zero(); }
    void init_zero() { weight_.zero(); bias_.zero(); }

    Tensor<T> forward(const Tensor<T>& x) {
        check(x.rank() == 3 && static_cast<int>(x.dim(0)) == in_c_, "Conv2d: input shape mismatch");
        input_ = x;
        h_out_ = conv_out_size(x.dim(1), k_, stride_, pad_);
        w_out_ = conv_out_size(x.dim(2), k_, stride_, pad_);
        std::vector<T> cols;
        im2col(x, k_, stride_, pad_, cols, h_out_, w_out_);
        Tensor<T> y({static_cast<std::size_t>(out_c_), h_out_, w_out_});
        ECMap<T> w(weight_.data(), out_c_, weight_.dim(1));
        ECMap<T> cm(cols.data(), weight_.dim(1), h_out_ * w_out_);
        EMap<T> ym(y.data(), out_c_, h_out_ * w_out_);
        ym.noalias() = w * cm;
        for (int c = 0; c < out_c_; ++c) ym.row(c).array() += bias_[c];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        std::vector<T> cols;
        im2col(input_, k_, stride_, pad_, cols, h_out_, w_out_);
        ECMap<T> gym(gy.data(), out_c_, h_out_ * w_out_);
        ECMap<T> cm(cols.data(), weight_.dim(1), h_out_ * w_out_);
        EMap<T> wg(wgrad_.data(), out_c_, weight_.dim(1));
        wg.noalias() += gym * cm.transpose();
        for (int c = 0; c < out_c_; ++c) bgrad_[c] += gym.row(c).sum();
        std::vector<T> dcols(weight_.dim(1) * h_out_ * w_out_);
        ECMap<T> w(weight_.data(), out_c_, weight_.dim(1));
        EMap<T> dcm(dcols.data(), weight_.dim(1), h_out_ * w_out_);
        dcm.noalias() = w.transpose() * gym;
        Tensor<T> gx(input_.shape());
        col2im(dcols, k_, stride_, pad_, gx, h_out_, w_out_);
        return gx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &weight_, &wgrad_});
        out.push_back({prefix + ".bias", &bias_, &bgrad_});
    }

    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    int out_channels() const { return out_c_; }

private:
    int in_c_ = 0, out_c_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    std::size_t h_out_ = 0, w_out_ = 0;
    Tensor<T> weight_, bias_, wgrad_, bgrad_;
    Tensor<T> input_;
};

/// Transposed convolution, the adjoint of a strided Conv2d. With k=4, s=2,
/// p=1 it exactly doubles both spatial dimensions.
template <typename T>
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int in_c, int out_c, int k = 4, int stride = 2, int pad = 1)
        : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad) {
        // Stored as the weight of the adjoint (downsampling) convolution:
        // rows index input channels, columns index out_c * k * k taps.
        weight_ = Tensor<T>({static_cast<std::size_t>(in_c),
                             static_cast<std::size_t>(out_c) * k * k});
        bias_ = Tensor<T>({static_cast<std::size_t>(out_c)});
        wgrad_ = Tensor<T>(weight_.shape());
        bgrad_ = Tensor<T>(bias_.shape());
    }

    void init(std::mt19937_64& rng) { fan_in_uniform(weight_, static_cast<std::size_t>(in_c_) * k_ * k_, rng); bias_.zero(); }

    std::pair<std::size_t, std::size_t> out_size(std::size_t h, std::size_t w) const {
        return {stride_ * (h - 1) + k_ - 2 * pad_, stride_ * (w - 1) + k_ - 2 * pad_};
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check(x.rank() == 3 && static_cast<int>(x.dim(0)) == in_c_,
              "ConvTranspose2d: input shape mismatch");
        input_ = x;
        auto [h2, w2] = out_size(x.dim(1), x.dim(2));
        Tensor<T> y({static_cast<std::size_t>(out_c_), h2, w2});
        std::vector<T> cols(weight_.dim(1) * x.dim(1) * x.dim(2));
        ECMap<T> w(weight_.data(), in_c_, weight_.dim(1));
        ECMap<T> xm(x.data(), in_c_, x.dim(1) * x.dim(2));
        EMap<T> cm(cols.data(), weight_.dim(1), x.dim(1) * x.dim(2));
        cm.noalias() = w.transpose() * xm;
        col2im(cols, k_, stride_, pad_, y, x.dim(1), x.dim(2));
        for (int c = 0; c < out_c_; ++c) {
            T* plane = &y(c, 0, 0);
            for (std::size_t i = 0; i < h2 * w2; ++i) plane[i] += bias_[c];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        std::size_t h = input_.dim(1), w_in = input_.dim(2);
        std::vector<T> gcols;
        im2col(gy, k_, stride_, pad_, gcols, h, w_in);
        ECMap<T> gcm(gcols.data(), weight_.dim(1), h * w_in);
        // dU += x * im2col(gy)^T
        ECMap<T> xm(input_.data(), in_c_, h * w_in);
        EMap<T> wg(wgrad_.data(), in_c_, weight_.dim(1));
        wg.noalias() += xm * gcm.transpose();
        for (int c = 0; c < out_c_; ++c) {
            const T* plane = &gy(c, 0, 0);
            T s{};
            for (std::size_t i = 0; i < gy.dim(1) * gy.dim(2); ++i) s += plane[i];
            bgrad_[c] += s;
        }
        Tensor<T> gx(input_.shape());
        ECMap<T> w(weight_.data(), in_c_, weight_.dim(1));
        EMap<T> gxm(gx.data(), in_c_, h * w_in);
        gxm.noalias() = w * gcm;
        return gx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &weight_, &wgrad_});
        out.push_back({prefix + ".bias", &bias_, &bgrad_});
    }

private:
    int in_c_ = 0, out_c_ = 0, k_ = 4, stride_ = 2, pad_ = 1;
    Tensor<T> weight_, bias_, wgrad_, bgrad_;
    Tensor<T> input_;
};

/// 1D convolution along the width axis of a (C x W) tensor, same padding.
template <typename T>
class Conv1d {
public:
    Conv1d() = default;
    Conv1d(int in_c, int out_c, int k)
        : in_c_(in_c), out_c_(out_c), k_(k), pad_(k / 2) {
        check(k % 2 == 1, "Conv1d: kernel size must be odd for same padding");
        weight_ = Tensor<T>({static_cast<std::size_t>(out_c),
                             static_cast<std::size_t>(in_c) * k});
        bias_ = Tensor<T>({static_cast<std::size_t>(out_c)});
        wgrad_ = Tensor<T>(weight_.shape());
        bgrad_ = Tensor<T>(bias_.shape());
    }

    void init(std::mt19937_64& rng) { fan_in_uniform(weight_, weight_.dim(1), rng); bias_.zero(); }

    Tensor<T> forward(const Tensor<T>& x) {
        check(x.rank() == 2 && static_cast<int>(x.dim(0)) == in_c_, "Conv1d: input shape mismatch");
        input_ = x;
        std::size_t W = x.dim(1);
        std::vector<T> cols(static_cast<std::size_t>(in_c_) * k_ * W, T{});
        build_cols(x, cols);
        Tensor<T> y({static_cast<std::size_t>(out_c_), W});
        ECMap<T> wm(weight_.data(), out_c_, weight_.dim(1));
        ECMap<T> cm(cols.data(), weight_.dim(1), W);
        EMap<T> ym(y.data(), out_c_, W);
        ym.noalias() = wm * cm;
        for (int c = 0; c < out_c_; ++c) ym.row(c).array() += bias_[c];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        std::size_t W = input_.dim(1);
        std::vector<T> cols(static_cast<std::size_t>(in_c_) * k_ * W, T{});
        build_cols(input_, cols);
        ECMap<T> gym(gy.data(), out_c_, W);
        ECMap<T> cm(cols.data(), weight_.dim(1), W);
        EMap<T> wg(wgrad_.data(), out_c_, weight_.dim(1));
        wg.noalias() += gym * cm.transpose();
        for (int c = 0; c < out_c_; ++c) bgrad_[c] += gym.row(c).sum();
        std::vector<T> dcols(weight_.dim(1) * W);
        ECMap<T> wm(weight_.data(), out_c_, weight_.dim(1));
        EMap<T> dcm(dcols.data(), weight_.dim(1), W);
        dcm.noalias() = wm.transpose() * gym;
        Tensor<T> gx(input_.shape());
        std::size_t row = 0;
        for (int c = 0; c < in_c_; ++c)
            for (int dk = 0; dk < k_; ++dk, ++row)
                for (std::size_t ox = 0; ox < W; ++ox) {
                    long long ix = static_cast<long long>(ox) + dk - pad_;
                    if (ix >= 0 && ix < static_cast<long long>(W))
                        gx(c, static_cast<std::size_t>(ix)) += dcols[row * W + ox];
                }
        return gx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &weight_, &wgrad_});
        out.push_back({prefix + ".bias", &bias_, &bgrad_});
    }

    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }

private:
    void build_cols(const Tensor<T>& x, std::vector<T>& cols) const {
        std::size_t W = x.dim(1);
        std::size_t row = 0;
        for (int c = 0; c < in_c_; ++c)
            for (int dk = 0; dk < k_; ++dk, ++row)
                for (std::size_t ox = 0; ox < W; ++ox) {
                    long long ix = static_cast<long long>(ox) + dk - pad_;
                    cols[row * W + ox] = (ix >= 0 && ix < static_cast<long long>(W))
                                             ? x(c, static_cast<std::size_t>(ix))
                                             : T{};
                }
    }

    int in_c_ = 0, out_c_ = 0, k_ = 1, pad_ = 0;
    Tensor<T> weight_, bias_, wgrad_, bgrad_;
    Tensor<T> input_;
};

/// Affine map applied to every column of an (in x N) matrix: Y = W X + b.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(int in_dim, int out_dim) : in_(in_dim), out_(out_dim) {
        weight_ = Tensor<T>({static_cast<std::size_t>(out_dim), static_cast<std::size_t>(in_dim)});
        bias_ = Tensor<T>({static_cast<std::size_t>(out_dim)});
        wgrad_ = Tensor<T>(weight_.shape());
        bgrad_ = Tensor<T>(bias_.shape());
    }

    void init(std::mt19937_64& rng) { fan_in_uniform(weight_, in_, rng); bias_.zero(); }

    Tensor<T> forward(const Tensor<T>& x) {
        check(x.rank() == 2 && static_cast<int>(x.dim(0)) == in_, "Linear: input shape mismatch");
        input_ = x;
        std::size_t N = x.dim(1);
        Tensor<T> y({static_cast<std::size_t>(out_), N});
        ECMap<T> wm(weight_.data(), out_, in_);
        ECMap<T> xm(x.data(), in_, N);
        EMap<T> ym(y.data(), out_, N);
        ym.noalias() = wm * xm;
        for (int r = 0; r < out_; ++r) ym.row(r).array() += bias_[r];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        std::size_t N = input_.dim(1);
        ECMap<T> gym(gy.data(), out_, N);
        ECMap<T> xm(input_.data(), in_, N);
        EMap<T> wg(wgrad_.data(), out_, in_);
        wg.noalias() += gym * xm.transpose();
        for (int r = 0; r < out_; ++r) bgrad_[r] += gym.row(r).sum();
        Tensor<T> gx(input_.shape());
        ECMap<T> wm(weight_.data(), out_, in_);
        EMap<T> gxm(gx.data(), in_, N);
        gxm.noalias() = wm.transpose() * gym;
        return gx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &weight_, &wgrad_});
        out.push_back({prefix + ".bias", &bias_, &bgrad_});
    }

    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }

private:
    int in_ = 0, out_ = 0;
    Tensor<T> weight_, bias_, wgrad_, bgrad_;
    Tensor<T> input_;
};

/// Largest divisor of channels not exceeding the requested group count.
inline int norm_groups_for(int channels, int requested) {
    int g = std::min(channels, std::max(1, requested));
    while (channels % g != 0) --g;
    return g;
}

/// Channel-group normalization with per-channel affine parameters. Statistics
/// are computed per sample over (channels/groups) x H x W, so behaviour does
/// not depend on batch composition.
template <typename T>
class GroupNorm {
public:
    GroupNorm() = default;
    explicit GroupNorm(int channels, int groups = 8, double eps = 1e-5)
        : channels_(channels), groups_(norm_groups_for(channels, groups)), eps_(eps) {
        gamma_ = Tensor<T>::full({static_cast<std::size_t>(channels)}, T(1));
        beta_ = Tensor<T>({static_cast<std::size_t>(channels)});
        ggrad_ = Tensor<T>(gamma_.shape());
        bgrad_ = Tensor<T>(beta_.shape());
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check(x.rank() == 3 && static_cast<int>(x.dim(0)) == channels_,
              "GroupNorm: input shape mismatch");
        std::size_t HW = x.dim(1) * x.dim(2);
        std::size_t per_group = static_cast<std::size_t>(channels_ / groups_) * HW;
        xhat_ = Tensor<T>(x.shape());
        inv_std_.assign(groups_, T{});
        for (int g = 0; g < groups_; ++g) {
            const T* src = x.data() + static_cast<std::size_t>(g) * per_group;
            double mean = 0.0;
            for (std::size_t i = 0; i < per_group; ++i) mean += static_cast<double>(src[i]);
            mean /= static_cast<double>(per_group);
            double var = 0.0;
            for (std::size_t i = 0; i < per_group; ++i) {
                double d = static_cast<double>(src[i]) - mean;
                var += d * d;
            }
            var /= static_cast<double>(per_group);
            T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
            inv_std_[g] = istd;
            T* dst = xhat_.data() + static_cast<std::size_t>(g) * per_group;
            for (std::size_t i = 0; i < per_group; ++i)
                dst[i] = (src[i] - static_cast<T>(mean)) * istd;
        }
        Tensor<T> y(x.shape());
        for (int c = 0; c < channels_; ++c) {
            const T* xh = &xhat_(c, 0, 0);
            T* out = &y(c, 0, 0);
            for (std::size_t i = 0; i < HW; ++i) out[i] = gamma_[c] * xh[i] + beta_[c];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        std::size_t HW = gy.dim(1) * gy.dim(2);
        std::size_t ch_per_group = static_cast<std::size_t>(channels_ / groups_);
        std::size_t per_group = ch_per_group * HW;
        for (int c = 0; c < channels_; ++c) {
            const T* g = &gy(c, 0, 0);
            const T* xh = &xhat_(c, 0, 0);
            T dg{}, db{};
            for (std::size_t i = 0; i < HW; ++i) {
                dg += g[i] * xh[i];
                db += g[i];
            }
            ggrad_[c] += dg;
            bgrad_[c] += db;
        }
        Tensor<T> gx(gy.shape());
        for (int grp = 0; grp < groups_; ++grp) {
            // dxhat = gy * gamma (per channel); reduce within the group.
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t cc = 0; cc < ch_per_group; ++cc) {
                int c = grp * static_cast<int>(ch_per_group) + static_cast<int>(cc);
                const T* g = &gy(c, 0, 0);
                const T* xh = &xhat_(c, 0, 0);
                for (std::size_t i = 0; i < HW; ++i) {
                    double d = static_cast<double>(g[i]) * static_cast<double>(gamma_[c]);
                    sum_dxhat += d;
                    sum_dxhat_xhat += d * static_cast<double>(xh[i]);
                }
            }
            double n = static_cast<double>(per_group);
            for (std::size_t cc = 0; cc < ch_per_group; ++cc) {
                int c = grp * static_cast<int>(ch_per_group) + static_cast<int>(cc);
                const T* g = &gy(c, 0, 0);
                const T* xh = &xhat_(c, 0, 0);
                T* out = &gx(c, 0, 0);
                for (std::size_t i = 0; i < HW; ++i) {
                    double dxhat = static_cast<double>(g[i]) * static_cast<double>(gamma_[c]);
                    double v = dxhat - sum_dxhat / n -
                               static_cast<double>(xh[i]) * sum_dxhat_xhat / n;
                    out[i] = static_cast<T>(v * static_cast<double>(inv_std_[grp]));
                }
            }
        }
        return gx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", &gamma_, &ggrad_});
        out.push_back({prefix + ".beta", &beta_, &bgrad_});
    }

    Tensor<T>& gamma() { return gamma_; }
    Tensor<T>& beta() { return beta_; }

private:
    int channels_ = 0, groups_ = 1;
    double eps_ = 1e-5;
    Tensor<T> gamma_, beta_, ggrad_, bgrad_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

template <typename T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        Tensor<T> y(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{} ? x[i] : T{};
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(gy.shape());
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = input_[i] > T{} ? gy[i] : T{};
        return gx;
    }

private:
    Tensor<T> input_;
};

/// Nearest-neighbour upsampling to an explicit target size (integer scale
/// factors per axis; degenerate 1 -> 1 maps pass through).
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t h_out, std::size_t w_out) {
    std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    check(h_out % H == 0 && w_out % W == 0, "upsample_nearest: non-integer scale");
    std::size_t sy = h_out / H, sx = w_out / W;
    Tensor<T> y({C, h_out, w_out});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < h_out; ++i)
            for (std::size_t j = 0; j < w_out; ++j) y(c, i, j) = x(c, i / sy, j / sx);
    return y;
}

template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& gy, std::size_t h_in, std::size_t w_in) {
    std::size_t C = gy.dim(0), H = gy.dim(1), W = gy.dim(2);
    std::size_t sy = H / h_in, sx = W / w_in;
    Tensor<T> gx({C, h_in, w_in});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) gx(c, i / sy, j / sx) += gy(c, i, j);
    return gx;
}

/// Pre-activation residual block:
///   y = skip(x) + Conv3x3(ReLU(GN(Conv3x3(ReLU(GN(x))))))
/// The trailing conv is zero-initialized so a fresh block starts as its skip
/// projection. skip is identity when shape allows, else a strided 1x1 conv.
template <typename T>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(int in_c, int out_c, int stride = 1, int norm_groups = 8)
        : in_c_(in_c), out_c_(out_c), stride_(stride),
          norm1_(in_c, norm_groups), conv1_(in_c, out_c, 3, stride),
          norm2_(out_c, norm_groups), conv2_(out_c, out_c, 3, 1),
          projecting_(in_c != out_c || stride != 1) {
        if (projecting_) proj_ = Conv2d<T>(in_c, out_c, 1, stride, 0);
    }

    void init(std::mt19937_64& rng) {
        conv1_.init(rng);
        conv2_.init_zero();
        if (projecting_) proj_.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> h = conv1_.forward(act1_.forward(norm1_.forward(x)));
        h = conv2_.forward(act2_.forward(norm2_.forward(h)));
        Tensor<T> skip = projecting_ ? proj_.forward(x) : x;
        check(h.same_shape(skip), "ResidualBlock: branch shape mismatch");
        h += skip;
        return h;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gmain = norm1_.backward(act1_.backward(conv1_.backward(
            norm2_.backward(act2_.backward(conv2_.backward(gy))))));
        Tensor<T> gskip = projecting_ ? proj_.backward(gy) : gy;
        gmain += gskip;
        return gmain;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        norm1_.collect(prefix + ".norm1", out);
        conv1_.collect(prefix + ".conv1", out);
        norm2_.collect(prefix + ".norm2", out);
        conv2_.collect(prefix + ".conv2", out);
        if (projecting_) proj_.collect(prefix + ".proj", out);
    }

private:
    int in_c_ = 0, out_c_ = 0, stride_ = 1;
    GroupNorm<T> norm1_;
    Conv2d<T> conv1_;
    GroupNorm<T> norm2_;
    Conv2d<T> conv2_;
    ReLU<T> act1_, act2_;
    Conv2d<T> proj_;
    bool projecting_ = false;
};

/// SGD with classical momentum: v = mu*v + g; w -= lr*v.
template <typename T>
class SgdOptimizer {
public:
    SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void step(const ParamList<T>& params) {
        if (velocity_.empty()) {
            velocity_.reserve(params.size());
            for (const auto& p : params) velocity_.emplace_back(p.value->shape());
        }
        check(velocity_.size() == params.size(), "SgdOptimizer: parameter list changed");
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& v = velocity_[i];
            Tensor<T>& w = *params[i].value;
            Tensor<T>& g = *params[i].grad;
            for (std::size_t j = 0; j < w.size(); ++j) {
                v[j] = static_cast<T>(momentum_) * v[j] + g[j];
                w[j] -= static_cast<T>(lr_) * v[j];
            }
        }
    }

    std::vector<Tensor<T>>& velocity() { return velocity_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_;
    double momentum_;
    std::vector<Tensor<T>> velocity_;
};

}  // namespace pyrocc::nn
