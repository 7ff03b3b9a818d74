#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pyrocc/tensor.hpp"

namespace pyrocc {

/// softplus(x) = log(1 + exp(x)), overflow-safe.
template <typename T>
T softplus(T x) {
    if (x > T(30)) return x;
    if (x < T(-30)) return std::exp(x);
    return std::log1p(std::exp(x));
}

template <typename T>
T sigmoid_t(T l) {
    if (l >= T(0)) return T(1) / (T(1) + std::exp(-l));
    T e = std::exp(l);
    return e / (T(1) + e);
}

/// Per-class balanced cross-entropy weights alpha^c in (0, 1). The raw
/// weight is sqrt(1/freq); it is mapped through w/(w+1) so that both alpha
/// and 1-alpha stay valid while preserving the odds ratio
/// alpha/(1-alpha) = w.
struct ClassWeights {
    std::vector<double> alpha;
    std::vector<double> frequencies;  // positive-cell fraction each alpha was derived from
};

inline ClassWeights class_weights(const std::vector<double>& frequencies) {
    ClassWeights out;
    out.frequencies = frequencies;
    out.alpha.reserve(frequencies.size());
    for (double f : frequencies) {
        check_domain(f > 0.0 && f <= 1.0,
                     "class_weights: class frequency must lie in (0, 1] "
                     "(a zero frequency means the class is absent from the training data)");
        double w = std::sqrt(1.0 / f);
        out.alpha.push_back(w / (w + 1.0));
    }
    return out;
}

/// Sum-and-count form of the two loss terms. The public losses are means
/// over contributing (class, cell) pairs; the sums expose the exact per-cell
/// partition: flipping one cell's visibility moves exactly its own
/// contributions between the two sums.
struct LossTerms {
    double xent_sum = 0.0;
    std::size_t xent_count = 0;
    double uncert_sum = 0.0;
    std::size_t uncert_count = 0;

    double xent_mean() const { return xent_count ? xent_sum / xent_count : 0.0; }
    double uncert_mean() const { return uncert_count ? uncert_sum / uncert_count : 0.0; }
    double total(double lambda) const { return xent_mean() + lambda * uncert_mean(); }
};

namespace detail {

constexpr double kLn2 = 0.6931471805599453;

template <typename T>
void check_loss_shapes(const Tensor<T>& logits, const std::vector<std::size_t>* target_shape,
                       const Tensor<std::uint8_t>& mask, std::size_t alpha_count) {
    check(logits.rank() == 3, "losses: logits must be C x H x W");
    if (alpha_count) check(logits.dim(0) == alpha_count, "losses: class count mismatch with alpha");
    check(mask.rank() == 2 && mask.dim(0) == logits.dim(1) && mask.dim(1) == logits.dim(2),
          "losses: visibility mask shape mismatch");
    if (target_shape) check(*target_shape == logits.shape(), "losses: target shape mismatch");
}

/// Cross-entropy of one cell in the stable logit-domain form:
/// alpha * m * softplus(-l) + (1 - alpha) * (1 - m) * softplus(l).
template <typename T>
double xent_cell(T logit, bool occupied, double alpha) {
    double l = static_cast<double>(logit);
    return occupied ? alpha * softplus(-l) : (1.0 - alpha) * softplus(l);
}

/// 1 - H_b(sigmoid(l)) with H_b the binary entropy in bits; zero at l = 0.
template <typename T>
double uncert_cell(T logit) {
    double l = static_cast<double>(logit);
    double p = sigmoid_t(l);
    double entropy_bits = (p * softplus(-l) + (1.0 - p) * softplus(l)) / kLn2;
    return 1.0 - entropy_bits;
}

}  // namespace detail

/// Both loss terms over a logit grid: cross-entropy on visible cells,
/// uncertainty on the rest.
template <typename T>
LossTerms loss_terms(const Tensor<T>& logits, const Tensor<std::uint8_t>& targets,
                     const std::vector<double>& alpha, const Tensor<std::uint8_t>& mask) {
    detail::check_loss_shapes(logits, &targets.shape(), mask, alpha.size());
    LossTerms terms;
    std::size_t C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < H * W; ++i) {
            std::size_t k = c * H * W + i;
            if (mask[i]) {
                terms.xent_sum += detail::xent_cell(logits[k], targets[k] != 0, alpha[c]);
                ++terms.xent_count;
            } else {
                terms.uncert_sum += detail::uncert_cell(logits[k]);
                ++terms.uncert_count;
            }
        }
    }
    return terms;
}

/// Mean balanced binary cross-entropy over visible cells. Non-visible cells
/// contribute nothing.
template <typename T>
double balanced_xent(const Tensor<T>& logits, const Tensor<std::uint8_t>& targets,
                     const std::vector<double>& alpha, const Tensor<std::uint8_t>& mask) {
    return loss_terms(logits, targets, alpha, mask).xent_mean();
}

/// Mean maximum-entropy uncertainty loss over non-visible cells; minimized
/// (value 0) when every such prediction is exactly 0.5.
template <typename T>
double uncertainty_loss(const Tensor<T>& logits, const Tensor<std::uint8_t>& mask) {
    detail::check_loss_shapes(logits, nullptr, mask, 0);
    LossTerms terms;
    std::size_t C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H * W; ++i)
            if (!mask[i]) {
                terms.uncert_sum += detail::uncert_cell(logits[c * H * W + i]);
                ++terms.uncert_count;
            }
    return terms.uncert_mean();
}

/// L = L_xent + lambda * L_uncert.
template <typename T>
double total_loss(const Tensor<T>& logits, const Tensor<std::uint8_t>& targets,
                  const std::vector<double>& alpha, const Tensor<std::uint8_t>& mask,
                  double lambda = 0.001) {
    return loss_terms(logits, targets, alpha, mask).total(lambda);
}

/// dL/dlogits of total_loss. Gradients of the mean reductions scale by the
/// respective contributing-cell counts.
template <typename T>
Tensor<T> total_loss_grad(const Tensor<T>& logits, const Tensor<std::uint8_t>& targets,
                          const std::vector<double>& alpha, const Tensor<std::uint8_t>& mask,
                          double lambda = 0.001) {
    detail::check_loss_shapes(logits, &targets.shape(), mask, alpha.size());
    std::size_t C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    std::size_t n_vis = 0;
    for (std::size_t i = 0; i < H * W; ++i)
        if (mask[i]) ++n_vis;
    std::size_t xent_n = n_vis * C;
    std::size_t unc_n = (H * W - n_vis) * C;
    Tensor<T> grad(logits.shape());
    for (std::size_t c = 0; c < C; ++c) {
        double a = alpha[c];
        for (std::size_t i = 0; i < H * W; ++i) {
            std::size_t k = c * H * W + i;
            double l = static_cast<double>(logits[k]);
            double p = sigmoid_t(l);
            double g;
            if (mask[i]) {
                // d/dl of alpha*m*softplus(-l) + (1-alpha)*(1-m)*softplus(l)
                g = (targets[k] != 0) ? -a * (1.0 - p) : (1.0 - a) * p;
                g /= static_cast<double>(xent_n);
            } else {
                // d/dl of (1 - H_b(p)) = l * p * (1-p) / ln 2
                g = lambda * l * p * (1.0 - p) / detail::kLn2;
                g /= static_cast<double>(unc_n);
            }
            grad[k] = static_cast<T>(g);
        }
    }
    return grad;
}

}  // namespace pyrocc
