#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pyrocc/tensor.hpp"

namespace pyrocc {

/// Bayesian decision boundary: strictly greater than the threshold.
template <typename T>
Tensor<std::uint8_t> binarize(const Tensor<T>& probabilities, double threshold = 0.5) {
    Tensor<std::uint8_t> out(probabilities.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<double>(probabilities[i]) > threshold ? 1 : 0;
    return out;
}

struct ClassCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0;

    bool both_empty() const { return tp + fp + fn == 0; }

    /// TP/(TP+FP+FN); defined as 1.0 when prediction and target are both
    /// empty over the evaluated cells.
    double iou() const {
        return both_empty() ? 1.0
                            : static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    }

    ClassCounts& operator+=(const ClassCounts& other) {
        tp += other.tp;
        fp += other.fp;
        fn += other.fn;
        return *this;
    }
};

/// Counts TP/FP/FN over visible cells only.
inline ClassCounts count_binary(const Tensor<std::uint8_t>& pred,
                                const Tensor<std::uint8_t>& target,
                                const Tensor<std::uint8_t>& mask) {
    check(pred.shape() == target.shape(), "iou: prediction/target shape mismatch");
    check(pred.shape() == mask.shape(), "iou: mask shape mismatch");
    ClassCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        bool p = pred[i] != 0, t = target[i] != 0;
        if (p && t)
            ++c.tp;
        else if (p)
            ++c.fp;
        else if (t)
            ++c.fn;
    }
    return c;
}

inline double iou(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& target,
                  const Tensor<std::uint8_t>& mask) {
    return count_binary(pred, target, mask).iou();
}

struct PRPoint {
    double threshold = 0.0;
    double precision = 1.0;
    double recall = 0.0;
};

/// Precision/recall over visible cells for a sweep of thresholds (default
/// step 0.02 over [0, 1]). Predictions use the strict p > t rule; with no
/// predicted positives the precision is reported as 1.
template <typename T>
std::vector<PRPoint> pr_curve(const Tensor<T>& probabilities, const Tensor<std::uint8_t>& target,
                              const Tensor<std::uint8_t>& mask, double step = 0.02) {
    check(probabilities.shape() == target.shape(), "pr_curve: shape mismatch");
    check(probabilities.shape() == mask.shape(), "pr_curve: mask shape mismatch");
    std::vector<PRPoint> curve;
    std::uint64_t positives = 0;
    for (std::size_t i = 0; i < target.size(); ++i)
        if (mask[i] && target[i]) ++positives;
    for (int k = 0;; ++k) {
        double t = k * step;
        if (t > 1.0 + 1e-12) break;
        std::uint64_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < probabilities.size(); ++i) {
            if (!mask[i]) continue;
            if (static_cast<double>(probabilities[i]) > t) {
                if (target[i])
                    ++tp;
                else
                    ++fp;
            }
        }
        PRPoint p;
        p.threshold = t;
        p.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 1.0;
        p.recall = positives ? static_cast<double>(tp) / static_cast<double>(positives) : 1.0;
        curve.push_back(p);
    }
    return curve;
}

struct EvalReport {
    std::vector<std::string> classes;
    std::vector<ClassCounts> counts;
    std::vector<std::vector<PRPoint>> pr;  // per class
    std::string subset_name;
    std::vector<std::string> subset_classes;

    double class_iou(std::size_t c) const { return counts[c].iou(); }

    double mean_iou() const {
        if (counts.empty()) return 0.0;
        double sum = 0.0;
        for (const auto& c : counts) sum += c.iou();
        return sum / static_cast<double>(counts.size());
    }

    /// Mean over a named class subset, mirroring restricted-category means.
    double subset_mean_iou() const {
        double sum = 0.0;
        int n = 0;
        for (std::size_t c = 0; c < classes.size(); ++c)
            for (const auto& name : subset_classes)
                if (classes[c] == name) {
                    sum += counts[c].iou();
                    ++n;
                }
        return n ? sum / n : 0.0;
    }
};

/// Dataset-level (micro-averaged) accumulator: global TP/FP/FN per class and
/// per PR threshold. Merging is associative, so per-sample evaluation can run
/// in any grouping.
class Evaluator {
public:
    Evaluator(std::vector<std::string> classes, double pr_step = 0.02)
        : classes_(std::move(classes)), pr_step_(pr_step) {
        counts_.resize(classes_.size());
        int n_thresholds = static_cast<int>(1.0 / pr_step) + 1;
        pr_tp_.assign(classes_.size(), std::vector<std::uint64_t>(n_thresholds, 0));
        pr_fp_.assign(classes_.size(), std::vector<std::uint64_t>(n_thresholds, 0));
        positives_.assign(classes_.size(), 0);
    }

    /// Accumulates one sample's per-class probability grids.
    void add(const Tensor<double>& probs, const Tensor<std::uint8_t>& labels,
             const Tensor<std::uint8_t>& mask) {
        check(probs.dim(0) == classes_.size(), "Evaluator: class count mismatch");
        std::size_t plane = mask.size();
        for (std::size_t c = 0; c < classes_.size(); ++c) {
            for (std::size_t i = 0; i < plane; ++i) {
                if (!mask[i]) continue;
                double p = probs[c * plane + i];
                bool t = labels[c * plane + i] != 0;
                bool pred = p > 0.5;
                if (pred && t)
                    ++counts_[c].tp;
                else if (pred)
                    ++counts_[c].fp;
                else if (t)
                    ++counts_[c].fn;
                if (t) ++positives_[c];
                // Thresholds t_k = k*step; p > t_k for all k < p/step, i.e.
                // k <= ceil(p/step) - 1.
                int k_max = static_cast<int>(std::ceil(p / pr_step_)) - 1;
                k_max = std::min(k_max, static_cast<int>(pr_tp_[c].size()) - 1);
                for (int k = 0; k <= k_max; ++k) {
                    if (p <= k * pr_step_) break;
                    if (t)
                        ++pr_tp_[c][k];
                    else
                        ++pr_fp_[c][k];
                }
            }
        }
    }

    void merge(const Evaluator& other) {
        check(other.classes_ == classes_, "Evaluator: merge class mismatch");
        for (std::size_t c = 0; c < classes_.size(); ++c) {
            counts_[c] += other.counts_[c];
            positives_[c] += other.positives_[c];
            for (std::size_t k = 0; k < pr_tp_[c].size(); ++k) {
                pr_tp_[c][k] += other.pr_tp_[c][k];
                pr_fp_[c][k] += other.pr_fp_[c][k];
            }
        }
    }

    EvalReport report(const std::string& subset_name = "",
                      const std::vector<std::string>& subset = {}) const {
        EvalReport r;
        r.classes = classes_;
        r.counts = counts_;
        r.subset_name = subset_name;
        r.subset_classes = subset;
        for (std::size_t c = 0; c < classes_.size(); ++c) {
            std::vector<PRPoint> curve;
            for (std::size_t k = 0; k < pr_tp_[c].size(); ++k) {
                PRPoint p;
                p.threshold = static_cast<double>(k) * pr_step_;
                std::uint64_t tp = pr_tp_[c][k], fp = pr_fp_[c][k];
                p.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                                        : 1.0;
                p.recall = positives_[c]
                               ? static_cast<double>(tp) / static_cast<double>(positives_[c])
                               : 1.0;
                curve.push_back(p);
            }
            r.pr.push_back(std::move(curve));
        }
        return r;
    }

private:
    std::vector<std::string> classes_;
    double pr_step_;
    std::vector<ClassCounts> counts_;
    std::vector<std::vector<std::uint64_t>> pr_tp_, pr_fp_;
    std::vector<std::uint64_t> positives_;
};

inline std::string report_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "class,tp,fp,fn,iou,both_empty\n";
    for (std::size_t c = 0; c < r.classes.size(); ++c) {
        const auto& k = r.counts[c];
        out << r.classes[c] << "," << k.tp << "," << k.fp << "," << k.fn << "," << k.iou() << ","
            << (k.both_empty() ? 1 : 0) << "\n";
    }
    out << "mean,,,," << r.mean_iou() << ",\n";
    if (!r.subset_classes.empty())
        out << r.subset_name << ",,,," << r.subset_mean_iou() << ",\n";
    return out.str();
}

inline std::string report_summary(const EvalReport& r) {
    std::ostringstream out;
    out << "per-class IoU (visible cells, threshold 0.5):\n";
    for (std::size_t c = 0; c < r.classes.size(); ++c) {
        out << "  " << r.classes[c] << ": " << r.counts[c].iou();
        if (r.counts[c].both_empty()) out << " (both empty)";
        out << "\n";
    }
    out << "mean IoU: " << r.mean_iou() << "\n";
    if (!r.subset_classes.empty())
        out << r.subset_name << " mean IoU: " << r.subset_mean_iou() << "\n";
    return out.str();
}

inline std::string pr_csv(const std::vector<PRPoint>& curve) {
    std::ostringstream out;
    out << "threshold,precision,recall\n";
    for (const auto& p : curve) out << p.threshold << "," << p.precision << "," << p.recall << "\n";
    return out.str();
}

inline std::vector<PRPoint> pr_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<PRPoint> curve;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            check(line.rfind("threshold,", 0) == 0, "pr_from_csv: malformed header");
            continue;
        }
        std::istringstream ls(line);
        PRPoint p;
        char comma;
        ls >> p.threshold >> comma >> p.precision >> comma >> p.recall;
        if (!ls) throw std::runtime_error("pr_from_csv: malformed line: " + line);
        curve.push_back(p);
    }
    return curve;
}

}  // namespace pyrocc
