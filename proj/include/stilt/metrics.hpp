#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace stilt {

struct ConfusionCounts {
    // per class: true positives, false positives, false negatives, support
    std::array<std::size_t, 3> tp = {0, 0, 0};
    std::array<std::size_t, 3> fp = {0, 0, 0};
    std::array<std::size_t, 3> fn = {0, 0, 0};
    std::array<std::size_t, 3> support = {0, 0, 0};

    std::size_t total() const { return support[0] + support[1] + support[2]; }
};

struct MetricReport {
    std::array<double, 3> precision = {0, 0, 0};
    std::array<double, 3> recall = {0, 0, 0};
    std::array<double, 3> f1 = {0, 0, 0};
    std::array<double, 3> weights = {0, 0, 0};  // support share per class
    double weighted_f1 = 0.0;
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
};

inline void require_valid_classes(const std::vector<int>& v, const std::string& what) {
    for (const int c : v)
        if (c < 0 || c > 2)
            throw std::invalid_argument(what + ": class id out of range: " + std::to_string(c));
}

inline ConfusionCounts confusion(const std::vector<int>& labels,
                                 const std::vector<int>& predictions) {
    if (labels.size() != predictions.size())
        throw std::invalid_argument("confusion: length mismatch " +
                                    std::to_string(labels.size()) + " vs " +
                                    std::to_string(predictions.size()));
    require_valid_classes(labels, "confusion labels");
    require_valid_classes(predictions, "confusion predictions");

    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        const auto p = static_cast<std::size_t>(predictions[i]);
        ++c.support[y];
        if (y == p) {
            ++c.tp[y];
        } else {
            ++c.fn[y];
            ++c.fp[p];
        }
    }
    return c;
}

/// Support-weighted scores: weighted X = sum_c N_c * X_c / sum_c N_c.
/// Any 0/0 (absent or never-predicted class) counts as 0.
inline MetricReport weighted_metrics(const ConfusionCounts& counts) {
    const std::size_t total = counts.total();
    if (total == 0) throw std::invalid_argument("weighted_metrics: empty counts");

    MetricReport r;
    const auto safe_div = [](double num, double den) { return den == 0.0 ? 0.0 : num / den; };
    double f1_acc = 0.0, prec_acc = 0.0, rec_acc = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        const auto tp = static_cast<double>(counts.tp[c]);
        const auto fp = static_cast<double>(counts.fp[c]);
        const auto fn = static_cast<double>(counts.fn[c]);
        r.precision[c] = safe_div(tp, tp + fp);
        r.recall[c] = safe_div(tp, tp + fn);
        r.f1[c] = safe_div(2.0 * r.precision[c] * r.recall[c], r.precision[c] + r.recall[c]);
        r.weights[c] = static_cast<double>(counts.support[c]) / static_cast<double>(total);
        const auto n_c = static_cast<double>(counts.support[c]);
        f1_acc += n_c * r.f1[c];
        prec_acc += n_c * r.precision[c];
        rec_acc += n_c * r.recall[c];
    }
    r.weighted_f1 = f1_acc / static_cast<double>(total);
    r.weighted_precision = prec_acc / static_cast<double>(total);
    r.weighted_recall = rec_acc / static_cast<double>(total);
    return r;
}

inline MetricReport weighted_metrics(const std::vector<int>& labels,
                                     const std::vector<int>& predictions) {
    return weighted_metrics(confusion(labels, predictions));
}

/// 2x2 joint-correctness counts for two prediction vectors over one test
/// set (McNemar layout).
struct ContingencyTable {
    std::size_t both_correct = 0;
    std::size_t only_a_correct = 0;
    std::size_t only_b_correct = 0;
    std::size_t both_wrong = 0;

    std::size_t total() const {
        return both_correct + only_a_correct + only_b_correct + both_wrong;
    }
};

inline ContingencyTable contingency(const std::vector<int>& labels,
                                    const std::vector<int>& preds_a,
                                    const std::vector<int>& preds_b) {
    if (labels.size() != preds_a.size() || labels.size() != preds_b.size())
        throw std::invalid_argument("contingency: length mismatch");
    ContingencyTable t;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool a = preds_a[i] == labels[i];
        const bool b = preds_b[i] == labels[i];
        if (a && b)
            ++t.both_correct;
        else if (a)
            ++t.only_a_correct;
        else if (b)
            ++t.only_b_correct;
        else
            ++t.both_wrong;
    }
    return t;
}

}  // namespace stilt
