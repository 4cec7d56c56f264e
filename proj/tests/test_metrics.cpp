#include <catch_amalgamated.hpp>

#include <cmath>

#include "stilt/metrics.hpp"
#include "stilt/rng.hpp"

using namespace stilt;

namespace {

/// Independent brute-force oracle: recomputes every score straight from the
/// label/prediction vectors with its own counting, no shared code with the
/// implementation under test.
struct BruteForceScores {
    double weighted_f1 = 0.0;
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
};

BruteForceScores brute_force(const std::vector<int>& labels, const std::vector<int>& preds) {
    BruteForceScores out;
    const double total = static_cast<double>(labels.size());
    for (int c = 0; c < 3; ++c) {
        double tp = 0, predicted = 0, actual = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (preds[i] == c) predicted += 1;
            if (labels[i] == c) actual += 1;
            if (preds[i] == c && labels[i] == c) tp += 1;
        }
        const double precision = predicted > 0 ? tp / predicted : 0.0;
        const double recall = actual > 0 ? tp / actual : 0.0;
        const double f1 =
            (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        const double w = actual / total;
        out.weighted_f1 += w * f1;
        out.weighted_precision += w * precision;
        out.weighted_recall += w * recall;
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> random_instance(DeterministicRng& rng,
                                                              std::size_t max_size = 200) {
    const std::size_t n = 1 + rng.below(max_size);
    std::vector<int> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(rng.below(3));
        preds[i] = static_cast<int>(rng.below(3));
    }
    return {labels, preds};
}

}  // namespace

TEST_CASE("confusion counts on small cases") {
    auto c = confusion({0, 1, 2}, {0, 1, 2});
    REQUIRE(c.tp == std::array<std::size_t, 3>{1, 1, 1});
    REQUIRE(c.fp == std::array<std::size_t, 3>{0, 0, 0});
    REQUIRE(c.fn == std::array<std::size_t, 3>{0, 0, 0});

    // labels=[2,2,1,0], preds=[2,1,1,0]
    auto c2 = confusion({2, 2, 1, 0}, {2, 1, 1, 0});
    REQUIRE(c2.tp[2] == 1);
    REQUIRE(c2.fp[2] == 0);
    REQUIRE(c2.fn[2] == 1);
    REQUIRE(c2.tp[1] == 1);
    REQUIRE(c2.fp[1] == 1);
    REQUIRE(c2.fn[1] == 0);
    REQUIRE(c2.tp[0] == 1);
    REQUIRE(c2.fp[0] == 0);
    REQUIRE(c2.fn[0] == 0);

    auto empty = confusion({}, {});
    REQUIRE(empty.total() == 0);

    REQUIRE_THROWS_AS(confusion({0, 1}, {0}), std::invalid_argument);
    REQUIRE_THROWS_AS(confusion({0, 5}, {0, 1}), std::invalid_argument);
}

TEST_CASE("weighted metrics on the hand-derived case") {
    auto report = weighted_metrics({2, 2, 1, 0}, {2, 1, 1, 0});
    // 0.5*(2/3) + 0.25*(2/3) + 0.25*1
    REQUIRE(report.weighted_f1 == 0.75);
    REQUIRE_THAT(report.f1[2], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));
    REQUIRE_THAT(report.f1[1], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));
    REQUIRE(report.f1[0] == 1.0);
    REQUIRE(report.weights[2] == 0.5);
}

TEST_CASE("perfect predictions score 1 and empty counts are rejected") {
    auto report = weighted_metrics({0, 1, 2, 2}, {0, 1, 2, 2});
    REQUIRE(report.weighted_f1 == 1.0);
    REQUIRE(report.weighted_precision == 1.0);
    REQUIRE(report.weighted_recall == 1.0);
    REQUIRE_THROWS_AS(weighted_metrics(ConfusionCounts{}), std::invalid_argument);
}

TEST_CASE("0/0 precision, recall and F1 count as zero") {
    // class 2 never appears and is never predicted
    auto report = weighted_metrics({0, 0, 1}, {1, 0, 1});
    REQUIRE(report.precision[2] == 0.0);
    REQUIRE(report.recall[2] == 0.0);
    REQUIRE(report.f1[2] == 0.0);
}

TEST_CASE("weighted metrics agree with the brute-force oracle") {
    DeterministicRng rng(0xF1);
    for (int trial = 0; trial < 1000; ++trial) {
        auto [labels, preds] = random_instance(rng);
        auto report = weighted_metrics(labels, preds);
        auto oracle = brute_force(labels, preds);
        REQUIRE_THAT(report.weighted_f1, Catch::Matchers::WithinAbs(oracle.weighted_f1, 1e-12));
        REQUIRE_THAT(report.weighted_precision,
                     Catch::Matchers::WithinAbs(oracle.weighted_precision, 1e-12));
        REQUIRE_THAT(report.weighted_recall,
                     Catch::Matchers::WithinAbs(oracle.weighted_recall, 1e-12));
    }
}

TEST_CASE("weighted recall equals accuracy, order does not matter") {
    DeterministicRng rng(0xF2);
    for (int trial = 0; trial < 200; ++trial) {
        auto [labels, preds] = random_instance(rng);
        auto report = weighted_metrics(labels, preds);
        double correct = 0;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == preds[i]) correct += 1;
        REQUIRE_THAT(report.weighted_recall,
                     Catch::Matchers::WithinAbs(correct / labels.size(), 1e-12));

        // permute both vectors with the same permutation
        std::vector<std::size_t> perm(labels.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<int> labels_p(labels.size()), preds_p(labels.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            labels_p[i] = labels[perm[i]];
            preds_p[i] = preds[perm[i]];
        }
        auto permuted = weighted_metrics(labels_p, preds_p);
        REQUIRE(permuted.weighted_f1 == report.weighted_f1);
        REQUIRE(permuted.weighted_precision == report.weighted_precision);
    }
}

TEST_CASE("weighted F1 can land outside the precision-recall interval") {
    // support-weighted averaging does not keep F1 between precision and recall
    DeterministicRng rng(0xF3);
    bool found = false;
    for (int trial = 0; trial < 5000 && !found; ++trial) {
        auto [labels, preds] = random_instance(rng, 12);
        auto r = weighted_metrics(labels, preds);
        const double lo = std::min(r.weighted_precision, r.weighted_recall);
        const double hi = std::max(r.weighted_precision, r.weighted_recall);
        if (r.weighted_f1 < lo - 1e-12 || r.weighted_f1 > hi + 1e-12) found = true;
    }
    REQUIRE(found);
}

TEST_CASE("contingency cells partition the test set") {
    std::vector<int> labels{0, 1, 2, 0, 1};
    auto t = contingency(labels, labels, labels);
    REQUIRE(t.both_correct == 5);
    REQUIRE(t.total() == 5);

    std::vector<int> never{1, 2, 0, 1, 2};  // never correct
    auto t2 = contingency(labels, labels, never);
    REQUIRE(t2.only_a_correct == 5);
    REQUIRE(t2.both_correct == 0);

    DeterministicRng rng(0xF4);
    std::vector<int> a(labels.size()), b(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        a[i] = static_cast<int>(rng.below(3));
        b[i] = static_cast<int>(rng.below(3));
    }
    REQUIRE(contingency(labels, a, b).total() == labels.size());
    REQUIRE_THROWS_AS(contingency(labels, a, {0}), std::invalid_argument);
}
