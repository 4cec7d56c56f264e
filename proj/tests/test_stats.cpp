#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "stilt/rng.hpp"
#include "stilt/stats.hpp"

using namespace stilt;

namespace {

std::vector<PairedSample> pairs_from_diffs(const std::vector<double>& diffs) {
    std::vector<PairedSample> pairs;
    for (std::size_t i = 0; i < diffs.size(); ++i)
        pairs.push_back({"run" + std::to_string(i), 0.5, 0.5 + diffs[i]});
    return pairs;
}

/// Enumeration oracle: independently ranks |d| (average ranks on ties) and
/// walks every one of the 2^n sign assignments explicitly.
double enumeration_p(const std::vector<double>& diffs) {
    std::vector<double> abs_d;
    std::vector<int> sign;
    for (const double d : diffs) {
        if (d == 0.0) continue;
        abs_d.push_back(std::abs(d));
        sign.push_back(d > 0.0 ? 1 : -1);
    }
    const std::size_t n = abs_d.size();
    std::vector<double> ranks(n);
    {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return abs_d[a] < abs_d[b]; });
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && abs_d[idx[j + 1]] == abs_d[idx[i]]) ++j;
            double avg = 0.0;
            for (std::size_t k = i; k <= j; ++k) avg += static_cast<double>(k + 1);
            avg /= static_cast<double>(j - i + 1);
            for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
            i = j + 1;
        }
    }
    double w_obs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (sign[i] > 0) w_obs += ranks[i];

    std::size_t le = 0, ge = 0;
    const std::size_t assignments = std::size_t{1} << n;
    for (std::size_t mask = 0; mask < assignments; ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (std::size_t{1} << i)) w += ranks[i];
        if (w <= w_obs + 1e-9) ++le;
        if (w >= w_obs - 1e-9) ++ge;
    }
    const double tail = static_cast<double>(std::min(le, ge)) / static_cast<double>(assignments);
    return std::min(1.0, 2.0 * tail);
}

}  // namespace

TEST_CASE("wilcoxon hand-derived cases") {
    auto r1 = wilcoxon_signed_rank(pairs_from_diffs({0.01, 0.02, 0.03}));
    REQUIRE(r1.n_used == 3);
    REQUIRE(r1.w_statistic == 6.0);
    REQUIRE(r1.p_two_sided == 0.25);
    REQUIRE(r1.method == "exact");

    auto r2 = wilcoxon_signed_rank(pairs_from_diffs({0.01, -0.01}));
    REQUIRE(r2.n_used == 2);
    REQUIRE(r2.w_statistic == 1.5);
    REQUIRE(r2.p_two_sided == 1.0);

    REQUIRE_THROWS_WITH(wilcoxon_signed_rank(pairs_from_diffs({0.0, 0.0, 0.0})),
                        Catch::Matchers::ContainsSubstring("all differences are zero"));
    REQUIRE_THROWS_AS(wilcoxon_signed_rank({}), std::invalid_argument);
}

TEST_CASE("zero differences are dropped before ranking") {
    auto r = wilcoxon_signed_rank(pairs_from_diffs({0.0, 0.01, 0.02, 0.0, 0.03}));
    REQUIRE(r.n_used == 3);
    REQUIRE(r.w_statistic == 6.0);
    REQUIRE(r.p_two_sided == 0.25);
}

TEST_CASE("exact p equals full enumeration for n <= 12") {
    DeterministicRng rng(0x57A7);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.below(12);
        std::vector<double> diffs(n);
        for (double& d : diffs) {
            // small integer differences force plenty of rank ties
            d = static_cast<double>(1 + rng.below(4)) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
        }
        auto result = wilcoxon_signed_rank(pairs_from_diffs(diffs));
        REQUIRE(result.method == "exact");
        REQUIRE_THAT(result.p_two_sided,
                     Catch::Matchers::WithinAbs(enumeration_p(diffs), 1e-12));
    }
}

TEST_CASE("p is invariant under reordering and A/B swap") {
    DeterministicRng rng(0x57A8);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(10);
        std::vector<double> diffs(n);
        for (double& d : diffs)
            d = (rng.uniform() - 0.5) * 0.1;

        auto base = wilcoxon_signed_rank(pairs_from_diffs(diffs));

        std::vector<double> shuffled = diffs;
        rng.shuffle(shuffled);
        auto reordered = wilcoxon_signed_rank(pairs_from_diffs(shuffled));
        REQUIRE(reordered.p_two_sided == base.p_two_sided);

        std::vector<PairedSample> swapped = pairs_from_diffs(diffs);
        for (auto& p : swapped) std::swap(p.score_a, p.score_b);
        auto flipped = wilcoxon_signed_rank(swapped);
        REQUIRE(flipped.p_two_sided == base.p_two_sided);
    }
}

TEST_CASE("exact and normal approximation agree near the threshold") {
    DeterministicRng rng(0x57A9);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> diffs(kWilcoxonExactLimit);
        for (double& d : diffs) d = (rng.uniform() - 0.45) * 0.2;  // tie-free, mixed signs
        auto pairs = pairs_from_diffs(diffs);
        auto exact = wilcoxon_signed_rank(pairs);
        REQUIRE(exact.method == "exact");
        auto normal = wilcoxon_signed_rank(pairs, 0);  // force the approximation
        REQUIRE(normal.method == "normal_approx");
        REQUIRE(std::abs(exact.p_two_sided - normal.p_two_sided) <= 0.02);
    }
}

TEST_CASE("method switches to normal approximation past the exact limit") {
    DeterministicRng rng(0x57AA);
    std::vector<double> diffs(kWilcoxonExactLimit + 1);
    for (double& d : diffs) d = (rng.uniform() - 0.5) * 0.1;
    auto r = wilcoxon_signed_rank(pairs_from_diffs(diffs));
    REQUIRE(r.method == "normal_approx");
    REQUIRE(r.p_two_sided >= 0.0);
    REQUIRE(r.p_two_sided <= 1.0);
}

TEST_CASE("summarize moments") {
    auto one = summarize({0.5});
    REQUIRE(one.mean == 0.5);
    REQUIRE(one.stddev == 0.0);
    REQUIRE(one.n == 1);

    auto two = summarize({0.4, 0.6});
    REQUIRE_THAT(two.mean, Catch::Matchers::WithinAbs(0.5, 1e-15));
    REQUIRE_THAT(two.stddev, Catch::Matchers::WithinAbs(std::sqrt(0.02), 1e-15));
    REQUIRE(two.min == 0.4);
    REQUIRE(two.max == 0.6);

    auto constant = summarize({0.7, 0.7, 0.7, 0.7});
    REQUIRE(constant.stddev == 0.0);

    REQUIRE_THROWS_AS(summarize({}), std::invalid_argument);
}
