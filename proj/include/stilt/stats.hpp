#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace stilt {

struct PairedSample {
    std::string run_id;
    double score_a = 0.0;
    double score_b = 0.0;
};

struct TestResult {
    std::size_t n_used = 0;  // pairs left after zero-difference removal
    double w_statistic = 0.0;  // W+: rank sum of positive differences
    double p_two_sided = 1.0;
    std::string method;  // "exact" or "normal_approx"
};

struct SummaryStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation, n-1 denominator
    double min = 0.0;
    double max = 0.0;
    std::size_t n = 0;
};

inline SummaryStats summarize(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("summarize: empty input");
    SummaryStats s;
    s.n = scores.size();
    s.min = scores.front();
    s.max = scores.front();
    double sum = 0.0;
    for (const double v : scores) {
        sum += v;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    s.mean = sum / static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0.0;
        for (const double v : scores) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

inline constexpr std::size_t kWilcoxonExactLimit = 25;

namespace detail {

/// Ranks of |d| ascending, average ranks on ties, doubled so every rank is
/// an exact integer (tie averages land on half-integers).
inline std::vector<std::uint64_t> scaled_ranks(const std::vector<double>& abs_diffs,
                                               std::vector<std::size_t>& tie_sizes) {
    const std::size_t n = abs_diffs.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return abs_diffs[a] < abs_diffs[b]; });

    std::vector<std::uint64_t> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && abs_diffs[order[j + 1]] == abs_diffs[order[i]]) ++j;
        // positions i..j (0-based) share the average rank ((i+1)+(j+1))/2
        const std::uint64_t doubled_avg = static_cast<std::uint64_t>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = doubled_avg;
        tie_sizes.push_back(j - i + 1);
        i = j + 1;
    }
    return ranks;
}

inline double normal_sf_times_two(double z_abs) {
    // two-sided tail: 2 * (1 - Phi(|z|)) = erfc(|z| / sqrt(2))
    return std::erfc(z_abs / std::numbers::sqrt2);
}

}  // namespace detail

/// Matched-pair Wilcoxon signed-rank test on d = score_b - score_a.
/// Zero differences are dropped, tied |d| get average ranks. Exact two-sided
/// p over all sign assignments (subset-sum counting) up to n_used = 25, then
/// a tie-corrected normal approximation with 0.5 continuity correction.
/// `exact_limit` exists for method-agreement tests; leave it defaulted.
inline TestResult wilcoxon_signed_rank(const std::vector<PairedSample>& pairs,
                                       std::size_t exact_limit = kWilcoxonExactLimit) {
    if (pairs.empty()) throw std::invalid_argument("wilcoxon: need at least one pair");

    std::vector<double> abs_diffs;
    std::vector<bool> positive;
    for (const auto& p : pairs) {
        const double d = p.score_b - p.score_a;
        if (d == 0.0) continue;
        abs_diffs.push_back(std::abs(d));
        positive.push_back(d > 0.0);
    }
    if (abs_diffs.empty())
        throw std::invalid_argument("wilcoxon: all differences are zero, no test possible");

    const std::size_t n = abs_diffs.size();
    std::vector<std::size_t> tie_sizes;
    const auto ranks2 = detail::scaled_ranks(abs_diffs, tie_sizes);

    std::uint64_t w_plus2 = 0;  // doubled W+
    std::uint64_t total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += ranks2[i];
        if (positive[i]) w_plus2 += ranks2[i];
    }

    TestResult result;
    result.n_used = n;
    result.w_statistic = static_cast<double>(w_plus2) / 2.0;

    if (n <= exact_limit) {
        // subset-sum distribution of W+ over all 2^n sign assignments
        std::vector<std::uint64_t> dist(total2 + 1, 0);
        dist[0] = 1;
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t r = ranks2[i];
            for (std::size_t s = total2 + 1; s-- > r;) dist[s] += dist[s - r];
        }
        std::uint64_t le = 0, ge = 0;
        for (std::size_t s = 0; s <= total2; ++s) {
            if (s <= w_plus2) le += dist[s];
            if (s >= w_plus2) ge += dist[s];
        }
        const double denom = std::ldexp(1.0, static_cast<int>(n));  // 2^n
        const double tail = static_cast<double>(std::min(le, ge)) / denom;
        result.p_two_sided = std::min(1.0, 2.0 * tail);
        result.method = "exact";
    } else {
        const double fn = static_cast<double>(n);
        const double mean = fn * (fn + 1.0) / 4.0;
        double var = fn * (fn + 1.0) * (2.0 * fn + 1.0) / 24.0;
        for (const std::size_t t : tie_sizes) {
            const double ft = static_cast<double>(t);
            var -= (ft * ft * ft - ft) / 48.0;
        }
        const double w = static_cast<double>(w_plus2) / 2.0;
        double z = 0.0;
        if (var > 0.0) {
            const double centered = w - mean;
            const double corrected =
                centered > 0.0 ? centered - 0.5 : (centered < 0.0 ? centered + 0.5 : 0.0);
            z = corrected / std::sqrt(var);
        }
        result.p_two_sided = std::min(1.0, detail::normal_sf_times_two(std::abs(z)));
        result.method = "normal_approx";
    }
    return result;
}

}  // namespace stilt
