#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stilt/gradcheck.hpp"
#include "stilt/model.hpp"
#include "stilt/training.hpp"

namespace stilt {

struct OracleSuiteResult {
    bool pass = false;
    double max_rel_err = 0.0;
    double tolerance = 1e-6;
    std::size_t coords_checked = 0;
    std::vector<std::string> lines;  // one status line per model
};

/// Full-model gradient oracle: random small models, random batches, the real
/// class-weighted loss, dropout disabled, analytic backward vs central
/// differences on a reproducible coordinate sample per tensor.
inline OracleSuiteResult run_gradient_oracle_suite(std::size_t models = 20,
                                                   std::uint64_t seed = 20240,
                                                   std::size_t coords_per_tensor = 8,
                                                   double tolerance = 1e-6) {
    OracleSuiteResult suite;
    suite.tolerance = tolerance;
    suite.pass = true;

    for (std::size_t m = 0; m < models; ++m) {
        ModelConfig cfg;
        cfg.embedding_dim = 8;
        cfg.fused_dim = 8;
        cfg.dropout_rate = 0.0;

        DeterministicRng init_rng(seed, 2 * m);
        auto params = init_model(cfg, init_rng);

        DeterministicRng data_rng(seed, 2 * m + 1);
        const std::size_t batch = 4;
        Batch input;
        input.image = Matrix(batch, cfg.embedding_dim);
        input.text = Matrix(batch, cfg.embedding_dim);
        for (double& v : input.image.data) v = data_rng.uniform(-1.0, 1.0);
        for (double& v : input.text.data) v = data_rng.uniform(-1.0, 1.0);
        std::vector<int> labels(batch);
        for (int& y : labels) y = static_cast<int>(data_rng.below(3));
        LossWeights weights;
        for (double& w : weights.w) w = data_rng.uniform(0.2, 1.0);

        const auto loss_fn = [&](ModelParameters& p) {
            DeterministicRng unused(0);
            auto trace = forward(p, input, Mode::Train, unused);
            return weighted_ce_loss(trace.logits, labels, weights).loss;
        };

        params.zero_grad();
        DeterministicRng unused(0);
        auto trace = forward(params, input, Mode::Train, unused);
        auto loss = weighted_ce_loss(trace.logits, labels, weights);
        backward(params, trace, loss.d_logits);

        GradCheckOptions opts;
        opts.max_coords_per_tensor = coords_per_tensor;
        opts.coord_seed = seed + 977 * m;
        const auto report = finite_difference_check_report(loss_fn, params, opts);
        suite.max_rel_err = std::max(suite.max_rel_err, report.max_rel_err);
        suite.coords_checked += report.coords_checked;
        const bool ok = report.max_rel_err < tolerance;
        suite.pass = suite.pass && ok;
        suite.lines.push_back("model " + std::to_string(m) + ": max_rel_err " +
                              std::to_string(report.max_rel_err) + " over " +
                              std::to_string(report.coords_checked) + " coords (worst " +
                              report.worst_tensor + ") " + (ok ? "ok" : "FAIL"));
    }
    return suite;
}

}  // namespace stilt
