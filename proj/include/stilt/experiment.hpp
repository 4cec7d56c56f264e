#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stilt/checkpoint.hpp"
#include "stilt/csv.hpp"
#include "stilt/data.hpp"
#include "stilt/stats.hpp"
#include "stilt/training.hpp"

namespace stilt {

enum class ExperimentKind { RQ1, RQ2, Single };

inline const char* experiment_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::RQ1: return "rq1";
        case ExperimentKind::RQ2: return "rq2";
        default: return "single";
    }
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
    if (s == "rq1") return ExperimentKind::RQ1;
    if (s == "rq2") return ExperimentKind::RQ2;
    if (s == "single") return ExperimentKind::Single;
    throw std::invalid_argument("unknown experiment kind: " + s);
}

inline const std::vector<double>& default_fraction_sweep() {
    static const std::vector<double> sweep = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    return sweep;
}

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::Single;
    std::vector<Approach> approaches = {Approach::Baseline};
    std::size_t restarts = 0;  // 0: default per kind (rq1 10, rq2 5, single 1)
    std::vector<double> fractions;
    std::string memes_path;
    std::string images_path;
    std::string texts_path;
    std::string synthetic_spec_path;
    TrainConfig meme_config;
    TrainConfig intermediate_config;
    std::size_t fused_dim = 0;  // 0: embedding width
    std::uint64_t master_seed = 0;
    std::string output_dir = "out";
    std::size_t parallel_runs = 1;

    std::size_t effective_restarts() const {
        if (restarts > 0) return restarts;
        switch (experiment) {
            case ExperimentKind::RQ1: return 10;
            case ExperimentKind::RQ2: return 5;
            default: return 1;
        }
    }

    std::vector<double> effective_fractions() const {
        if (experiment == ExperimentKind::RQ1) return {1.0};
        if (!fractions.empty()) return fractions;
        if (experiment == ExperimentKind::RQ2) return default_fraction_sweep();
        return {1.0};
    }

    void validate() const {
        if (approaches.empty())
            throw std::invalid_argument("experiment config: approaches must be nonempty");
        for (const double f : effective_fractions())
            if (!(f > 0.0) || f > 1.0)
                throw std::invalid_argument("experiment config: fractions must lie in (0, 1]");
        if (parallel_runs < 1)
            throw std::invalid_argument("experiment config: parallel_runs must be >= 1");
        if (memes_path.empty() && synthetic_spec_path.empty())
            throw std::invalid_argument(
                "experiment config: need datasets.memes or synthetic_spec");
        meme_config.validate();
        intermediate_config.validate();
    }
};

inline TrainConfig default_meme_train_config() {
    TrainConfig cfg;  // Appendix-style meme-stage defaults
    cfg.lr_max = 5e-5;
    cfg.lr_min = 1.5e-5;
    cfg.max_epochs = 40;
    cfg.early_stop_criterion = StopCriterion::MinValLoss;
    return cfg;
}

inline TrainConfig default_intermediate_train_config() {
    TrainConfig cfg;  // unimodal-stage defaults
    cfg.lr_max = 1e-5;
    cfg.lr_min = 5e-6;
    cfg.max_epochs = 60;
    cfg.early_stop_criterion = StopCriterion::MaxValWeightedF1;
    return cfg;
}

inline TrainConfig parse_train_config(const nlohmann::json& j, TrainConfig base) {
    if (j.contains("lr_max")) base.lr_max = j.at("lr_max").get<double>();
    if (j.contains("lr_min")) base.lr_min = j.at("lr_min").get<double>();
    if (j.contains("max_epochs")) base.max_epochs = j.at("max_epochs").get<std::size_t>();
    if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("betas")) {
        const auto betas = j.at("betas").get<std::vector<double>>();
        if (betas.size() != 2)
            throw std::invalid_argument("train config: betas needs exactly 2 entries");
        base.beta1 = betas[0];
        base.beta2 = betas[1];
    }
    if (j.contains("weight_decay")) base.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("amsgrad")) base.amsgrad = j.at("amsgrad").get<bool>();
    if (j.contains("dropout")) base.dropout = j.at("dropout").get<double>();
    if (j.contains("patience")) base.patience = j.at("patience").get<std::size_t>();
    if (j.contains("early_stop_criterion"))
        base.early_stop_criterion =
            parse_criterion(j.at("early_stop_criterion").get<std::string>());
    base.validate();
    return base;
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.experiment = parse_experiment_kind(j.at("experiment").get<std::string>());
    cfg.approaches.clear();
    for (const auto& a : j.at("approaches")) cfg.approaches.push_back(parse_approach(a));
    if (j.contains("restarts")) cfg.restarts = j.at("restarts").get<std::size_t>();
    if (j.contains("fractions")) cfg.fractions = j.at("fractions").get<std::vector<double>>();
    if (j.contains("datasets")) {
        const auto& d = j.at("datasets");
        if (d.contains("memes")) cfg.memes_path = d.at("memes").get<std::string>();
        if (d.contains("images")) cfg.images_path = d.at("images").get<std::string>();
        if (d.contains("texts")) cfg.texts_path = d.at("texts").get<std::string>();
    }
    if (j.contains("synthetic_spec"))
        cfg.synthetic_spec_path = j.at("synthetic_spec").get<std::string>();
    cfg.meme_config = j.contains("meme_config")
                          ? parse_train_config(j.at("meme_config"), default_meme_train_config())
                          : default_meme_train_config();
    cfg.intermediate_config =
        j.contains("intermediate_config")
            ? parse_train_config(j.at("intermediate_config"),
                                 default_intermediate_train_config())
            : default_intermediate_train_config();
    if (j.contains("fused_dim")) cfg.fused_dim = j.at("fused_dim").get<std::size_t>();
    cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    cfg.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("parallel_runs")) cfg.parallel_runs = j.at("parallel_runs").get<std::size_t>();
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }
    return parse_experiment_config(j);
}

// ---------------------------------------------------------------------------
// Run planning and execution.
// ---------------------------------------------------------------------------

struct RunKey {
    Approach approach = Approach::Baseline;
    double fraction = 1.0;
    std::size_t run_id = 0;

    std::string fraction_tag() const { return format_double(fraction); }
    std::string dir_name() const {
        return std::string(approach_name(approach)) + "_f" + fraction_tag() + "_r" +
               std::to_string(run_id);
    }
};

struct RunRecord {
    RunKey key;
    std::uint64_t seed = 0;
    std::string subset_fingerprint;
    std::size_t n_test = 0;
    MetricReport metrics;
    std::vector<HistoryRow> history;
    std::vector<std::string> test_ids;
    std::vector<int> test_labels;
    std::vector<int> test_predictions;
    Matrix test_logits;
    double wall_seconds = 0.0;
};

/// Fingerprint of the sampled id set: order-independent, pure function of
/// the ids. Matched approaches must agree on it per (fraction, run_id).
inline std::string subset_fingerprint(const std::vector<EmbeddingRecord>& records) {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.id);
    std::sort(ids.begin(), ids.end());
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& id : ids) {
        h = fnv1a64(id, h);
        h = fnv1a64("\n", h);
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::uint64_t subset_seed(const ExperimentConfig& cfg, double fraction,
                                 std::size_t run_id) {
    // no approach in the key: matched pairs share their subset by construction
    return derive_seed(cfg.master_seed, "subset|fraction=" + format_double(fraction) +
                                            "|run=" + std::to_string(run_id));
}

inline std::uint64_t run_seed(const ExperimentConfig& cfg, const RunKey& key) {
    return derive_seed(cfg.master_seed, std::string("run|approach=") +
                                            approach_name(key.approach) +
                                            "|fraction=" + key.fraction_tag() +
                                            "|run=" + std::to_string(key.run_id));
}

struct ExperimentData {
    Dataset memes;
    std::optional<Dataset> images;
    std::optional<Dataset> texts;
};

/// Load the datasets a config names, or generate (and persist) the synthetic
/// ones its spec describes.
inline ExperimentData prepare_data(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    ExperimentData data;
    if (!cfg.synthetic_spec_path.empty()) {
        const auto spec = load_synthetic_spec(cfg.synthetic_spec_path);
        auto synth = generate_synthetic(spec);
        const fs::path dir = fs::path(cfg.output_dir) / "data";
        fs::create_directories(dir);
        save_dataset(synth.memes, (dir / "memes_manifest.json").string());
        save_dataset(synth.images, (dir / "images_manifest.json").string());
        save_dataset(synth.texts, (dir / "texts_manifest.json").string());
        data.memes = std::move(synth.memes);
        data.images = std::move(synth.images);
        data.texts = std::move(synth.texts);
        return data;
    }
    data.memes = load_dataset(cfg.memes_path);
    if (!cfg.images_path.empty()) data.images = load_dataset(cfg.images_path);
    if (!cfg.texts_path.empty()) data.texts = load_dataset(cfg.texts_path);
    return data;
}

namespace detail {

inline void require_intermediate_data(const ExperimentConfig& cfg, const ExperimentData& data) {
    for (const Approach a : cfg.approaches) {
        if (a == Approach::ImageSTILT && !data.images)
            throw std::invalid_argument(
                "experiment config: image_stilt requires an images dataset");
        if (a == Approach::TextSTILT && !data.texts)
            throw std::invalid_argument(
                "experiment config: text_stilt requires a texts dataset");
    }
}

inline std::vector<Approach> canonical_approaches(const ExperimentConfig& cfg) {
    std::vector<Approach> out;
    for (const Approach a : {Approach::Baseline, Approach::ImageSTILT, Approach::TextSTILT})
        for (const Approach b : cfg.approaches)
            if (a == b) out.push_back(a);
    return out;
}

}  // namespace detail

struct RunPlan {
    struct Entry {
        RunKey key;
        const std::vector<EmbeddingRecord>* subset = nullptr;  // into RunPlan::subsets
        std::string fingerprint;
        std::uint64_t seed = 0;
    };
    // subsets keyed by (fraction index, run_id); all approaches share entries
    std::vector<std::vector<EmbeddingRecord>> subsets;
    std::vector<Entry> entries;
};

inline RunPlan build_plan(const ExperimentConfig& cfg, const ExperimentData& data) {
    RunPlan plan;
    const auto fractions = cfg.effective_fractions();
    const auto restarts = cfg.effective_restarts();
    const auto approaches = detail::canonical_approaches(cfg);

    // subsets first: one per (fraction, run_id), regardless of approach
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> subset_index;
    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
        for (std::size_t run = 0; run < restarts; ++run) {
            if (fractions[fi] == 1.0) {
                plan.subsets.push_back(data.memes.train);
            } else {
                DeterministicRng rng(subset_seed(cfg, fractions[fi], run));
                plan.subsets.push_back(fractional_sample(data.memes.train, fractions[fi], rng));
            }
            subset_index[{fi, run}] = plan.subsets.size() - 1;
        }
    }

    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
        for (std::size_t run = 0; run < restarts; ++run) {
            const auto& subset = plan.subsets[subset_index.at({fi, run})];
            const std::string fingerprint = subset_fingerprint(subset);
            for (const Approach a : approaches) {
                RunPlan::Entry e;
                e.key = RunKey{a, fractions[fi], run};
                e.subset = &subset;
                e.fingerprint = fingerprint;
                e.seed = run_seed(cfg, e.key);
                plan.entries.push_back(std::move(e));
            }
        }
    }
    return plan;
}

inline RunRecord execute_run(const ExperimentConfig& cfg, const ExperimentData& data,
                             const RunPlan::Entry& entry) {
    const auto start = std::chrono::steady_clock::now();

    ProtocolSpec spec;
    spec.kind = entry.key.approach;
    spec.meme_dataset = &data.memes;
    if (entry.key.approach == Approach::ImageSTILT) spec.intermediate_dataset = &*data.images;
    if (entry.key.approach == Approach::TextSTILT) spec.intermediate_dataset = &*data.texts;
    spec.meme_train_subset = *entry.subset;
    spec.meme_config = cfg.meme_config;
    spec.intermediate_config = cfg.intermediate_config;
    spec.fused_dim = cfg.fused_dim;
    spec.seed = entry.seed;

    auto protocol = run_protocol(spec);

    RunRecord record;
    record.key = entry.key;
    record.seed = entry.seed;
    record.subset_fingerprint = entry.fingerprint;
    record.n_test = protocol.test_eval.predictions.size();
    record.metrics = protocol.test_eval.metrics;
    record.history = std::move(protocol.history);
    record.test_ids = std::move(protocol.test_ids);
    record.test_labels = std::move(protocol.test_labels);
    record.test_predictions = std::move(protocol.test_eval.predictions);
    record.test_logits = std::move(protocol.test_eval.logits);

    const auto run_dir = std::filesystem::path(cfg.output_dir) / "runs" / entry.key.dir_name();
    std::filesystem::create_directories(run_dir);
    {
        CsvWriter history((run_dir / "history.csv").string(),
                          {"stage", "epoch", "train_loss", "val_loss", "val_weighted_f1", "lr"});
        for (const auto& row : record.history)
            history.row({row.stage, std::to_string(row.epoch), format_double(row.train_loss),
                         format_double(row.val_loss), format_double(row.val_weighted_f1),
                         format_double(row.lr)});
    }
    {
        CsvWriter preds((run_dir / "predictions_test.csv").string(),
                        {"id", "label", "predicted", "logit_negative", "logit_neutral",
                         "logit_positive"});
        for (std::size_t i = 0; i < record.test_ids.size(); ++i)
            preds.row({record.test_ids[i], std::to_string(record.test_labels[i]),
                       std::to_string(record.test_predictions[i]),
                       format_double(record.test_logits(i, 0)),
                       format_double(record.test_logits(i, 1)),
                       format_double(record.test_logits(i, 2))});
    }
    save_checkpoint(protocol.final_params, (run_dir / "best.ckpt").string());

    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
}

/// Independent runs fan out over `parallel_runs` workers; aggregation happens
/// after all workers join, in plan order, so reports are byte-identical for
/// any worker count.
inline std::vector<RunRecord> execute_plan(const ExperimentConfig& cfg,
                                           const ExperimentData& data, const RunPlan& plan) {
    std::vector<RunRecord> records(plan.entries.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string failure_message;
    std::mutex failure_mutex;

    const std::size_t workers = std::min(cfg.parallel_runs, plan.entries.size());
    const auto worker = [&]() {
        for (;;) {
            const std::size_t index = next.fetch_add(1);
            if (index >= plan.entries.size() || failed.load()) return;
            try {
                records[index] = execute_run(cfg, data, plan.entries[index]);
            } catch (const std::exception& e) {
                std::scoped_lock lock(failure_mutex);
                failed.store(true);
                if (failure_message.empty())
                    failure_message = plan.entries[index].key.dir_name() + ": " + e.what();
            }
        }
    };

    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failed.load()) throw std::runtime_error("run failed: " + failure_message);
    return records;
}

// ---------------------------------------------------------------------------
// Report emission. All report files are byte-deterministic for a given
// config and master seed; wall times go to timing.csv only.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& metrics_csv_header() {
    static const std::vector<std::string> header = {
        "approach",   "fraction",           "run_id",      "seed",
        "subset_fingerprint", "n_test",     "weighted_f1", "weighted_precision",
        "weighted_recall",    "f1_negative", "f1_neutral", "f1_positive"};
    return header;
}

inline void write_metrics_csv(const std::string& path, const std::vector<RunRecord>& records) {
    CsvWriter out(path, metrics_csv_header());
    for (const auto& r : records)
        out.row({approach_name(r.key.approach), r.key.fraction_tag(),
                 std::to_string(r.key.run_id), std::to_string(r.seed), r.subset_fingerprint,
                 std::to_string(r.n_test), format_double(r.metrics.weighted_f1),
                 format_double(r.metrics.weighted_precision),
                 format_double(r.metrics.weighted_recall), format_double(r.metrics.f1[0]),
                 format_double(r.metrics.f1[1]), format_double(r.metrics.f1[2])});
}

inline void write_timing_csv(const std::string& path, const std::vector<RunRecord>& records) {
    CsvWriter out(path, {"approach", "fraction", "run_id", "wall_seconds"});
    for (const auto& r : records)
        out.row({approach_name(r.key.approach), r.key.fraction_tag(),
                 std::to_string(r.key.run_id), format_double(r.wall_seconds)});
}

/// Slim view of a finished run, as reconstructed from metrics.csv.
struct ScoreRow {
    RunKey key;
    std::string fingerprint;
    double weighted_f1 = 0.0;
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
};

inline std::vector<ScoreRow> score_rows(const std::vector<RunRecord>& records) {
    std::vector<ScoreRow> rows;
    for (const auto& r : records)
        rows.push_back({r.key, r.subset_fingerprint, r.metrics.weighted_f1,
                        r.metrics.weighted_precision, r.metrics.weighted_recall});
    return rows;
}

inline std::vector<ScoreRow> score_rows_from_csv(const std::string& path) {
    const CsvTable table = read_csv(path);
    const auto approach_col = table.column("approach");
    const auto fraction_col = table.column("fraction");
    const auto run_col = table.column("run_id");
    const auto fp_col = table.column("subset_fingerprint");
    const auto f1_col = table.column("weighted_f1");
    const auto prec_col = table.column("weighted_precision");
    const auto rec_col = table.column("weighted_recall");

    std::vector<ScoreRow> rows;
    for (const auto& r : table.rows) {
        ScoreRow row;
        row.key.approach = parse_approach(r[approach_col]);
        row.key.fraction = std::strtod(r[fraction_col].c_str(), nullptr);
        row.key.run_id = std::stoull(r[run_col]);
        row.fingerprint = r[fp_col];
        row.weighted_f1 = std::strtod(r[f1_col].c_str(), nullptr);
        row.weighted_precision = std::strtod(r[prec_col].c_str(), nullptr);
        row.weighted_recall = std::strtod(r[rec_col].c_str(), nullptr);
        rows.push_back(std::move(row));
    }
    return rows;
}

struct ComparisonResult {
    std::string name;   // e.g. baseline_vs_text_stilt
    std::string scope;  // full | all_fractions | band_50_80
    std::size_t pairs = 0;
    std::optional<TestResult> test;  // empty on degenerate input
};

namespace detail {

/// Matched pairs (baseline, other) joined on (fraction, run_id).
inline std::vector<PairedSample> matched_pairs(const std::vector<ScoreRow>& rows,
                                               Approach other, double fraction_lo,
                                               double fraction_hi) {
    std::map<std::pair<std::string, std::size_t>, double> baseline_scores;
    const auto in_band = [&](double f) {
        return f >= fraction_lo - 1e-12 && f <= fraction_hi + 1e-12;
    };
    for (const auto& r : rows)
        if (r.key.approach == Approach::Baseline && in_band(r.key.fraction))
            baseline_scores[{format_double(r.key.fraction), r.key.run_id}] = r.weighted_f1;

    std::vector<PairedSample> pairs;
    for (const auto& r : rows) {
        if (r.key.approach != other || !in_band(r.key.fraction)) continue;
        const auto it = baseline_scores.find({format_double(r.key.fraction), r.key.run_id});
        if (it == baseline_scores.end()) continue;
        pairs.push_back({r.key.fraction_tag() + "/r" + std::to_string(r.key.run_id), it->second,
                         r.weighted_f1});
    }
    return pairs;
}

inline ComparisonResult run_comparison(const std::vector<ScoreRow>& rows, Approach other,
                                       const std::string& scope, double lo, double hi) {
    ComparisonResult result;
    result.name = std::string("baseline_vs_") + approach_name(other);
    result.scope = scope;
    const auto pairs = detail::matched_pairs(rows, other, lo, hi);
    result.pairs = pairs.size();
    if (pairs.empty()) return result;
    try {
        result.test = wilcoxon_signed_rank(pairs);
    } catch (const std::invalid_argument&) {
        // all-zero differences: degenerate, reported without a p-value
    }
    return result;
}

}  // namespace detail

inline std::vector<ComparisonResult> run_comparisons(const ExperimentKind kind,
                                                     const std::vector<ScoreRow>& rows) {
    std::vector<ComparisonResult> results;
    bool has_baseline = false;
    bool has_image = false, has_text = false;
    for (const auto& r : rows) {
        has_baseline |= r.key.approach == Approach::Baseline;
        has_image |= r.key.approach == Approach::ImageSTILT;
        has_text |= r.key.approach == Approach::TextSTILT;
    }
    if (!has_baseline || kind == ExperimentKind::Single) return results;

    for (const Approach other : {Approach::ImageSTILT, Approach::TextSTILT}) {
        if ((other == Approach::ImageSTILT && !has_image) ||
            (other == Approach::TextSTILT && !has_text))
            continue;
        if (kind == ExperimentKind::RQ1) {
            results.push_back(detail::run_comparison(rows, other, "full", 0.0, 1.0));
        } else {
            results.push_back(detail::run_comparison(rows, other, "all_fractions", 0.0, 1.0));
            results.push_back(detail::run_comparison(rows, other, "band_50_80", 0.5, 0.8));
        }
    }
    return results;
}

inline void write_stats_csv(const std::string& path,
                            const std::vector<ComparisonResult>& comparisons) {
    CsvWriter out(path, {"comparison", "scope", "n_pairs", "w_statistic", "p_value", "method"});
    for (const auto& c : comparisons) {
        if (c.test) {
            out.row({c.name, c.scope, std::to_string(c.test->n_used),
                     format_double(c.test->w_statistic), format_double(c.test->p_two_sided),
                     c.test->method});
        } else {
            out.row({c.name, c.scope, std::to_string(c.pairs), "", "", "degenerate"});
        }
    }
}

inline void write_table4_csv(const std::string& path, const std::vector<ScoreRow>& rows,
                             const std::vector<ComparisonResult>& comparisons) {
    CsvWriter out(path, {"approach", "n_runs", "mean_f1", "std_f1", "mean_precision",
                         "std_precision", "mean_recall", "std_recall", "p_vs_baseline"});
    for (const Approach a : {Approach::Baseline, Approach::ImageSTILT, Approach::TextSTILT}) {
        std::vector<double> f1, prec, rec;
        for (const auto& r : rows) {
            if (r.key.approach != a) continue;
            f1.push_back(r.weighted_f1);
            prec.push_back(r.weighted_precision);
            rec.push_back(r.weighted_recall);
        }
        if (f1.empty()) continue;
        const auto sf1 = summarize(f1);
        const auto sprec = summarize(prec);
        const auto srec = summarize(rec);
        std::string p_value;
        for (const auto& c : comparisons)
            if (c.name == std::string("baseline_vs_") + approach_name(a) &&
                (c.scope == "full" || c.scope == "all_fractions") && c.test)
                p_value = format_double(c.test->p_two_sided);
        out.row({approach_name(a), std::to_string(sf1.n), format_double(sf1.mean),
                 format_double(sf1.stddev), format_double(sprec.mean),
                 format_double(sprec.stddev), format_double(srec.mean),
                 format_double(srec.stddev), p_value});
    }
}

inline void write_fig4_csv(const std::string& path, const std::vector<ScoreRow>& rows) {
    CsvWriter out(path, {"fraction", "approach", "n_runs", "mean_f1", "std_f1"});
    std::vector<double> fractions;
    for (const auto& r : rows)
        if (std::find(fractions.begin(), fractions.end(), r.key.fraction) == fractions.end())
            fractions.push_back(r.key.fraction);
    std::sort(fractions.begin(), fractions.end());

    for (const double f : fractions) {
        for (const Approach a :
             {Approach::Baseline, Approach::ImageSTILT, Approach::TextSTILT}) {
            std::vector<double> scores;
            for (const auto& r : rows)
                if (r.key.approach == a && r.key.fraction == f)
                    scores.push_back(r.weighted_f1);
            if (scores.empty()) continue;
            const auto s = summarize(scores);
            out.row({format_double(f), approach_name(a), std::to_string(s.n),
                     format_double(s.mean), format_double(s.stddev)});
        }
    }
}

/// Appendix-E-style contingency table: the most similarly performing
/// (baseline, text_stilt) run pair by weighted F1, joint correctness over
/// the shared test set. Needs per-run predictions on disk.
inline bool write_contingency_csv(const std::string& out_dir,
                                  const std::vector<ScoreRow>& rows) {
    namespace fs = std::filesystem;
    const ScoreRow* best_a = nullptr;
    const ScoreRow* best_b = nullptr;
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& a : rows) {
        if (a.key.approach != Approach::Baseline) continue;
        for (const auto& b : rows) {
            if (b.key.approach != Approach::TextSTILT) continue;
            const double gap = std::abs(a.weighted_f1 - b.weighted_f1);
            if (gap < best_gap) {
                best_gap = gap;
                best_a = &a;
                best_b = &b;
            }
        }
    }
    if (best_a == nullptr || best_b == nullptr) return false;

    const auto read_predictions = [&](const RunKey& key) {
        const auto path = fs::path(out_dir) / "runs" / key.dir_name() / "predictions_test.csv";
        const CsvTable table = read_csv(path.string());
        const auto label_col = table.column("label");
        const auto pred_col = table.column("predicted");
        std::pair<std::vector<int>, std::vector<int>> out;
        for (const auto& r : table.rows) {
            out.first.push_back(std::stoi(r[label_col]));
            out.second.push_back(std::stoi(r[pred_col]));
        }
        return out;
    };
    const auto [labels_a, preds_a] = read_predictions(best_a->key);
    const auto [labels_b, preds_b] = read_predictions(best_b->key);
    if (labels_a != labels_b)
        throw std::runtime_error("contingency: test-set labels differ between runs");

    const ContingencyTable table = contingency(labels_a, preds_a, preds_b);
    CsvWriter out((fs::path(out_dir) / "contingency.csv").string(),
                  {"model_a", "model_b", "both_correct", "only_a_correct", "only_b_correct",
                   "both_wrong", "total"});
    out.row({best_a->key.dir_name(), best_b->key.dir_name(),
             std::to_string(table.both_correct), std::to_string(table.only_a_correct),
             std::to_string(table.only_b_correct), std::to_string(table.both_wrong),
             std::to_string(table.total())});
    return true;
}

inline void write_reports(const std::string& out_dir, ExperimentKind kind,
                          const std::vector<ScoreRow>& rows) {
    namespace fs = std::filesystem;
    const auto comparisons = run_comparisons(kind, rows);
    write_stats_csv((fs::path(out_dir) / "stats.csv").string(), comparisons);
    write_table4_csv((fs::path(out_dir) / "table4.csv").string(), rows, comparisons);
    write_fig4_csv((fs::path(out_dir) / "fig4.csv").string(), rows);
    write_contingency_csv(out_dir, rows);
    for (const auto& c : comparisons)
        if (c.pairs < 2)
            std::cerr << "warning: " << c.name << " (" << c.scope << ") has only " << c.pairs
                      << " matched pair(s); the test is degenerate at this size\n";
}

// ---------------------------------------------------------------------------
// Top-level commands (the CLI maps onto these).
// ---------------------------------------------------------------------------

struct ExperimentSummary {
    std::vector<RunRecord> records;
    std::vector<ComparisonResult> comparisons;
};

inline ExperimentSummary cmd_run(const ExperimentConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);

    const ExperimentData data = prepare_data(cfg);
    detail::require_intermediate_data(cfg, data);
    const RunPlan plan = build_plan(cfg, data);

    ExperimentSummary summary;
    summary.records = execute_plan(cfg, data, plan);

    write_metrics_csv((fs::path(cfg.output_dir) / "metrics.csv").string(), summary.records);
    write_timing_csv((fs::path(cfg.output_dir) / "timing.csv").string(), summary.records);
    const auto rows = score_rows(summary.records);
    summary.comparisons = run_comparisons(cfg.experiment, rows);
    write_reports(cfg.output_dir, cfg.experiment, rows);
    return summary;
}

inline void cmd_gen_synthetic(const std::string& spec_path, const std::string& out_dir) {
    const auto spec = load_synthetic_spec(spec_path);
    auto synth = generate_synthetic(spec);
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    save_dataset(synth.memes, (fs::path(out_dir) / "memes_manifest.json").string());
    save_dataset(synth.images, (fs::path(out_dir) / "images_manifest.json").string());
    save_dataset(synth.texts, (fs::path(out_dir) / "texts_manifest.json").string());
}

/// Rebuild every report from a finished run directory. The experiment kind
/// is inferred: multiple fractions mean an RQ2-style directory.
inline void cmd_report(const std::string& run_dir) {
    namespace fs = std::filesystem;
    const auto metrics_path = fs::path(run_dir) / "metrics.csv";
    if (!fs::exists(metrics_path))
        throw std::runtime_error("no runs found: missing " + metrics_path.string());
    const auto rows = score_rows_from_csv(metrics_path.string());
    if (rows.empty()) throw std::runtime_error("no runs found in " + metrics_path.string());

    bool multi_fraction = false;
    for (const auto& r : rows)
        if (r.key.fraction != rows.front().key.fraction) multi_fraction = true;
    const ExperimentKind kind = multi_fraction ? ExperimentKind::RQ2 : ExperimentKind::RQ1;
    write_reports(run_dir, kind, rows);
}

}  // namespace stilt
