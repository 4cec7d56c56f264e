#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stilt/model.hpp"
#include "stilt/rng.hpp"

namespace stilt {

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split: " + s);
}

/// One sample. A meme carries both embeddings; unimodal samples carry one
/// and get the manifest blank for the other at input-resolution time.
struct EmbeddingRecord {
    std::string id;
    Split split = Split::Train;
    int label = 0;  // 0=Negative, 1=Neutral, 2=Positive
    std::optional<std::vector<double>> image_embedding;
    std::optional<std::vector<double>> text_embedding;
};

struct DatasetManifest {
    std::string name;
    std::size_t dimension = 0;
    std::vector<double> blank_image_embedding;
    std::vector<double> blank_text_embedding;
    std::array<std::string, 3> class_names = {"negative", "neutral", "positive"};
    std::array<std::size_t, 3> record_count = {0, 0, 0};  // train, val, test
    std::string records_file;                             // relative to the manifest
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<EmbeddingRecord> train;
    std::vector<EmbeddingRecord> val;
    std::vector<EmbeddingRecord> test;

    const std::vector<EmbeddingRecord>& split(Split s) const {
        switch (s) {
            case Split::Train: return train;
            case Split::Val: return val;
            default: return test;
        }
    }
};

struct ClassCounts {
    std::array<std::size_t, 3> counts = {0, 0, 0};
    std::size_t total() const { return counts[0] + counts[1] + counts[2]; }
};

inline ClassCounts class_counts(const std::vector<EmbeddingRecord>& records) {
    ClassCounts out;
    for (const auto& r : records) ++out.counts[static_cast<std::size_t>(r.label)];
    return out;
}

/// Substitute manifest blanks for missing modalities. Idempotent: a record
/// with both embeddings passes through unchanged.
inline ModalityInput resolve_blank(const EmbeddingRecord& record,
                                   const DatasetManifest& manifest) {
    ModalityInput input;
    input.image_embedding =
        record.image_embedding ? *record.image_embedding : manifest.blank_image_embedding;
    input.text_embedding =
        record.text_embedding ? *record.text_embedding : manifest.blank_text_embedding;
    return input;
}

// ---------------------------------------------------------------------------
// File format: manifest is a JSON document, records are one JSON object per
// line. Doubles round-trip exactly (shortest decimal form).
// ---------------------------------------------------------------------------

namespace detail {

inline void validate_record(const EmbeddingRecord& r, std::size_t dim, std::size_t line_no,
                            const std::string& file) {
    const auto fail = [&](const std::string& why) {
        throw std::runtime_error(file + ":" + std::to_string(line_no) + ": record '" + r.id +
                                 "': " + why);
    };
    if (r.label < 0 || r.label > 2) fail("label must be 0, 1 or 2, got " + std::to_string(r.label));
    if (!r.image_embedding && !r.text_embedding) fail("both modalities missing");
    if (r.image_embedding && r.image_embedding->size() != dim)
        fail("image embedding has dimension " + std::to_string(r.image_embedding->size()) +
             ", manifest says " + std::to_string(dim));
    if (r.text_embedding && r.text_embedding->size() != dim)
        fail("text embedding has dimension " + std::to_string(r.text_embedding->size()) +
             ", manifest says " + std::to_string(dim));
}

}  // namespace detail

inline Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open manifest: " + manifest_path);
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest parse error in " + manifest_path + ": " + e.what());
    }

    Dataset ds;
    auto& m = ds.manifest;
    m.name = j.at("name").get<std::string>();
    m.dimension = j.at("dimension").get<std::size_t>();
    m.blank_image_embedding = j.at("blank_image_embedding").get<std::vector<double>>();
    m.blank_text_embedding = j.at("blank_text_embedding").get<std::vector<double>>();
    const auto names = j.at("class_names").get<std::vector<std::string>>();
    if (names.size() != 3)
        throw std::runtime_error("manifest " + manifest_path + ": need exactly 3 class names");
    std::copy(names.begin(), names.end(), m.class_names.begin());
    m.record_count = {j.at("record_count").at("train").get<std::size_t>(),
                      j.at("record_count").at("val").get<std::size_t>(),
                      j.at("record_count").at("test").get<std::size_t>()};
    m.records_file = j.at("records_file").get<std::string>();
    if (m.blank_image_embedding.size() != m.dimension ||
        m.blank_text_embedding.size() != m.dimension)
        throw std::runtime_error("manifest " + manifest_path +
                                 ": blank embeddings must have the manifest dimension");

    const auto records_path =
        std::filesystem::path(manifest_path).parent_path() / m.records_file;
    std::ifstream rf(records_path);
    if (!rf) throw std::runtime_error("cannot open records file: " + records_path.string());

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(rf, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(records_path.string() + ":" + std::to_string(line_no) +
                                     ": parse error: " + e.what());
        }
        EmbeddingRecord r;
        r.id = rec.at("id").get<std::string>();
        r.split = parse_split(rec.at("split").get<std::string>());
        r.label = rec.at("label").get<int>();
        if (!rec.at("image_embedding").is_null())
            r.image_embedding = rec.at("image_embedding").get<std::vector<double>>();
        if (!rec.at("text_embedding").is_null())
            r.text_embedding = rec.at("text_embedding").get<std::vector<double>>();
        detail::validate_record(r, m.dimension, line_no, records_path.string());
        switch (r.split) {
            case Split::Train: ds.train.push_back(std::move(r)); break;
            case Split::Val: ds.val.push_back(std::move(r)); break;
            case Split::Test: ds.test.push_back(std::move(r)); break;
        }
    }
    const std::array<std::size_t, 3> actual = {ds.train.size(), ds.val.size(), ds.test.size()};
    if (actual != m.record_count)
        throw std::runtime_error(
            "manifest " + manifest_path + ": record counts (" + std::to_string(actual[0]) + "/" +
            std::to_string(actual[1]) + "/" + std::to_string(actual[2]) +
            ") do not match declared (" + std::to_string(m.record_count[0]) + "/" +
            std::to_string(m.record_count[1]) + "/" + std::to_string(m.record_count[2]) + ")");
    return ds;
}

inline nlohmann::json record_to_json(const EmbeddingRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["split"] = split_name(r.split);
    j["label"] = r.label;
    j["image_embedding"] = r.image_embedding ? nlohmann::json(*r.image_embedding)
                                             : nlohmann::json(nullptr);
    j["text_embedding"] =
        r.text_embedding ? nlohmann::json(*r.text_embedding) : nlohmann::json(nullptr);
    return j;
}

inline void save_dataset(const Dataset& ds, const std::string& manifest_path) {
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);

    nlohmann::json j;
    j["name"] = ds.manifest.name;
    j["dimension"] = ds.manifest.dimension;
    j["blank_image_embedding"] = ds.manifest.blank_image_embedding;
    j["blank_text_embedding"] = ds.manifest.blank_text_embedding;
    j["class_names"] = ds.manifest.class_names;
    j["record_count"] = {{"train", ds.train.size()},
                         {"val", ds.val.size()},
                         {"test", ds.test.size()}};
    j["records_file"] = ds.manifest.records_file;

    std::ofstream mf(manifest_path, std::ios::trunc);
    if (!mf) throw std::runtime_error("cannot write manifest: " + manifest_path);
    mf << j.dump(2) << "\n";

    const auto records_path = dir / ds.manifest.records_file;
    std::ofstream rf(records_path, std::ios::trunc);
    if (!rf) throw std::runtime_error("cannot write records: " + records_path.string());
    for (const auto* split : {&ds.train, &ds.val, &ds.test})
        for (const auto& r : *split) rf << record_to_json(r).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Class-balanced sampling without replacement (exponential-key top-k):
// key_i = u_i^(1/w_i) with w_i = 1/N_{label(i)} over the full training set;
// keeping the k largest keys draws the same distribution as sequential
// weighted sampling without replacement.
// ---------------------------------------------------------------------------

inline std::vector<EmbeddingRecord> fractional_sample(
    const std::vector<EmbeddingRecord>& train_records, double fraction,
    DeterministicRng& rng) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("fractional_sample: fraction must be in (0, 1], got " +
                                    std::to_string(fraction));
    const std::size_t n = train_records.size();
    const auto k = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(n) + 0.5));  // half-up
    if (k == n) return train_records;

    const ClassCounts counts = class_counts(train_records);
    struct Keyed {
        double key;
        std::size_t index;
    };
    std::vector<Keyed> keyed(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform();
        // w = 1/N_label  =>  u^(1/w) = u^N_label; compare in log space
        const auto n_label =
            static_cast<double>(counts.counts[static_cast<std::size_t>(train_records[i].label)]);
        keyed[i] = {n_label * std::log(std::max(u, 1e-300)), i};
    }
    std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
        if (a.key != b.key) return a.key > b.key;
        return a.index < b.index;
    });
    keyed.resize(k);
    std::sort(keyed.begin(), keyed.end(),
              [](const Keyed& a, const Keyed& b) { return a.index < b.index; });

    std::vector<EmbeddingRecord> subset;
    subset.reserve(k);
    for (const auto& kv : keyed) subset.push_back(train_records[kv.index]);
    return subset;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation: one class direction per class, per-modality
// signal scales, isotropic noise, and a shifted class direction for the
// unimodal intermediate-task datasets.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::uint64_t seed = 0;
    std::size_t dimension = 16;
    std::array<std::array<std::size_t, 3>, 3> meme_counts{};  // [split][class]
    std::array<std::size_t, 3> image_counts{};                // train-only, per class
    std::array<std::size_t, 3> text_counts{};
    double image_signal = 1.0;
    double text_signal = 1.0;
    double noise_scale = 0.0;
    double domain_shift = 0.0;

    void validate() const {
        if (dimension == 0) throw std::invalid_argument("synthetic spec: dimension must be >= 1");
        for (double v : {image_signal, text_signal, noise_scale, domain_shift})
            if (!(std::isfinite(v)) || v < 0.0)
                throw std::invalid_argument("synthetic spec: scales must be finite and >= 0");
    }
};

struct SyntheticOutput {
    Dataset memes;
    Dataset images;
    Dataset texts;
};

namespace detail {

inline std::vector<double> unit_vector(std::size_t dim, DeterministicRng& rng) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

/// signal * direction + isotropic noise; noise_scale is the per-coordinate
/// standard deviation.
inline std::vector<double> noisy_point(const std::vector<double>& direction, double signal,
                                       double noise_scale, DeterministicRng& rng) {
    const std::size_t dim = direction.size();
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < dim; ++i)
        v[i] = signal * direction[i] + noise_scale * rng.normal();
    return v;
}

}  // namespace detail

inline SyntheticOutput generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    DeterministicRng rng(spec.seed, 0x5EED);
    const std::size_t dim = spec.dimension;

    std::array<std::vector<double>, 3> class_dirs;
    for (auto& dir : class_dirs) dir = detail::unit_vector(dim, rng);
    const std::vector<double> shift_dir = detail::unit_vector(dim, rng);

    std::array<std::vector<double>, 3> shifted_dirs;
    for (std::size_t c = 0; c < 3; ++c) {
        shifted_dirs[c].resize(dim);
        for (std::size_t i = 0; i < dim; ++i)
            shifted_dirs[c][i] = class_dirs[c][i] + spec.domain_shift * shift_dir[i];
    }

    const auto make_manifest = [&](const std::string& name, const std::string& records_file) {
        DatasetManifest m;
        m.name = name;
        m.dimension = dim;
        m.blank_image_embedding.assign(dim, 0.0);
        m.blank_text_embedding.assign(dim, 0.0);
        m.records_file = records_file;
        return m;
    };

    SyntheticOutput out;
    out.memes.manifest = make_manifest("synthetic-memes", "memes_records.jsonl");
    out.images.manifest = make_manifest("synthetic-images", "images_records.jsonl");
    out.texts.manifest = make_manifest("synthetic-texts", "texts_records.jsonl");

    const std::array<Split, 3> splits = {Split::Train, Split::Val, Split::Test};
    for (std::size_t si = 0; si < 3; ++si) {
        auto& bucket = si == 0 ? out.memes.train : (si == 1 ? out.memes.val : out.memes.test);
        std::size_t serial = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < spec.meme_counts[si][c]; ++i) {
                EmbeddingRecord r;
                r.id = std::string("meme-") + split_name(splits[si]) + "-" +
                       std::to_string(serial++);
                r.split = splits[si];
                r.label = static_cast<int>(c);
                r.image_embedding =
                    detail::noisy_point(class_dirs[c], spec.image_signal, spec.noise_scale, rng);
                r.text_embedding =
                    detail::noisy_point(class_dirs[c], spec.text_signal, spec.noise_scale, rng);
                bucket.push_back(std::move(r));
            }
        }
        out.memes.manifest.record_count[si] = bucket.size();
    }

    std::size_t serial = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < spec.image_counts[c]; ++i) {
            EmbeddingRecord r;
            r.id = "image-train-" + std::to_string(serial++);
            r.split = Split::Train;
            r.label = static_cast<int>(c);
            r.image_embedding =
                detail::noisy_point(shifted_dirs[c], spec.image_signal, spec.noise_scale, rng);
            out.images.train.push_back(std::move(r));
        }
    }
    out.images.manifest.record_count = {out.images.train.size(), 0, 0};

    serial = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < spec.text_counts[c]; ++i) {
            EmbeddingRecord r;
            r.id = "text-train-" + std::to_string(serial++);
            r.split = Split::Train;
            r.label = static_cast<int>(c);
            r.text_embedding =
                detail::noisy_point(shifted_dirs[c], spec.text_signal, spec.noise_scale, rng);
            out.texts.train.push_back(std::move(r));
        }
    }
    out.texts.manifest.record_count = {out.texts.train.size(), 0, 0};
    return out;
}

inline SyntheticSpec parse_synthetic_spec(const nlohmann::json& j) {
    SyntheticSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.dimension = j.at("dimension").get<std::size_t>();
    const auto read_triple = [](const nlohmann::json& arr) {
        if (!arr.is_array() || arr.size() != 3)
            throw std::invalid_argument("synthetic spec: class counts need 3 entries");
        return std::array<std::size_t, 3>{arr[0].get<std::size_t>(), arr[1].get<std::size_t>(),
                                          arr[2].get<std::size_t>()};
    };
    const auto& meme = j.at("meme_counts");
    spec.meme_counts = {read_triple(meme.at("train")), read_triple(meme.at("val")),
                        read_triple(meme.at("test"))};
    spec.image_counts = read_triple(j.at("image_counts").at("train"));
    spec.text_counts = read_triple(j.at("text_counts").at("train"));
    spec.image_signal = j.at("image_signal").get<double>();
    spec.text_signal = j.at("text_signal").get<double>();
    spec.noise_scale = j.at("noise_scale").get<double>();
    spec.domain_shift = j.at("domain_shift").get<double>();
    spec.validate();
    return spec;
}

inline SyntheticSpec load_synthetic_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synthetic spec: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("synthetic spec parse error in " + path + ": " + e.what());
    }
    return parse_synthetic_spec(j);
}

}  // namespace stilt
