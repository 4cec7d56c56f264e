#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stilt/model.hpp"

namespace stilt {

// Checkpoint layout (little-endian, documented in README.md):
//   magic "STILTCK1" | u32 version | u64 config_hash
//   u64 embedding_dim | u64 fused_dim | f64 dropout_rate
//   u64 tensor_count, then per tensor:
//     u64 name_len | name | u8 trainable | u64 rows | u64 cols | f64 data[]
//   u64 state_count, then per running-stat matrix:
//     u64 name_len | name | u64 rows | u64 cols | f64 data[]
inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'I', 'L', 'T', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const auto len = read_pod<std::uint64_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

inline void write_matrix(std::ostream& out, const Matrix& m) {
    write_pod<std::uint64_t>(out, m.rows);
    write_pod<std::uint64_t>(out, m.cols);
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

inline Matrix read_matrix(std::istream& in) {
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated matrix payload");
    return m;
}

}  // namespace detail

inline void save_checkpoint(const ModelParameters& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_pod(out, kCheckpointVersion);
    detail::write_pod(out, params.config.hash());
    detail::write_pod<std::uint64_t>(out, params.config.embedding_dim);
    detail::write_pod<std::uint64_t>(out, params.config.fused_dim);
    detail::write_pod(out, params.config.dropout_rate);

    auto& mutable_params = const_cast<ModelParameters&>(params);  // enumeration only
    std::uint64_t tensor_count = 0;
    mutable_params.for_each_tensor([&](const std::string&, ParamTensor&) { ++tensor_count; });
    detail::write_pod(out, tensor_count);
    mutable_params.for_each_tensor([&](const std::string& name, ParamTensor& t) {
        detail::write_string(out, name);
        detail::write_pod<std::uint8_t>(out, t.trainable ? 1 : 0);
        detail::write_matrix(out, t.value);
    });

    std::uint64_t state_count = 0;
    mutable_params.for_each_state([&](const std::string&, Matrix&) { ++state_count; });
    detail::write_pod(out, state_count);
    mutable_params.for_each_state([&](const std::string& name, Matrix& m) {
        detail::write_string(out, name);
        detail::write_matrix(out, m);
    });
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline ModelParameters load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const auto version = detail::read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const auto stored_hash = detail::read_pod<std::uint64_t>(in);

    ModelConfig config;
    config.embedding_dim = detail::read_pod<std::uint64_t>(in);
    config.fused_dim = detail::read_pod<std::uint64_t>(in);
    config.dropout_rate = detail::read_pod<double>(in);
    if (config.hash() != stored_hash)
        throw std::runtime_error("checkpoint: config hash mismatch in " + path);

    DeterministicRng scratch(0);
    ModelParameters params = init_model(config, scratch);

    const auto tensor_count = detail::read_pod<std::uint64_t>(in);
    std::vector<std::pair<std::string, std::pair<bool, Matrix>>> tensors;
    tensors.reserve(tensor_count);
    for (std::uint64_t i = 0; i < tensor_count; ++i) {
        std::string name = detail::read_string(in);
        const bool trainable = detail::read_pod<std::uint8_t>(in) != 0;
        Matrix m = detail::read_matrix(in);
        tensors.emplace_back(std::move(name), std::make_pair(trainable, std::move(m)));
    }
    std::size_t cursor = 0;
    params.for_each_tensor([&](const std::string& name, ParamTensor& t) {
        if (cursor >= tensors.size() || tensors[cursor].first != name)
            throw std::runtime_error("checkpoint: tensor order mismatch at " + name);
        auto& [trainable, value] = tensors[cursor].second;
        if (!t.value.same_shape(value))
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " +
                                     t.value.shape_str() + " vs " + value.shape_str());
        t.value = std::move(value);
        t.trainable = trainable;
        t.zero_grad();
        ++cursor;
    });

    const auto state_count = detail::read_pod<std::uint64_t>(in);
    std::vector<std::pair<std::string, Matrix>> states;
    states.reserve(state_count);
    for (std::uint64_t i = 0; i < state_count; ++i) {
        std::string name = detail::read_string(in);
        states.emplace_back(std::move(name), detail::read_matrix(in));
    }
    cursor = 0;
    params.for_each_state([&](const std::string& name, Matrix& m) {
        if (cursor >= states.size() || states[cursor].first != name)
            throw std::runtime_error("checkpoint: state order mismatch at " + name);
        if (!m.same_shape(states[cursor].second))
            throw std::runtime_error("checkpoint: state shape mismatch for " + name);
        m = std::move(states[cursor].second);
        ++cursor;
    });
    return params;
}

}  // namespace stilt
