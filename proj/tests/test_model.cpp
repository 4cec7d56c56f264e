#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "stilt/checkpoint.hpp"
#include "stilt/gradcheck.hpp"
#include "stilt/model.hpp"

using namespace stilt;

namespace {

ModelConfig small_config(double dropout = 0.0) {
    ModelConfig cfg;
    cfg.embedding_dim = 8;
    cfg.fused_dim = 8;
    cfg.dropout_rate = dropout;
    return cfg;
}

Batch random_batch(std::size_t batch, std::size_t dim, DeterministicRng& rng) {
    Batch b;
    b.image = Matrix(batch, dim);
    b.text = Matrix(batch, dim);
    for (double& v : b.image.data) v = rng.uniform(-1.0, 1.0);
    for (double& v : b.text.data) v = rng.uniform(-1.0, 1.0);
    b.labels.assign(batch, 0);
    return b;
}

bool params_equal(ModelParameters& a, ModelParameters& b) {
    bool equal = true;
    std::vector<const Matrix*> lhs, rhs;
    a.for_each_tensor([&](const std::string&, ParamTensor& t) { lhs.push_back(&t.value); });
    b.for_each_tensor([&](const std::string&, ParamTensor& t) { rhs.push_back(&t.value); });
    for (std::size_t i = 0; i < lhs.size(); ++i)
        if (lhs[i]->data != rhs[i]->data) equal = false;
    return equal;
}

}  // namespace

TEST_CASE("init_model is deterministic per seed") {
    DeterministicRng r1(77), r2(77), r3(78);
    auto a = init_model(small_config(), r1);
    auto b = init_model(small_config(), r2);
    auto c = init_model(small_config(), r3);
    REQUIRE(params_equal(a, b));
    REQUIRE_FALSE(params_equal(a, c));
}

TEST_CASE("fresh adapters are exact identity") {
    DeterministicRng rng(5);
    auto params = init_model(small_config(), rng);
    Matrix v(1, 8);
    for (std::size_t i = 0; i < 8; ++i) v(0, i) = 0.25 * static_cast<double>(i) - 1.0;
    Matrix out = affine_forward(v, params.image_adapter.w, params.image_adapter.b);
    REQUIRE(out.data == v.data);
}

TEST_CASE("init draws stay within the fan-in bound") {
    ModelConfig cfg;
    cfg.embedding_dim = 512;
    cfg.fused_dim = 16;
    DeterministicRng rng(11);
    auto params = init_model(cfg, rng);
    const double bound = 1.0 / std::sqrt(512.0);
    for (const double v : params.attn_image.layers[0].w.value.data) {
        REQUIRE(std::abs(v) <= bound);
    }
    const double proj_bound = 1.0 / std::sqrt(1024.0);  // fusion_proj fan_in = 2D
    for (const double v : params.fusion_proj.w.value.data) {
        REQUIRE(std::abs(v) <= proj_bound);
    }
}

TEST_CASE("symmetric branches and identical inputs give equal gate scores") {
    DeterministicRng rng(21);
    auto params = init_model(small_config(), rng);
    params.text_adapter = params.image_adapter;
    params.attn_text = params.attn_image;
    params.norm_text = params.norm_image;
    params.fusion_gate.w.value = Matrix::identity(2);
    params.fusion_gate.b.value.fill(0.0);

    DeterministicRng data_rng(3);
    Batch batch = random_batch(4, 8, data_rng);
    batch.text = batch.image;

    DeterministicRng fwd_rng(0);
    auto trace = forward(params, batch, Mode::Eval, fwd_rng);
    for (std::size_t r = 0; r < 4; ++r) {
        REQUIRE_THAT(trace.gate_scores(r, 0), Catch::Matchers::WithinAbs(0.5, 1e-12));
        REQUIRE_THAT(trace.gate_scores(r, 1), Catch::Matchers::WithinAbs(0.5, 1e-12));
    }
}

TEST_CASE("gate score sums and fused range hold on random forwards") {
    DeterministicRng rng(31);
    auto params = init_model(small_config(0.2), rng);
    DeterministicRng data_rng(32);
    DeterministicRng fwd_rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        Batch batch = random_batch(5, 8, data_rng);
        auto trace = forward(params, batch, Mode::Train, fwd_rng);
        for (std::size_t r = 0; r < 5; ++r) {
            const double s_sum = trace.gate_scores(r, 0) + trace.gate_scores(r, 1);
            const double shifted_sum = trace.shifted_scores(r, 0) + trace.shifted_scores(r, 1);
            REQUIRE_THAT(s_sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
            REQUIRE_THAT(shifted_sum, Catch::Matchers::WithinAbs(3.0, 1e-12));
            REQUIRE(trace.gate_scores(r, 0) > 0.0);
            REQUIRE(trace.gate_scores(r, 0) < 1.0);
        }
        for (const double v : trace.fused.data) {
            REQUIRE(v > -1.0);
            REQUIRE(v < 1.0);
        }
    }
}

TEST_CASE("identical params, input, seed and mode give bit-identical traces") {
    DeterministicRng rng(41);
    auto params = init_model(small_config(0.2), rng);
    DeterministicRng data_rng(42);
    Batch batch = random_batch(4, 8, data_rng);

    auto p1 = params;
    auto p2 = params;
    DeterministicRng f1(7), f2(7);
    auto t1 = forward(p1, batch, Mode::Train, f1);
    auto t2 = forward(p2, batch, Mode::Train, f2);
    REQUIRE(t1.logits.data == t2.logits.data);
    REQUIRE(t1.drop_image_mask.data == t2.drop_image_mask.data);
}

TEST_CASE("eval forward consumes no randomness") {
    DeterministicRng rng(51);
    auto params = init_model(small_config(0.2), rng);
    DeterministicRng data_rng(52);
    Batch batch = random_batch(3, 8, data_rng);

    DeterministicRng fwd_rng(99), reference(99);
    forward(params, batch, Mode::Eval, fwd_rng);
    REQUIRE(fwd_rng.next_u64() == reference.next_u64());
}

TEST_CASE("full model gradients match central differences") {
    DeterministicRng rng(61);
    auto params = init_model(small_config(0.0), rng);  // dropout disabled
    DeterministicRng data_rng(62);
    Batch batch = random_batch(4, 8, data_rng);

    DeterministicRng proj_rng(63);
    Matrix proj(4, kNumClasses);
    for (double& v : proj.data) v = proj_rng.uniform(-1.0, 1.0);

    auto loss = [&](ModelParameters& p) {
        DeterministicRng unused(0);
        auto trace = forward(p, batch, Mode::Train, unused);
        double acc = 0.0;
        for (std::size_t i = 0; i < trace.logits.size(); ++i)
            acc += trace.logits.data[i] * proj.data[i];
        return acc;
    };

    params.zero_grad();
    DeterministicRng unused(0);
    auto trace = forward(params, batch, Mode::Train, unused);
    backward(params, trace, proj);

    GradCheckOptions opts;
    opts.max_coords_per_tensor = 12;
    opts.coord_seed = 64;
    auto report = finite_difference_check_report(loss, params, opts);
    INFO("worst tensor: " << report.worst_tensor << "[" << report.worst_coord
                          << "] analytic=" << report.worst_analytic
                          << " numeric=" << report.worst_numeric);
    REQUIRE(report.max_rel_err < 1e-6);
}

TEST_CASE("frozen text adapter keeps zero grads while fusion trains") {
    DeterministicRng rng(71);
    auto params = init_model(small_config(0.0), rng);
    set_freeze(params, FreezeSpec{false, true});
    REQUIRE_FALSE(params.text_adapter.w.trainable);
    REQUIRE(params.image_adapter.w.trainable);

    DeterministicRng data_rng(72);
    Batch batch = random_batch(4, 8, data_rng);
    params.zero_grad();
    DeterministicRng unused(0);
    auto trace = forward(params, batch, Mode::Train, unused);
    Matrix d_logits(4, kNumClasses, 0.5);
    backward(params, trace, d_logits);

    for (const double g : params.text_adapter.w.grad.data) REQUIRE(g == 0.0);
    double fusion_grad_norm = 0.0;
    for (const double g : params.fusion_proj.w.grad.data) fusion_grad_norm += g * g;
    REQUIRE(fusion_grad_norm > 0.0);

    set_freeze(params, FreezeSpec{});
    REQUIRE(params.text_adapter.w.trainable);
}

TEST_CASE("zero upstream gradient leaves all grads zero") {
    DeterministicRng rng(81);
    auto params = init_model(small_config(0.0), rng);
    DeterministicRng data_rng(82);
    Batch batch = random_batch(4, 8, data_rng);
    params.zero_grad();
    DeterministicRng unused(0);
    auto trace = forward(params, batch, Mode::Train, unused);
    backward(params, trace, Matrix(4, kNumClasses, 0.0));
    params.for_each_tensor([](const std::string&, ParamTensor& t) {
        for (const double g : t.grad.data) REQUIRE(g == 0.0);
    });
}

TEST_CASE("backward rejects foreign or eval traces") {
    DeterministicRng rng(91);
    auto p1 = init_model(small_config(0.0), rng);
    auto p2 = p1;
    DeterministicRng data_rng(92);
    Batch batch = random_batch(4, 8, data_rng);
    DeterministicRng unused(0);

    auto trace = forward(p1, batch, Mode::Train, unused);
    Matrix d(4, kNumClasses, 1.0);
    REQUIRE_THROWS_AS(backward(p2, trace, d), std::logic_error);

    auto eval_trace = forward(p1, batch, Mode::Eval, unused);
    REQUIRE_THROWS_AS(backward(p1, eval_trace, d), std::logic_error);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    DeterministicRng rng(101);
    auto params = init_model(small_config(0.1), rng);
    set_freeze(params, FreezeSpec{true, false});
    params.norm_image.running_mean(0, 3) = 0.125;
    params.norm_fused.running_var(0, 1) = 2.5;

    const auto path = std::filesystem::temp_directory_path() / "stilt_ckpt_test.bin";
    save_checkpoint(params, path.string());
    auto loaded = load_checkpoint(path.string());

    REQUIRE(params_equal(params, loaded));
    REQUIRE_FALSE(loaded.image_adapter.w.trainable);
    REQUIRE(loaded.norm_image.running_mean(0, 3) == 0.125);
    REQUIRE(loaded.norm_fused.running_var(0, 1) == 2.5);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects corrupt headers") {
    const auto path = std::filesystem::temp_directory_path() / "stilt_ckpt_bad.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOTACKPT garbage";
    }
    REQUIRE_THROWS_WITH(load_checkpoint(path.string()),
                        Catch::Matchers::ContainsSubstring("bad magic"));
    std::filesystem::remove(path);
}
