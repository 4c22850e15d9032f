#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fedadapt/errors.hpp"
#include "fedadapt/model.hpp"
#include "fedadapt/nn.hpp"
#include "fedadapt/rng.hpp"
#include "oracle.hpp"

using namespace fedadapt;

namespace {

// Relative-with-floor comparison used for gradient checks: float32 forward
// noise puts a hard floor on what a finite-difference oracle can resolve.
bool close_grad(double analytic, double reference, double rtol = 1e-3, double atol = 1e-5) {
    return std::fabs(analytic - reference) <=
           rtol * std::max(std::fabs(analytic), std::fabs(reference)) + atol;
}

Model tiny_dense_model(int in, int hidden, int out, std::uint64_t seed) {
    Model m;
    m.input_shape = {in};
    m.layers = {LayerSpec::dense(in, hidden), LayerSpec::relu(), LayerSpec::dense(hidden, out)};
    m.params = make_params(m.layers);
    init_params(m, seed);
    return m;
}

}  // namespace

TEST_CASE("relu layer turns an all-negative input into zeros") {
    Model m;
    m.input_shape = {1, 2, 3};
    m.layers = {LayerSpec::relu()};
    m.params = make_params(m.layers);
    Tensor in({1, 2, 3});
    for (std::size_t i = 0; i < in.values.size(); ++i) in.values[i] = -1.0f - static_cast<float>(i);
    auto [out, trace] = forward(m, in, true);
    for (float v : out.values) CHECK(v == 0.0f);
    for (float v : trace.relu_output(1).values) CHECK(v >= 0.0f);
}

TEST_CASE("identity dense layer reproduces its input") {
    Model m;
    m.input_shape = {4};
    m.layers = {LayerSpec::dense(4, 4)};
    m.params = make_params(m.layers);
    for (int i = 0; i < 4; ++i) m.params.flat[static_cast<std::size_t>(i) * 4 + i] = 1.0f;
    Tensor in({4}, {0.5f, -1.25f, 3.0f, 0.0f});
    auto [out, trace] = forward(m, in, false);
    for (int i = 0; i < 4; ++i) CHECK(out.values[static_cast<std::size_t>(i)] == in.values[static_cast<std::size_t>(i)]);
    CHECK(trace.empty());
}

TEST_CASE("seed-42 two-layer forward matches the scalar-loop oracle") {
    Model m = tiny_dense_model(6, 5, 3, 42);
    Tensor in({6}, {0.1f, -0.4f, 0.9f, 0.25f, -0.75f, 0.5f});
    auto [logits, trace] = forward(m, in, false);
    const auto ref = oracle::ref_logits(m, oracle::to_double(m.params.flat), in);
    REQUIRE(logits.shape == std::vector<int>{3});
    for (int i = 0; i < 3; ++i) {
        CHECK(std::fabs(logits.values[static_cast<std::size_t>(i)] - ref[static_cast<std::size_t>(i)]) <=
              1e-5 * std::max(1.0, std::fabs(ref[static_cast<std::size_t>(i)])));
    }
}

TEST_CASE("small-cnn forward matches the scalar-loop oracle") {
    Model m = make_architecture("small-cnn", {1, 12, 12}, 10);
    init_params(m, 42);
    Rng rng(7);
    Tensor in({1, 12, 12});
    for (auto& v : in.values) v = rng.next_float();
    auto [logits, trace] = forward(m, in, false);
    const auto ref = oracle::ref_logits(m, oracle::to_double(m.params.flat), in);
    for (int i = 0; i < 10; ++i) {
        CHECK(std::fabs(logits.values[static_cast<std::size_t>(i)] - ref[static_cast<std::size_t>(i)]) <=
              1e-4 * std::max(1.0, std::fabs(ref[static_cast<std::size_t>(i)])));
    }
}

TEST_CASE("shape mismatch is a configuration error naming the layer") {
    Model m = tiny_dense_model(6, 5, 3, 1);
    Tensor in({5});
    CHECK_THROWS_AS(forward(m, in, false), ConfigError);
    try {
        forward(m, in, false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("uniform logits give ln(C) cross-entropy") {
    // Zero weights produce all-zero logits, i.e. a uniform softmax.
    Model m = tiny_dense_model(4, 4, 10, 1);
    for (auto& v : m.params.flat) v = 0.0f;
    std::vector<std::pair<Tensor, int>> batch;
    Rng rng(3);
    for (int i = 0; i < 4; ++i) {
        Tensor x({4});
        for (auto& v : x.values) v = rng.next_float();
        batch.emplace_back(x, i % 10);
    }
    std::vector<float> grads;
    const double loss = loss_and_grad(m, batch, grads);
    CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("zero-weight model has closed-form final-layer bias gradient") {
    Model m = tiny_dense_model(4, 4, 3, 1);
    for (auto& v : m.params.flat) v = 0.0f;
    std::vector<std::pair<Tensor, int>> batch;
    Rng rng(5);
    const int labels[4] = {0, 1, 1, 2};
    for (int i = 0; i < 4; ++i) {
        Tensor x({4});
        for (auto& v : x.values) v = rng.next_float();
        batch.emplace_back(x, labels[i]);
    }
    std::vector<float> grads;
    loss_and_grad(m, batch, grads);
    // softmax(0) = 1/3 per class; gradient of the last bias = mean(p - onehot).
    const auto [start, len] = m.params.offsets[2];
    const std::size_t bias_base = start + 4 * 3;
    const double expected[3] = {1.0 / 3.0 - 1.0 / 4.0, 1.0 / 3.0 - 2.0 / 4.0,
                                1.0 / 3.0 - 1.0 / 4.0};
    for (int c = 0; c < 3; ++c) {
        CHECK(grads[bias_base + static_cast<std::size_t>(c)] ==
              doctest::Approx(expected[c]).epsilon(1e-5));
    }
    (void)len;
}

TEST_CASE("label out of range is a data error") {
    Model m = tiny_dense_model(4, 4, 3, 1);
    std::vector<std::pair<Tensor, int>> batch{{Tensor({4}, 0.1f), 3}};
    std::vector<float> grads;
    CHECK_THROWS_AS(loss_and_grad(m, batch, grads), DataError);
    batch[0].second = -1;
    CHECK_THROWS_AS(loss_and_grad(m, batch, grads), DataError);
}

TEST_CASE("analytic parameter gradients match finite differences (2-layer, 8 samples)") {
    Model m = tiny_dense_model(5, 6, 3, 11);
    Rng rng(21);
    std::vector<std::pair<Tensor, int>> batch;
    for (int i = 0; i < 8; ++i) {
        Tensor x({5});
        for (auto& v : x.values) v = rng.uniform(-1.0f, 1.0f);
        batch.emplace_back(x, static_cast<int>(rng.next_below(3)));
    }
    std::vector<float> grads;
    loss_and_grad(m, batch, grads);
    const auto fd = oracle::fd_param_gradients(m, batch, 1e-3);
    REQUIRE(fd.size() == grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) {
        CAPTURE(i);
        CHECK(close_grad(grads[i], fd[i]));
    }
}

TEST_CASE("gradients match finite differences on randomized small models") {
    // Property over random architectures of <= 3 parameterized layers.
    for (std::uint64_t trial = 0; trial < 6; ++trial) {
        Rng rng(derive_seed(100, trial));
        const int in = 3 + static_cast<int>(rng.next_below(3));
        const int hidden = 2 + static_cast<int>(rng.next_below(4));
        const int classes = 2 + static_cast<int>(rng.next_below(3));
        Model m = tiny_dense_model(in, hidden, classes, derive_seed(7, trial));
        std::vector<std::pair<Tensor, int>> batch;
        for (int i = 0; i < 4; ++i) {
            Tensor x({in});
            for (auto& v : x.values) v = rng.uniform(-1.0f, 1.0f);
            batch.emplace_back(x, static_cast<int>(rng.next_below(static_cast<std::uint64_t>(classes))));
        }
        std::vector<float> grads;
        loss_and_grad(m, batch, grads);
        const auto fd = oracle::fd_param_gradients(m, batch, 1e-3);
        for (std::size_t i = 0; i < grads.size(); ++i) {
            CAPTURE(trial);
            CAPTURE(i);
            CHECK(close_grad(grads[i], fd[i]));
        }
    }
}

TEST_CASE("conv gradients match finite differences") {
    Model m;
    m.input_shape = {1, 6, 6};
    m.layers = {LayerSpec::conv2d(1, 2, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2),
                LayerSpec::flatten(), LayerSpec::dense(2 * 3 * 3, 3)};
    m.params = make_params(m.layers);
    init_params(m, 9);
    Rng rng(33);
    std::vector<std::pair<Tensor, int>> batch;
    for (int i = 0; i < 3; ++i) {
        Tensor x({1, 6, 6});
        for (auto& v : x.values) v = rng.uniform(0.0f, 1.0f);
        batch.emplace_back(x, i);
    }
    std::vector<float> grads;
    loss_and_grad(m, batch, grads);
    const auto fd = oracle::fd_param_gradients(m, batch, 1e-3);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        CAPTURE(i);
        CHECK(close_grad(grads[i], fd[i]));
    }
}

TEST_CASE("sgd_step basics") {
    std::vector<float> params{1.0f, 2.0f, -3.0f};
    std::vector<float> grads{0.5f, -1.0f, 2.0f};
    std::vector<float> velocity{0.0f, 0.0f, 0.0f};

    SUBCASE("momentum 0: params decrease by lr*g") {
        sgd_step(params, grads, velocity, 0.01f, 0.0f);
        CHECK(params[0] == 1.0f - 0.01f * 0.5f);
        CHECK(params[1] == 2.0f - 0.01f * -1.0f);
        CHECK(params[2] == -3.0f - 0.01f * 2.0f);
    }

    SUBCASE("zero gradient moves params by -lr*momentum*velocity") {
        velocity = {1.0f, -2.0f, 0.5f};
        const std::vector<float> zero{0.0f, 0.0f, 0.0f};
        const std::vector<float> before = params;
        sgd_step(params, zero, velocity, 0.1f, 0.5f);
        for (int i = 0; i < 3; ++i) {
            CHECK(params[static_cast<std::size_t>(i)] ==
                  before[static_cast<std::size_t>(i)] -
                      0.1f * (0.5f * (i == 0 ? 1.0f : i == 1 ? -2.0f : 0.5f)));
        }
    }

    SUBCASE("two steps with momentum 0.5 equal the hand-unrolled recurrence") {
        std::vector<float> p{1.0f, 2.0f, -3.0f};
        std::vector<float> v{0.0f, 0.0f, 0.0f};
        const std::vector<float> g1{0.5f, -1.0f, 2.0f};
        const std::vector<float> g2{-0.25f, 0.75f, 1.5f};
        sgd_step(p, g1, v, 0.01f, 0.5f);
        sgd_step(p, g2, v, 0.01f, 0.5f);

        // Hand-unrolled: v1 = g1; p1 = p0 - lr*v1; v2 = 0.5*v1 + g2; p2 = p1 - lr*v2.
        std::vector<float> hp{1.0f, 2.0f, -3.0f};
        std::vector<float> hv(3);
        for (int i = 0; i < 3; ++i) {
            hv[static_cast<std::size_t>(i)] =
                0.5f * 0.0f + g1[static_cast<std::size_t>(i)];
            hp[static_cast<std::size_t>(i)] -= 0.01f * hv[static_cast<std::size_t>(i)];
            hv[static_cast<std::size_t>(i)] =
                0.5f * hv[static_cast<std::size_t>(i)] + g2[static_cast<std::size_t>(i)];
            hp[static_cast<std::size_t>(i)] -= 0.01f * hv[static_cast<std::size_t>(i)];
        }
        for (int i = 0; i < 3; ++i) {
            CHECK(p[static_cast<std::size_t>(i)] == hp[static_cast<std::size_t>(i)]);
        }
    }

    SUBCASE("length mismatch is an internal error") {
        std::vector<float> short_grads{1.0f};
        CHECK_THROWS_AS(sgd_step(params, short_grads, velocity, 0.1f, 0.0f), InternalError);
    }
}

TEST_CASE("input gradient of an identity-dense sum objective is the weight column sums") {
    Model m;
    m.input_shape = {3};
    m.layers = {LayerSpec::dense(3, 3)};
    m.params = make_params(m.layers);
    // Arbitrary known weights.
    const float w[9] = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f, 7.0f, 8.0f, 9.0f};
    for (int i = 0; i < 9; ++i) m.params.flat[static_cast<std::size_t>(i)] = w[i];

    LayerObjective obj;
    obj.layer_index = 0;
    obj.fn = [](const Tensor& out) {
        double acc = 0.0;
        for (float v : out.values) acc += v;
        return std::make_pair(acc, Tensor(out.shape, 1.0f));
    };
    Tensor in({3}, {0.3f, -0.1f, 0.8f});
    const Tensor grad = input_gradient(m, in, obj);
    // d(sum Wx+b)/dx_i = sum of column i of W.
    CHECK(grad.values[0] == doctest::Approx(1.0 + 4.0 + 7.0));
    CHECK(grad.values[1] == doctest::Approx(2.0 + 5.0 + 8.0));
    CHECK(grad.values[2] == doctest::Approx(3.0 + 6.0 + 9.0));
}

TEST_CASE("input gradient matches finite differences on a 6x6 input") {
    Model m;
    m.input_shape = {1, 6, 6};
    m.layers = {LayerSpec::conv2d(1, 3, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2),
                LayerSpec::flatten(), LayerSpec::dense(27, 4)};
    m.params = make_params(m.layers);
    init_params(m, 17);
    Rng rng(55);
    Tensor in({1, 6, 6});
    for (auto& v : in.values) v = rng.uniform(0.05f, 0.95f);

    const int target_layer = 4;
    LayerObjective obj;
    obj.layer_index = target_layer;
    obj.fn = [](const Tensor& out) {
        double acc = 0.0;
        Tensor g(out.shape);
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            acc += 0.5 * static_cast<double>(out.values[i]) * out.values[i];
            g.values[i] = out.values[i];
        }
        return std::make_pair(acc, g);
    };
    const Tensor grad = input_gradient(m, in, obj);
    const auto fd = oracle::fd_input_gradients(m, in, target_layer, 1e-3);
    for (std::size_t i = 0; i < grad.values.size(); ++i) {
        CAPTURE(i);
        CHECK(close_grad(grad.values[i], fd[i], 1e-3, 1e-4));
    }
}

TEST_CASE("objective independent of the input has zero gradient") {
    Model m = tiny_dense_model(4, 3, 2, 2);
    LayerObjective obj;
    obj.layer_index = 2;
    obj.fn = [](const Tensor& out) { return std::make_pair(7.0, Tensor(out.shape, 0.0f)); };
    const Tensor grad = input_gradient(m, Tensor({4}, 0.25f), obj);
    for (float v : grad.values) CHECK(v == 0.0f);
}

TEST_CASE("objective on a non-existent layer is a configuration error") {
    Model m = tiny_dense_model(4, 3, 2, 2);
    LayerObjective obj;
    obj.layer_index = 10;
    obj.fn = [](const Tensor& out) { return std::make_pair(0.0, Tensor(out.shape, 0.0f)); };
    CHECK_THROWS_AS(input_gradient(m, Tensor({4}, 0.0f), obj), ConfigError);
}

TEST_CASE("identical seed and data give bitwise-identical parameters") {
    auto train_once = [] {
        Model m = tiny_dense_model(4, 6, 3, 99);
        std::vector<float> velocity(m.params.flat.size(), 0.0f);
        Rng rng(12);
        std::vector<float> grads;
        for (int step = 0; step < 25; ++step) {
            std::vector<std::pair<Tensor, int>> batch;
            for (int i = 0; i < 4; ++i) {
                Tensor x({4});
                for (auto& v : x.values) v = rng.uniform(-1.0f, 1.0f);
                batch.emplace_back(x, static_cast<int>(rng.next_below(3)));
            }
            loss_and_grad(m, batch, grads);
            sgd_step(m.params.flat, grads, velocity, 0.05f, 0.5f);
        }
        return m.params.flat;
    };
    CHECK(train_once() == train_once());
}

TEST_CASE("checkpoint round-trips byte-exactly") {
    namespace fs = std::filesystem;
    Model m = make_architecture("mlp", {1, 4, 4}, 5);
    init_params(m, 1234);
    const auto dir = fs::temp_directory_path() / "fedadapt_ckpt_test";
    fs::create_directories(dir);
    const std::string p1 = (dir / "a.ckpt").string();
    const std::string p2 = (dir / "b.ckpt").string();
    save_model(m, p1);
    Model loaded = load_model(p1);
    CHECK(loaded.layers == m.layers);
    CHECK(loaded.params.flat == m.params.flat);
    CHECK(loaded.input_shape == m.input_shape);
    save_model(loaded, p2);

    auto slurp = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(p1) == slurp(p2));
    fs::remove_all(dir);
}

TEST_CASE("model parameter layout covers the flat vector exactly") {
    Model m = make_architecture("small-cnn", {1, 12, 12}, 10);
    std::size_t expected = 0;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        CHECK(m.params.offsets[i].first == expected);
        expected += layer_param_count(m.layers[i]);
    }
    CHECK(expected == m.params.flat.size());
    CHECK(m.param_count() == 37962);  // 320 + 9248 + 9248 + 18496 + 650
    CHECK(m.relu_count() == 4);
    CHECK(m.relu_channel_count(1) == 32);
    CHECK(m.relu_channel_count(4) == 64);
}
