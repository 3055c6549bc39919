#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "gazeassist/error.hpp"
#include "gazeassist/intent_net.hpp"
#include "gazeassist/synthetic.hpp"
#include "helpers.hpp"

using namespace gaze;

namespace {

features::WindowBatch random_batch(int bs, int sw, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    features::WindowBatch b;
    b.bs = bs;
    b.sw = sw;
    for (int i = 0; i < bs * sw * 3; ++i) b.values.push_back(i % 3 == 2 ? 10.0 * u(rng) : u(rng));
    for (int i = 0; i < bs; ++i) b.labels.push_back(i % 2);
    return b;
}

net::ModelParams small_model(std::uint64_t seed = 1) {
    net::ModelConfig c;
    c.seed = seed;
    return net::ModelParams::initialize(c);
}

}  // namespace

TEST_SUITE("intent-net") {
    TEST_CASE("positional encoding") {
        const auto pe = net::positional_encoding(30, 48);
        REQUIRE(pe.size() == 30 * 48);
        for (int i = 0; i < 48; ++i) CHECK(pe[i] == (i % 2 == 0 ? 0.0 : 1.0));
        CHECK(pe[48 + 0] == doctest::Approx(0.841471).epsilon(1e-6));
        // PE(pos, 2i) = sin(pos / 10000^(2i/d)) evaluated independently
        CHECK(pe[7 * 48 + 10] == doctest::Approx(std::sin(7.0 / std::pow(10000.0, 10.0 / 48.0))));
        CHECK(pe[7 * 48 + 11] == doctest::Approx(std::cos(7.0 / std::pow(10000.0, 10.0 / 48.0))));
        for (double v : pe) CHECK((v >= -1.0 && v <= 1.0));
        CHECK_THROWS_AS(net::positional_encoding(30, 47), ConfigError);
    }

    TEST_CASE("config validation") {
        net::ModelConfig c;
        c.n_heads = 5;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }

    TEST_CASE("zero input with a zeroed head gives 0.5 and no intent") {
        auto p = small_model();
        for (const char* t : {"head.fc1.w", "head.fc1.b", "head.fc2.w", "head.fc2.b"}) {
            auto s = p.tensor(t);
            std::fill(s.begin(), s.end(), 0.0);
        }
        features::WindowBatch b;
        b.bs = 2;
        b.sw = 30;
        b.values.assign(2 * 30 * 3, 0.0);
        const auto y = net::forward(b, p);
        CHECK(y[0] == 0.5);
        CHECK(y[1] == 0.5);
        CHECK_FALSE(net::decide(y[0]));
    }

    TEST_CASE("decision threshold is strict") {
        CHECK(net::decide(0.7));
        CHECK_FALSE(net::decide(0.5));
        CHECK_FALSE(net::decide(0.3));
    }

    TEST_CASE("outputs are per-sample, permutation-equivariant and deterministic") {
        const auto p = small_model(3);
        auto b = random_batch(6, 30, 9);
        const auto y = net::forward(b, p);
        for (double v : y) CHECK((v > 0.0 && v < 1.0));
        CHECK(net::forward(b, p) == y);

        // swap samples 0 and 4
        auto swapped = b;
        for (int k = 0; k < 90; ++k) std::swap(swapped.values[k], swapped.values[4 * 90 + k]);
        const auto ys = net::forward(swapped, p);
        // Equal up to rounding: a sample's rows land at different offsets.
        CHECK(ys[0] == doctest::Approx(y[4]).epsilon(1e-12));
        CHECK(ys[4] == doctest::Approx(y[0]).epsilon(1e-12));
        CHECK(ys[2] == doctest::Approx(y[2]).epsilon(1e-12));

        // changing sample 5 leaves sample 1 unchanged
        auto changed = b;
        for (int k = 0; k < 90; ++k) changed.values[5 * 90 + k] += 3.0;
        CHECK(net::forward(changed, p)[1] == doctest::Approx(y[1]).epsilon(1e-12));
    }

    TEST_CASE("attention rows are distributions and gates lie in (0,1)") {
        const auto p = small_model(4);
        const auto b = random_batch(3, 20, 2);
        net::ForwardTrace trace;
        net::forward(b, p, net::Mode::eval, nullptr, &trace);
        REQUIRE(trace.attention.size() == 2);
        for (const auto& layer : trace.attention) {
            REQUIRE(layer.size() == 3 * 2);
            for (const auto& a : layer) {
                for (int r = 0; r < 20; ++r) {
                    double s = 0.0;
                    for (int c = 0; c < 20; ++c) {
                        CHECK(a[r * 20 + c] >= 0.0);
                        s += a[r * 20 + c];
                    }
                    CHECK(std::abs(s - 1.0) < 1e-9);
                }
            }
        }
        for (double g : trace.channel_gates) CHECK((g > 0.0 && g < 1.0));
    }

    TEST_CASE("unit gates reduce the conv branch to mean-pooled convolution") {
        const auto p = small_model(5);
        const auto b = random_batch(2, 16, 4);
        net::ForwardTrace gated, plain;
        net::Hooks unit;
        unit.unit_channel_gates = true;
        net::forward(b, p, net::Mode::eval, nullptr, &plain, unit);
        net::forward(b, p, net::Mode::eval, nullptr, &gated);
        for (double g : plain.channel_gates) CHECK(g == 1.0);

        // Independent conv + ReLU + mean pool for sample 0, channel 0 of scale 3.
        const auto w = p.tensor("conv3.w");
        const auto bias = p.tensor("conv3.b");
        const int k = 3, pad = 1;
        double mean = 0.0;
        for (int t = 0; t < 16; ++t) {
            double acc = bias[0];
            for (int j = 0; j < k; ++j) {
                const int tt = t + j - pad;
                if (tt < 0 || tt >= 16) continue;
                for (int f = 0; f < 3; ++f) acc += w[j * 3 + f] * b.at(0, tt, f);
            }
            mean += std::max(acc, 0.0) / 16.0;
        }
        CHECK(plain.x_conv[0] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(gated.x_conv[0] == doctest::Approx(mean * gated.channel_gates[0]).epsilon(1e-12));
    }

    TEST_CASE("shape and finiteness errors") {
        const auto p = small_model();
        features::WindowBatch b = random_batch(2, 10, 1);
        b.values.pop_back();
        CHECK_THROWS_AS(net::forward(b, p), ShapeError);

        b = random_batch(2, 10, 1);
        b.values[4] = std::nan("");
        try {
            net::forward(b, p);
            FAIL("expected a non-finite error");
        } catch (const NonFiniteError& e) {
            CHECK_FALSE(e.layer().empty());
        }
    }

    TEST_CASE("loss values") {
        const std::vector<double> half{0.5}, one{1.0};
        CHECK(net::bce_loss(half, one) == doctest::Approx(0.693147).epsilon(1e-6));
        const std::vector<double> perfect{1.0, 0.0}, labels{1.0, 0.0};
        CHECK(net::bce_loss(perfect, labels) < 1e-6);

        const auto p = small_model(2);
        const auto b = random_batch(4, 12, 3);
        auto doubled = b;
        doubled.bs = 8;
        doubled.values.insert(doubled.values.end(), b.values.begin(), b.values.end());
        doubled.labels.insert(doubled.labels.end(), b.labels.begin(), b.labels.end());
        CHECK(net::loss_and_grads(doubled, p).loss == doctest::Approx(net::loss_and_grads(b, p).loss).epsilon(1e-12));
    }

    TEST_CASE("near-perfect predictions have near-zero loss and gradient") {
        auto p = small_model(6);
        // Saturate the head: large output bias towards label 1 for all-positive batch.
        auto b2 = p.tensor("head.fc2.b");
        b2[0] = 40.0;
        auto batch = random_batch(3, 10, 8);
        batch.labels = {1, 1, 1};
        const auto r = net::loss_and_grads(batch, p);
        CHECK(r.loss < 1e-6);
        double g = 0.0;
        for (double v : r.grads) g = std::max(g, std::abs(v));
        CHECK(g < 1e-5);
    }

    TEST_CASE("gradient check: healthy, corrupted and vacuous") {
        const auto p = small_model(0);
        const auto ok = net::gradient_check(p, 60, 0);
        CHECK(ok.probes == 60);
        CHECK(ok.max_rel_error < 1e-4);

        net::Hooks bad;
        bad.corrupt_ffn_gradient = true;
        CHECK(net::gradient_check(p, 200, 0, bad).max_rel_error > 1e-2);

        const auto none = net::gradient_check(p, 0, 0);
        CHECK(none.max_rel_error == 0.0);
        CHECK_FALSE(none.warnings.empty());
    }

    TEST_CASE("training: errors, zero learning rate and determinism") {
        auto windows = synth::separable_windows(64, 16, 1);
        net::TrainConfig tc;
        tc.epochs = 2;
        net::ModelConfig mc;

        auto single = windows;
        for (auto& w : single) w.label = 1;
        CHECK_THROWS_AS(net::train(single, tc, mc), DataError);
        CHECK_THROWS_AS(net::train({}, tc, mc), DataError);

        tc.learning_rate = 0.0;
        const auto frozen = net::train(windows, tc, mc);
        CHECK(frozen.params.values == net::ModelParams::initialize(mc).values);
        REQUIRE(frozen.history.size() == 2);
        CHECK(frozen.history[0].loss == doctest::Approx(frozen.history[1].loss).epsilon(1e-12));

        tc.learning_rate = 1e-3;
        const auto a = net::train(windows, tc, mc);
        const auto b = net::train(windows, tc, mc);
        CHECK(a.params.values == b.params.values);
        CHECK(a.params.values != frozen.params.values);
    }

    TEST_CASE("checkpoint round trip") {
        testutil::TempDir dir;
        const auto p = small_model(9);
        const auto path = (dir.path / "m.ckpt").string();
        net::save_checkpoint(p, path);
        const auto q = net::load_checkpoint(path);
        CHECK(q.config == p.config);
        CHECK(q.values == p.values);

        std::ofstream(dir.path / "bad.ckpt") << R"({"format":"something-else"})";
        CHECK_THROWS(net::load_checkpoint((dir.path / "bad.ckpt").string()));
    }

    TEST_CASE("predict matches forward") {
        const auto p = small_model(7);
        const auto ws = synth::separable_windows(5, 30, 2);
        const auto all = net::predict_all(ws, p);
        const auto y = net::forward(features::make_batch(ws, false), p);
        for (std::size_t i = 0; i < ws.size(); ++i) {
            CHECK(all[i].y_hat == doctest::Approx(y[i]).epsilon(1e-12));
            CHECK(net::predict(ws[i], p).decided == (y[i] > 0.5));
        }
    }
}
