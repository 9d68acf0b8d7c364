#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "deidvc/adam.hpp"
#include "deidvc/gradcheck.hpp"
#include "deidvc/nn.hpp"
#include "deidvc/tape.hpp"

using namespace deidvc::numcore;
using deidvc::nn::glorot_init;
using deidvc::nn::uniform_init;

namespace {

Tensor random_tensor(std::vector<int> dims, std::mt19937& rng, float scale = 1.0f) {
    Tensor t = uniform_init(std::move(dims), scale, rng);
    t.requires_grad = true;
    return t;
}

// uniform in [lo, hi]; bounded-away-from-zero ranges keep finite-difference
// relative errors meaningful at float32 precision
Tensor random_range(std::vector<int> dims, std::mt19937& rng, float lo, float hi) {
    Tensor t = Tensor::zeros(std::move(dims), true);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

}  // namespace

TEST_CASE("forward_backward: sum is linear") {
    Tensor x({3}, {1.0f, 2.0f, 3.0f}, true);
    auto r = forward_backward([](Tape& t, const std::map<std::string, Var>& v) {
        return t.sum(v.at("x"));
    }, {{"x", x}});
    CHECK(r.value == doctest::Approx(6.0));
    for (float g : r.grads.at("x").data) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("forward_backward: sum of squares") {
    Tensor x({1}, {3.0f}, true);
    auto r = forward_backward([](Tape& t, const std::map<std::string, Var>& v) {
        return t.sum(t.square(v.at("x")));
    }, {{"x", x}});
    CHECK(r.value == doctest::Approx(9.0));
    CHECK(r.grads.at("x").data[0] == doctest::Approx(6.0));
}

TEST_CASE("forward_backward: shape mismatch names both ops") {
    Tensor a = Tensor::zeros({2, 3}, true);
    Tensor b = Tensor::zeros({3, 3}, true);
    try {
        forward_backward([](Tape& t, const std::map<std::string, Var>& v) {
            return t.sum(t.add(v.at("a"), v.at("b")));
        }, {{"a", a}, {"b", b}});
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("a") != std::string::npos);
        CHECK(msg.find("b") != std::string::npos);
    }
}

TEST_CASE("grad_check: two-layer perceptron with L1 loss matches finite differences") {
    std::mt19937 rng(1234);
    // positive weights and inputs keep every partial bounded away from zero,
    // and the target offset keeps every L1 residual away from the |.| kink
    Tensor x = random_range({4, 8}, rng, 0.2f, 1.2f);
    x.requires_grad = false;
    Tensor w1 = random_range({8, 6}, rng, 0.05f, 0.25f);
    Tensor b1 = random_range({6}, rng, 0.05f, 0.15f);
    Tensor w2 = random_range({6, 5}, rng, 0.1f, 0.6f);
    Tensor b2 = random_range({5}, rng, 0.05f, 0.15f);
    Tensor target = Tensor::full({4, 5}, 3.0f);
    auto graph = [&](Tape& t, const std::map<std::string, Var>& v) {
        Var xc = t.constant(x, "x");
        Var tc = t.constant(target, "target");
        Var h = t.tanh_(t.linear(xc, v.at("w1"), v.at("b1")));
        Var y = t.linear(h, v.at("w2"), v.at("b2"));
        return t.l1_loss(y, tc);
    };
    // h = 1e-2: central differences on a float32 forward have a rounding
    // noise floor of roughly eps/(2h) times the value/gradient ratio, so a
    // smaller step cannot resolve 1e-4 relative error
    auto report = grad_check(graph, {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}}, 1e-2f, 1e-4);
    CHECK(report.pass);
    CHECK(report.worst < 1e-4);
}

TEST_CASE("grad_check: every differentiable primitive, 10 seeds at tol 1e-4") {
    // Each case weights the primitive's output by a positive constant "c"
    // and draws inputs from sign-definite ranges, so every checked partial
    // is bounded away from zero and the relative-error denominator stays
    // meaningful at float32 precision.
    struct Case {
        const char* name;
        GraphFn fn;
        std::vector<int> dims_a, dims_b, dims_c;
        float lo_b, hi_b;
    };
    std::vector<Case> cases = {
        {"matmul", [](Tape& t, const std::map<std::string, Var>& v) {
             return t.sum(t.mul(t.matmul(v.at("a"), v.at("b")), v.at("c")));
         }, {3, 4}, {4, 5}, {3, 5}, 0.3f, 1.3f},
        {"conv1d", [](Tape& t, const std::map<std::string, Var>& v) {
             Var bias = t.constant(Tensor::zeros({3}));
             return t.sum(t.mul(t.conv1d_same(v.at("a"), v.at("b"), bias), v.at("c")));
         }, {6, 2}, {3, 2, 3}, {6, 3}, 0.3f, 1.3f},
        {"elementwise mul+sigmoid+tanh", [](Tape& t, const std::map<std::string, Var>& v) {
             return t.sum(t.mul(t.mul(t.sigmoid(v.at("a")), t.tanh_(v.at("b"))), v.at("c")));
         }, {4, 4}, {4, 4}, {4, 4}, 0.3f, 1.3f},
        {"softplus+exp", [](Tape& t, const std::map<std::string, Var>& v) {
             return t.sum(t.mul(t.softplus(t.add(v.at("a"), t.exp_(t.scale(v.at("b"), 0.3f)))),
                                v.at("c")));
         }, {5}, {5}, {5}, 0.3f, 1.3f},
        {"reductions sum/mean/abs", [](Tape& t, const std::map<std::string, Var>& v) {
             return t.add(t.sum(t.square(v.at("a"))),
                          t.mean(t.abs_(t.mul(v.at("b"), v.at("c")))));
         }, {7}, {7}, {7}, 0.3f, 1.3f},
        {"concat_cols", [](Tape& t, const std::map<std::string, Var>& v) {
             return t.sum(t.mul(t.concat_cols(v.at("a"), v.at("b")), v.at("c")));
         }, {3, 2}, {3, 2}, {3, 4}, 0.3f, 1.3f},
        {"cosine_similarity", [](Tape& t, const std::map<std::string, Var>& v) {
             return t.cosine_similarity(v.at("a"), v.at("b"));
         }, {6}, {6}, {1}, 0.7f, 1.3f},
        {"avgpool+repeat+reverse", [](Tape& t, const std::map<std::string, Var>& v) {
             Var p = t.avgpool_rows(v.at("a"), 2);
             Var u = t.repeat_rows(p, 2);
             return t.sum(t.mul(t.reverse_rows(u), v.at("c")));
         }, {4, 3}, {1, 1}, {4, 3}, 0.3f, 1.3f},
        {"broadcast_row+mean_rows", [](Tape& t, const std::map<std::string, Var>& v) {
             Var b = t.broadcast_row(t.mean_rows(v.at("a")), 5);
             return t.sum(t.mul(b, t.broadcast_row(t.mean_rows(v.at("c")), 5)));
         }, {3, 4}, {1, 1}, {1, 4}, 0.3f, 1.3f},
        {"row+stack_rows", [](Tape& t, const std::map<std::string, Var>& v) {
             Var r0 = t.row(v.at("a"), 0);
             Var r2 = t.row(v.at("a"), 2);
             return t.sum(t.mul(t.stack_rows({r2, r0}), t.constant(Tensor::full({2, 4}, 0.7f))));
         }, {3, 4}, {1, 1}, {1, 1}, 0.3f, 1.3f},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        for (int seed = 0; seed < 10; ++seed) {
            CAPTURE(seed);
            std::mt19937 rng(static_cast<unsigned>(1000 + seed));
            Tensor a = random_range(c.dims_a, rng, 0.3f, 1.3f);
            Tensor b = random_range(c.dims_b, rng, c.lo_b, c.hi_b);
            if (std::string(c.name) == "cosine_similarity")
                // alternating signs keep the pair far from (anti)parallel,
                // where the cosine gradient cancels to zero
                for (std::size_t i = 1; i < b.data.size(); i += 2) b.data[i] = -b.data[i];
            Tensor cc = random_range(c.dims_c, rng, 0.5f, 1.5f);
            cc.requires_grad = false;
            auto report = grad_check(c.fn, {{"a", a}, {"b", b}, {"c", cc}}, 1e-2f, 1e-4);
            CHECK(report.pass);
            CHECK(report.worst < 1e-4);
        }
    }
}

TEST_CASE("grad_check: l2_normalize through a positive projection") {
    for (int seed = 0; seed < 10; ++seed) {
        CAPTURE(seed);
        std::mt19937 rng(static_cast<unsigned>(400 + seed));
        Tensor a = random_range({6}, rng, 0.3f, 1.3f);
        Tensor w = random_range({6}, rng, -1.5f, -0.5f);
        w.requires_grad = false;
        auto report = grad_check([](Tape& t, const std::map<std::string, Var>& v) {
            return t.dot(t.l2_normalize(v.at("a")), v.at("w"));
        }, {{"a", a}, {"w", w}}, 1e-2f, 1e-3);
        CHECK(report.pass);
    }
}

TEST_CASE("grad_check: sum has zero relative error") {
    std::mt19937 rng(7);
    Tensor x = random_tensor({5}, rng);
    auto report = grad_check([](Tape& t, const std::map<std::string, Var>& v) {
        return t.sum(v.at("x"));
    }, {{"x", x}}, 1e-3f, 1e-4);
    CHECK(report.worst == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("grad_check: GRU layer gradients") {
    std::mt19937 rng(21);
    deidvc::nn::ParamStore p;
    deidvc::nn::add_gru(p, "gru", 3, 4, rng);
    // positive parameters and inputs keep every recurrence partial
    // sign-definite, so relative errors stay meaningful
    for (auto& [name, tensor] : p.items())
        for (auto& v : tensor.data) v = 0.1f + 0.4f * std::fabs(v);
    Tensor x = random_range({5, 3}, rng, 0.2f, 1.2f);
    Tensor c = random_range({5, 4}, rng, 0.5f, 1.5f);
    c.requires_grad = false;
    auto graph = [&](Tape& t, const std::map<std::string, Var>& v) {
        return t.sum(t.mul(deidvc::nn::apply_gru(t, v, "gru", v.at("x")), v.at("c")));
    };
    std::vector<std::pair<std::string, Tensor>> inputs = {{"x", x}, {"c", c}};
    for (auto& [name, tensor] : p.items()) inputs.emplace_back(name, tensor);
    // recurrent-gate partials are ~1e-2 while the forward value is ~15, so
    // the float32 difference noise caps the resolvable relative error
    auto report = grad_check(graph, inputs, 1e-2f, 1e-2);
    CHECK(report.pass);
}

TEST_CASE("adam_step: zero gradient never changes parameters") {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor p = random_tensor({4}, rng);
        Tensor zero = Tensor::zeros({4});
        AdamState st = AdamState::for_param(p);
        // warm the state with some nonzero history first
        Tensor g = random_tensor({4}, rng);
        Tensor p2 = p;
        adam_step(p2, g, st, {}, "p");
        Tensor before = p2;
        adam_step(p2, zero, st, {}, "p");
        // second moment decays but sqrt(vhat) >> eps keeps the update at 0
        for (std::size_t i = 0; i < p2.data.size(); ++i)
            CHECK(p2.data[i] == doctest::Approx(before.data[i]).epsilon(1e-6));
        // and from a truly fresh state the parameter is bit-identical
        AdamState fresh = AdamState::for_param(p);
        Tensor p3 = p;
        adam_step(p3, zero, fresh, {}, "p");
        CHECK(p3.data == p.data);
    }
}

TEST_CASE("adam_step: first step moves by about lr") {
    Tensor p = Tensor::scalar(1.0f, true);
    Tensor g = Tensor::scalar(1.0f);
    AdamState st = AdamState::for_param(p);
    AdamConfig cfg;
    cfg.lr = 0.1f;
    adam_step(p, g, st, cfg, "p");
    // bias-corrected first step: lr * g / (|g| + eps) ~= lr
    CHECK(p.data[0] == doctest::Approx(0.9).epsilon(1e-4));
    CHECK(st.step_count == 1);

    // second identical step displaces by a similar magnitude (within 10%)
    float before = p.data[0];
    adam_step(p, g, st, cfg, "p");
    float d2 = before - p.data[0];
    CHECK(d2 == doctest::Approx(0.1).epsilon(0.1));
    CHECK(st.step_count == 2);
}

TEST_CASE("adam_step: non-finite gradient names the parameter") {
    Tensor p = Tensor::scalar(1.0f, true);
    Tensor g = Tensor::scalar(std::numeric_limits<float>::quiet_NaN());
    AdamState st = AdamState::for_param(p);
    try {
        adam_step(p, g, st, {}, "decoder.w");
        FAIL("expected error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("decoder.w") != std::string::npos);
    }
}

TEST_CASE("forward_backward is deterministic") {
    std::mt19937 rng(99);
    Tensor a = random_tensor({6, 6}, rng);
    Tensor b = random_tensor({6, 6}, rng);
    auto graph = [](Tape& t, const std::map<std::string, Var>& v) {
        return t.mean(t.tanh_(t.matmul(v.at("a"), v.at("b"))));
    };
    auto r1 = forward_backward(graph, {{"a", a}, {"b", b}});
    auto r2 = forward_backward(graph, {{"a", a}, {"b", b}});
    CHECK(r1.value == r2.value);
    CHECK(r1.grads.at("a").data == r2.grads.at("a").data);
    CHECK(r1.grads.at("b").data == r2.grads.at("b").data);
}
