#include <doctest.h>

#include <cmath>
#include <limits>

#include "tinygrpo/optimizer.hpp"

using namespace tinygrpo;

namespace {

PolicyConfig one_param_cfg() {
    // smallest config still exercising every tensor; we inspect b2[0]
    PolicyConfig c;
    c.vocab_size = 2;
    c.embed_dim = 1;
    c.window = 1;
    c.hidden_dim = 1;
    c.eos_id = 1;
    return c;
}

} // namespace

TEST_CASE("one ascent step reproduces the hand-computed AdamW update") {
    PolicyConfig c = one_param_cfg();
    PolicyParams p{c, zero_gradients(c)};
    p.t.b2[0] = 1.0;
    GradientSet g = zero_gradients(c);
    g.b2[0] = 0.1; // gradient of a maximized objective: ascend
    OptimState st = init_optim_state(c);
    OptimConfig oc;
    oc.learning_rate = 1e-3;

    auto [p2, st2] = adamw_step(p, g, st, oc);
    // descent gradient -0.1: m_hat = -0.1, v_hat = 0.01,
    // theta' = 1 - lr * m_hat / (sqrt(v_hat) + eps)
    const double expect = 1.0 - 1e-3 * (-0.1) / (std::sqrt(0.01) + 1e-8);
    CHECK(p2.t.b2[0] == doctest::Approx(expect).epsilon(1e-15));
    CHECK(p2.t.b2[0] > 1.0009);
    CHECK(p2.t.b2[0] < 1.0011);
    CHECK(st2.step == 1);
    CHECK(st.step == 0);              // inputs untouched
    CHECK(p.t.b2[0] == 1.0);
    CHECK(st2.m.b2[0] == doctest::Approx(-0.01).epsilon(1e-15));
    CHECK(st2.v.b2[0] == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("three steps follow the moment recurrences exactly") {
    PolicyConfig c = one_param_cfg();
    PolicyParams p{c, zero_gradients(c)};
    p.t.b2[0] = 0.5;
    OptimState st = init_optim_state(c);
    OptimConfig oc;
    oc.learning_rate = 0.01;

    double theta = 0.5, m = 0.0, v = 0.0;
    const double gs[3] = {0.3, -0.2, 0.05};
    for (int k = 0; k < 3; ++k) {
        GradientSet g = zero_gradients(c);
        g.b2[0] = gs[k];
        adamw_step_inplace(p, g, st, oc);
        const double gd = -gs[k]; // maximize -> descend on the negation
        m = 0.9 * m + 0.1 * gd;
        v = 0.999 * v + 0.001 * gd * gd;
        const double mh = m / (1.0 - std::pow(0.9, k + 1));
        const double vh = v / (1.0 - std::pow(0.999, k + 1));
        theta = theta - 0.01 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p.t.b2[0] == doctest::Approx(theta).epsilon(1e-14));
        CHECK(st.step == uint64_t(k + 1));
    }
}

TEST_CASE("decoupled weight decay shrinks parameters independently") {
    PolicyConfig c = one_param_cfg();
    PolicyParams p{c, zero_gradients(c)};
    p.t.b2[0] = 2.0;
    GradientSet g = zero_gradients(c); // zero gradient: only decay acts
    OptimState st = init_optim_state(c);
    OptimConfig oc;
    oc.learning_rate = 0.1;
    oc.weight_decay = 0.5;
    adamw_step_inplace(p, g, st, oc);
    // theta -= lr * wd * theta (moment update is 0/0-guarded by eps)
    CHECK(p.t.b2[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-12));
}

TEST_CASE("reset zeroes moments and step") {
    PolicyConfig c = one_param_cfg();
    PolicyParams p{c, zero_gradients(c)};
    GradientSet g = zero_gradients(c);
    g.b2[0] = 1.0;
    OptimState st = init_optim_state(c);
    adamw_step_inplace(p, g, st, OptimConfig{});
    CHECK(st.step == 1);
    CHECK(st.m.b2[0] != 0.0);
    reset_optim_state(st);
    CHECK(st.step == 0);
    CHECK(st.m.b2[0] == 0.0);
    CHECK(st.v.b2[0] == 0.0);
}

TEST_CASE("non-finite gradients raise the dedicated error") {
    PolicyConfig c = one_param_cfg();
    PolicyParams p{c, zero_gradients(c)};
    GradientSet g = zero_gradients(c);
    g.w1[0] = std::nan("");
    OptimState st = init_optim_state(c);
    CHECK_THROWS_AS(adamw_step_inplace(p, g, st, OptimConfig{}),
                    NonFiniteGradientError);
    GradientSet g2 = zero_gradients(c);
    g2.embedding[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(adamw_step_inplace(p, g2, st, OptimConfig{}),
                    NonFiniteGradientError);
}
