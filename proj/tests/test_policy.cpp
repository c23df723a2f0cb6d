#include <doctest.h>

#include <cmath>
#include <vector>

#include "tinygrpo/policy.hpp"
#include "tinygrpo/rng.hpp"

using namespace tinygrpo;

namespace {

PolicyConfig tiny_cfg() {
    PolicyConfig c;
    c.vocab_size = 7;
    c.embed_dim = 3;
    c.window = 4;
    c.hidden_dim = 5;
    c.eos_id = 6;
    return c;
}

// sum_t d_logp[t] * log p(a_t) + d_entropy[t] * H_t, recomputed from scratch
double weighted_objective(const PolicyParams& p, const TokenSequence& prompt,
                          const TokenSequence& response, double T,
                          const std::vector<double>& d_logp,
                          const std::vector<double>& d_entropy) {
    SequenceLogProb s = sequence_log_prob(p, prompt, response, T);
    double val = 0.0;
    TokenSequence prefix;
    for (size_t t = 0; t < response.size(); ++t) {
        std::vector<double> z = forward_logits(p, prompt, prefix);
        val += d_logp[t] * s.per_token[t] + d_entropy[t] * token_entropy(z, T);
        prefix.push_back(response[t]);
    }
    return val;
}

std::vector<std::vector<double>*> tensor_list(ParamTensors& t) {
    return {&t.embedding, &t.w1, &t.b1, &t.w2, &t.b2};
}

} // namespace

TEST_CASE("zero parameters give the uniform distribution") {
    PolicyConfig c = tiny_cfg();
    PolicyParams p{c, zero_gradients(c)};
    TokenSequence prompt = {0, 1};
    std::vector<double> z = forward_logits(p, prompt, {});
    REQUIRE(z.size() == size_t(c.vocab_size));
    std::vector<double> logp;
    log_softmax_tempered(z, 1.0, logp);
    for (double lp : logp) CHECK(lp == doctest::Approx(-std::log(7.0)).epsilon(1e-12));
    CHECK(token_entropy(z, 1.0) == doctest::Approx(std::log(7.0)).epsilon(1e-12));

    // V=2 sanity: uniform per-token log-prob is -ln 2
    PolicyConfig c2;
    c2.vocab_size = 2; c2.embed_dim = 2; c2.window = 2; c2.hidden_dim = 3;
    c2.eos_id = 1;
    PolicyParams p2{c2, zero_gradients(c2)};
    SequenceLogProb s = sequence_log_prob(p2, {0}, {1, 0, 1});
    CHECK(s.per_token.size() == 3);
    for (double lp : s.per_token)
        CHECK(lp == doctest::Approx(-0.6931471805599453).epsilon(1e-12));
    CHECK(s.total == doctest::Approx(3 * -0.6931471805599453).epsilon(1e-12));

    // default 32-token vocabulary: uniform entropy is ln 32
    PolicyConfig cd; // defaults
    PolicyParams pd{cd, zero_gradients(cd)};
    std::vector<double> zd = forward_logits(pd, {0, 1, 2}, {});
    CHECK(token_entropy(zd, 1.0) == doctest::Approx(std::log(32.0)).epsilon(1e-12));
}

TEST_CASE("initialization is seed-deterministic") {
    PolicyConfig c = tiny_cfg();
    PolicyParams a = init_params(c, 42), b = init_params(c, 42);
    CHECK(params_equal(a, b));
    PolicyParams d = init_params(c, 43);
    CHECK(!params_equal(a, d));
    CHECK(max_abs(a.t) > 0.0);
    CHECK(max_abs(a.t) < 1.0); // small init
}

TEST_CASE("analytic backward matches central finite differences everywhere") {
    PolicyConfig c = tiny_cfg();
    PolicyParams p = init_params(c, 7);
    TokenSequence prompt = {0, 1, 2};
    TokenSequence response = {3, 5, 1, 6};
    const double T = 0.8;
    std::vector<double> d_logp = {0.7, -1.3, 0.4, 1.1};
    std::vector<double> d_entropy = {0.2, 0.0, -0.5, 0.9};

    GradientSet g = backward(p, prompt, response, T, d_logp, d_entropy);

    const double h = 1e-5;
    auto params_tensors = tensor_list(p.t);
    GradientSet gcopy = g; // same shapes
    auto grad_tensors = tensor_list(gcopy);
    size_t checked = 0;
    for (size_t ti = 0; ti < params_tensors.size(); ++ti) {
        std::vector<double>& theta = *params_tensors[ti];
        const std::vector<double>& analytic = *grad_tensors[ti];
        for (size_t i = 0; i < theta.size(); ++i) {
            double save = theta[i];
            theta[i] = save + h;
            double fp = weighted_objective(p, prompt, response, T, d_logp, d_entropy);
            theta[i] = save - h;
            double fm = weighted_objective(p, prompt, response, T, d_logp, d_entropy);
            theta[i] = save;
            double fd = (fp - fm) / (2 * h);
            double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-8});
            CHECK(std::abs(analytic[i] - fd) / denom < 1e-5);
            ++checked;
        }
    }
    CHECK(checked == param_count(c));
}

TEST_CASE("backward is linear in the upstream weights") {
    PolicyConfig c = tiny_cfg();
    PolicyParams p = init_params(c, 9);
    TokenSequence prompt = {4, 2};
    TokenSequence response = {1, 6};
    std::vector<double> dl = {0.5, -0.25}, de = {0.1, 0.3};
    GradientSet g1 = backward(p, prompt, response, 1.0, dl, de);
    for (double& v : dl) v *= 3.0;
    for (double& v : de) v *= 3.0;
    GradientSet g3 = backward(p, prompt, response, 1.0, dl, de);
    GradientSet scaled = g1;
    scale_tensors(scaled, 3.0);
    for_each_tensor_pair(scaled, g3, [](std::vector<double>& a,
                                        const std::vector<double>& b) {
        for (size_t i = 0; i < a.size(); ++i)
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    });
}

TEST_CASE("entropy increases with temperature for peaked logits") {
    std::vector<double> z = {2.0, 0.5, -1.0, 0.0, 1.5, -0.5, 0.25};
    double h05 = token_entropy(z, 0.5);
    double h10 = token_entropy(z, 1.0);
    double h20 = token_entropy(z, 2.0);
    CHECK(h05 < h10);
    CHECK(h10 < h20);
    CHECK(h20 < std::log(7.0) + 1e-12);
}

TEST_CASE("accumulate_backward_token agrees with backward over a sequence") {
    PolicyConfig c = tiny_cfg();
    PolicyParams p = init_params(c, 11);
    TokenSequence prompt = {1};
    TokenSequence response = {2, 4, 6};
    std::vector<double> dl = {1.0, -0.5, 0.25}, de = {0.0, 0.7, -0.2};
    GradientSet whole = backward(p, prompt, response, 1.3, dl, de);

    GradientSet acc = zero_gradients(c);
    PolicyWorkspace ws;
    for (size_t t = 0; t < response.size(); ++t) {
        build_context(c, prompt, response, t, ws);
        accumulate_backward_token(p, 1.3, response[t], dl[t], de[t], acc, ws);
    }
    for_each_tensor_pair(acc, whole, [](std::vector<double>& a,
                                        const std::vector<double>& b) {
        for (size_t i = 0; i < a.size(); ++i)
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    });
}

TEST_CASE("build_context left-pads with the reserved index") {
    PolicyConfig c = tiny_cfg(); // window 4
    PolicyWorkspace ws;
    build_context(c, {1, 2}, {}, 0, ws);
    CHECK(ws.window == std::vector<TokenId>{7, 7, 1, 2}); // pad = V = 7
    build_context(c, {1, 2}, {3, 4, 5}, 3, ws);
    CHECK(ws.window == std::vector<TokenId>{2, 3, 4, 5}); // last 4 of 5
}

TEST_CASE("widening the context preserves short-sequence behaviour exactly") {
    PolicyConfig c; // defaults: W=16
    PolicyParams p = init_params(c, 123);
    PolicyParams wide = widen_context(p, 32);
    CHECK(wide.cfg.window == 32);
    CHECK(wide.cfg.vocab_size == c.vocab_size);

    TokenSequence prompt = {5, 10, 3, 15}; // well under 16 tokens total
    TokenSequence response = {16, 2, 7, 17, 31};
    SequenceLogProb a = sequence_log_prob(p, prompt, response, 1.2);
    SequenceLogProb b = sequence_log_prob(wide, prompt, response, 1.2);
    REQUIRE(a.per_token.size() == b.per_token.size());
    for (size_t t = 0; t < a.per_token.size(); ++t)
        CHECK(a.per_token[t] == b.per_token[t]); // bit-exact
    CHECK_THROWS(widen_context(p, 8)); // shrinking is refused

    // moment tensors widen to the same shapes as the widened parameters
    ParamTensors m = widen_context_tensors(c, zero_gradients(c), 32);
    CHECK(same_shape(m, wide.t));
}
