#include "tinygrpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tinygrpo {

namespace {

void check_cfg(const PolicyConfig& c) {
    if (c.vocab_size < 2 || c.embed_dim < 1 || c.window < 1 || c.hidden_dim < 1)
        throw std::invalid_argument("policy config dimensions out of range");
    if (c.eos_id < 0 || c.eos_id >= c.vocab_size)
        throw std::invalid_argument("eos id outside vocabulary");
}

void check_ids(const PolicyConfig& c, const TokenSequence& ids) {
    for (TokenId id : ids)
        if (id < 0 || id >= c.vocab_size)
            throw std::invalid_argument("token id outside vocabulary");
}

void ensure_workspace(const PolicyConfig& c, PolicyWorkspace& ws) {
    ws.window.resize(c.window);
    ws.x.resize(static_cast<size_t>(c.window) * c.embed_dim);
    ws.a.resize(c.hidden_dim);
    ws.z.resize(c.vocab_size);
    ws.logp.resize(c.vocab_size);
}

} // namespace

PolicyParams init_params(const PolicyConfig& cfg, uint64_t seed) {
    check_cfg(cfg);
    PolicyParams p;
    p.cfg = cfg;
    size_t V = cfg.vocab_size, d = cfg.embed_dim, W = cfg.window, h = cfg.hidden_dim;
    p.t.embedding.resize((V + 1) * d);
    p.t.w1.resize(W * d * h);
    p.t.b1.assign(h, 0.0);
    p.t.w2.resize(h * V);
    p.t.b2.assign(V, 0.0);

    auto fill = [&](std::vector<double>& v, const char* purpose, double scale) {
        RngStream rs(stream_id(seed, purpose));
        for (double& x : v) x = (2.0 * rs.uniform01() - 1.0) * scale;
    };
    fill(p.t.embedding, "init.embedding", 0.08);
    fill(p.t.w1, "init.w1", 1.0 / std::sqrt(static_cast<double>(W * d)));
    fill(p.t.w2, "init.w2", 1.0 / std::sqrt(static_cast<double>(h)));
    return p;
}

GradientSet zero_gradients(const PolicyConfig& cfg) {
    check_cfg(cfg);
    GradientSet g;
    size_t V = cfg.vocab_size, d = cfg.embed_dim, W = cfg.window, h = cfg.hidden_dim;
    g.embedding.assign((V + 1) * d, 0.0);
    g.w1.assign(W * d * h, 0.0);
    g.b1.assign(h, 0.0);
    g.w2.assign(h * V, 0.0);
    g.b2.assign(V, 0.0);
    return g;
}

void scale_tensors(ParamTensors& t, double s) {
    for_each_tensor(t, [s](std::vector<double>& v) {
        for (double& x : v) x *= s;
    });
}

void axpy_tensors(ParamTensors& dst, const ParamTensors& src, double s) {
    if (!same_shape(dst, src)) throw std::invalid_argument("axpy: shape mismatch");
    for_each_tensor_pair(dst, src, [s](std::vector<double>& a, const std::vector<double>& b) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
    });
}

bool same_shape(const ParamTensors& a, const ParamTensors& b) {
    return a.embedding.size() == b.embedding.size() && a.w1.size() == b.w1.size() &&
           a.b1.size() == b.b1.size() && a.w2.size() == b.w2.size() &&
           a.b2.size() == b.b2.size();
}

double max_abs(const ParamTensors& t) {
    double m = 0.0;
    for_each_tensor(t, [&m](const std::vector<double>& v) {
        for (double x : v) m = std::max(m, std::fabs(x));
    });
    return m;
}

void build_context(const PolicyConfig& cfg, const TokenSequence& prompt,
                   const TokenSequence& response, size_t prefix_len,
                   PolicyWorkspace& ws) {
    if (prefix_len > response.size())
        throw std::invalid_argument("prefix length exceeds response length");
    ensure_workspace(cfg, ws);
    const size_t W = cfg.window;
    const size_t total = prompt.size() + prefix_len;
    const TokenId pad = static_cast<TokenId>(cfg.vocab_size);
    // window slot W-1 holds the most recent token
    for (size_t j = 0; j < W; ++j) {
        size_t back = W - j; // how far behind the end slot j sits
        if (total >= back) {
            size_t pos = total - back;
            ws.window[j] = pos < prompt.size() ? prompt[pos]
                                               : response[pos - prompt.size()];
        } else {
            ws.window[j] = pad;
        }
    }
}

void forward_window(const PolicyParams& params, PolicyWorkspace& ws) {
    const PolicyConfig& c = params.cfg;
    ensure_workspace(c, ws);
    const size_t d = c.embed_dim, W = c.window, h = c.hidden_dim, V = c.vocab_size;

    for (size_t j = 0; j < W; ++j) {
        TokenId id = ws.window[j];
        if (id < 0 || id > static_cast<TokenId>(V))
            throw std::invalid_argument("context id outside vocabulary+pad range");
        const double* row = &params.t.embedding[static_cast<size_t>(id) * d];
        std::copy(row, row + d, &ws.x[j * d]);
    }
    const size_t in = W * d;
    for (size_t k = 0; k < h; ++k) {
        double acc = params.t.b1[k];
        for (size_t i = 0; i < in; ++i) acc += ws.x[i] * params.t.w1[i * h + k];
        ws.a[k] = std::tanh(acc);
    }
    for (size_t j = 0; j < V; ++j) ws.z[j] = params.t.b2[j];
    for (size_t k = 0; k < h; ++k) {
        const double ak = ws.a[k];
        const double* row = &params.t.w2[k * V];
        for (size_t j = 0; j < V; ++j) ws.z[j] += ak * row[j];
    }
}

std::vector<double> forward_logits(const PolicyParams& params,
                                   const TokenSequence& prompt,
                                   const TokenSequence& prefix) {
    check_ids(params.cfg, prompt);
    check_ids(params.cfg, prefix);
    PolicyWorkspace ws;
    build_context(params.cfg, prompt, prefix, prefix.size(), ws);
    forward_window(params, ws);
    return ws.z;
}

void log_softmax_tempered(const std::vector<double>& logits, double temperature,
                          std::vector<double>& logp) {
    if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
    if (logits.empty()) throw std::invalid_argument("empty logits");
    logp.resize(logits.size());
    const double inv_t = 1.0 / temperature;
    double m = logits[0];
    for (double z : logits) m = std::max(m, z);
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        logp[i] = (logits[i] - m) * inv_t;
        sum += std::exp(logp[i]);
    }
    const double lse = std::log(sum);
    for (double& lp : logp) lp -= lse;
}

double token_entropy(const std::vector<double>& logits, double temperature) {
    std::vector<double> logp;
    log_softmax_tempered(logits, temperature, logp);
    double h = 0.0;
    for (double lp : logp) h -= std::exp(lp) * lp;
    return h;
}

SequenceLogProb sequence_log_prob(const PolicyParams& params,
                                  const TokenSequence& prompt,
                                  const TokenSequence& response,
                                  double temperature) {
    if (response.empty()) throw std::invalid_argument("response must be non-empty");
    check_ids(params.cfg, prompt);
    check_ids(params.cfg, response);
    PolicyWorkspace ws;
    SequenceLogProb out;
    out.per_token.reserve(response.size());
    for (size_t t = 0; t < response.size(); ++t) {
        build_context(params.cfg, prompt, response, t, ws);
        forward_window(params, ws);
        log_softmax_tempered(ws.z, temperature, ws.logp);
        double lp = ws.logp[response[t]];
        out.per_token.push_back(lp);
        out.total += lp;
    }
    return out;
}

void backward_from_activations(const PolicyParams& params,
                               const std::vector<TokenId>& window,
                               const std::vector<double>& activations,
                               const std::vector<double>& logp,
                               double temperature, TokenId target,
                               double d_logp, double d_entropy,
                               GradientSet& grads) {
    const PolicyConfig& c = params.cfg;
    const size_t d = c.embed_dim, W = c.window, h = c.hidden_dim, V = c.vocab_size;
    if (target < 0 || target >= static_cast<TokenId>(V))
        throw std::invalid_argument("backward target outside vocabulary");
    if (window.size() != W || activations.size() != h || logp.size() != V)
        throw std::invalid_argument("backward cache shape mismatch");

    double entropy = 0.0;
    if (d_entropy != 0.0)
        for (size_t j = 0; j < V; ++j) entropy -= std::exp(logp[j]) * logp[j];

    // d(objective)/d(logit_j), objective = d_logp*logp[target] + d_entropy*H
    //   dlogp[target]/dz_j = (1[j==target] - p_j)/T
    //   dH/dz_j            = -p_j (logp_j + H)/T
    const double inv_t = 1.0 / temperature;
    std::vector<double> dz(V);
    for (size_t j = 0; j < V; ++j) {
        const double pj = std::exp(logp[j]);
        double g = d_logp * ((static_cast<TokenId>(j) == target ? 1.0 : 0.0) - pj);
        if (d_entropy != 0.0) g += d_entropy * (-pj * (logp[j] + entropy));
        dz[j] = g * inv_t;
    }

    // back through output layer
    std::vector<double> da(h, 0.0);
    for (size_t k = 0; k < h; ++k) {
        const double ak = activations[k];
        double* gw2 = &grads.w2[k * V];
        const double* w2 = &params.t.w2[k * V];
        double acc = 0.0;
        for (size_t j = 0; j < V; ++j) {
            gw2[j] += ak * dz[j];
            acc += w2[j] * dz[j];
        }
        da[k] = acc;
    }
    for (size_t j = 0; j < V; ++j) grads.b2[j] += dz[j];

    // back through tanh hidden layer
    const size_t in = W * d;
    std::vector<double> dh(h);
    for (size_t k = 0; k < h; ++k)
        dh[k] = da[k] * (1.0 - activations[k] * activations[k]);
    for (size_t k = 0; k < h; ++k) grads.b1[k] += dh[k];
    std::vector<double> dx(in, 0.0);
    for (size_t i = 0; i < in; ++i) {
        // x_i rebuilt from the embedding row of the window id at slot i/d
        const double xi =
            params.t.embedding[static_cast<size_t>(window[i / d]) * d + i % d];
        double* gw1 = &grads.w1[i * h];
        const double* w1 = &params.t.w1[i * h];
        double acc = 0.0;
        for (size_t k = 0; k < h; ++k) {
            gw1[k] += xi * dh[k];
            acc += w1[k] * dh[k];
        }
        dx[i] = acc;
    }

    // into embedding rows (pad row is a trainable parameter like any other)
    for (size_t j = 0; j < W; ++j) {
        double* grow = &grads.embedding[static_cast<size_t>(window[j]) * d];
        for (size_t k = 0; k < d; ++k) grow[k] += dx[j * d + k];
    }
}

void accumulate_backward_token(const PolicyParams& params, double temperature,
                               TokenId target, double d_logp, double d_entropy,
                               GradientSet& grads, PolicyWorkspace& ws) {
    forward_window(params, ws);
    log_softmax_tempered(ws.z, temperature, ws.logp);
    backward_from_activations(params, ws.window, ws.a, ws.logp, temperature,
                              target, d_logp, d_entropy, grads);
}

GradientSet backward(const PolicyParams& params, const TokenSequence& prompt,
                     const TokenSequence& response, double temperature,
                     const std::vector<double>& d_logp,
                     const std::vector<double>& d_entropy) {
    if (d_logp.size() != response.size() || d_entropy.size() != response.size())
        throw std::invalid_argument("per-token grad vectors must match response length");
    check_ids(params.cfg, prompt);
    check_ids(params.cfg, response);
    GradientSet grads = zero_gradients(params.cfg);
    PolicyWorkspace ws;
    for (size_t t = 0; t < response.size(); ++t) {
        if (d_logp[t] == 0.0 && d_entropy[t] == 0.0) continue;
        build_context(params.cfg, prompt, response, t, ws);
        accumulate_backward_token(params, temperature, response[t], d_logp[t],
                                  d_entropy[t], grads, ws);
    }
    return grads;
}

ParamTensors widen_context_tensors(const PolicyConfig& cfg,
                                   const ParamTensors& t, int new_window) {
    if (new_window < cfg.window)
        throw std::invalid_argument("widen_context cannot shrink the window");
    ParamTensors out = t;
    if (new_window == cfg.window) return out;
    const size_t d = cfg.embed_dim, h = cfg.hidden_dim;
    const size_t shift = static_cast<size_t>(new_window - cfg.window);
    out.w1.assign(static_cast<size_t>(new_window) * d * h, 0.0);
    // old position j (0 = oldest) becomes position j + shift; the new slots
    // in front start at zero, so behaviour on short sequences is unchanged
    for (size_t j = 0; j < static_cast<size_t>(cfg.window); ++j)
        for (size_t k = 0; k < d; ++k)
            for (size_t m = 0; m < h; ++m)
                out.w1[((j + shift) * d + k) * h + m] = t.w1[(j * d + k) * h + m];
    return out;
}

PolicyParams widen_context(const PolicyParams& params, int new_window) {
    PolicyParams out;
    out.cfg = params.cfg;
    out.cfg.window = new_window;
    out.t = widen_context_tensors(params.cfg, params.t, new_window);
    return out;
}

bool params_equal(const PolicyParams& a, const PolicyParams& b) {
    if (!(a.cfg == b.cfg) || !same_shape(a.t, b.t)) return false;
    bool eq = true;
    for_each_tensor_pair(const_cast<ParamTensors&>(a.t), b.t,
                         [&eq](std::vector<double>& x, const std::vector<double>& y) {
                             for (size_t i = 0; i < x.size(); ++i)
                                 if (x[i] != y[i]) { eq = false; return; }
                         });
    return eq;
}

} // namespace tinygrpo
