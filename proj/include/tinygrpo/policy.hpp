#pragma once

#include <cstdint>
#include <vector>

#include "tinygrpo/rng.hpp"
#include "tinygrpo/vocab.hpp"

namespace tinygrpo {

// One-hidden-layer tanh MLP over the concatenated embeddings of the last
// `window` tokens (left-padded with the reserved pad index). Outputs one
// logit per real vocabulary token; the pad index has an embedding row but
// no logit, so it is structurally unsampleable. All math in 64-bit floats.
struct PolicyConfig {
    int vocab_size = 32;   // V, real tokens (pad index = V)
    int embed_dim = 8;     // d
    int window = 16;       // W, context length fed to the MLP
    int hidden_dim = 32;   // h
    TokenId eos_id = 31;

    bool operator==(const PolicyConfig&) const = default;
};

// Five tensors; GradientSet and optimizer moments share the same shapes.
struct ParamTensors {
    std::vector<double> embedding; // (V+1) x d, row-major
    std::vector<double> w1;        // (W*d) x h, row-major
    std::vector<double> b1;        // h
    std::vector<double> w2;        // h x V, row-major
    std::vector<double> b2;        // V
};

using GradientSet = ParamTensors;

struct PolicyParams {
    PolicyConfig cfg;
    ParamTensors t;
};

inline size_t param_count(const PolicyConfig& c) {
    size_t V = c.vocab_size, d = c.embed_dim, W = c.window, h = c.hidden_dim;
    return (V + 1) * d + W * d * h + h + h * V + V;
}

PolicyParams init_params(const PolicyConfig& cfg, uint64_t seed);
GradientSet zero_gradients(const PolicyConfig& cfg);

// elementwise helpers over all five tensors
void scale_tensors(ParamTensors& t, double s);
void axpy_tensors(ParamTensors& dst, const ParamTensors& src, double s); // dst += s*src
bool same_shape(const ParamTensors& a, const ParamTensors& b);
double max_abs(const ParamTensors& t);

template <class F>
void for_each_tensor(ParamTensors& t, F f) {
    f(t.embedding); f(t.w1); f(t.b1); f(t.w2); f(t.b2);
}
template <class F>
void for_each_tensor(const ParamTensors& t, F f) {
    f(t.embedding); f(t.w1); f(t.b1); f(t.w2); f(t.b2);
}
template <class F>
void for_each_tensor_pair(ParamTensors& a, const ParamTensors& b, F f) {
    f(a.embedding, b.embedding); f(a.w1, b.w1); f(a.b1, b.b1);
    f(a.w2, b.w2); f(a.b2, b.b2);
}

// Scratch buffers so the hot loops allocate nothing per token.
struct PolicyWorkspace {
    std::vector<TokenId> window;  // W ids
    std::vector<double> x;        // W*d input features
    std::vector<double> a;        // h activations
    std::vector<double> z;        // V logits
    std::vector<double> logp;     // V tempered log-probs
    std::vector<double> prob;     // V tempered probabilities
    std::vector<int> order;       // nucleus sort scratch
};

// Fills ws.window with the last W ids of (prompt ++ response[0..prefix_len)),
// left-padded with pad index V.
void build_context(const PolicyConfig& cfg, const TokenSequence& prompt,
                   const TokenSequence& response, size_t prefix_len,
                   PolicyWorkspace& ws);

// Forward pass over the current ws.window; leaves logits in ws.z and
// activations in ws.a / ws.x for reuse by the backward pass.
void forward_window(const PolicyParams& params, PolicyWorkspace& ws);

// Convenience single-shot API: logits for the next token after
// prompt ++ prefix. Validates every id is a real token or pad.
std::vector<double> forward_logits(const PolicyParams& params,
                                   const TokenSequence& prompt,
                                   const TokenSequence& prefix);

// Tempered log-softmax of `logits` into `logp` (both size V). Uses the
// max-shift for overflow safety; temperature must be > 0.
void log_softmax_tempered(const std::vector<double>& logits, double temperature,
                          std::vector<double>& logp);

// Shannon entropy (nats) of the tempered distribution.
double token_entropy(const std::vector<double>& logits, double temperature);

struct SequenceLogProb {
    double total = 0.0;
    std::vector<double> per_token;
};

// Sum over response tokens of log pi(response[t] | prompt, response[<t]) at
// the given temperature (1.0 = the raw policy). Response must be non-empty.
SequenceLogProb sequence_log_prob(const PolicyParams& params,
                                  const TokenSequence& prompt,
                                  const TokenSequence& response,
                                  double temperature = 1.0);

// Accumulates into `grads` the exact gradient of
//   d_logp * log p(target | window) + d_entropy * H(p(. | window))
// with p tempered at `temperature`. Caller must have run build_context for
// the right position; forward is recomputed here.
void accumulate_backward_token(const PolicyParams& params, double temperature,
                               TokenId target, double d_logp, double d_entropy,
                               GradientSet& grads, PolicyWorkspace& ws);

// Same accumulation from cached forward results (window ids, tanh
// activations, tempered log-probs) — the training loop stores these during
// its forward pass and skips the recompute. Single source of truth for the
// backprop arithmetic; accumulate_backward_token delegates here.
void backward_from_activations(const PolicyParams& params,
                               const std::vector<TokenId>& window,
                               const std::vector<double>& activations,
                               const std::vector<double>& logp,
                               double temperature, TokenId target,
                               double d_logp, double d_entropy,
                               GradientSet& grads);

// Analytic gradient of sum_t [ d_logp[t] * log p(a_t | ctx_t)
//                              + d_entropy[t] * H(ctx_t) ]  (zeros if empty).
// Shapes of the result match PolicyParams; verified against central finite
// differences in the test suite.
GradientSet backward(const PolicyParams& params, const TokenSequence& prompt,
                     const TokenSequence& response, double temperature,
                     const std::vector<double>& d_logp,
                     const std::vector<double>& d_entropy);

// Remaps one parameter-shaped tensor set onto a wider context window:
// existing w1 rows map onto the most recent slots, new older-position rows
// are zero; all other tensors pass through. Also used to widen optimizer
// moments so they stay aligned with their parameters.
ParamTensors widen_context_tensors(const PolicyConfig& cfg,
                                   const ParamTensors& t, int new_window);

// Grows the context window (e.g. 16 -> 32), preserving behaviour on short
// sequences exactly: existing weights map onto the most recent slots, new
// older-position rows start at zero.
PolicyParams widen_context(const PolicyParams& params, int new_window);

bool params_equal(const PolicyParams& a, const PolicyParams& b);

} // namespace tinygrpo
