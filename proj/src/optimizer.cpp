#include "tinygrpo/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace tinygrpo {

OptimState init_optim_state(const PolicyConfig& cfg) {
    OptimState s;
    s.m = zero_gradients(cfg);
    s.v = zero_gradients(cfg);
    return s;
}

void reset_optim_state(OptimState& state) {
    state.step = 0;
    for_each_tensor(state.m, [](std::vector<double>& v) { v.assign(v.size(), 0.0); });
    for_each_tensor(state.v, [](std::vector<double>& v) { v.assign(v.size(), 0.0); });
}

void adamw_step_inplace(PolicyParams& params, const GradientSet& grads,
                        OptimState& state, const OptimConfig& cfg) {
    if (!same_shape(params.t, grads) || !same_shape(params.t, state.m))
        throw std::invalid_argument("optimizer shape mismatch");
    for_each_tensor(grads, [](const std::vector<double>& v) {
        for (double g : v)
            if (!std::isfinite(g))
                throw NonFiniteGradientError("non-finite gradient entry");
    });

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                      std::vector<double>& m, std::vector<double>& v) {
        for (size_t i = 0; i < p.size(); ++i) {
            const double grad = -g[i]; // ascent on the maximized objective
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad * grad;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg.learning_rate *
                    (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
        }
    };
    update(params.t.embedding, grads.embedding, state.m.embedding, state.v.embedding);
    update(params.t.w1, grads.w1, state.m.w1, state.v.w1);
    update(params.t.b1, grads.b1, state.m.b1, state.v.b1);
    update(params.t.w2, grads.w2, state.m.w2, state.v.w2);
    update(params.t.b2, grads.b2, state.m.b2, state.v.b2);
}

std::pair<PolicyParams, OptimState> adamw_step(const PolicyParams& params,
                                               const GradientSet& grads,
                                               const OptimState& state,
                                               const OptimConfig& cfg) {
    PolicyParams p = params;
    OptimState s = state;
    adamw_step_inplace(p, grads, s, cfg);
    return {std::move(p), std::move(s)};
}

} // namespace tinygrpo
