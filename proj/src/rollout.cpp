#include "tinygrpo/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tinygrpo/grpo.hpp"

namespace tinygrpo {

namespace {

void check_sampling(const SamplingConfig& cfg) {
    if (cfg.temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
    if (cfg.top_p <= 0.0 || cfg.top_p > 1.0)
        throw std::invalid_argument("top_p must be in (0, 1]");
    if (cfg.max_response_len < 1)
        throw std::invalid_argument("max response length must be >= 1");
}

// Inverse-CDF draw over ws.prob restricted to the candidate set. For
// top_p = 1 the candidates are all ids in index order; otherwise they are
// the nucleus prefix of ws.order.
TokenId draw_token(const PolicyWorkspace& ws, const std::vector<int>& order,
                   size_t candidates, double mass, double u) {
    const double target = u * mass;
    double cum = 0.0;
    for (size_t i = 0; i < candidates; ++i) {
        const int id = order.empty() ? static_cast<int>(i) : order[i];
        cum += ws.prob[id];
        if (cum > target) return static_cast<TokenId>(id);
    }
    // floating-point slack: fall back to the last candidate
    return static_cast<TokenId>(order.empty() ? static_cast<int>(candidates) - 1
                                              : order[candidates - 1]);
}

} // namespace

Rollout sample_response(const PolicyParams& params, const TokenSequence& prompt,
                        const SamplingConfig& cfg, RngStream& rng,
                        PolicyWorkspace& ws) {
    check_sampling(cfg);
    const int V = params.cfg.vocab_size;
    Rollout out;
    out.response.reserve(cfg.max_response_len);
    out.logp_old.reserve(cfg.max_response_len);

    for (int t = 0; t < cfg.max_response_len; ++t) {
        build_context(params.cfg, prompt, out.response, out.response.size(), ws);
        forward_window(params, ws);
        log_softmax_tempered(ws.z, cfg.temperature, ws.logp);
        ws.prob.resize(V);
        double entropy = 0.0;
        for (int j = 0; j < V; ++j) {
            ws.prob[j] = std::exp(ws.logp[j]);
            entropy -= ws.prob[j] * ws.logp[j];
        }

        TokenId tok;
        const double u = rng.uniform01();
        if (cfg.top_p >= 1.0) {
            static const std::vector<int> no_order; // id order, full support
            tok = draw_token(ws, no_order, static_cast<size_t>(V), 1.0, u);
        } else {
            ws.order.resize(V);
            std::iota(ws.order.begin(), ws.order.end(), 0);
            std::sort(ws.order.begin(), ws.order.end(), [&](int a, int b) {
                if (ws.prob[a] != ws.prob[b]) return ws.prob[a] > ws.prob[b];
                return a < b;
            });
            double mass = 0.0;
            size_t candidates = 0;
            while (candidates < ws.order.size() && mass < cfg.top_p) {
                mass += ws.prob[ws.order[candidates]];
                ++candidates;
            }
            tok = draw_token(ws, ws.order, candidates, mass, u);
        }

        out.response.push_back(tok);
        out.logp_old.push_back(ws.logp[tok]); // full-dist value, pre-truncation
        out.entropy_sum += entropy;
        if (tok == params.cfg.eos_id) {
            out.terminated = true;
            break;
        }
    }
    return out;
}

namespace {

std::vector<Group> make_group_shells(const std::vector<Prompt>& prompts,
                                     const RolloutPlan& plan) {
    if (plan.group_size < 2)
        throw std::invalid_argument("group size must be >= 2");
    check_sampling(plan.sampling);
    std::vector<Group> groups(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        groups[i].prompt = prompts[i];
        groups[i].rollouts.resize(plan.group_size);
    }
    return groups;
}

uint64_t rollout_stream(const StreamCtx& ctx, const std::string& prompt_id,
                        int rollout_index) {
    return stream_id(ctx.seed, "rollout", ctx.step, fnv1a64(prompt_id),
                     static_cast<uint64_t>(rollout_index));
}

} // namespace

std::vector<Group> build_groups_serial(const PolicyParams& params,
                                       const std::vector<Prompt>& prompts,
                                       const RolloutPlan& plan,
                                       const StreamCtx& ctx) {
    std::vector<Group> groups = make_group_shells(prompts, plan);
    PolicyWorkspace ws;
    for (size_t i = 0; i < groups.size(); ++i) {
        for (int j = 0; j < plan.group_size; ++j) {
            RngStream rng(rollout_stream(ctx, prompts[i].prompt_id, j));
            groups[i].rollouts[j] =
                sample_response(params, prompts[i].tokens, plan.sampling, rng, ws);
        }
    }
    return groups;
}

std::vector<Group> build_groups_parallel(const PolicyParams& params,
                                         const std::vector<Prompt>& prompts,
                                         const RolloutPlan& plan,
                                         const StreamCtx& ctx, int threads) {
    std::vector<Group> groups = make_group_shells(prompts, plan);
    const int n = plan.group_size;
    const long long total = static_cast<long long>(groups.size()) * n;
#ifdef _OPENMP
#pragma omp parallel num_threads(threads > 0 ? threads : omp_get_max_threads())
    {
        PolicyWorkspace ws; // one scratch space per thread
#pragma omp for schedule(dynamic, 4)
        for (long long k = 0; k < total; ++k) {
            const size_t i = static_cast<size_t>(k / n);
            const int j = static_cast<int>(k % n);
            RngStream rng(rollout_stream(ctx, prompts[i].prompt_id, j));
            groups[i].rollouts[j] =
                sample_response(params, prompts[i].tokens, plan.sampling, rng, ws);
        }
    }
#else
    (void)threads;
    PolicyWorkspace ws;
    for (long long k = 0; k < total; ++k) {
        const size_t i = static_cast<size_t>(k / n);
        const int j = static_cast<int>(k % n);
        RngStream rng(rollout_stream(ctx, prompts[i].prompt_id, j));
        groups[i].rollouts[j] =
            sample_response(params, prompts[i].tokens, plan.sampling, rng, ws);
    }
#endif
    return groups;
}

std::vector<Group> build_groups(const PolicyParams& params,
                                const std::vector<Prompt>& prompts,
                                const RolloutPlan& plan, const StreamCtx& ctx,
                                int threads) {
    if (threads <= 1) return build_groups_serial(params, prompts, plan, ctx);
    return build_groups_parallel(params, prompts, plan, ctx, threads);
}

namespace {

bool degenerate_rewards(const Group& g, double tol) {
    double lo = g.rollouts.front().reward_shaped, hi = lo;
    for (const Rollout& r : g.rollouts) {
        lo = std::min(lo, r.reward_shaped);
        hi = std::max(hi, r.reward_shaped);
    }
    return hi - lo <= tol;
}

} // namespace

FilterResult dynamic_filter(std::vector<Group> groups, int target_count,
                            const GroupSource& refill, double tol) {
    if (target_count < 0) throw std::invalid_argument("target_count must be >= 0");
    FilterResult out;
    out.retained.reserve(groups.size());
    for (auto& g : groups) {
        if (g.rollouts.empty()) throw std::invalid_argument("empty group");
        if (degenerate_rewards(g, tol)) ++out.filtered_out;
        else out.retained.push_back(std::move(g));
    }
    while (static_cast<int>(out.retained.size()) < target_count && refill) {
        std::optional<Group> g = refill();
        if (!g) break; // pool exhausted: proceed with what we have
        ++out.refill_drawn;
        if (degenerate_rewards(*g, tol)) ++out.filtered_out;
        else out.retained.push_back(std::move(*g));
    }
    return out;
}

std::vector<Minibatch> assemble_minibatches(const std::vector<Group>& groups,
                                            int minibatch_size, double sigma_min,
                                            const StreamCtx& ctx) {
    if (groups.empty()) throw std::invalid_argument("no groups to assemble");
    if (minibatch_size < 1) throw std::invalid_argument("minibatch size must be >= 1");

    std::vector<MinibatchItem> flat;
    for (const Group& g : groups) {
        std::vector<double> rewards;
        rewards.reserve(g.rollouts.size());
        for (const Rollout& r : g.rollouts) rewards.push_back(r.reward_shaped);
        std::vector<double> adv = compute_advantages(rewards, sigma_min);
        for (size_t j = 0; j < g.rollouts.size(); ++j)
            flat.push_back({&g, static_cast<int>(j), adv[j]});
    }

    RngStream rng(stream_id(ctx.seed, "minibatch.shuffle", ctx.step));
    rng.shuffle(flat);

    std::vector<Minibatch> out;
    for (size_t i = 0; i < flat.size(); i += minibatch_size) {
        const size_t end = std::min(flat.size(), i + minibatch_size);
        out.emplace_back(flat.begin() + i, flat.begin() + end);
    }
    return out;
}

} // namespace tinygrpo
