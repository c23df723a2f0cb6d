#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "tinygrpo/policy.hpp"
#include "tinygrpo/rng.hpp"
#include "tinygrpo/tasks.hpp"

namespace tinygrpo {

struct SamplingConfig {
    double temperature = 1.2; // rollout temperature
    double top_p = 1.0;       // 1.0 at training; nucleus truncation for eval
    int max_response_len = 24;
};

struct Rollout {
    TokenSequence response;       // includes the final eos when terminated
    std::vector<double> logp_old; // per token; FULL tempered dist, pre-truncation
    std::vector<double> logp_ref; // per token under pi_ref; filled by trainer
    double entropy_sum = 0.0;     // sum of tempered next-token entropies
    bool terminated = false;      // eos emitted before hitting max length
    double reward_raw = 0.0;      // verifier reward in [0,1]
    double reward_shaped = 0.0;   // after termination shaping, in [-1,1]
    bool parsed_ok = false;
    std::string error_code = "none"; // reward-service error, if any
};

struct Group {
    Prompt prompt;
    std::vector<Rollout> rollouts;
};

struct RolloutPlan {
    int group_size = 16; // n rollouts per prompt
    SamplingConfig sampling;
};

// Names the deterministic stream family for one training step.
struct StreamCtx {
    uint64_t seed = 0;
    uint64_t step = 0;
};

// Samples one response: tempered softmax, optionally truncated to the
// smallest probability-sorted prefix with cumulative mass >= top_p
// (ties broken probability-desc then id-asc), renormalized. Stops at eos or
// max_response_len. logp_old records the full pre-truncation distribution.
Rollout sample_response(const PolicyParams& params, const TokenSequence& prompt,
                        const SamplingConfig& cfg, RngStream& rng,
                        PolicyWorkspace& ws);

// n rollouts per prompt; rollout (i, j) draws from substream
// hash(seed, "rollout", step, hash(prompt_id), j), so results are a pure
// function of (params, prompts, plan, ctx) regardless of execution order.
std::vector<Group> build_groups_serial(const PolicyParams& params,
                                       const std::vector<Prompt>& prompts,
                                       const RolloutPlan& plan,
                                       const StreamCtx& ctx);

// Same contract, bit-identical output; work split across OpenMP threads with
// one result slot per (prompt, rollout).
std::vector<Group> build_groups_parallel(const PolicyParams& params,
                                         const std::vector<Prompt>& prompts,
                                         const RolloutPlan& plan,
                                         const StreamCtx& ctx, int threads);

// threads <= 1 dispatches to the serial implementation
std::vector<Group> build_groups(const PolicyParams& params,
                                const std::vector<Prompt>& prompts,
                                const RolloutPlan& plan, const StreamCtx& ctx,
                                int threads);

// Supplies replacement groups (already rewarded + shaped) for dynamic
// sampling; returns nullopt when exhausted.
using GroupSource = std::function<std::optional<Group>()>;

struct FilterResult {
    std::vector<Group> retained;
    int filtered_out = 0; // degenerate groups dropped, refills included
    int refill_drawn = 0; // groups pulled from the source
};

// Drops groups whose shaped rewards are all equal within `tol` (binary
// all-pass / all-fail is the motivating case), then draws from `refill`
// until `target_count` groups are retained or the source runs dry.
FilterResult dynamic_filter(std::vector<Group> groups, int target_count,
                            const GroupSource& refill, double tol = 1e-6);

// One training example: a rollout plus its group-standardized advantage.
struct MinibatchItem {
    const Group* group = nullptr;
    int rollout_index = 0;
    double advantage = 0.0;
};

using Minibatch = std::vector<MinibatchItem>;

// Flattens all rollouts, attaches per-group advantages (population-std
// standardization of shaped rewards), shuffles deterministically under
// (ctx.seed, "minibatch.shuffle", ctx.step) and chunks into minibatches of
// `minibatch_size` (a short trailing minibatch is kept). Pointers reference
// `groups`, which must outlive the result.
std::vector<Minibatch> assemble_minibatches(const std::vector<Group>& groups,
                                            int minibatch_size, double sigma_min,
                                            const StreamCtx& ctx);

} // namespace tinygrpo
