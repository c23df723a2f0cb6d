#include <chrono>
#include <cstdio>
#include <vector>

#include <CLI11.hpp>

#include "tinygrpo/grpo.hpp"
#include "tinygrpo/policy.hpp"
#include "tinygrpo/rollout.hpp"
#include "tinygrpo/tasks.hpp"
#include "tinygrpo/trainer.hpp"

namespace {

using namespace tinygrpo;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool groups_equal(const std::vector<Group>& a, const std::vector<Group>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].rollouts.size() != b[i].rollouts.size()) return false;
        for (size_t j = 0; j < a[i].rollouts.size(); ++j) {
            const Rollout& x = a[i].rollouts[j];
            const Rollout& y = b[i].rollouts[j];
            if (x.response != y.response || x.logp_old != y.logp_old ||
                x.terminated != y.terminated || x.entropy_sum != y.entropy_sum)
                return false;
        }
    }
    return true;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs OpenMP kernel comparison"};
    int threads = 4, prompts = 8, group = 8, reps = 5, window = 16, max_len = 32;
    app.add_option("--threads", threads, "OpenMP thread count for the parallel runs");
    app.add_option("--prompts", prompts, "prompt groups per batch");
    app.add_option("--group", group, "rollouts per prompt");
    app.add_option("--reps", reps, "timed repetitions");
    app.add_option("--window", window, "context window");
    app.add_option("--max-len", max_len, "response length cap");
    CLI11_PARSE(app, argc, argv);

    PolicyConfig pcfg;
    pcfg.window = window;
    PolicyParams params = init_params(pcfg, 7);

    TaskSpec spec;
    spec.family = Family::arith;
    std::vector<Prompt> deck = generate(spec, 7, prompts, Split::train);
    RolloutPlan plan{group, SamplingConfig{1.2, 1.0, max_len}};
    StreamCtx ctx{7, 1};

    std::printf("rollout batch: %d prompts x %d rollouts, window %d, cap %d\n",
                prompts, group, window, max_len);

    // ---- rollout kernel ----
    double t_serial = 0.0, t_parallel = 0.0;
    std::vector<Group> ref_groups;
    bool exact = true;
    for (int r = 0; r < reps; ++r) {
        auto t0 = Clock::now();
        std::vector<Group> gs = build_groups_serial(params, deck, plan, ctx);
        t_serial += ms_since(t0);
        t0 = Clock::now();
        std::vector<Group> gp =
            build_groups_parallel(params, deck, plan, ctx, threads);
        t_parallel += ms_since(t0);
        exact = exact && groups_equal(gs, gp);
        if (r == 0) ref_groups = std::move(gs);
    }
    std::printf("  sampling   serial %8.2f ms   %d threads %8.2f ms   "
                "speedup %.2fx   bit-exact %s\n",
                t_serial / reps, threads, t_parallel / reps,
                t_serial / t_parallel, exact ? "yes" : "NO");

    // ---- update kernel ----
    for (Group& g : ref_groups) {
        uint64_t i = 0;
        for (Rollout& r : g.rollouts) {
            r.logp_ref =
                sequence_log_prob(params, g.prompt.tokens, r.response, 1.2)
                    .per_token;
            r.reward_shaped = (i++ % 3 == 0) ? 1.0 : 0.0; // synthetic spread
        }
    }
    std::vector<Minibatch> minibatches =
        assemble_minibatches(ref_groups, prompts * group / 2, 1e-6, ctx);

    ObjectiveConfig objective;
    objective.kl.beta = 1e-4;
    objective.entropy_coef = 3e-4;
    OptimConfig optim;

    double u_serial = 0.0, u_parallel = 0.0;
    bool u_exact = true;
    for (int r = 0; r < reps; ++r) {
        PolicyParams theta_s = params;
        OptimState opt_s = init_optim_state(pcfg);
        auto t0 = Clock::now();
        for (const Minibatch& mb : minibatches)
            update_minibatch(theta_s, opt_s, mb, objective, optim, 1.2, 1);
        u_serial += ms_since(t0);

        PolicyParams theta_p = params;
        OptimState opt_p = init_optim_state(pcfg);
        t0 = Clock::now();
        for (const Minibatch& mb : minibatches)
            update_minibatch(theta_p, opt_p, mb, objective, optim, 1.2, threads);
        u_parallel += ms_since(t0);
        u_exact = u_exact && params_equal(theta_s, theta_p);
    }
    std::printf("  update     serial %8.2f ms   %d threads %8.2f ms   "
                "speedup %.2fx   bit-exact %s\n",
                u_serial / reps, threads, u_parallel / reps,
                u_serial / u_parallel, u_exact ? "yes" : "NO");

    return (exact && u_exact) ? 0 : 1;
}
