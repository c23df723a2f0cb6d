// Serial vs OpenMP-parallel paths must be bit-identical, not merely close:
// the parallel kernels write into preassigned slots and reduce in a fixed
// order, so every double comes out of the same arithmetic in the same order.

#include <doctest.h>

#include <vector>

#include "tinygrpo/grpo.hpp"
#include "tinygrpo/policy.hpp"
#include "tinygrpo/rollout.hpp"
#include "tinygrpo/tasks.hpp"
#include "tinygrpo/trainer.hpp"

using namespace tinygrpo;

namespace {

PolicyConfig small_cfg() {
    PolicyConfig pc;
    pc.embed_dim = 4;
    pc.window = 8;
    pc.hidden_dim = 12;
    return pc;
}

std::vector<Prompt> some_prompts(int count) {
    TaskSpec spec;
    spec.family = Family::arith;
    return generate(spec, 99, count, Split::train);
}

bool tensors_identical(const ParamTensors& a, const ParamTensors& b) {
    return a.embedding == b.embedding && a.w1 == b.w1 && a.b1 == b.b1 &&
           a.w2 == b.w2 && a.b2 == b.b2;
}

bool rollouts_identical(const Rollout& a, const Rollout& b) {
    return a.response == b.response && a.logp_old == b.logp_old &&
           a.entropy_sum == b.entropy_sum && a.terminated == b.terminated;
}

// Groups with filled-in reference log-probs, shaped rewards and advantages,
// ready for the update kernel. Rewards are synthetic (position-based) so the
// groups are guaranteed non-degenerate.
struct UpdateFixture {
    PolicyParams theta;
    PolicyParams ref;
    std::vector<Group> groups;
    std::vector<Minibatch> minibatches;
    double temperature = 0.9;

    UpdateFixture() {
        theta = init_params(small_cfg(), 31);
        ref = init_params(small_cfg(), 32); // different weights: nonzero KL
        RolloutPlan plan;
        plan.group_size = 4;
        plan.sampling.temperature = temperature;
        plan.sampling.top_p = 1.0;
        plan.sampling.max_response_len = 10;
        StreamCtx ctx{77, 3};
        groups = build_groups(theta, some_prompts(3), plan, ctx, 1);
        for (Group& g : groups) {
            int j = 0;
            for (Rollout& r : g.rollouts) {
                r.logp_ref =
                    sequence_log_prob(ref, g.prompt.tokens, r.response, temperature)
                        .per_token;
                r.reward_shaped = (j++ % 2 == 0) ? 1.0 : 0.25;
            }
        }
        minibatches = assemble_minibatches(groups, 6, 1e-6, ctx);
        REQUIRE(minibatches.size() == 2);
    }
};

ObjectiveConfig update_objective() {
    ObjectiveConfig obj;
    obj.clip = ClipConfig{0.2, 0.4};
    obj.kl.beta = 0.05;
    obj.entropy_coef = 1e-3;
    obj.ratio_level = RatioLevel::token;
    return obj;
}

} // namespace

TEST_CASE("parallel rollout generation matches the serial reference bit for bit") {
    PolicyParams params = init_params(small_cfg(), 7);
    std::vector<Prompt> prompts = some_prompts(5);
    RolloutPlan plan;
    plan.group_size = 6;
    plan.sampling.temperature = 1.2;
    plan.sampling.top_p = 1.0;
    plan.sampling.max_response_len = 12;
    StreamCtx ctx{4242, 17};

    std::vector<Group> serial = build_groups_serial(params, prompts, plan, ctx);
    std::vector<Group> parallel =
        build_groups_parallel(params, prompts, plan, ctx, 4);

    REQUIRE(serial.size() == prompts.size());
    REQUIRE(parallel.size() == serial.size());
    for (size_t i = 0; i < serial.size(); ++i) {
        CHECK(parallel[i].prompt.prompt_id == serial[i].prompt.prompt_id);
        REQUIRE(parallel[i].rollouts.size() == serial[i].rollouts.size());
        for (size_t j = 0; j < serial[i].rollouts.size(); ++j)
            CHECK(rollouts_identical(serial[i].rollouts[j],
                                     parallel[i].rollouts[j]));
    }
}

TEST_CASE("thread-count dispatch: 1 thread is the serial path, n > 1 the parallel") {
    PolicyParams params = init_params(small_cfg(), 8);
    std::vector<Prompt> prompts = some_prompts(2);
    RolloutPlan plan;
    plan.group_size = 3;
    plan.sampling.max_response_len = 8;
    StreamCtx ctx{5, 1};

    std::vector<Group> reference = build_groups_serial(params, prompts, plan, ctx);
    for (int threads : {1, 2, 4}) {
        std::vector<Group> got = build_groups(params, prompts, plan, ctx, threads);
        REQUIRE(got.size() == reference.size());
        for (size_t i = 0; i < got.size(); ++i)
            for (size_t j = 0; j < got[i].rollouts.size(); ++j)
                CHECK(rollouts_identical(got[i].rollouts[j],
                                         reference[i].rollouts[j]));
    }
}

TEST_CASE("nucleus sampling also agrees across thread counts") {
    // top_p < 1 exercises the sort + renormalize branch in every worker.
    PolicyParams params = init_params(small_cfg(), 9);
    std::vector<Prompt> prompts = some_prompts(3);
    RolloutPlan plan;
    plan.group_size = 4;
    plan.sampling.temperature = 0.6;
    plan.sampling.top_p = 0.95;
    plan.sampling.max_response_len = 10;
    StreamCtx ctx{6, 2};

    std::vector<Group> serial = build_groups_serial(params, prompts, plan, ctx);
    std::vector<Group> parallel =
        build_groups_parallel(params, prompts, plan, ctx, 4);
    for (size_t i = 0; i < serial.size(); ++i)
        for (size_t j = 0; j < serial[i].rollouts.size(); ++j)
            CHECK(rollouts_identical(serial[i].rollouts[j],
                                     parallel[i].rollouts[j]));
}

TEST_CASE("minibatch gradients are bit-identical across thread counts") {
    UpdateFixture fx;
    ObjectiveConfig obj = update_objective();

    for (const Minibatch& mb : fx.minibatches) {
        auto [loss1, grad1] = minibatch_gradient(fx.theta, mb, obj, fx.temperature, 1);
        auto [loss4, grad4] = minibatch_gradient(fx.theta, mb, obj, fx.temperature, 4);

        CHECK(loss4.surrogate == loss1.surrogate);
        CHECK(loss4.kl_term == loss1.kl_term);
        CHECK(loss4.entropy_mean == loss1.entropy_mean);
        CHECK(loss4.total == loss1.total);
        CHECK(loss4.clip_fraction == loss1.clip_fraction);
        CHECK(loss4.token_count == loss1.token_count);
        CHECK(tensors_identical(grad4, grad1));
        CHECK(max_abs(grad1) > 0.0); // the comparison is not vacuous
    }
}

TEST_CASE("a full update step lands on identical parameters for 1 and 4 threads") {
    UpdateFixture fx;
    ObjectiveConfig obj = update_objective();
    OptimConfig optim;
    optim.learning_rate = 1e-3;

    PolicyParams theta1 = fx.theta;
    PolicyParams theta4 = fx.theta;
    OptimState opt1 = init_optim_state(theta1.cfg);
    OptimState opt4 = init_optim_state(theta4.cfg);

    for (const Minibatch& mb : fx.minibatches) {
        LossBreakdown bd1 =
            update_minibatch(theta1, opt1, mb, obj, optim, fx.temperature, 1);
        LossBreakdown bd4 =
            update_minibatch(theta4, opt4, mb, obj, optim, fx.temperature, 4);
        CHECK(bd4.total == bd1.total);
    }

    CHECK(params_equal(theta1, theta4));
    CHECK(opt1.step == opt4.step);
    CHECK(tensors_identical(opt1.m, opt4.m));
    CHECK(tensors_identical(opt1.v, opt4.v));
    // and the step really moved the weights
    CHECK_FALSE(params_equal(theta1, fx.theta));
}
