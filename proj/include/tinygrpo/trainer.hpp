#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tinygrpo/checkpoint.hpp"
#include "tinygrpo/config.hpp"
#include "tinygrpo/grpo.hpp"
#include "tinygrpo/metrics.hpp"
#include "tinygrpo/optimizer.hpp"
#include "tinygrpo/policy.hpp"
#include "tinygrpo/reward_client.hpp"
#include "tinygrpo/rollout.hpp"
#include "tinygrpo/tasks.hpp"
#include "tinygrpo/vocab.hpp"

namespace tinygrpo {

// ---- reward shaping ----

struct ShapingConfig {
    double delta = 0.2; // penalty for responses that never emitted <eos>
};

// reward_shaped = max(reward_raw - delta * [not terminated], -1)
double shape_reward(double reward_raw, bool terminated, const ShapingConfig& cfg);
void shape_rewards(Group& group, const ShapingConfig& cfg);

// ---- adaptive entropy-bonus controller ----

struct EntropyControllerConfig {
    double target = 1.0; // desired mean token entropy (nats)
    double band = 0.15;  // hysteresis half-width
    double coef = 3e-4;  // bonus weight while engaged
};

// Hysteresis: engage when mean entropy < target - band, disengage when
// > target + band, otherwise keep the previous decision.
bool entropy_controller_update(bool enabled, double mean_entropy,
                               const EntropyControllerConfig& cfg);

// ---- run configuration ----

struct StageConfig {
    std::string name = "stage";
    int steps = 100;
    // sampling plan
    int batch_prompts = 8;       // prompt groups per step
    int group_size = 8;          // rollouts per prompt, >= 2
    int minibatch_rollouts = 32; // must divide batch_prompts * group_size
    SamplingConfig sampling;     // temperature / top_p / max_response_len
    int window = 16; // context window; raising it across stages widens weights
    // objective
    ClipConfig clip;
    double kl_beta = 1e-4;
    RatioLevel ratio_level = RatioLevel::token;
    bool adaptive_entropy = true;
    EntropyControllerConfig entropy;
    double fixed_entropy_coef = 0.0; // applied always when adaptive is off
    // rewards
    ShapingConfig shaping;
    bool dynamic_filter = true;
    // optimizer
    double lr = 3e-4;
    // reference handling: hard reset (ref <- theta, fresh moments) at entry
    bool reset_ref = false;
    // task mixture, family name -> weight; weights sum to 1
    std::map<std::string, double> task_weights;
};

struct TrainerConfig {
    uint64_t seed = 1;
    std::string out_dir = "runs/out";
    int threads = 1;
    // policy dimensions (context window is per stage)
    int embed_dim = 8;
    int hidden_dim = 32;
    // initialization
    bool format_primed = true; // maximum-likelihood warmup on answer scaffolds
    int warmup_steps = 300;
    int warmup_batch = 16;
    double warmup_lr = 1e-2;
    // optimizer (learning rate is per stage)
    OptimConfig optim;
    // task instances per family
    int train_instances = 200;
    int val_instances = 25;
    // reward verification
    std::string reward_mode = "loopback"; // "loopback" | "tcp"
    std::string reward_host = "127.0.0.1";
    int reward_port = 7733;
    int reward_workers = 4;
    int reward_timeout_ms = 5000;
    // evaluation cadence + sampling
    int eval_every = 20;
    int eval_k = 4;
    double eval_temp = 0.6;
    double eval_top_p = 0.95;
    int eval_max_len = 48;
    int checkpoint_every = 50;
    std::vector<StageConfig> stages;
};

// Throws std::runtime_error (with the offending key) on any violated
// invariant: group sizes, minibatch divisibility, top-p range, task weights
// summing to 1, instance counts exceeding an enumerable family, windows
// shrinking across stages, and friends.
void validate_trainer_config(const TrainerConfig& cfg);

// Reads the key-value format documented in the README: global keys, then one
// [stage NAME] section per stage. Unknown keys are errors.
TrainerConfig trainer_config_from_text(const std::string& text);
TrainerConfig trainer_config_from_file(const std::string& path);

// The shipped desk-scale recipe (also available as configs/desk_default.conf).
TrainerConfig default_trainer_config();

// ---- task suite ----

struct TaskSuite {
    std::map<std::string, std::vector<Prompt>> train; // family name -> prompts
    std::map<std::string, std::vector<Prompt>> val;
};

// Generates train/validation decks for every family any stage references.
TaskSuite build_task_suite(const TrainerConfig& cfg);

// ---- initialization ----

// Random init at the first stage's window, plus (when cfg.format_primed) a
// short maximum-likelihood warmup on synthetic answer scaffolds with random
// digits: the model learns each family's output format, not any answers.
// ref starts equal to theta; optimizer moments start fresh.
TrainerCheckpoint init_trainer(const TrainerConfig& cfg, const TaskSuite& suite);

// ref <- theta, optimizer moments and step reset to zero.
void hard_reset(TrainerCheckpoint& state);

// ---- evaluation ----

struct EvalResult {
    std::map<std::string, double> family_scores; // mean reward over k samples
    double mean = 0.0;                           // unweighted mean over families
};

// Samples k responses per validation prompt at (temperature, top_p), scores
// them in process, and averages raw rewards per family. Draws from streams
// (seed, "eval", prompt, sample), so results are reproducible and
// checkpoint-comparable.
EvalResult evaluate(const PolicyParams& params, const TaskSuite& suite, int k,
                    double temperature, double top_p, int max_response_len,
                    uint64_t seed);

// ---- update kernel ----

// Objective value and its exact parameter gradient over one minibatch:
// forward pass caching activations, clipped-surrogate/KL/entropy objective,
// backward from the caches. Serial and OpenMP paths produce bit-identical
// results (per-rollout gradient slots reduced in a fixed order). Throws
// NonFiniteGradientError if the forward pass has already blown up.
std::pair<LossBreakdown, GradientSet> minibatch_gradient(
    const PolicyParams& theta, const Minibatch& minibatch,
    const ObjectiveConfig& objective, double temperature, int threads);

// minibatch_gradient followed by one AdamW step on theta.
LossBreakdown update_minibatch(PolicyParams& theta, OptimState& opt,
                               const Minibatch& minibatch,
                               const ObjectiveConfig& objective,
                               const OptimConfig& optim, double temperature,
                               int threads);

// ---- the run itself ----

struct StepStats {
    MetricsRecord metrics;
    // phase timings, for the overlap diagnostics
    double ms_sample = 0.0;
    double ms_ref_logp = 0.0;     // reference log-probs, overlapped with verify
    double ms_collect_wait = 0.0; // time blocked in collect()
    double ms_update = 0.0;
    double ms_total = 0.0;
    // absolute marks for the primary reward batch, so a test can check that
    // the reference pass really ran while verification was in flight
    std::chrono::steady_clock::time_point t_submit{};
    std::chrono::steady_clock::time_point t_ref_done{};
    std::chrono::steady_clock::time_point t_collect_done{};
};

class TrainingRun {
public:
    // Validates the config, generates the task suite and connects the reward
    // client (in-process verifier pool for "loopback", a live server for
    // "tcp"). The verifier override only applies to loopback mode.
    explicit TrainingRun(TrainerConfig cfg, VerifierFn verifier = default_verifier());

    const TrainerConfig& config() const { return cfg_; }
    const TaskSuite& suite() const { return suite_; }

    TrainerCheckpoint fresh_state() const;

    // Runs from `state` until the recipe completes (or until the global step
    // counter reaches stop_after_global_step, when nonzero). Appends one
    // metrics line per step to <out_dir>/metrics.ndjson and rewrites
    // <out_dir>/ckpt_latest.bin every checkpoint_every steps and at the end.
    // On NonFiniteGradientError: writes <out_dir>/ckpt_halt.bin, rethrows.
    TrainerCheckpoint run(TrainerCheckpoint state,
                          uint64_t stop_after_global_step = 0);

    // One full training step at `global_step` (1-based, unique across
    // stages); exposed for tests. Updates state in place.
    StepStats run_step(TrainerCheckpoint& state, const StageConfig& stage,
                       uint64_t global_step);

    EvalResult evaluate_now(const PolicyParams& params) const;

private:
    std::vector<Prompt> select_prompts(const StageConfig& stage,
                                       uint64_t global_step) const;
    // Decode + submit the batch, compute reference log-probs while the
    // verifiers work, collect, attach rewards, shape.
    void reward_groups(std::vector<Group>& groups, const PolicyParams& ref,
                       const StageConfig& stage, uint64_t global_step,
                       int slot_base, StepStats* stats);

    TrainerConfig cfg_;
    TaskSuite suite_;
    std::unique_ptr<RewardClient> client_;
    std::map<std::string, double> carried_val_; // last eval, carried forward
};

// ---- ablation harness ----

struct AblationVariant {
    std::string name;
    TrainerConfig cfg;
};

// Kinds: "temperature" (0.6 vs 1.2), "clip" (symmetric 0.2/0.2 vs decoupled
// 0.2/0.4), "entropy" (none / KL / clip-higher / adaptive-bonus), "reset"
// (periodic hard resets vs none). Every variant shares the base seed.
std::vector<AblationVariant> make_ablation_variants(const std::string& kind,
                                                    const TrainerConfig& base);

// Runs every variant to completion under <base.out_dir>/<kind>_<variant>/ and
// writes a combined comparison to <base.out_dir>/ablate_<kind>_summary.ndjson.
void run_ablation(const std::string& kind, const TrainerConfig& base,
                  VerifierFn verifier = default_verifier());

} // namespace tinygrpo
