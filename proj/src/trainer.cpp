#include "tinygrpo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tinygrpo {

using ordered_json = nlohmann::ordered_json;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now() - t0).count();
}

} // namespace

// ---- reward shaping ----

double shape_reward(double reward_raw, bool terminated, const ShapingConfig& cfg) {
    double shaped = reward_raw - (terminated ? 0.0 : cfg.delta);
    return std::max(shaped, -1.0);
}

void shape_rewards(Group& group, const ShapingConfig& cfg) {
    for (Rollout& r : group.rollouts)
        r.reward_shaped = shape_reward(r.reward_raw, r.terminated, cfg);
}

// ---- adaptive entropy-bonus controller ----

bool entropy_controller_update(bool enabled, double mean_entropy,
                               const EntropyControllerConfig& cfg) {
    if (mean_entropy < cfg.target - cfg.band) return true;
    if (mean_entropy > cfg.target + cfg.band) return false;
    return enabled;
}

// ---- configuration ----

namespace {

std::vector<std::string> families_used(const TrainerConfig& cfg) {
    std::vector<std::string> out;
    for (const StageConfig& s : cfg.stages)
        for (const auto& [name, w] : s.task_weights)
            if (std::find(out.begin(), out.end(), name) == out.end())
                out.push_back(name);
    std::sort(out.begin(), out.end());
    return out;
}

[[noreturn]] void cfg_fail(const std::string& where, const std::string& what) {
    throw std::runtime_error("config: " + where + ": " + what);
}

} // namespace

void validate_trainer_config(const TrainerConfig& cfg) {
    if (cfg.stages.empty()) cfg_fail("stages", "at least one [stage NAME] required");
    if (cfg.embed_dim <= 0 || cfg.hidden_dim <= 0)
        cfg_fail("model", "embed_dim and hidden_dim must be positive");
    if (cfg.threads < 1) cfg_fail("threads", "must be >= 1");
    if (cfg.warmup_steps < 0 || cfg.warmup_batch < 1 || cfg.warmup_lr <= 0)
        cfg_fail("warmup", "need warmup_steps >= 0, warmup_batch >= 1, warmup_lr > 0");
    if (cfg.optim.beta1 < 0 || cfg.optim.beta1 >= 1 || cfg.optim.beta2 < 0 ||
        cfg.optim.beta2 >= 1 || cfg.optim.eps <= 0 || cfg.optim.weight_decay < 0)
        cfg_fail("optimizer", "betas in [0,1), eps > 0, weight_decay >= 0");
    if (cfg.train_instances < 1 || cfg.val_instances < 1)
        cfg_fail("tasks", "train_instances and val_instances must be >= 1");
    if (cfg.reward_mode != "loopback" && cfg.reward_mode != "tcp")
        cfg_fail("reward_mode", "must be 'loopback' or 'tcp'");
    if (cfg.reward_workers < 1 || cfg.reward_timeout_ms < 1)
        cfg_fail("reward service", "need workers >= 1 and timeout_ms >= 1");
    if (cfg.eval_every < 1 || cfg.eval_k < 1 || cfg.eval_temp <= 0 ||
        cfg.eval_top_p <= 0 || cfg.eval_top_p > 1 || cfg.eval_max_len < 1)
        cfg_fail("eval", "need eval_every,k >= 1, temp > 0, 0 < top_p <= 1, max_len >= 1");
    if (cfg.checkpoint_every < 1) cfg_fail("checkpoint_every", "must be >= 1");

    int prev_window = 0;
    for (const StageConfig& s : cfg.stages) {
        const std::string where = "[stage " + s.name + "]";
        if (s.steps < 0) cfg_fail(where, "steps must be >= 0");
        if (s.batch_prompts < 1) cfg_fail(where, "batch_prompts must be >= 1");
        if (s.group_size < 2) cfg_fail(where, "group_size must be >= 2");
        const int batch_rollouts = s.batch_prompts * s.group_size;
        if (s.minibatch_rollouts < 1 || batch_rollouts % s.minibatch_rollouts != 0)
            cfg_fail(where, "minibatch_rollouts must divide batch_prompts * group_size");
        if (s.sampling.temperature <= 0) cfg_fail(where, "temperature must be > 0");
        if (s.sampling.top_p <= 0 || s.sampling.top_p > 1)
            cfg_fail(where, "top_p must be in (0, 1]");
        if (s.sampling.max_response_len < 1)
            cfg_fail(where, "max_response_len must be >= 1");
        if (s.window < 1) cfg_fail(where, "window must be >= 1");
        if (prev_window > 0 && s.window < prev_window)
            cfg_fail(where, "window may only grow across stages");
        prev_window = s.window;
        if (s.clip.eps_low <= 0 || s.clip.eps_low >= 1 || s.clip.eps_high <= 0)
            cfg_fail(where, "need 0 < eps_low < 1 and eps_high > 0");
        if (s.kl_beta < 0) cfg_fail(where, "kl_beta must be >= 0");
        if (s.entropy.band < 0 || s.entropy.coef < 0)
            cfg_fail(where, "entropy band and coef must be >= 0");
        if (s.fixed_entropy_coef < 0) cfg_fail(where, "entropy_coef must be >= 0");
        if (s.shaping.delta < 0) cfg_fail(where, "shaping_delta must be >= 0");
        if (s.lr <= 0) cfg_fail(where, "lr must be > 0");
        if (s.task_weights.empty()) cfg_fail(where, "tasks must name at least one family");
        double wsum = 0;
        for (const auto& [name, w] : s.task_weights) {
            if (!family_from_name(name)) cfg_fail(where, "unknown task family '" + name + "'");
            if (w <= 0) cfg_fail(where, "task weight for '" + name + "' must be > 0");
            wsum += w;
        }
        if (std::abs(wsum - 1.0) > 1e-6)
            cfg_fail(where, "task weights must sum to 1 (got " + std::to_string(wsum) + ")");
    }

    for (const std::string& name : families_used(cfg)) {
        TaskSpec spec;
        spec.family = *family_from_name(name);
        if (auto cap = enumerable_pool_size(spec)) {
            if (cfg.train_instances + cfg.val_instances > *cap)
                cfg_fail("tasks", "family '" + name + "' enumerates only " +
                                      std::to_string(*cap) +
                                      " instances; lower train/val counts");
        }
    }
}

namespace {

std::map<std::string, double> parse_task_weights(const std::string& text,
                                                 const std::string& where) {
    std::map<std::string, double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        size_t colon = item.find(':');
        if (colon == std::string::npos)
            cfg_fail(where, "tasks entries look like 'family:weight', got '" + item + "'");
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t");
            size_t b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string name = trim(item.substr(0, colon));
        std::string wtext = trim(item.substr(colon + 1));
        try {
            size_t used = 0;
            double w = std::stod(wtext, &used);
            if (used != wtext.size()) throw std::invalid_argument("trailing text");
            if (out.count(name)) cfg_fail(where, "family '" + name + "' listed twice");
            out[name] = w;
        } catch (const std::exception&) {
            cfg_fail(where, "bad task weight '" + wtext + "'");
        }
    }
    if (out.empty()) cfg_fail(where, "tasks must name at least one family");
    return out;
}

const std::vector<std::string> kGlobalKeys = {
    "seed",          "out_dir",        "threads",          "embed_dim",
    "hidden_dim",    "init",           "warmup_steps",     "warmup_batch",
    "warmup_lr",     "beta1",          "beta2",            "adam_eps",
    "weight_decay",  "train_instances", "val_instances",   "reward_mode",
    "reward_host",   "reward_port",    "reward_workers",   "reward_timeout_ms",
    "eval_every",    "eval_k",         "eval_temp",        "eval_top_p",
    "eval_max_len",  "checkpoint_every"};

const std::vector<std::string> kStageKeys = {
    "steps",          "batch_prompts", "group_size",   "minibatch_rollouts",
    "temperature",    "top_p",         "max_response_len", "window",
    "eps_low",        "eps_high",      "kl_beta",      "ratio_level",
    "adaptive_entropy", "entropy_target", "entropy_band", "entropy_coef",
    "shaping_delta",  "dynamic_filter", "lr",          "reset_ref",
    "tasks"};

} // namespace

TrainerConfig trainer_config_from_text(const std::string& text) {
    ConfigFile file = parse_config_text(text);
    file.globals.check_allowed_keys(kGlobalKeys);

    TrainerConfig cfg;
    cfg.seed = static_cast<uint64_t>(file.globals.get_int_or("seed", 1));
    cfg.out_dir = file.globals.get_string_or("out_dir", cfg.out_dir);
    cfg.threads = static_cast<int>(file.globals.get_int_or("threads", 1));
    cfg.embed_dim = static_cast<int>(file.globals.get_int_or("embed_dim", cfg.embed_dim));
    cfg.hidden_dim =
        static_cast<int>(file.globals.get_int_or("hidden_dim", cfg.hidden_dim));
    std::string init = file.globals.get_string_or("init", "format_primed");
    if (init == "format_primed") cfg.format_primed = true;
    else if (init == "random") cfg.format_primed = false;
    else cfg_fail("init", "must be 'format_primed' or 'random'");
    cfg.warmup_steps =
        static_cast<int>(file.globals.get_int_or("warmup_steps", cfg.warmup_steps));
    cfg.warmup_batch =
        static_cast<int>(file.globals.get_int_or("warmup_batch", cfg.warmup_batch));
    cfg.warmup_lr = file.globals.get_double_or("warmup_lr", cfg.warmup_lr);
    cfg.optim.beta1 = file.globals.get_double_or("beta1", cfg.optim.beta1);
    cfg.optim.beta2 = file.globals.get_double_or("beta2", cfg.optim.beta2);
    cfg.optim.eps = file.globals.get_double_or("adam_eps", cfg.optim.eps);
    cfg.optim.weight_decay =
        file.globals.get_double_or("weight_decay", cfg.optim.weight_decay);
    cfg.train_instances = static_cast<int>(
        file.globals.get_int_or("train_instances", cfg.train_instances));
    cfg.val_instances =
        static_cast<int>(file.globals.get_int_or("val_instances", cfg.val_instances));
    cfg.reward_mode = file.globals.get_string_or("reward_mode", cfg.reward_mode);
    cfg.reward_host = file.globals.get_string_or("reward_host", cfg.reward_host);
    cfg.reward_port =
        static_cast<int>(file.globals.get_int_or("reward_port", cfg.reward_port));
    cfg.reward_workers =
        static_cast<int>(file.globals.get_int_or("reward_workers", cfg.reward_workers));
    cfg.reward_timeout_ms = static_cast<int>(
        file.globals.get_int_or("reward_timeout_ms", cfg.reward_timeout_ms));
    cfg.eval_every =
        static_cast<int>(file.globals.get_int_or("eval_every", cfg.eval_every));
    cfg.eval_k = static_cast<int>(file.globals.get_int_or("eval_k", cfg.eval_k));
    cfg.eval_temp = file.globals.get_double_or("eval_temp", cfg.eval_temp);
    cfg.eval_top_p = file.globals.get_double_or("eval_top_p", cfg.eval_top_p);
    cfg.eval_max_len =
        static_cast<int>(file.globals.get_int_or("eval_max_len", cfg.eval_max_len));
    cfg.checkpoint_every = static_cast<int>(
        file.globals.get_int_or("checkpoint_every", cfg.checkpoint_every));

    for (const ConfigSection& sec : file.sections) {
        if (sec.name.rfind("stage ", 0) != 0)
            cfg_fail("[" + sec.name + "]", "sections must be named [stage NAME]");
        sec.check_allowed_keys(kStageKeys);
        StageConfig s;
        s.name = sec.name.substr(6);
        if (s.name.empty()) cfg_fail("[stage ]", "stage name must be non-empty");
        s.steps = static_cast<int>(sec.get_int_or("steps", s.steps));
        s.batch_prompts =
            static_cast<int>(sec.get_int_or("batch_prompts", s.batch_prompts));
        s.group_size = static_cast<int>(sec.get_int_or("group_size", s.group_size));
        s.minibatch_rollouts = static_cast<int>(
            sec.get_int_or("minibatch_rollouts", s.minibatch_rollouts));
        s.sampling.temperature =
            sec.get_double_or("temperature", s.sampling.temperature);
        s.sampling.top_p = sec.get_double_or("top_p", s.sampling.top_p);
        s.sampling.max_response_len = static_cast<int>(
            sec.get_int_or("max_response_len", s.sampling.max_response_len));
        s.window = static_cast<int>(sec.get_int_or("window", s.window));
        s.clip.eps_low = sec.get_double_or("eps_low", s.clip.eps_low);
        s.clip.eps_high = sec.get_double_or("eps_high", s.clip.eps_high);
        s.kl_beta = sec.get_double_or("kl_beta", s.kl_beta);
        std::string rl = sec.get_string_or("ratio_level", "token");
        if (rl == "token") s.ratio_level = RatioLevel::token;
        else if (rl == "sequence") s.ratio_level = RatioLevel::sequence;
        else cfg_fail("[stage " + s.name + "]", "ratio_level must be token|sequence");
        s.adaptive_entropy = sec.get_bool_or("adaptive_entropy", s.adaptive_entropy);
        s.entropy.target = sec.get_double_or("entropy_target", s.entropy.target);
        s.entropy.band = sec.get_double_or("entropy_band", s.entropy.band);
        if (s.adaptive_entropy)
            s.entropy.coef = sec.get_double_or("entropy_coef", s.entropy.coef);
        else
            s.fixed_entropy_coef =
                sec.get_double_or("entropy_coef", s.fixed_entropy_coef);
        s.shaping.delta = sec.get_double_or("shaping_delta", s.shaping.delta);
        s.dynamic_filter = sec.get_bool_or("dynamic_filter", s.dynamic_filter);
        s.lr = sec.get_double_or("lr", s.lr);
        s.reset_ref = sec.get_bool_or("reset_ref", s.reset_ref);
        s.task_weights =
            parse_task_weights(sec.get_string("tasks"), "[stage " + s.name + "]");
        cfg.stages.push_back(std::move(s));
    }

    validate_trainer_config(cfg);
    return cfg;
}

TrainerConfig trainer_config_from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::stringstream buffer;
    buffer << is.rdbuf();
    return trainer_config_from_text(buffer.str());
}

TrainerConfig default_trainer_config() {
    TrainerConfig cfg;
    cfg.out_dir = "runs/desk";
    cfg.train_instances = 200;
    cfg.val_instances = 25;
    cfg.eval_every = 50;
    cfg.eval_k = 16;
    cfg.optim.weight_decay = 1e-3;

    // Stage 1 carries the policy from format-primed noise to a competent
    // arith solver. Large groups keep per-prompt advantage estimates alive at
    // the ~1% cold-start hit rate; the batch filter stays OFF because a
    // zero-variance group here is usually a prompt the policy gets entirely
    // wrong, and dropping it would also drop the entropy and KL gradients
    // that let it recover. Settings confirmed by baseline runs on three
    // seeds before being frozen.
    StageConfig boot;
    boot.name = "bootstrap";
    boot.steps = 2000;
    boot.batch_prompts = 16;
    boot.group_size = 64;
    boot.minibatch_rollouts = 256;
    boot.sampling = SamplingConfig{1.2, 1.0, 24};
    boot.window = 16;
    boot.clip = ClipConfig{0.2, 0.4};
    boot.kl_beta = 1e-2;
    boot.adaptive_entropy = true;
    boot.entropy.coef = 1e-2;
    boot.shaping.delta = 0.0;
    boot.dynamic_filter = false;
    boot.lr = 3e-3;
    boot.task_weights = {{"arith", 1.0}};

    // Competent-policy regime: re-anchor the reference, drop to a fine-tune
    // learning rate, and turn the filter ON — degenerate groups are now
    // mostly mastered prompts, so filtering concentrates compute on the
    // frontier instead of starving the update.
    StageConfig anchor = boot;
    anchor.name = "anchor-reset";
    anchor.steps = 400;
    anchor.reset_ref = true;
    anchor.group_size = 32;
    anchor.minibatch_rollouts = 128;
    anchor.dynamic_filter = true;
    anchor.lr = 1e-3;

    StageConfig mixed = anchor;
    mixed.name = "mixed-shaped";
    mixed.steps = 600;
    mixed.reset_ref = false;
    mixed.shaping.delta = 0.2;
    mixed.task_weights = {{"arith", 0.4}, {"tagmath", 0.3}, {"format", 0.3}};

    StageConfig longctx = mixed;
    longctx.name = "long-context";
    longctx.steps = 600;
    longctx.reset_ref = true;
    longctx.window = 32;
    longctx.sampling.max_response_len = 48;
    longctx.task_weights = {{"arith", 0.25},
                            {"tagmath", 0.25},
                            {"format", 0.2},
                            {"countdown", 0.15},
                            {"stackcode", 0.15}};

    cfg.stages = {boot, anchor, mixed, longctx};
    return cfg;
}

// ---- task suite ----

TaskSuite build_task_suite(const TrainerConfig& cfg) {
    TaskSuite suite;
    for (const std::string& name : families_used(cfg)) {
        TaskSpec spec;
        spec.family = *family_from_name(name);
        suite.train[name] = generate(spec, cfg.seed, cfg.train_instances, Split::train);
        suite.val[name] =
            generate(spec, cfg.seed, cfg.val_instances, Split::validation);
    }
    return suite;
}

// ---- initialization ----

namespace {

// An answer scaffold in the family's output format with random digits: the
// warmup teaches where answers go, never what they are.
TokenSequence scaffold_response(Family family, RngStream& rng) {
    using DT = DefaultTokens;
    auto digit = [&] { return static_cast<TokenId>(rng.uniform_below(10)); };
    TokenSequence out;
    switch (family) {
    case Family::arith: {
        out.push_back(DT::boxed_open);
        out.push_back(digit());
        out.push_back(digit());
        out.push_back(DT::rbrace);
        break;
    }
    case Family::tagmath: {
        out.push_back(DT::answer_open);
        for (TokenId d : digit_tokens(static_cast<long long>(rng.uniform_below(30))))
            out.push_back(d);
        out.push_back(DT::answer_close);
        break;
    }
    case Family::countdown:
        out = {digit(), DT::plus, digit()};
        break;
    case Family::stackcode:
        out = {DT::fence, digit(), digit(), DT::plus, DT::fence};
        break;
    case Family::format:
        out = {digit()};
        break;
    }
    out.push_back(DT::eos);
    return out;
}

} // namespace

TrainerCheckpoint init_trainer(const TrainerConfig& cfg, const TaskSuite& suite) {
    PolicyConfig pcfg;
    pcfg.vocab_size = default_vocab().size();
    pcfg.embed_dim = cfg.embed_dim;
    pcfg.window = cfg.stages.front().window;
    pcfg.hidden_dim = cfg.hidden_dim;
    pcfg.eos_id = default_vocab().eos_id();

    TrainerCheckpoint state;
    state.master_seed = cfg.seed;
    state.theta = init_params(pcfg, cfg.seed);
    state.entropy_enabled = false; // fresh policies start entropy-rich

    if (cfg.format_primed && cfg.warmup_steps > 0) {
        std::vector<const std::vector<Prompt>*> decks;
        std::vector<Family> deck_family;
        for (const auto& [name, prompts] : suite.train) {
            decks.push_back(&prompts);
            deck_family.push_back(*family_from_name(name));
        }
        if (decks.empty())
            throw std::runtime_error("init_trainer: task suite is empty");
        OptimState wopt = init_optim_state(pcfg);
        OptimConfig wcfg = cfg.optim;
        wcfg.learning_rate = cfg.warmup_lr;
        for (int step = 1; step <= cfg.warmup_steps; ++step) {
            std::vector<std::pair<const Prompt*, TokenSequence>> batch;
            size_t total_tokens = 0;
            for (int i = 0; i < cfg.warmup_batch; ++i) {
                RngStream rng(stream_id(cfg.seed, "warmup",
                                        static_cast<uint64_t>(step),
                                        static_cast<uint64_t>(i)));
                size_t f = rng.uniform_below(decks.size());
                const std::vector<Prompt>& deck = *decks[f];
                const Prompt& p = deck[rng.uniform_below(deck.size())];
                TokenSequence resp = scaffold_response(deck_family[f], rng);
                total_tokens += resp.size();
                batch.emplace_back(&p, std::move(resp));
            }
            GradientSet grads = zero_gradients(pcfg);
            const double inv_n = 1.0 / static_cast<double>(total_tokens);
            for (const auto& [p, resp] : batch) {
                std::vector<double> d_logp(resp.size(), inv_n);
                std::vector<double> d_entropy(resp.size(), 0.0);
                GradientSet g = backward(state.theta, p->tokens, resp, 1.0,
                                         d_logp, d_entropy);
                axpy_tensors(grads, g, 1.0);
            }
            adamw_step_inplace(state.theta, grads, wopt, wcfg);
        }
    }

    state.ref = state.theta;
    state.opt = init_optim_state(pcfg);
    return state;
}

void hard_reset(TrainerCheckpoint& state) {
    state.ref = state.theta;
    reset_optim_state(state.opt);
}

// ---- evaluation ----

EvalResult evaluate(const PolicyParams& params, const TaskSuite& suite, int k,
                    double temperature, double top_p, int max_response_len,
                    uint64_t seed) {
    if (k < 1) throw std::invalid_argument("evaluate: k must be >= 1");
    const Vocabulary& vocab = default_vocab();
    SamplingConfig sc{temperature, top_p, max_response_len};
    PolicyWorkspace ws;
    EvalResult res;
    for (const auto& [name, deck] : suite.val) {
        if (deck.empty()) continue;
        Family family = *family_from_name(name);
        double family_sum = 0.0;
        for (const Prompt& p : deck) {
            double prompt_sum = 0.0;
            for (int j = 0; j < k; ++j) {
                RngStream rng(stream_id(seed, "eval", fnv1a64(p.prompt_id),
                                        static_cast<uint64_t>(j)));
                Rollout r = sample_response(params, p.tokens, sc, rng, ws);
                VerifierResult v =
                    verify(family, p.payload, vocab.decode(r.response));
                prompt_sum += v.reward;
            }
            family_sum += prompt_sum / k;
        }
        res.family_scores[name] = family_sum / static_cast<double>(deck.size());
    }
    if (!res.family_scores.empty()) {
        double total = 0.0;
        for (const auto& [name, score] : res.family_scores) total += score;
        res.mean = total / static_cast<double>(res.family_scores.size());
    }
    return res;
}

// ---- update kernel ----

namespace {

struct TokenCache {
    std::vector<TokenId> window;
    std::vector<double> act;  // tanh activations
    std::vector<double> logp; // full tempered log-probs
};

} // namespace

std::pair<LossBreakdown, GradientSet> minibatch_gradient(
    const PolicyParams& theta, const Minibatch& minibatch,
    const ObjectiveConfig& objective, double temperature, int threads) {
    const size_t m = minibatch.size();
    if (m == 0) throw std::invalid_argument("minibatch_gradient: empty minibatch");

    std::vector<RolloutTerms> terms(m);
    std::vector<std::vector<TokenCache>> caches(m);

    auto forward_item = [&](size_t i, PolicyWorkspace& ws) {
        const MinibatchItem& item = minibatch[i];
        const Group& g = *item.group;
        const Rollout& r = g.rollouts[item.rollout_index];
        const size_t len = r.response.size();
        if (r.logp_old.size() != len || r.logp_ref.size() != len)
            throw std::invalid_argument(
                "minibatch_gradient: rollout lacks logp_old/logp_ref");
        terms[i].advantage = item.advantage;
        terms[i].tokens.resize(len);
        caches[i].resize(len);
        for (size_t t = 0; t < len; ++t) {
            build_context(theta.cfg, g.prompt.tokens, r.response, t, ws);
            forward_window(theta, ws);
            log_softmax_tempered(ws.z, temperature, ws.logp);
            double entropy = 0.0;
            for (int j = 0; j < theta.cfg.vocab_size; ++j)
                entropy -= std::exp(ws.logp[j]) * ws.logp[j];
            TokenTerms& tt = terms[i].tokens[t];
            tt.logp_theta = ws.logp[r.response[t]];
            tt.logp_old = r.logp_old[t];
            tt.logp_ref = r.logp_ref[t];
            tt.entropy = entropy;
            caches[i][t] = TokenCache{ws.window, ws.a, ws.logp};
        }
    };

#ifdef _OPENMP
    if (threads > 1) {
#pragma omp parallel num_threads(threads)
        {
            PolicyWorkspace ws;
#pragma omp for schedule(dynamic)
            for (long i = 0; i < static_cast<long>(m); ++i)
                forward_item(static_cast<size_t>(i), ws);
        }
    } else
#endif
    {
        PolicyWorkspace ws;
        for (size_t i = 0; i < m; ++i) forward_item(i, ws);
    }

    for (const RolloutTerms& rt : terms)
        for (const TokenTerms& tt : rt.tokens)
            if (!std::isfinite(tt.logp_theta) || !std::isfinite(tt.entropy))
                throw NonFiniteGradientError(
                    "non-finite forward pass entering the update");

    ObjectiveResult obj = batch_objective(terms, objective);

    // Exact gradient via per-rollout slots reduced in index order, so the
    // summation order (and therefore every bit) is thread-count-invariant.
    std::vector<GradientSet> slots(m, zero_gradients(theta.cfg));
    auto backward_item = [&](size_t i) {
        const MinibatchItem& item = minibatch[i];
        const Rollout& r = item.group->rollouts[item.rollout_index];
        for (size_t t = 0; t < r.response.size(); ++t)
            backward_from_activations(theta, caches[i][t].window, caches[i][t].act,
                                      caches[i][t].logp, temperature,
                                      r.response[t], obj.grads[i][t].d_logp,
                                      obj.grads[i][t].d_entropy, slots[i]);
    };

#ifdef _OPENMP
    if (threads > 1) {
#pragma omp parallel for schedule(dynamic) num_threads(threads)
        for (long i = 0; i < static_cast<long>(m); ++i)
            backward_item(static_cast<size_t>(i));
    } else
#endif
    {
        for (size_t i = 0; i < m; ++i) backward_item(i);
    }

    GradientSet total = zero_gradients(theta.cfg);
    for (size_t i = 0; i < m; ++i) axpy_tensors(total, slots[i], 1.0);
    return {obj.loss, std::move(total)};
}

LossBreakdown update_minibatch(PolicyParams& theta, OptimState& opt,
                               const Minibatch& minibatch,
                               const ObjectiveConfig& objective,
                               const OptimConfig& optim, double temperature,
                               int threads) {
    auto [loss, grad] =
        minibatch_gradient(theta, minibatch, objective, temperature, threads);
    adamw_step_inplace(theta, grad, opt, optim);
    return loss;
}

// ---- the run itself ----

TrainingRun::TrainingRun(TrainerConfig cfg, VerifierFn verifier)
    : cfg_(std::move(cfg)) {
    validate_trainer_config(cfg_);
    suite_ = build_task_suite(cfg_);
    if (cfg_.reward_mode == "loopback") {
        client_ = std::make_unique<LoopbackRewardClient>(
            cfg_.reward_workers, cfg_.reward_timeout_ms, std::move(verifier));
    } else {
        client_ = std::make_unique<TcpRewardClient>(cfg_.reward_host,
                                                    cfg_.reward_port,
                                                    2 * cfg_.reward_timeout_ms);
    }
}

TrainerCheckpoint TrainingRun::fresh_state() const {
    return init_trainer(cfg_, suite_);
}

EvalResult TrainingRun::evaluate_now(const PolicyParams& params) const {
    return evaluate(params, suite_, cfg_.eval_k, cfg_.eval_temp, cfg_.eval_top_p,
                    cfg_.eval_max_len, cfg_.seed);
}

std::vector<Prompt> TrainingRun::select_prompts(const StageConfig& stage,
                                                uint64_t global_step) const {
    const int total = 3 * stage.batch_prompts; // 2x spare for refills
    RngStream rng(stream_id(cfg_.seed, "prompt.select", global_step));
    std::vector<std::pair<const std::vector<Prompt>*, double>> fams;
    for (const auto& [name, w] : stage.task_weights)
        fams.emplace_back(&suite_.train.at(name), w);
    std::vector<Prompt> picks;
    picks.reserve(total);
    std::unordered_set<std::string> used;
    int rejects = 0;
    while (static_cast<int>(picks.size()) < total) {
        double u = rng.uniform01();
        const std::vector<Prompt>* deck = fams.back().first;
        double acc = 0.0;
        for (const auto& [d, w] : fams) {
            acc += w;
            if (u < acc) {
                deck = d;
                break;
            }
        }
        const Prompt& p = (*deck)[rng.uniform_below(deck->size())];
        if (used.count(p.prompt_id)) {
            // Tiny pools can exhaust distinct prompts; accept a repeat then.
            if (++rejects < 200) continue;
        }
        used.insert(p.prompt_id);
        rejects = 0;
        picks.push_back(p);
    }
    return picks;
}

void TrainingRun::reward_groups(std::vector<Group>& groups,
                                const PolicyParams& ref, const StageConfig& stage,
                                uint64_t global_step, int slot_base,
                                StepStats* stats) {
    const Vocabulary& vocab = default_vocab();
    std::vector<RewardRequest> reqs;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const Group& g = groups[gi];
        for (size_t j = 0; j < g.rollouts.size(); ++j) {
            RewardRequest req;
            req.request_id = "s" + std::to_string(global_step) + "-g" +
                             std::to_string(slot_base + static_cast<int>(gi)) +
                             "-" + std::to_string(j);
            req.task_id = g.prompt.task_id;
            req.prompt_payload = g.prompt.payload;
            req.response_text = vocab.decode(g.rollouts[j].response);
            reqs.push_back(std::move(req));
        }
    }

    auto t0 = std::chrono::steady_clock::now();
    RewardClient::BatchHandle handle = client_->submit_async(reqs);

    // Overlapped with verification: per-token log-probs under the frozen
    // reference policy, needed later by the KL penalty.
    const double T = stage.sampling.temperature;
    std::vector<std::pair<const TokenSequence*, Rollout*>> flat;
    for (Group& g : groups)
        for (Rollout& r : g.rollouts) flat.emplace_back(&g.prompt.tokens, &r);
#ifdef _OPENMP
    if (cfg_.threads > 1) {
#pragma omp parallel for schedule(dynamic) num_threads(cfg_.threads)
        for (long i = 0; i < static_cast<long>(flat.size()); ++i)
            flat[i].second->logp_ref =
                sequence_log_prob(ref, *flat[i].first, flat[i].second->response, T)
                    .per_token;
    } else
#endif
    {
        for (auto& [prompt, r] : flat)
            r->logp_ref = sequence_log_prob(ref, *prompt, r->response, T).per_token;
    }
    auto t1 = std::chrono::steady_clock::now();

    auto replies = client_->collect(handle);
    auto t2 = std::chrono::steady_clock::now();

    size_t idx = 0;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        Group& g = groups[gi];
        for (size_t j = 0; j < g.rollouts.size(); ++j, ++idx) {
            const RewardReply& reply = replies.at(reqs[idx].request_id);
            Rollout& r = g.rollouts[j];
            r.parsed_ok = reply.parsed_ok;
            r.error_code = reply.error_code;
            r.reward_raw = reply.error_code == "none" ? reply.reward : 0.0;
        }
        shape_rewards(g, stage.shaping);
    }

    if (stats) {
        using namespace std::chrono;
        stats->ms_ref_logp += duration<double, std::milli>(t1 - t0).count();
        stats->ms_collect_wait += duration<double, std::milli>(t2 - t1).count();
        if (stats->t_submit == std::chrono::steady_clock::time_point{}) {
            stats->t_submit = t0;
            stats->t_ref_done = t1;
            stats->t_collect_done = t2;
        }
    }
}

StepStats TrainingRun::run_step(TrainerCheckpoint& state, const StageConfig& stage,
                                uint64_t global_step) {
    auto step_start = std::chrono::steady_clock::now();
    StepStats st;
    StreamCtx ctx{cfg_.seed, global_step};
    RolloutPlan plan{stage.group_size, stage.sampling};

    std::vector<Prompt> picks = select_prompts(stage, global_step);
    const int B = stage.batch_prompts;

    auto t0 = std::chrono::steady_clock::now();
    std::vector<Prompt> primary(picks.begin(), picks.begin() + B);
    std::vector<Group> groups =
        build_groups(state.theta, primary, plan, ctx, cfg_.threads);
    st.ms_sample = ms_since(t0);

    reward_groups(groups, state.ref, stage, global_step, 0, &st);

    // Sampling-side statistics over the unfiltered batch.
    double reward_sum = 0.0, len_sum = 0.0;
    const int batch_rollouts = B * stage.group_size;
    for (const Group& g : groups)
        for (const Rollout& r : g.rollouts) {
            reward_sum += r.reward_raw;
            len_sum += static_cast<double>(r.response.size());
        }

    int refill_drawn = 0;
    if (stage.dynamic_filter) {
        int next_slot = B;
        const int total_slots = static_cast<int>(picks.size());
        GroupSource refill = [&]() -> std::optional<Group> {
            if (next_slot >= total_slots) return std::nullopt;
            const int slot = next_slot++;
            std::vector<Prompt> one{picks[slot]};
            std::vector<Group> g =
                build_groups(state.theta, one, plan, ctx, cfg_.threads);
            reward_groups(g, state.ref, stage, global_step, slot, &st);
            return std::move(g.front());
        };
        FilterResult fr = dynamic_filter(std::move(groups), B, refill);
        groups = std::move(fr.retained);
        refill_drawn = fr.refill_drawn;
    }

    auto t_upd = std::chrono::steady_clock::now();
    double entropy_wsum = 0.0, entropy_sum = 0.0, kl_sum = 0.0, clip_sum = 0.0;
    size_t effective = 0;
    if (!groups.empty()) {
        std::vector<Minibatch> minibatches =
            assemble_minibatches(groups, stage.minibatch_rollouts, 1e-6, ctx);
        ObjectiveConfig objective;
        objective.clip = stage.clip;
        objective.kl.beta = stage.kl_beta;
        objective.ratio_level = stage.ratio_level;
        objective.entropy_coef =
            stage.adaptive_entropy
                ? (state.entropy_enabled ? stage.entropy.coef : 0.0)
                : stage.fixed_entropy_coef;
        OptimConfig optim = cfg_.optim;
        optim.learning_rate = stage.lr;
        for (const Minibatch& mb : minibatches) {
            LossBreakdown bd = update_minibatch(state.theta, state.opt, mb,
                                                objective, optim,
                                                stage.sampling.temperature,
                                                cfg_.threads);
            const double w = static_cast<double>(bd.token_count);
            entropy_sum += bd.entropy_mean * w;
            kl_sum += bd.kl_term * w;
            clip_sum += bd.clip_fraction * w;
            entropy_wsum += w;
        }
        for (const Group& g : groups) effective += g.rollouts.size();
    }
    st.ms_update = ms_since(t_upd);

    const double mean_entropy = entropy_wsum > 0 ? entropy_sum / entropy_wsum : 0.0;
    if (stage.adaptive_entropy && entropy_wsum > 0)
        state.entropy_enabled =
            entropy_controller_update(state.entropy_enabled, mean_entropy,
                                      stage.entropy);

    if (global_step % static_cast<uint64_t>(cfg_.eval_every) == 0)
        carried_val_ = evaluate_now(state.theta).family_scores;

    MetricsRecord& m = st.metrics;
    m.stage = stage.name;
    m.step = global_step;
    m.mean_reward = reward_sum / batch_rollouts;
    m.mean_response_len = len_sum / batch_rollouts;
    m.mean_entropy = mean_entropy;
    m.mean_kl = entropy_wsum > 0 ? kl_sum / entropy_wsum : 0.0;
    m.clip_fraction = entropy_wsum > 0 ? clip_sum / entropy_wsum : 0.0;
    m.effective_batch = effective;
    m.refill_drawn = static_cast<uint64_t>(refill_drawn);
    m.val_scores = carried_val_;
    m.timestamp_ms = now_ms();
    st.ms_total = ms_since(step_start);
    return st;
}

TrainerCheckpoint TrainingRun::run(TrainerCheckpoint state,
                                   uint64_t stop_after_global_step) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir);
    const std::string metrics_path = cfg_.out_dir + "/metrics.ndjson";
    const std::string latest_path = cfg_.out_dir + "/ckpt_latest.bin";
    const bool fresh = state.stage_index == 0 && state.step_in_stage == 0;
    if (fresh) std::ofstream(metrics_path, std::ios::trunc); // start clean

    auto stage_base = [&](uint32_t idx) {
        uint64_t base = 0;
        for (uint32_t i = 0; i < idx; ++i)
            base += static_cast<uint64_t>(cfg_.stages[i].steps);
        return base;
    };

    try {
        while (state.stage_index < cfg_.stages.size()) {
            const StageConfig& stage = cfg_.stages[state.stage_index];
            if (state.step_in_stage == 0) {
                if (stage.window != state.theta.cfg.window) {
                    if (stage.window < state.theta.cfg.window)
                        throw std::runtime_error(
                            "stage window smaller than checkpointed window");
                    const PolicyConfig old_cfg = state.theta.cfg;
                    state.opt.m =
                        widen_context_tensors(old_cfg, state.opt.m, stage.window);
                    state.opt.v =
                        widen_context_tensors(old_cfg, state.opt.v, stage.window);
                    state.theta = widen_context(state.theta, stage.window);
                    state.ref = widen_context(state.ref, stage.window);
                }
                if (stage.reset_ref) hard_reset(state);
            }
            const uint64_t base = stage_base(state.stage_index);
            while (state.step_in_stage < static_cast<uint64_t>(stage.steps)) {
                const uint64_t global = base + state.step_in_stage + 1;
                StepStats st = run_step(state, stage, global);
                state.step_in_stage += 1;
                append_metrics(metrics_path, st.metrics);
                if (global % static_cast<uint64_t>(cfg_.checkpoint_every) == 0)
                    save_checkpoint_file(latest_path, state);
                if (stop_after_global_step && global >= stop_after_global_step) {
                    save_checkpoint_file(latest_path, state);
                    return state;
                }
            }
            state.stage_index += 1;
            state.step_in_stage = 0;
        }
    } catch (const NonFiniteGradientError&) {
        save_checkpoint_file(cfg_.out_dir + "/ckpt_halt.bin", state);
        throw;
    }
    save_checkpoint_file(latest_path, state);
    return state;
}

// ---- ablation harness ----

std::vector<AblationVariant> make_ablation_variants(const std::string& kind,
                                                    const TrainerConfig& base) {
    auto variant = [&](const std::string& name) {
        AblationVariant v{name, base};
        v.cfg.out_dir = base.out_dir + "/" + kind + "_" + name;
        return v;
    };
    std::vector<AblationVariant> out;
    if (kind == "temperature") {
        AblationVariant low = variant("t06"), high = variant("t12");
        for (StageConfig& s : low.cfg.stages) s.sampling.temperature = 0.6;
        for (StageConfig& s : high.cfg.stages) s.sampling.temperature = 1.2;
        out = {low, high};
    } else if (kind == "clip") {
        AblationVariant sym = variant("sym"), dec = variant("decoupled");
        for (StageConfig& s : sym.cfg.stages) s.clip = ClipConfig{0.2, 0.2};
        for (StageConfig& s : dec.cfg.stages) s.clip = ClipConfig{0.2, 0.4};
        out = {sym, dec};
    } else if (kind == "entropy") {
        AblationVariant none = variant("none"), kl = variant("kl"),
                        clip_higher = variant("cliphigher"),
                        adaptive = variant("adaptive");
        auto strip = [](TrainerConfig& c) {
            for (StageConfig& s : c.stages) {
                s.kl_beta = 0.0;
                s.clip = ClipConfig{0.2, 0.2};
                s.adaptive_entropy = false;
                s.fixed_entropy_coef = 0.0;
            }
        };
        strip(none.cfg);
        strip(kl.cfg);
        for (StageConfig& s : kl.cfg.stages) s.kl_beta = 1e-4;
        strip(clip_higher.cfg);
        for (StageConfig& s : clip_higher.cfg.stages) s.clip = ClipConfig{0.2, 0.4};
        strip(adaptive.cfg);
        for (StageConfig& s : adaptive.cfg.stages) s.adaptive_entropy = true;
        out = {none, kl, clip_higher, adaptive};
    } else if (kind == "reset") {
        AblationVariant with = variant("reset"), without = variant("noreset");
        for (size_t i = 0; i < with.cfg.stages.size(); ++i)
            with.cfg.stages[i].reset_ref = i > 0;
        for (StageConfig& s : without.cfg.stages) s.reset_ref = false;
        out = {with, without};
    } else {
        throw std::invalid_argument("unknown ablation kind: " + kind);
    }
    return out;
}

void run_ablation(const std::string& kind, const TrainerConfig& base,
                  VerifierFn verifier) {
    std::vector<AblationVariant> variants = make_ablation_variants(kind, base);
    std::filesystem::create_directories(base.out_dir);
    const std::string summary_path =
        base.out_dir + "/ablate_" + kind + "_summary.ndjson";
    std::ofstream summary(summary_path, std::ios::trunc);
    if (!summary)
        throw std::runtime_error("cannot open for writing: " + summary_path);

    for (const AblationVariant& var : variants) {
        TrainingRun run(var.cfg, verifier);
        run.run(run.fresh_state());
        const std::string metrics_path = var.cfg.out_dir + "/metrics.ndjson";
        std::vector<MetricsRecord> recs = read_metrics_file(metrics_path);

        const size_t tail = std::min<size_t>(recs.size(), 10);
        double tail_reward = 0.0, tail_entropy = 0.0;
        for (size_t i = recs.size() - tail; i < recs.size(); ++i) {
            tail_reward += recs[i].mean_reward;
            tail_entropy += recs[i].mean_entropy;
        }
        ordered_json j;
        j["kind"] = kind;
        j["variant"] = var.name;
        j["steps"] = recs.size();
        j["final_mean_reward"] = tail ? tail_reward / tail : 0.0;
        j["final_mean_entropy"] = tail ? tail_entropy / tail : 0.0;
        ordered_json val = ordered_json::object();
        if (!recs.empty())
            for (const auto& [family, score] : recs.back().val_scores)
                val[family] = score;
        j["final_val"] = std::move(val);
        j["metrics"] = metrics_path;
        summary << j.dump() << "\n";
    }
    summary.flush();
    if (!summary) throw std::runtime_error("write failed: " + summary_path);
}

} // namespace tinygrpo
