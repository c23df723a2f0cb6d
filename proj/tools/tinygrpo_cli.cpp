#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

#include <CLI11.hpp>

#include "tinygrpo/checkpoint.hpp"
#include "tinygrpo/trainer.hpp"

namespace {

using namespace tinygrpo;

// Accepts either a full training checkpoint or a bare policy snapshot.
PolicyParams load_any_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[8] = {};
    is.read(magic, 8);
    is.seekg(0);
    if (std::string(magic, 8) == "TGTRAIN1") return load_checkpoint(is).theta;
    return load_params(is);
}

int cmd_train(const std::string& config_path, const std::string& resume_path,
              const std::string& out_override) {
    TrainerConfig cfg = trainer_config_from_file(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    TrainingRun run(cfg);
    TrainerCheckpoint state;
    if (resume_path.empty()) {
        std::printf("initializing policy (%s)\n",
                    cfg.format_primed ? "format-primed warmup" : "random");
        state = run.fresh_state();
    } else {
        state = load_checkpoint_file(resume_path);
        std::printf("resuming from %s (stage %u, step %llu)\n",
                    resume_path.c_str(), state.stage_index,
                    static_cast<unsigned long long>(state.step_in_stage));
    }
    try {
        state = run.run(std::move(state));
    } catch (const NonFiniteGradientError& e) {
        std::fprintf(stderr,
                     "halted: %s\nfinal checkpoint: %s/ckpt_halt.bin\n", e.what(),
                     cfg.out_dir.c_str());
        return 3;
    }
    std::printf("done: %zu stages complete, checkpoint %s/ckpt_latest.bin, "
                "metrics %s/metrics.ndjson\n",
                cfg.stages.size(), cfg.out_dir.c_str(), cfg.out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, int k, double temp, double top_p,
             int max_len, int val_instances, uint64_t seed) {
    PolicyParams params = load_any_params(ckpt);
    TrainerConfig suite_cfg;
    suite_cfg.val_instances = val_instances;
    suite_cfg.seed = seed;
    StageConfig all;
    all.task_weights = {{"arith", 0.2},
                        {"tagmath", 0.2},
                        {"countdown", 0.2},
                        {"stackcode", 0.2},
                        {"format", 0.2}};
    suite_cfg.stages = {all};
    TaskSuite suite = build_task_suite(suite_cfg);
    EvalResult res = evaluate(params, suite, k, temp, top_p, max_len, seed);
    for (const auto& [family, score] : res.family_scores)
        std::printf("%-10s %.4f\n", family.c_str(), score);
    std::printf("%-10s %.4f\n", "mean", res.mean);
    return 0;
}

int cmd_ablate(const std::string& kind, const std::string& config_path) {
    TrainerConfig base = trainer_config_from_file(config_path);
    run_ablation(kind, base);
    std::printf("wrote %s/ablate_%s_summary.ndjson\n", base.out_dir.c_str(),
                kind.c_str());
    return 0;
}

int cmd_reset(const std::string& ckpt, const std::string& out) {
    TrainerCheckpoint state = load_checkpoint_file(ckpt);
    hard_reset(state);
    const std::string target = out.empty() ? ckpt : out;
    save_checkpoint_file(target, state);
    std::printf("reference policy and optimizer moments reset: %s\n",
                target.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"group-relative RL trainer for small sequence policies"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "run the staged training recipe");
    std::string train_config, resume_path, out_override;
    train->add_option("--config", train_config, "key-value config file")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--resume", resume_path, "checkpoint to continue from")
        ->check(CLI::ExistingFile);
    train->add_option("--out", out_override, "override the config's out_dir");

    auto* eval_cmd =
        app.add_subcommand("eval", "score a checkpoint on validation tasks");
    std::string eval_ckpt;
    int eval_k = 16, eval_max_len = 48, eval_val_instances = 20;
    double eval_temp = 0.6, eval_top_p = 0.95;
    uint64_t eval_seed = 1;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint or policy snapshot")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--k", eval_k, "samples per prompt");
    eval_cmd->add_option("--temp", eval_temp, "sampling temperature");
    eval_cmd->add_option("--top-p", eval_top_p, "nucleus truncation mass");
    eval_cmd->add_option("--max-len", eval_max_len, "response length cap");
    eval_cmd->add_option("--val-instances", eval_val_instances,
                         "validation prompts per family");
    eval_cmd->add_option("--seed", eval_seed, "evaluation seed");

    auto* ablate = app.add_subcommand(
        "ablate", "run one ablation study (temperature|clip|entropy|reset)");
    std::string ablate_kind, ablate_config;
    ablate->add_option("kind", ablate_kind, "which knob to ablate")->required();
    ablate->add_option("--config", ablate_config, "base config file")
        ->required()
        ->check(CLI::ExistingFile);

    auto* reset =
        app.add_subcommand("reset", "hard-reset a checkpoint's reference policy");
    std::string reset_ckpt, reset_out;
    reset->add_option("--ckpt", reset_ckpt, "training checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    reset->add_option("--out", reset_out, "write here instead of in place");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_config, resume_path, out_override);
        if (eval_cmd->parsed())
            return cmd_eval(eval_ckpt, eval_k, eval_temp, eval_top_p, eval_max_len,
                            eval_val_instances, eval_seed);
        if (ablate->parsed()) return cmd_ablate(ablate_kind, ablate_config);
        if (reset->parsed()) return cmd_reset(reset_ckpt, reset_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
