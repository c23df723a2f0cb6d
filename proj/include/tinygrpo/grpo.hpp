#pragma once

#include <vector>

#include "tinygrpo/policy.hpp"

namespace tinygrpo {

// ---- group-relative advantages ----

// Standardizes rewards within one sampling group: A_i = (R_i - mean) / std,
// population std. Groups whose std falls below sigma_min get all-zero
// advantages (no learning signal rather than a blow-up). Requires >= 2
// rewards.
std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                       double sigma_min = 1e-6);

// ---- decoupled-clip surrogate ----

struct ClipConfig {
    double eps_low = 0.2;   // lower band: ratios below 1 - eps_low clip
    double eps_high = 0.4;  // upper band: ratios above 1 + eps_high clip
};

struct SurrogateTerm {
    double value = 0.0;
    // true iff value == ratio * advantage, i.e. gradient flows through the
    // ratio; false in the clipped regime where d(value)/d(ratio) = 0.
    bool pass_through = true;
};

// min(r*A, clip(r, 1-eps_low, 1+eps_high)*A); the objective is maximized.
// Ratio must be finite and > 0.
SurrogateTerm clipped_surrogate(double ratio, double advantage,
                                const ClipConfig& clip);

// ---- k3 KL estimator ----

// k3(logp_theta, logp_ref) = rho - log(rho) - 1 with rho = exp(logp_ref -
// logp_theta). Non-negative for every input pair; unbiased estimate of
// KL(pi_theta || pi_ref) under samples from pi_theta.
double kl_k3(double logp_theta, double logp_ref);

struct KLConfig {
    double beta = 1e-4; // penalty weight; 0 disables the term entirely
};

// ---- batch objective ----

enum class RatioLevel { token, sequence };

struct ObjectiveConfig {
    ClipConfig clip;
    KLConfig kl;
    double entropy_coef = 0.0; // weight on the mean-entropy bonus
    RatioLevel ratio_level = RatioLevel::token;
};

// Per-token quantities for one generated token, all at the stage's rollout
// temperature: current policy, the frozen behaviour policy that sampled it,
// and the reference policy for the KL penalty. `entropy` is the full
// next-token entropy of the *current* policy at this position.
struct TokenTerms {
    double logp_theta = 0.0;
    double logp_old = 0.0;
    double logp_ref = 0.0;
    double entropy = 0.0;
};

struct RolloutTerms {
    double advantage = 0.0;
    std::vector<TokenTerms> tokens;
};

struct LossBreakdown {
    double surrogate = 0.0;     // mean clipped surrogate
    double kl_term = 0.0;       // mean k3 penalty (unweighted)
    double entropy_mean = 0.0;  // mean token entropy under current policy
    double entropy_bonus = 0.0; // entropy_coef * entropy_mean
    double total = 0.0;         // surrogate - beta*kl_term + entropy_bonus
    double clip_fraction = 0.0; // fraction of ratios outside the clip band
    size_t token_count = 0;
};

// d(total)/d(logp_theta_t) and d(total)/d(entropy_t) for each token; feed
// straight into policy backward().
struct TokenGrad {
    double d_logp = 0.0;
    double d_entropy = 0.0;
};

struct ObjectiveResult {
    LossBreakdown loss;
    std::vector<std::vector<TokenGrad>> grads; // [rollout][token]
};

// The full maximized objective over one minibatch of rollouts.
//
// token mode: importance ratio per token, r_t = exp(logp_theta - logp_old);
// surrogate, KL and entropy all token-mean over the minibatch.
//
// sequence mode: one ratio per rollout, R = exp(sum logp_theta - sum
// logp_old); surrogate and clip_fraction are per-sequence means while the KL
// and entropy terms stay token-mean.
ObjectiveResult batch_objective(const std::vector<RolloutTerms>& minibatch,
                                const ObjectiveConfig& cfg);

} // namespace tinygrpo
