#include "tinygrpo/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tinygrpo {

std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                       double sigma_min) {
    const size_t n = rewards.size();
    if (n < 2) throw std::invalid_argument("advantage group needs >= 2 rewards");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);

    std::vector<double> adv(n, 0.0);
    if (sd < sigma_min) return adv; // degenerate group: no signal, not a blow-up
    for (size_t i = 0; i < n; ++i) adv[i] = (rewards[i] - mean) / sd;
    return adv;
}

SurrogateTerm clipped_surrogate(double ratio, double advantage,
                                const ClipConfig& clip) {
    if (!std::isfinite(ratio) || ratio <= 0.0)
        throw std::invalid_argument("importance ratio must be finite and > 0");
    if (clip.eps_low < 0.0 || clip.eps_low >= 1.0 || clip.eps_high < 0.0)
        throw std::invalid_argument("clip bands out of range");
    const double clipped =
        std::clamp(ratio, 1.0 - clip.eps_low, 1.0 + clip.eps_high);
    const double raw = ratio * advantage;
    const double capped = clipped * advantage;
    SurrogateTerm out;
    if (raw <= capped) {
        out.value = raw;
        out.pass_through = true;
    } else {
        out.value = capped;
        out.pass_through = false;
    }
    return out;
}

double kl_k3(double logp_theta, double logp_ref) {
    const double log_rho = logp_ref - logp_theta;
    // expm1 keeps rho - 1 accurate when the two log-probs nearly agree
    return std::expm1(log_rho) - log_rho;
}

ObjectiveResult batch_objective(const std::vector<RolloutTerms>& minibatch,
                                const ObjectiveConfig& cfg) {
    if (minibatch.empty())
        throw std::invalid_argument("batch_objective: empty minibatch");
    size_t total_tokens = 0;
    for (const auto& r : minibatch) {
        if (r.tokens.empty())
            throw std::invalid_argument("rollout with zero tokens in minibatch");
        total_tokens += r.tokens.size();
    }
    ObjectiveResult out;
    out.grads.resize(minibatch.size());

    const double inv_n = 1.0 / static_cast<double>(total_tokens);
    const double inv_m = 1.0 / static_cast<double>(minibatch.size());
    double surr = 0.0, kl = 0.0, ent = 0.0;
    size_t clipped = 0;

    for (size_t i = 0; i < minibatch.size(); ++i) {
        const RolloutTerms& r = minibatch[i];
        auto& g = out.grads[i];
        g.resize(r.tokens.size());

        if (cfg.ratio_level == RatioLevel::sequence) {
            double sum_theta = 0.0, sum_old = 0.0;
            for (const TokenTerms& t : r.tokens) {
                sum_theta += t.logp_theta;
                sum_old += t.logp_old;
            }
            const double ratio = std::exp(sum_theta - sum_old);
            const SurrogateTerm s = clipped_surrogate(ratio, r.advantage, cfg.clip);
            surr += s.value * inv_m;
            if (ratio < 1.0 - cfg.clip.eps_low || ratio > 1.0 + cfg.clip.eps_high)
                ++clipped;
            // d(ratio)/d(logp_theta_t) = ratio for every token of the rollout
            const double d_seq = s.pass_through ? ratio * r.advantage * inv_m : 0.0;
            for (size_t t = 0; t < r.tokens.size(); ++t) g[t].d_logp = d_seq;
        }

        for (size_t t = 0; t < r.tokens.size(); ++t) {
            const TokenTerms& tt = r.tokens[t];
            if (cfg.ratio_level == RatioLevel::token) {
                const double ratio = std::exp(tt.logp_theta - tt.logp_old);
                const SurrogateTerm s = clipped_surrogate(ratio, r.advantage, cfg.clip);
                surr += s.value * inv_n;
                if (ratio < 1.0 - cfg.clip.eps_low || ratio > 1.0 + cfg.clip.eps_high)
                    ++clipped;
                g[t].d_logp = s.pass_through ? ratio * r.advantage * inv_n : 0.0;
            }
            if (cfg.kl.beta != 0.0) {
                kl += kl_k3(tt.logp_theta, tt.logp_ref) * inv_n;
                // d(k3)/d(logp_theta) = 1 - rho
                const double rho = std::exp(tt.logp_ref - tt.logp_theta);
                g[t].d_logp -= cfg.kl.beta * (1.0 - rho) * inv_n;
            }
            ent += tt.entropy * inv_n;
            g[t].d_entropy = cfg.entropy_coef * inv_n;
        }
    }

    out.loss.surrogate = surr;
    out.loss.kl_term = kl;
    out.loss.entropy_mean = ent;
    out.loss.entropy_bonus = cfg.entropy_coef * ent;
    out.loss.total = surr - cfg.kl.beta * kl + out.loss.entropy_bonus;
    out.loss.token_count = total_tokens;
    const size_t denom =
        cfg.ratio_level == RatioLevel::token ? total_tokens : minibatch.size();
    out.loss.clip_fraction =
        denom ? static_cast<double>(clipped) / static_cast<double>(denom) : 0.0;
    return out;
}

} // namespace tinygrpo
