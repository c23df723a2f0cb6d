#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tinygrpo/policy.hpp"

namespace tinygrpo {

// Raised when an update would consume a NaN/inf gradient entry; the trainer
// catches it to halt gracefully with a final checkpoint.
struct NonFiniteGradientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimConfig {
    double learning_rate = 3e-4; // desk-scale default; see configs/ for variants
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// First/second moment estimates plus the shared step counter. Shapes track
// the policy tensors they were created for.
struct OptimState {
    uint64_t step = 0;
    ParamTensors m;
    ParamTensors v;
};

OptimState init_optim_state(const PolicyConfig& cfg);

// Zeroes moments and the step counter in place (used by reference resets).
void reset_optim_state(OptimState& state);

// One AdamW update maximizing the objective: internally negates `grads`
// (which are gradients of the maximized objective) and applies the standard
// bias-corrected descent step with decoupled weight decay. Returns the new
// parameters and state by value; inputs are untouched. Throws
// std::runtime_error if any gradient entry is non-finite.
std::pair<PolicyParams, OptimState> adamw_step(const PolicyParams& params,
                                               const GradientSet& grads,
                                               const OptimState& state,
                                               const OptimConfig& cfg);

// In-place variant used by the training loop; same arithmetic.
void adamw_step_inplace(PolicyParams& params, const GradientSet& grads,
                        OptimState& state, const OptimConfig& cfg);

} // namespace tinygrpo
