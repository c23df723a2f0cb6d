#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "tinygrpo/optimizer.hpp"
#include "tinygrpo/policy.hpp"

namespace tinygrpo {

// Everything needed to continue a training run bit-exactly from where a
// previous process stopped.
struct TrainerCheckpoint {
    PolicyParams theta;          // live policy
    PolicyParams ref;            // frozen reference policy (KL anchor)
    OptimState opt;              // AdamW step counter + moments for theta
    uint64_t master_seed = 0;    // run seed; every stream derives from it
    uint32_t stage_index = 0;    // position in the stage recipe
    uint64_t step_in_stage = 0;  // completed update steps within that stage
    bool entropy_enabled = true; // adaptive entropy-bonus controller state
};

// Binary formats are fixed-width little-endian regardless of host byte
// order; doubles travel as their IEEE-754 bit patterns, so a save/load
// cycle is bit-exact. Exact layouts are documented in the README.

void save_params(std::ostream& os, const PolicyParams& params);
PolicyParams load_params(std::istream& is);
void save_params_file(const std::string& path, const PolicyParams& params);
PolicyParams load_params_file(const std::string& path);

void save_checkpoint(std::ostream& os, const TrainerCheckpoint& ckpt);
TrainerCheckpoint load_checkpoint(std::istream& is);
void save_checkpoint_file(const std::string& path, const TrainerCheckpoint& ckpt);
TrainerCheckpoint load_checkpoint_file(const std::string& path);

} // namespace tinygrpo
