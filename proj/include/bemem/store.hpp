#pragma once

// Trajectory store: every generation of an evaluation run in one file.
//
// Layout (little-endian): "BETRAJ01", u32 count, then per generation
//   u32 prompt index, u32 generation index, u64 seed, f64 guidance,
//   i32 tokens[8], u32 steps, i32 timesteps[steps],
//   u32 kept, kept x (f32 eps_cond[256*3], f32 eps_uncond[256*3]),
//   f64 patch_sq_diff[steps*16], f32 x0[256*3],
//   u32 maps, maps x (u32 step, u32 layer, u32 head, f32 weights[16*8]).

#include "bemem/diffusion.hpp"

#include <filesystem>

namespace bemem {

struct StoredGeneration {
  int prompt = 0;
  int generation = 0;
  TrajectoryRecord traj;
};

void save_trajectories(const std::vector<StoredGeneration>& gens, const std::filesystem::path& path);
std::vector<StoredGeneration> load_trajectories(const std::filesystem::path& path);

}  // namespace bemem
