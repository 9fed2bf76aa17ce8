#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rshaze/autograd.hpp"

namespace rshaze::gradcheck {

struct CaseResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked_coords = 0;
  bool pass = false;
};

struct SuiteConfig {
  std::uint64_t base_seed = 1;
  int seeds = 5;       // independent repetitions per case
  double tolerance = 1e-4;
  int coords_per_tensor = 24;  // finite-difference sampling budget; 0 = all
};

/// Finite-difference verification of every differentiable op, each block
/// (ITFM, CMIM, MPEB, FNB, SRC) and the full tiny network, at generic
/// random parameter points in f64. Each case reports its worst seed.
std::vector<CaseResult> run_suite(const SuiteConfig& cfg = {});

bool all_passed(const std::vector<CaseResult>& results);

}  // namespace rshaze::gradcheck
