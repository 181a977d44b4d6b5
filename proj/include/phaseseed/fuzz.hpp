// Seeded generator of split-phase PIR programs and the soundness checker
// that runs them through the concrete oracle and every analysis mode.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "phaseseed/pipeline.hpp"

namespace phaseseed {

struct FuzzProgram {
  std::uint64_t seed = 0;
  std::string source;
  std::map<std::string, std::int64_t> config;
  std::vector<std::vector<std::int64_t>> inputs;  // one stream per oracle run
};

/// Deterministic in `seed`. Every program has a terminating init phase, a
/// config branch, a heap allocation retyped by a cast, and icalls in both
/// phases; every input stream is long enough for the processing loop.
FuzzProgram generate_program(std::uint64_t seed, int streams = 3);

struct TrialResult {
  std::vector<std::string> violations;
  std::map<Mode, double> avg_ec;
  int oracle_runs = 0;
  int observed_icalls = 0;
  int solver_comparisons = 0;
};

struct CheckOptions {
  bool compare_naive = true;
  /// Applied to every mode run before it is checked; lets tests corrupt a
  /// result to show that the checker notices.
  std::function<void(Mode, ModeArtifacts&)> tamper;
};

/// Soundness (EC, syscalls, F, executed regions), precision ordering and
/// solver equivalence for one program.
TrialResult check_program(const FuzzProgram& fp, const CheckOptions& opts = {});

struct FuzzSummary {
  int trials = 0;
  int failed_trials = 0;
  int oracle_runs = 0;
  int observed_icalls = 0;
  int solver_comparisons = 0;
  std::map<Mode, double> mean_avg_ec;
  std::vector<std::string> violations;  // prefixed with the trial seed
};

FuzzSummary run_fuzz(int trials, std::uint64_t seed, int streams, std::ostream* log = nullptr);

}  // namespace phaseseed
