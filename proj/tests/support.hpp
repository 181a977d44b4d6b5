// Shared helpers for the test suites: corpus access and the golden-file
// checker that compares analysis results with corpus/<name>.expected.json.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "phaseseed/ir.hpp"
#include "phaseseed/pipeline.hpp"

namespace phaseseed::testing {

std::string read_file(const std::string& path);
std::string corpus_dir();
std::string corpus_path(const std::string& name);  // name without extension
std::string cli_path();

/// Parses and validates a corpus program; throws on any diagnostic.
Program load_corpus(const std::string& name);

/// Names of the valid corpus programs (those with a golden file).
std::vector<std::string> corpus_names();

/// Names of the negative-corpus programs (under corpus/invalid).
std::vector<std::string> invalid_corpus_names();

/// Every (config, budget) pair listed in a golden file.
struct GoldenRun {
  std::map<std::string, std::int64_t> config;
  std::int64_t budget = 10'000'000;
};
std::vector<GoldenRun> golden_runs(const std::string& name);

/// Mismatches between the tool and the golden file (empty when all match).
std::vector<std::string> check_golden(const std::string& name);

/// Resolves a golden-file site label (e.g. `srv.init`) to a site name.
std::string golden_site(const std::string& name, const std::string& label);

/// Runs one mode and builds its report against a fresh Baseline run.
AnalysisReport report_for(const Program& p, Mode mode, const std::map<std::string, std::int64_t>& config,
                          const std::string& program_name = "program");

/// `node -> member` strings of a seed set.
std::vector<std::string> seed_lines(const SeedFacts& seeds);

}  // namespace phaseseed::testing
