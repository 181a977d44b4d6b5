// Analysis modes, report construction, report comparison and the
// config-keyed report cache.
#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "phaseseed/andersen.hpp"
#include "phaseseed/interp.hpp"
#include "phaseseed/ir.hpp"
#include "phaseseed/partition.hpp"
#include "phaseseed/seeding.hpp"

namespace phaseseed {

inline constexpr const char* kToolkitVersion = "1.0.0";

enum class Mode { Baseline, PsUnreachable, PsInsensitive, PhaseSeed };

const char* mode_name(Mode m);
std::optional<Mode> parse_mode(const std::string& s);
const std::vector<Mode>& all_modes();

/// Interpreter trap, missing transition, or a rejected snapshot.
class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AnalyzeOptions {
  std::map<std::string, std::int64_t> config;
  std::int64_t budget = 10'000'000;
  std::string program_name = "program";
  /// Content hash of the program source; computed from the canonical
  /// printed form when empty.
  std::string program_hash;
  bool naive_solver = false;
};

/// Functions, instructions, icall sites and syscalls reachable in the
/// processing phase over the solved call graph, restricted to the scope.
/// Live-frame functions contribute only their resume region to `instructions`.
struct Reachability {
  std::set<std::string> functions;
  std::int64_t instructions = 0;
  std::set<std::string> icall_sites;
  std::set<std::string> syscalls;
};

/// Every intermediate product of one mode run.
struct ModeArtifacts {
  Mode mode = Mode::Baseline;
  std::optional<MachineState> state;
  std::optional<PartitionResult> partition;
  AnalysisScope scope;
  ConstraintGraph graph;
  SeedFacts seeds;
  PtsSolution solution;
  Reachability reach;
};

ModeArtifacts run_mode(const Program& p, Mode mode, const AnalyzeOptions& opts);

/// Walks the call graph from `roots` (function -> region mask, empty = whole)
/// through direct calls, spawns and resolved icalls, staying inside `scope`.
Reachability reachable(const Program& p, const AnalysisScope& scope, const PtsSolution& sol,
                       const std::map<std::string, std::vector<bool>>& roots);

struct SharedSite {
  std::set<std::string> init_observed;
  std::set<std::string> processing_ec;
  bool operator==(const SharedSite&) const = default;
};

/// Icall sites observed during initialization that also lie in the
/// processing region: the two CFI profiles of a phase-specialized clone.
std::map<std::string, SharedSite> shared_callsite_split(const Program& p, const std::vector<IcallEvent>& init_icalls,
                                                        const PtsSolution& sol, const Reachability& reach);

struct SiteCfi {
  std::optional<std::set<std::string>> processing_ec;
  std::optional<std::set<std::string>> init_observed;
  bool operator==(const SiteCfi&) const = default;
};

struct AnalysisReport {
  std::string version = kToolkitVersion;
  std::string program;
  std::string program_hash;
  Mode mode = Mode::Baseline;
  std::map<std::string, std::int64_t> config;
  std::string config_hash;
  std::map<std::string, SiteCfi> cfi;
  std::size_t ec_sites = 0;
  double ec_avg = 0;
  std::size_t ec_max = 0;
  std::size_t functions = 0;
  std::int64_t instructions = 0;
  std::size_t baseline_functions = 0;
  std::int64_t baseline_instructions = 0;
  std::set<std::string> reachable_functions;
  std::set<std::string> init_syscalls;
  std::set<std::string> processing_syscalls;
  std::map<std::string, SharedSite> shared;
  std::optional<PartitionResult> partition;
  bool operator==(const AnalysisReport&) const = default;

  /// Processing EC of `site` (empty when the site is not processing-reachable).
  std::set<std::string> ec(const std::string& site) const;

  std::string to_json() const;
  static AnalysisReport from_json(const std::string& text);
};

std::string fnv1a64_hex(const std::string& data);
std::string config_hash(const std::string& program_hash, const std::map<std::string, std::int64_t>& config, Mode mode);

AnalysisReport analyze(const Program& p, Mode mode, const AnalyzeOptions& opts);

/// Report for an already computed mode run; `baseline` supplies the
/// debloat reference counts.
AnalysisReport build_report(const Program& p, const ModeArtifacts& a, const ModeArtifacts& baseline,
                            const AnalyzeOptions& opts);

struct Comparison {
  std::string json;
  std::string table;
  std::vector<std::string> violations;
};

/// Diffs two reports of the same program and config. When the modes are
/// ordered by precision, per-site subset and average-size violations are
/// listed. Throws std::invalid_argument on a program or config mismatch.
Comparison compare(const AnalysisReport& a, const AnalysisReport& b);

/// True when `precise` is expected to refine `coarse`.
bool refines(Mode precise, Mode coarse);

struct CacheCounters {
  std::atomic<long> hits{0};
  std::atomic<long> misses{0};
};
CacheCounters& cache_counters();

struct CachedReport {
  std::string json;
  std::string path;
  bool hit = false;
};

/// Name of the env var that overrides the cache directory.
inline constexpr const char* kCacheDirEnv = "PHASESEED_CACHE_DIR";

/// `<cache_dir>/<stem>.<configHash>.report.json`; re-analyzes only when the
/// file is missing or does not carry the expected config hash.
CachedReport analyze_cached(const std::string& source, const std::string& program_path, Mode mode,
                            AnalyzeOptions opts, const std::string& cache_dir);

}  // namespace phaseseed
