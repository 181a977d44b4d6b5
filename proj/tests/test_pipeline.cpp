#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include <json.hpp>

#include "phaseseed/fuzz.hpp"
#include "phaseseed/parser.hpp"
#include "phaseseed/pipeline.hpp"
#include "support.hpp"

using namespace phaseseed;
using namespace phaseseed::testing;

namespace fs = std::filesystem;

namespace {

using Set = std::set<std::string>;

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("phaseseed_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

AnalysisReport synthetic(Mode mode, std::map<std::string, Set> ecs) {
  AnalysisReport r;
  r.program = "synthetic";
  r.program_hash = "h";
  r.mode = mode;
  std::size_t sum = 0;
  for (auto& [site, ec] : ecs) {
    sum += ec.size();
    r.ec_max = std::max(r.ec_max, ec.size());
    r.cfi[site].processing_ec = std::move(ec);
  }
  r.ec_sites = r.cfi.size();
  r.ec_avg = r.ec_sites ? static_cast<double>(sum) / static_cast<double>(r.ec_sites) : 0.0;
  return r;
}

TEST(Modes, NamesRoundTrip) {
  for (Mode m : all_modes()) EXPECT_EQ(parse_mode(mode_name(m)), m);
  EXPECT_FALSE(parse_mode("fast").has_value());
  EXPECT_EQ(all_modes().size(), 4u);
}

TEST(Refines, PrecisionLattice) {
  EXPECT_TRUE(refines(Mode::PhaseSeed, Mode::PsInsensitive));
  EXPECT_TRUE(refines(Mode::PhaseSeed, Mode::Baseline));
  EXPECT_TRUE(refines(Mode::PsInsensitive, Mode::Baseline));
  EXPECT_TRUE(refines(Mode::PsUnreachable, Mode::Baseline));
  EXPECT_FALSE(refines(Mode::Baseline, Mode::PhaseSeed));
  EXPECT_FALSE(refines(Mode::PhaseSeed, Mode::PsUnreachable));
  EXPECT_FALSE(refines(Mode::PsUnreachable, Mode::PsInsensitive));
}

TEST(RunMode, BaselineAnalyzesTheWholeProgram) {
  Program p = load_corpus("simple_server");
  ModeArtifacts a = run_mode(p, Mode::Baseline, {});
  EXPECT_FALSE(a.state.has_value());
  EXPECT_FALSE(a.partition.has_value());
  EXPECT_TRUE(a.seeds.empty());
  EXPECT_EQ(a.scope.functions.size(), p.functions.size());
}

TEST(RunMode, PhaseSeedScopeIsThePartition) {
  Program p = load_corpus("simple_server");
  AnalyzeOptions ao;
  ao.config = {{"gzip", 0}};
  ModeArtifacts a = run_mode(p, Mode::PhaseSeed, ao);
  ASSERT_TRUE(a.partition.has_value());
  Set scope;
  for (const auto& [f, mask] : a.scope.functions) scope.insert(f);
  EXPECT_EQ(scope, a.partition->functions);
  EXPECT_FALSE(a.seeds.empty());
  EXPECT_EQ(a.reach.instructions, 12 + 2 + 4 + 3 + 2);
}

TEST(RunMode, TrapBecomesAnAnalysisError) {
  Program p = load_corpus("heap_array_trap");
  EXPECT_THROW(run_mode(p, Mode::PhaseSeed, {}), AnalysisError);
  EXPECT_THROW(run_mode(p, Mode::PsUnreachable, {}), AnalysisError);
  EXPECT_NO_THROW(run_mode(p, Mode::Baseline, {}));
}

TEST(RunMode, MissingTransitionIsAnError) {
  Program p = load_corpus("no_transition");
  AnalyzeOptions ao;
  ao.config = {{"daemon", 0}};
  EXPECT_THROW(run_mode(p, Mode::PhaseSeed, ao), AnalysisError);
  ao.config = {{"daemon", 1}};
  EXPECT_NO_THROW(run_mode(p, Mode::PhaseSeed, ao));
}

TEST(Reachable, FollowsResolvedIcalls) {
  Program p = load_corpus("simple_server");
  AnalysisScope scope = AnalysisScope::whole_program(p);
  PtsSolution sol = solve_worklist(build_constraints(p, scope), {});
  Reachability r = reachable(p, scope, sol, {{"default_handler", {}}});
  EXPECT_EQ(r.functions, Set{"default_handler"});
  EXPECT_EQ(r.syscalls, Set{"sendfile"});
  EXPECT_EQ(r.instructions, 2);
  Reachability all = reachable(p, scope, sol, {{"main", {}}});
  EXPECT_EQ(all.functions.size(), p.functions.size());
  EXPECT_EQ(all.icall_sites, (Set{"main:serve:1", "main:serve:4", "main:serve:9"}));
}

TEST(Report, SimpleServerDebloatCounts) {
  Program p = load_corpus("simple_server");
  AnalysisReport r = report_for(p, Mode::PhaseSeed, {{"gzip", 0}}, "simple_server");
  EXPECT_EQ(r.functions, 5u);
  EXPECT_EQ(r.baseline_functions, 7u);
  EXPECT_LT(r.instructions, r.baseline_instructions);
  EXPECT_EQ(r.processing_syscalls, (Set{"read", "sendfile", "write"}));
  EXPECT_EQ(r.init_syscalls, (Set{"bind", "socket"}));
  EXPECT_EQ(r.ec_sites, 3u);
  EXPECT_DOUBLE_EQ(r.ec_avg, 1.0);
  EXPECT_EQ(r.ec_max, 1u);
}

TEST(Report, JsonRoundTrip) {
  int checked = 0;
  for (const auto& name : corpus_names()) {
    Program p = load_corpus(name);
    for (const auto& run : golden_runs(name)) {
      for (Mode m : all_modes()) {
        AnalyzeOptions ao;
        ao.config = run.config;
        ao.budget = run.budget;
        ao.program_name = name;
        std::string text;
        try {
          text = analyze(p, m, ao).to_json();
        } catch (const AnalysisError&) {
          continue;
        }
        ++checked;
        AnalysisReport back = AnalysisReport::from_json(text);
        EXPECT_EQ(back.to_json(), text) << name << " " << mode_name(m);
        EXPECT_EQ(back.mode, m);
        EXPECT_EQ(back.config, run.config);
      }
    }
  }
  EXPECT_GT(checked, 40);
}

TEST(Report, SharedCallsiteSplit) {
  Program p = load_corpus("shared_site");
  AnalysisReport r = report_for(p, Mode::PhaseSeed, {}, "shared_site");
  ASSERT_EQ(r.shared.size(), 1u);
  const auto& [site, split] = *r.shared.begin();
  EXPECT_EQ(site, "dispatch:entry:2");
  EXPECT_EQ(split.init_observed, Set{"on_config"});
  EXPECT_EQ(split.processing_ec, Set{"on_request"});
  EXPECT_EQ(r.cfi.at(site).init_observed, Set{"on_config"});
}

TEST(ConfigHash, SensitiveToProgramConfigAndMode) {
  std::string h = config_hash("p1", {{"gzip", 0}}, Mode::PhaseSeed);
  EXPECT_EQ(h, config_hash("p1", {{"gzip", 0}}, Mode::PhaseSeed));
  EXPECT_NE(h, config_hash("p2", {{"gzip", 0}}, Mode::PhaseSeed));
  EXPECT_NE(h, config_hash("p1", {{"gzip", 1}}, Mode::PhaseSeed));
  EXPECT_NE(h, config_hash("p1", {{"gzip", 0}, {"x", 0}}, Mode::PhaseSeed));
  EXPECT_NE(h, config_hash("p1", {{"gzip", 0}}, Mode::PsInsensitive));
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a64_hex("a"), "af63dc4c8601ec8c");
}

TEST(Compare, SubsetHoldsForRefiningModes) {
  AnalysisReport precise = synthetic(Mode::PhaseSeed, {{"s1", {"a"}}, {"s2", {"b"}}});
  AnalysisReport coarse = synthetic(Mode::Baseline, {{"s1", {"a", "c"}}, {"s2", {"b"}}});
  Comparison c = compare(precise, coarse);
  EXPECT_TRUE(c.violations.empty());
  auto j = nlohmann::json::parse(c.json);
  EXPECT_EQ(j["ordering"], "a refines b");
  EXPECT_EQ(j["sites"]["s1"]["delta"], 1);
  EXPECT_FALSE(c.table.empty());
}

TEST(Compare, ReportsExtraTargets) {
  AnalysisReport precise = synthetic(Mode::PhaseSeed, {{"s1", {"a", "d"}}});
  AnalysisReport coarse = synthetic(Mode::PsInsensitive, {{"s1", {"a", "c"}}});
  Comparison c = compare(precise, coarse);
  ASSERT_EQ(c.violations.size(), 1u);
  EXPECT_NE(c.violations[0].find("not a subset"), std::string::npos);
}

TEST(Compare, ReportsSitesMissingFromTheCoarseMode) {
  AnalysisReport precise = synthetic(Mode::PsUnreachable, {{"s1", {"a"}}, {"s9", {"z"}}});
  AnalysisReport coarse = synthetic(Mode::Baseline, {{"s1", {"a"}}});
  Comparison c = compare(coarse, precise);
  ASSERT_FALSE(c.violations.empty());
  EXPECT_NE(c.violations[0].find("s9"), std::string::npos);
}

TEST(Compare, ReportsAverageIncrease) {
  AnalysisReport precise = synthetic(Mode::PhaseSeed, {{"s1", {"a", "b"}}});
  AnalysisReport coarse = synthetic(Mode::Baseline, {{"s1", {"a"}}});
  Comparison c = compare(precise, coarse);
  bool avg = false;
  for (const auto& v : c.violations) avg = avg || v.find("average") != std::string::npos;
  EXPECT_TRUE(avg);
}

TEST(Compare, UnorderedModesAreNotChecked) {
  AnalysisReport a = synthetic(Mode::PsUnreachable, {{"s1", {"a", "b"}}});
  AnalysisReport b = synthetic(Mode::PhaseSeed, {{"s1", {"c"}}});
  Comparison c = compare(a, b);
  EXPECT_TRUE(c.violations.empty());
  EXPECT_EQ(nlohmann::json::parse(c.json)["ordering"], "unordered");
}

TEST(Compare, RejectsDifferentProgramsOrConfigs) {
  AnalysisReport a = synthetic(Mode::PhaseSeed, {});
  AnalysisReport b = synthetic(Mode::Baseline, {});
  b.program_hash = "other";
  EXPECT_THROW(compare(a, b), std::invalid_argument);
  b.program_hash = a.program_hash;
  b.config = {{"x", 1}};
  EXPECT_THROW(compare(a, b), std::invalid_argument);
}

TEST(Compare, CorpusPrecisionChain) {
  std::size_t pairs = 0;
  for (const auto& name : corpus_names()) {
    Program p = load_corpus(name);
    for (const auto& run : golden_runs(name)) {
      std::map<Mode, AnalysisReport> reports;
      for (Mode m : all_modes()) {
        try {
          reports[m] = report_for(p, m, run.config, name);
        } catch (const AnalysisError&) {
        }
      }
      for (const auto& [ma, ra] : reports)
        for (const auto& [mb, rb] : reports)
          if (ma != mb) {
            ++pairs;
            EXPECT_TRUE(compare(ra, rb).violations.empty()) << name << " " << mode_name(ma) << " " << mode_name(mb);
          }
    }
  }
  EXPECT_GT(pairs, 100u);
}

TEST(Analyze, IsByteIdenticalAcrossRuns) {
  Program p = load_corpus("punning");
  for (Mode m : all_modes()) EXPECT_EQ(analyze(p, m, {}).to_json(), analyze(p, m, {}).to_json()) << mode_name(m);
}

TEST(Analyze, NaiveSolverGivesTheSameReport) {
  Program p = load_corpus("simple_server");
  AnalyzeOptions naive;
  naive.naive_solver = true;
  for (Mode m : all_modes()) EXPECT_EQ(analyze(p, m, {}).to_json(), analyze(p, m, naive).to_json()) << mode_name(m);
}

TEST(Cache, SecondCallIsAHitAndSkipsSolving) {
  fs::path dir = fresh_dir("cache");
  std::string source = read_file(corpus_path("simple_server"));
  AnalyzeOptions ao;
  ao.config = {{"gzip", 0}};
  long h0 = cache_counters().hits, m0 = cache_counters().misses;
  CachedReport first = analyze_cached(source, corpus_path("simple_server"), Mode::PhaseSeed, ao, dir.string());
  EXPECT_FALSE(first.hit);
  EXPECT_EQ(cache_counters().misses, m0 + 1);
  EXPECT_TRUE(fs::exists(first.path));
  EXPECT_EQ(fs::path(first.path).parent_path(), dir);
  long solves = solver_counters().worklist_solves;
  CachedReport second = analyze_cached(source, corpus_path("simple_server"), Mode::PhaseSeed, ao, dir.string());
  EXPECT_TRUE(second.hit);
  EXPECT_EQ(cache_counters().hits, h0 + 1);
  EXPECT_EQ(solver_counters().worklist_solves, solves);
  EXPECT_EQ(first.json, second.json);
  fs::remove_all(dir);
}

TEST(Cache, ConfigChangeMisses) {
  fs::path dir = fresh_dir("cache_cfg");
  std::string source = read_file(corpus_path("simple_server"));
  AnalyzeOptions a, b;
  a.config = {{"gzip", 0}};
  b.config = {{"gzip", 1}};
  CachedReport ra = analyze_cached(source, corpus_path("simple_server"), Mode::PhaseSeed, a, dir.string());
  CachedReport rb = analyze_cached(source, corpus_path("simple_server"), Mode::PhaseSeed, b, dir.string());
  EXPECT_FALSE(rb.hit);
  EXPECT_NE(ra.path, rb.path);
  EXPECT_NE(ra.json, rb.json);
  fs::remove_all(dir);
}

TEST(Cache, StaleFileIsRecomputed) {
  fs::path dir = fresh_dir("cache_stale");
  std::string source = read_file(corpus_path("simple_server"));
  CachedReport first = analyze_cached(source, corpus_path("simple_server"), Mode::Baseline, {}, dir.string());
  std::ofstream(first.path, std::ios::trunc) << "{\"configHash\": \"bogus\"}";
  CachedReport again = analyze_cached(source, corpus_path("simple_server"), Mode::Baseline, {}, dir.string());
  EXPECT_FALSE(again.hit);
  EXPECT_EQ(again.json, first.json);
  fs::remove_all(dir);
}

}  // namespace
