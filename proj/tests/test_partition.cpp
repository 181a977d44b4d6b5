#include <gtest/gtest.h>

#include <algorithm>

#include <json.hpp>

#include "phaseseed/fuzz.hpp"
#include "phaseseed/parser.hpp"
#include "phaseseed/partition.hpp"
#include "support.hpp"

using namespace phaseseed;
using namespace phaseseed::testing;

namespace {

using Set = std::set<std::string>;

MachineState snapshot(const Program& p, std::map<std::string, std::int64_t> config = {}) {
  InterpOptions io;
  io.config = std::move(config);
  InitResult r = run_init(p, io);
  EXPECT_EQ(r.stop.kind, StopKind::TransitionReached) << r.stop.message;
  return r.state;
}

long count(const std::vector<bool>& mask) { return std::count(mask.begin(), mask.end(), true); }

TEST(Partition, SimpleServerWithoutGzip) {
  Program p = load_corpus("simple_server");
  PartitionResult r = partition(p, snapshot(p, {{"gzip", 0}}));
  EXPECT_EQ(r.functions, (Set{"default_handler", "default_init", "main", "request_handler", "setup"}));
  EXPECT_TRUE(r.accessible_globals.empty());
  EXPECT_EQ(r.evidence.at("main"), "live-frame");
  EXPECT_EQ(r.evidence.at("default_init"), "heap-scan");
  EXPECT_EQ(r.evidence.at("default_handler"), "funcaddr");
  EXPECT_EQ(r.evidence.at("request_handler"), "funcaddr");
  EXPECT_EQ(r.evidence.at("setup"), "direct-call");
}

TEST(Partition, SimpleServerWithGzip) {
  Program p = load_corpus("simple_server");
  PartitionResult r = partition(p, snapshot(p, {{"gzip", 1}}));
  EXPECT_EQ(r.functions, (Set{"gzip_handler", "gzip_init", "main", "request_handler", "setup"}));
}

TEST(Partition, LiveFrameKeepsOnlyTheResumeRegion) {
  Program p = load_corpus("simple_server");
  PartitionResult r = partition(p, snapshot(p));
  // ready's trailing br plus the 11 instructions of serve.
  ASSERT_TRUE(r.regions.count("main"));
  EXPECT_EQ(count(r.regions.at("main")), 12);
  EXPECT_TRUE(r.regions.at("setup").empty());
}

TEST(ResumeRegion, WholeFunctionFromEntry) {
  Program p = load_corpus("simple_server");
  const Function& main = p.function("main");
  EXPECT_EQ(count(resume_region(main, 0)), static_cast<long>(main.insns.size()));
  EXPECT_EQ(count(resume_region(main, 20)), 12);
  EXPECT_EQ(count(resume_region(main, -1)), 0);
}

TEST(ResumeRegion, LoopsReachEarlierInstructions) {
  Program p = parse_or_throw(
      "func @main() -> void {\nentry:\n  %a = const 1\n  br loop\nloop:\n  %b = const 2\n  start_processing\n  br "
      "loop\n}\n");
  std::vector<bool> m = resume_region(p.function("main"), 3);
  EXPECT_EQ(m, (std::vector<bool>{false, false, true, true, true}));
}

TEST(Partition, GlobalsTouchedOnlyInInitAreNotAccessible) {
  Program p = load_corpus("global_access");
  PartitionResult r = partition(p, snapshot(p));
  EXPECT_EQ(r.accessible_globals, Set{"request_hook"});
  EXPECT_TRUE(r.functions.count("handle"));
  EXPECT_FALSE(r.functions.count("print_banner"));
  EXPECT_FALSE(r.functions.count("boot"));
}

TEST(Partition, SpawnedEntriesAreRoots) {
  Program p = load_corpus("threads");
  PartitionResult r = partition(p, snapshot(p));
  EXPECT_EQ(r.evidence.at("worker_main"), "spawn-entry");
  EXPECT_TRUE(r.functions.count("job_compress"));
  EXPECT_FALSE(r.functions.count("job_log"));
  EXPECT_FALSE(r.functions.count("new_worker"));
}

TEST(Partition, ExtraRootsAreAnalyzedWhole) {
  Program p = load_corpus("simple_server");
  MachineState s = snapshot(p);
  PartitionResult r = partition(p, s, {"gzip_init"});
  EXPECT_EQ(r.evidence.at("gzip_init"), "root");
  EXPECT_TRUE(r.functions.count("gzip_handler"));
  PartitionResult plain = partition(p, s);
  for (const auto& f : plain.functions) EXPECT_TRUE(r.functions.count(f)) << f;
}

TEST(ScanMemoryRoots, HeapStackAndSpawnValues) {
  Program p = load_corpus("simple_server");
  MemoryRoots roots = scan_memory_roots(p, snapshot(p));
  EXPECT_EQ(roots.functions, (Set{"default_init"}));
  EXPECT_EQ(roots.reasons.at("default_init"), "heap-scan");
  EXPECT_TRUE(roots.globals.empty());
}

// Re-running the fixpoint from a converged partition changes nothing, and
// F is closed under the direct calls and function addresses of its regions.
TEST(PartitionProperty, ClosedAndIdempotent) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    FuzzProgram fp = generate_program(seed);
    Program p = parse_or_throw(fp.source);
    InterpOptions io;
    io.config = fp.config;
    InitResult init = run_init(p, io);
    ASSERT_EQ(init.stop.kind, StopKind::TransitionReached) << seed;
    PartitionResult r = partition(p, init.state);
    EXPECT_EQ(close_partition(p, init.state, r), r) << seed;
    for (const auto& name : r.functions) {
      const Function& f = p.function(name);
      auto it = r.regions.find(name);
      for (std::size_t i = 0; i < f.insns.size(); ++i) {
        if (it != r.regions.end() && !it->second.empty() && !it->second[i]) continue;
        const Instruction& ins = f.insns[i];
        if (ins.op == Opcode::Call || ins.op == Opcode::Spawn || ins.op == Opcode::FuncAddr) {
          EXPECT_TRUE(r.functions.count(ins.symbol)) << seed << ": " << name << " -> " << ins.symbol;
        }
      }
    }
  }
}

TEST(Partition, JsonHasEveryField) {
  Program p = load_corpus("global_access");
  auto j = nlohmann::json::parse(partition(p, snapshot(p)).to_json());
  for (const char* key : {"F", "accessibleGlobals", "evidence", "tailInstructions"}) EXPECT_TRUE(j.contains(key)) << key;
}

}  // namespace
