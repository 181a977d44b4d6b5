#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "phaseseed/fuzz.hpp"
#include "phaseseed/parser.hpp"
#include "phaseseed/pipeline.hpp"
#include "phaseseed/seeding.hpp"
#include "support.hpp"

using namespace phaseseed;
using namespace phaseseed::testing;

namespace {

MachineState snapshot(const Program& p, std::map<std::string, std::int64_t> config = {}) {
  InterpOptions io;
  io.config = std::move(config);
  InitResult r = run_init(p, io);
  EXPECT_EQ(r.stop.kind, StopKind::TransitionReached) << r.stop.message;
  return r.state;
}

bool has(const std::vector<std::string>& lines, const std::string& s) {
  return std::find(lines.begin(), lines.end(), s) != lines.end();
}

const char* kDangling = R"(
type %s = struct { %a: i64 }
global @keep: ptr<%s>
func @main() -> void {
entry:
  %n = sizeof %s
  %m = malloc %n
  %p = cast %m to ptr<%s>
  store %p, @keep
  free %m
  start_processing
  ret
}
)";

TEST(CloneHeapSites, OrdinalsFollowAllocationOrder) {
  Program p = load_corpus("heap_clone");
  MachineState s = snapshot(p);
  CloneTable clones = clone_heap_sites(p, s, HeapModel::Clone);
  std::vector<std::string> roots;
  for (const auto& [id, root] : clones.roots) roots.push_back(root);
  EXPECT_EQ(roots, (std::vector<std::string>{"xmalloc:entry:0#0", "xmalloc:entry:0#1"}));
  CloneTable sites = clone_heap_sites(p, s, HeapModel::Site);
  for (const auto& [id, root] : sites.roots) EXPECT_EQ(root, "xmalloc:entry:0");
}

TEST(ExtractSeeds, ClonesKeepHandlersApart) {
  Program p = load_corpus("heap_clone");
  MachineState s = snapshot(p);
  auto lines = seed_lines(extract_seeds(p, s, clone_heap_sites(p, s)));
  EXPECT_TRUE(has(lines, "obj:xmalloc:entry:0#0 -> @on_read"));
  EXPECT_TRUE(has(lines, "obj:xmalloc:entry:0#1 -> @on_write"));
  EXPECT_FALSE(has(lines, "obj:xmalloc:entry:0#0 -> @on_write"));
  EXPECT_TRUE(has(lines, "main:%a -> obj:xmalloc:entry:0#0"));
}

TEST(ExtractSeeds, ProjectionEqualsTheSiteModel) {
  for (const char* name : {"heap_clone", "simple_server", "punning", "threads", "array_collapse"}) {
    Program p = load_corpus(name);
    MachineState s = snapshot(p);
    SeedFacts cloned = project_to_sites(extract_seeds(p, s, clone_heap_sites(p, s, HeapModel::Clone)));
    SeedFacts site = extract_seeds(p, s, clone_heap_sites(p, s, HeapModel::Site));
    std::set<SeedFact> a(cloned.begin(), cloned.end()), b(site.begin(), site.end());
    EXPECT_EQ(a, b) << name;
  }
}

TEST(ProjectToSite, StripsOnlyTheOrdinal) {
  EXPECT_EQ(project_to_site(obj_node("f:entry:0#3", 8)), obj_node("f:entry:0", 8));
  EXPECT_EQ(project_to_site(obj_node("@g", 8)), obj_node("@g", 8));
  EXPECT_EQ(project_to_site(reg_node("main", "a")), reg_node("main", "a"));
}

TEST(ExtractSeeds, ArrayElementsCollapseOntoOneCell) {
  Program p = load_corpus("array_collapse");
  MachineState s = snapshot(p);
  auto lines = seed_lines(extract_seeds(p, s, clone_heap_sites(p, s)));
  EXPECT_TRUE(has(lines, "obj:@routes -> @get_index"));
  EXPECT_TRUE(has(lines, "obj:@routes -> @delete_item"));
  EXPECT_TRUE(has(lines, "obj:@routes+8 -> @release"));
  for (const auto& l : lines) EXPECT_EQ(l.find("obj:@routes+16"), std::string::npos) << l;
}

TEST(ExtractSeeds, DanglingPointerRejectsTheSnapshot) {
  Program p = parse_or_throw(kDangling);
  MachineState s = snapshot(p);
  EXPECT_THROW(extract_seeds(p, s, clone_heap_sites(p, s)), SeedError);
  EXPECT_THROW(run_mode(p, Mode::PhaseSeed, {}), AnalysisError);
  try {
    run_mode(p, Mode::PhaseSeed, {});
  } catch (const AnalysisError& e) {
    EXPECT_NE(std::string(e.what()).find("snapshot rejected"), std::string::npos);
  }
  EXPECT_NO_THROW(run_mode(p, Mode::Baseline, {}));
}

TEST(ExtractSeeds, FunctionsOnlyKeepsHeapFunctionValues) {
  Program p = load_corpus("simple_server");
  MachineState s = snapshot(p);
  SeedOptions opts;
  opts.functions_only = true;
  SeedFacts seeds = extract_seeds(p, s, clone_heap_sites(p, s), opts);
  ASSERT_FALSE(seeds.empty());
  for (const auto& f : seeds) {
    EXPECT_EQ(f.node.kind, NodeKey::Kind::Obj) << node_name(f.node);
    EXPECT_EQ(f.member.kind, NodeKey::Kind::Func) << node_name(f.member);
  }
}

TEST(ExtractSeeds, InaccessibleGlobalsAreNotSeeded) {
  Program p = load_corpus("global_access");
  MachineState s = snapshot(p);
  std::set<std::string> acc = {"request_hook"};
  SeedOptions opts;
  opts.accessible_globals = &acc;
  auto lines = seed_lines(extract_seeds(p, s, clone_heap_sites(p, s), opts));
  EXPECT_TRUE(has(lines, "obj:@request_hook -> @handle"));
  EXPECT_FALSE(has(lines, "obj:@boot_hook -> @print_banner"));
  auto all = seed_lines(extract_seeds(p, s, clone_heap_sites(p, s)));
  EXPECT_TRUE(has(all, "obj:@boot_hook -> @print_banner"));
}

TEST(SeedsToJsonl, OneObjectPerLine) {
  Program p = load_corpus("heap_clone");
  MachineState s = snapshot(p);
  SeedFacts seeds = extract_seeds(p, s, clone_heap_sites(p, s));
  std::istringstream in(seeds_to_jsonl(seeds));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(parse_node_name(j["node"].get<std::string>()), seeds[n].node);
    EXPECT_EQ(parse_node_name(j["member"].get<std::string>()), seeds[n].member);
    ++n;
  }
  EXPECT_EQ(n, seeds.size());
}

// Extraction depends only on the snapshot.
TEST(SeedProperty, ExtractionIsDeterministic) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    FuzzProgram fp = generate_program(seed);
    Program p = parse_or_throw(fp.source);
    MachineState s = snapshot(p, fp.config);
    SeedFacts a = extract_seeds(p, s, clone_heap_sites(p, s));
    SeedFacts b = extract_seeds(p, s, clone_heap_sites(p, s));
    EXPECT_EQ(a, b) << seed;
  }
}

}  // namespace
