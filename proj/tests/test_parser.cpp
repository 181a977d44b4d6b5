#include <gtest/gtest.h>

#include "phaseseed/fuzz.hpp"
#include "phaseseed/parser.hpp"
#include "support.hpp"

using namespace phaseseed;
using namespace phaseseed::testing;

namespace {

std::vector<Diagnostic> all_diagnostics(const std::string& src) {
  ParseResult pr = parse_program(src);
  if (!pr.ok() || !pr.diagnostics.empty()) return pr.diagnostics;
  return validate(*pr.program);
}

bool has_diag(const std::vector<Diagnostic>& d, int line, const std::string& text) {
  for (const auto& x : d)
    if ((line == 0 || x.line == line) && x.message.find(text) != std::string::npos) return true;
  return false;
}

std::string dump(const std::vector<Diagnostic>& d) {
  std::string s;
  for (const auto& x : d) s += x.str() + "\n";
  return s;
}

TEST(Parse, MinimalProgram) {
  ParseResult pr = parse_program("type %t = struct { %a: i64 }\nfunc @main() -> void {\nentry:\n  ret\n}\n");
  ASSERT_TRUE(pr.ok()) << dump(pr.diagnostics);
  EXPECT_EQ(pr.program->structs.size(), 1u);
  EXPECT_EQ(pr.program->functions.size(), 1u);
  EXPECT_TRUE(validate(*pr.program).empty());
}

TEST(Parse, SimpleServerFunctions) {
  Program p = load_corpus("simple_server");
  std::set<std::string> names;
  for (const auto& f : p.functions) names.insert(f.name);
  EXPECT_EQ(names, (std::set<std::string>{"main", "setup", "gzip_init", "default_init", "request_handler",
                                          "gzip_handler", "default_handler"}));
}

TEST(Parse, CommentsAndBlankLinesAreIgnored) {
  auto d = all_diagnostics("// header\n\nfunc @main() -> void { // trailing\nentry: // label\n  start_processing // mark\n\n  ret\n}\n");
  EXPECT_TRUE(d.empty()) << dump(d);
}

TEST(Parse, CbrMissingTargetReportsLine) {
  auto d = all_diagnostics("func @main() -> void {\nentry:\n  %c = const 1\n  cbr %c, done\ndone:\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 4, "")) << dump(d);
}

TEST(Parse, UnknownOpcode) {
  auto d = all_diagnostics("func @main() -> void {\nentry:\n  %x = frobnicate 1\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 3, "unknown opcode")) << dump(d);
}

TEST(Parse, RecoversAndReportsSeveralErrors) {
  auto d = all_diagnostics(
      "func @main() -> void {\nentry:\n  %x = frobnicate 1\n  %y = const\n  call @nowhere()\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 3, "unknown opcode")) << dump(d);
  EXPECT_TRUE(has_diag(d, 4, "")) << dump(d);
  EXPECT_TRUE(has_diag(d, 5, "unresolved reference")) << dump(d);
}

TEST(Parse, DuplicateStructAndGlobal) {
  auto d = all_diagnostics("type %t = struct { %a: i64 }\ntype %t = struct { %b: i64 }\nglobal @g: i64\nglobal @g: i64\n"
                           "func @main() -> void {\nentry:\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 2, "duplicate symbol")) << dump(d);
  EXPECT_TRUE(has_diag(d, 4, "duplicate symbol")) << dump(d);
}

TEST(Parse, FunctionUsedAsValueNeedsFuncaddr) {
  auto d = all_diagnostics("global @fp: fnptr\nfunc @main() -> void {\nentry:\n  store @main, @fp\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 4, "funcaddr")) << dump(d);
}

TEST(Parse, IcallResultNeedsType) {
  auto d = all_diagnostics("func @main() -> void {\nentry:\n  %f = funcaddr @main\n  %r = icall %f()\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 4, "-> type")) << dump(d);
}

TEST(Parse, FieldNamesResolveToOffsets) {
  Program p = parse_or_throw(R"(
type %s = struct { %a: i64, %b: fnptr, %c: ptr<i64> }
func @main() -> void {
entry:
  %p = alloc %s
  %q = gep %p, field c
  %r = gep %p, field 1
  start_processing
  ret
}
)");
  const Function& f = p.function("main");
  EXPECT_EQ(f.insns[1].imm, 2);
  EXPECT_EQ(f.insns[1].offset, 16);
  EXPECT_EQ(f.insns[2].offset, 8);
  EXPECT_EQ(f.reg_types[1].str(), "ptr<ptr<i64>>");
  EXPECT_EQ(f.reg_types[2].str(), "ptr<fnptr>");
}

TEST(Validate, StoreThroughOpaquePointer) {
  auto d = all_diagnostics("func @main() -> void {\nentry:\n  %n = const 8\n  %m = malloc %n\n  store %n, %m\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 5, "load/store through opaque pointer")) << dump(d);
}

TEST(Validate, LoadThroughOpaquePointer) {
  auto d = all_diagnostics("func @main() -> void {\nentry:\n  %n = const 8\n  %m = malloc %n\n  %v = load %m\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 5, "load/store through opaque pointer")) << dump(d);
}

TEST(Validate, TwoTransitionPoints) {
  auto d = all_diagnostics(
      "func @f() -> void {\nentry:\n  start_processing\n  ret\n}\nfunc @main() -> void {\nentry:\n  call @f()\n  "
      "start_processing\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 0, "start_processing appears more than once")) << dump(d);
}

TEST(Validate, TransitionPointMustBeReachableFromEntry) {
  auto d = all_diagnostics(
      "func @orphan() -> void {\nentry:\n  start_processing\n  ret\n}\nfunc @main() -> void {\nentry:\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 3, "start_processing")) << dump(d);
}

TEST(Validate, UseMustBeDominatedByDefinition) {
  auto d = all_diagnostics(
      "func @main() -> void {\nentry:\n  %c = config \"x\"\n  cbr %c, a, b\na:\n  %v = const 1\n  br b\nb:\n  %w = add %v, "
      "%v\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 9, "register %v used before defined")) << dump(d);
  EXPECT_EQ(d.size(), 1u) << dump(d);
}

TEST(Validate, DominatingDefinitionIsVisibleInLaterBlocks) {
  auto d = all_diagnostics(
      "func @main() -> void {\nentry:\n  %v = const 1\n  br next\nnext:\n  %w = add %v, %v\n  start_processing\n  ret\n}\n");
  EXPECT_TRUE(d.empty()) << dump(d);
}

TEST(Validate, UseBeforeDefinitionInSameBlock) {
  auto d = all_diagnostics("func @main() -> void {\nentry:\n  %w = add %v, %v\n  %v = const 1\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 3, "used before defined")) << dump(d);
}

TEST(Validate, MissingEntryFunction) {
  auto d = all_diagnostics("func @other() -> void {\nentry:\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 0, "main")) << dump(d);
}

TEST(Validate, TerminatorInTheMiddleOfABlock) {
  auto d = all_diagnostics("func @main() -> void {\nentry:\n  ret\n  start_processing\n  ret\n}\n");
  EXPECT_FALSE(d.empty());
}

TEST(Validate, GlobalInitializerMustMatchType) {
  auto d = all_diagnostics("global @g: fnptr = 7\nfunc @main() -> void {\nentry:\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 1, "initializer")) << dump(d);
}

TEST(Validate, ArityOfDirectCalls) {
  auto d = all_diagnostics(
      "func @f(%a: i64) -> void {\nentry:\n  ret\n}\nfunc @main() -> void {\nentry:\n  call @f()\n  ret\n}\n");
  EXPECT_TRUE(has_diag(d, 7, "expects 1 arguments")) << dump(d);
}

TEST(Validate, OpaqueOnlyBehindPointers) {
  auto d = all_diagnostics("type %s = struct { %a: opaque }\nfunc @main() -> void {\nentry:\n  ret\n}\n");
  EXPECT_FALSE(d.empty());
}

TEST(Validate, RecursiveEmbeddingRejected) {
  auto d = all_diagnostics("type %s = struct { %a: i64, %b: %s }\nfunc @main() -> void {\nentry:\n  ret\n}\n");
  EXPECT_FALSE(d.empty());
  auto ok = all_diagnostics("type %s = struct { %a: i64, %b: ptr<%s> }\nfunc @main() -> void {\nentry:\n  ret\n}\n");
  EXPECT_TRUE(ok.empty()) << dump(ok);
}

TEST(Validate, AcceptsEveryCorpusProgram) {
  for (const auto& name : corpus_names()) EXPECT_NO_THROW(load_corpus(name)) << name;
}

// parse(print(parse(src))) is structurally identical to parse(src).
TEST(RoundTrip, CorpusPrograms) {
  for (const auto& name : corpus_names()) {
    Program p = load_corpus(name);
    std::string printed = print_program(p);
    Program q = parse_or_throw(printed);
    EXPECT_EQ(p, q) << name << "\n" << printed;
    EXPECT_EQ(print_program(q), printed) << name;
  }
}

TEST(RoundTrip, GeneratedPrograms) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    FuzzProgram fp = generate_program(seed);
    Program p = parse_or_throw(fp.source);
    EXPECT_TRUE(validate(p).empty()) << fp.source;
    EXPECT_EQ(parse_or_throw(print_program(p)), p) << fp.source;
  }
}

}  // namespace
