#include "phaseseed/fuzz.hpp"

#include <algorithm>
#include <ostream>
#include <random>
#include <sstream>

#include "phaseseed/parser.hpp"

namespace phaseseed {

namespace {

const char* const kSyscalls[] = {"read", "write", "open", "close", "mmap", "accept", "sendfile", "epoll_wait", "select", "poll"};

enum Action {
  kDispatch,
  kIcallAux,
  kIcallBox,
  kIcallArray,
  kIcallTable,
  kIcallGlobal,
  kDispatchNext,
  kSyscall,
  kInstall,
  kSpawn,
  kActionCount
};

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(seed) {}

  FuzzProgram run(std::uint64_t seed, int streams) {
    handlers_ = pick(3, 7);
    boxes_ = pick(2, 4);
    table_ = pick(2, 4);
    rounds_ = pick(2, 5);
    actions_.push_back(kDispatch);
    for (int a = 1; a < kActionCount; ++a)
      if (coin(2)) actions_.push_back(a);
    if (actions_.size() < 3) actions_.push_back(kIcallArray), actions_.push_back(kIcallTable);

    os_ << "// generated program, seed " << seed << "\n";
    os_ << "type %ctx = struct { %cb: fnptr, %aux: fnptr, %n: i64, %next: ptr<%ctx> }\n";
    os_ << "type %box = struct { %fp: fnptr, %v: i64 }\n";
    os_ << "global @gctx: ptr<%ctx>\n";
    os_ << "global @table: array<fnptr, " << table_ << "> = {";
    for (int k = 0; k < table_; ++k) os_ << (k ? ", " : " ") << h();
    os_ << " }\n";
    os_ << "global @gfp: fnptr = " << h() << "\n";
    os_ << "global @unused: fnptr = " << h() << "\n";
    for (int i = 0; i < handlers_; ++i) handler(i);
    helpers();
    main_function();

    FuzzProgram fp;
    fp.seed = seed;
    fp.source = os_.str();
    fp.config["opt0"] = pick(0, 1);
    fp.config["opt1"] = pick(0, 1);
    for (int s = 0; s < streams; ++s) fp.inputs.push_back(stream());
    return fp;
  }

 private:
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(int n) { return pick(0, n - 1) == 0; }
  std::string h() { return "@h" + std::to_string(pick(0, handlers_ - 1)); }
  std::string syscall() { return kSyscalls[pick(0, static_cast<int>(std::size(kSyscalls)) - 1)]; }

  void handler(int i) {
    os_ << "\nfunc @h" << i << "(%c: ptr<%ctx>) -> void {\nentry:\n";
    int ops = pick(0, 4);
    for (int k = 0; k < ops; ++k) {
      std::string t = "%t" + std::to_string(k);
      switch (pick(0, 5)) {
        case 0:
          os_ << "  syscall \"" << syscall() << "\"\n";
          break;
        case 1:
        case 2:
          os_ << "  " << t << "a = funcaddr " << h() << "\n";
          os_ << "  " << t << "p = gep %c, field " << (coin(2) ? "cb" : "aux") << "\n";
          os_ << "  store " << t << "a, " << t << "p\n";
          break;
        case 3:
          os_ << "  " << t << "a = funcaddr " << h() << "\n";
          if (coin(2)) {
            os_ << "  store " << t << "a, @gfp\n";
          } else {
            os_ << "  " << t << "k = const " << pick(0, table_ - 1) << "\n";
            os_ << "  " << t << "e = gep @table, index " << t << "k\n";
            os_ << "  store " << t << "a, " << t << "e\n";
          }
          break;
        case 4:
          if (i + 1 < handlers_) os_ << "  call @h" << pick(i + 1, handlers_ - 1) << "(%c)\n";
          break;
        default:
          os_ << "  " << t << "v = const " << pick(0, 9) << "\n";
          os_ << "  " << t << "p = gep %c, field n\n";
          os_ << "  store " << t << "v, " << t << "p\n";
          break;
      }
    }
    os_ << "  ret\n}\n";
  }

  void helpers() {
    os_ << R"(
func @install(%c: ptr<%ctx>, %f: fnptr) -> void {
entry:
  %p = gep %c, field cb
  store %f, %p
  ret
}

func @mkctx(%f: fnptr) -> ptr<%ctx> {
entry:
  %sz = sizeof %ctx
  %raw = malloc %sz
  %c = cast %raw to ptr<%ctx>
  %p0 = gep %c, field cb
  store %f, %p0
  %p1 = gep %c, field aux
  store %f, %p1
  %z = const 0
  %p2 = gep %c, field n
  store %z, %p2
  %p3 = gep %c, field next
  store %c, %p3
  ret %c
}

func @mkbox(%f: fnptr) -> ptr<%box> {
entry:
  %sz = sizeof %box
  %raw = malloc %sz
  %b = cast %raw to ptr<%box>
  %p0 = gep %b, field fp
  store %f, %p0
  %one = const 1
  %p1 = gep %b, field v
  store %one, %p1
  ret %b
}

func @dispatch(%c: ptr<%ctx>) -> void {
entry:
  %p = gep %c, field cb
  %f = load %p
  icall %f(%c)
  ret
}

func @worker(%c: ptr<%ctx>) -> void {
entry:
  call @dispatch(%c)
  syscall "futex"
  ret
}
)";
  }

  void main_function() {
    os_ << "\nfunc @main() -> void {\nentry:\n";
    os_ << "  %a0 = funcaddr " << h() << "\n";
    os_ << "  %c1 = call @mkctx(%a0)\n";
    os_ << "  %a1 = funcaddr " << h() << "\n";
    os_ << "  %c2 = call @mkctx(%a1)\n";
    os_ << "  %nx = gep %c1, field next\n";
    os_ << "  store %c2, %nx\n";
    os_ << "  store %c1, @gctx\n";
    os_ << "  %z = const 0\n";
    os_ << "  %o0 = config \"opt0\"\n";
    os_ << "  %t0 = cmp eq %o0, %z\n";
    os_ << "  cbr %t0, skip0, do0\n";
    os_ << "do0:\n";
    os_ << "  %a2 = funcaddr " << h() << "\n";
    os_ << "  call @install(%c1, %a2)\n";
    os_ << "  br skip0\n";
    os_ << "skip0:\n";
    os_ << "  %o1 = config \"opt1\"\n";
    os_ << "  %t1 = cmp eq %o1, %z\n";
    os_ << "  cbr %t1, skip1, do1\n";
    os_ << "do1:\n";
    os_ << "  %a3 = funcaddr " << h() << "\n";
    os_ << "  store %a3, @gfp\n";
    os_ << "  %a4 = funcaddr " << h() << "\n";
    os_ << "  %px = gep %c2, field aux\n";
    os_ << "  store %a4, %px\n";
    os_ << "  br skip1\n";
    os_ << "skip1:\n";
    os_ << "  %bs = sizeof %box\n";
    os_ << "  %nb = const " << boxes_ << "\n";
    os_ << "  %tot = mul %bs, %nb\n";
    os_ << "  %raw = malloc %tot\n";
    os_ << "  %arr = cast %raw to ptr<%box>\n";
    os_ << "  %islot = alloc i64\n";
    os_ << "  store %z, %islot\n";
    os_ << "  %rslot = alloc i64\n";
    os_ << "  store %z, %rslot\n";
    os_ << "  br fill\n";
    os_ << "fill:\n";
    os_ << "  %i = load %islot\n";
    os_ << "  %e = gep %arr, index %i\n";
    os_ << "  %ef = gep %e, field fp\n";
    os_ << "  %fa = funcaddr " << h() << "\n";
    os_ << "  store %fa, %ef\n";
    os_ << "  %one = const 1\n";
    os_ << "  %i2 = add %i, %one\n";
    os_ << "  store %i2, %islot\n";
    os_ << "  %more = cmp lt %i2, %nb\n";
    os_ << "  cbr %more, fill, filled\n";
    os_ << "filled:\n";
    os_ << "  %kk = const " << pick(0, boxes_ - 1) << "\n";
    os_ << "  %ek = gep %arr, index %kk\n";
    os_ << "  %ekf = gep %ek, field fp\n";
    os_ << "  %fb = funcaddr " << h() << "\n";
    os_ << "  store %fb, %ekf\n";
    os_ << "  %a5 = funcaddr " << h() << "\n";
    os_ << "  %b1 = call @mkbox(%a5)\n";
    os_ << "  %a6 = funcaddr " << h() << "\n";
    os_ << "  %b2 = call @mkbox(%a6)\n";
    if (coin(3)) os_ << "  syscall \"" << syscall() << "\"\n";
    if (!coin(4)) os_ << "  call @dispatch(%c1)\n";
    if (coin(2)) os_ << "  spawn @worker(%c2)\n";
    os_ << "  start_processing\n";
    os_ << "  br loop\n";
    os_ << "loop:\n";
    os_ << "  %in = input\n";
    for (std::size_t k = 0; k < actions_.size(); ++k) {
      std::string q = std::to_string(k);
      if (k) os_ << "chk" << q << ":\n";
      os_ << "  %q" << q << " = const " << k << "\n";
      os_ << "  %m" << q << " = cmp eq %in, %q" << q << "\n";
      std::string other = k + 1 < actions_.size() ? "chk" + std::to_string(k + 1) : "latch";
      os_ << "  cbr %m" << q << ", act" << q << ", " << other << "\n";
    }
    for (std::size_t k = 0; k < actions_.size(); ++k) {
      std::string s = std::to_string(k);
      os_ << "act" << s << ":\n";
      action(actions_[k], s);
      os_ << "  br latch\n";
    }
    os_ << "latch:\n";
    os_ << "  %r = load %rslot\n";
    os_ << "  %r2 = add %r, %one\n";
    os_ << "  store %r2, %rslot\n";
    os_ << "  %rl = const " << rounds_ << "\n";
    os_ << "  %again = cmp lt %r2, %rl\n";
    os_ << "  cbr %again, loop, done\n";
    os_ << "done:\n";
    os_ << "  ret\n}\n";
  }

  void action(int a, const std::string& s) {
    std::string x = "%x" + s;
    switch (a) {
      case kDispatch:
        os_ << "  call @dispatch(%c1)\n";
        break;
      case kIcallAux:
        os_ << "  " << x << "p = gep %c1, field aux\n";
        os_ << "  " << x << "f = load " << x << "p\n";
        os_ << "  icall " << x << "f(%c1)\n";
        break;
      case kIcallBox:
        os_ << "  " << x << "p = gep " << (coin(2) ? "%b1" : "%b2") << ", field fp\n";
        os_ << "  " << x << "f = load " << x << "p\n";
        os_ << "  icall " << x << "f(%c2)\n";
        break;
      case kIcallArray:
        os_ << "  " << x << "i = input\n";
        os_ << "  " << x << "e = gep %arr, index " << x << "i\n";
        os_ << "  " << x << "p = gep " << x << "e, field fp\n";
        os_ << "  " << x << "f = load " << x << "p\n";
        os_ << "  icall " << x << "f(%c1)\n";
        break;
      case kIcallTable:
        os_ << "  " << x << "i = input\n";
        os_ << "  " << x << "e = gep @table, index " << x << "i\n";
        os_ << "  " << x << "f = load " << x << "e\n";
        os_ << "  icall " << x << "f(%c2)\n";
        break;
      case kIcallGlobal:
        os_ << "  " << x << "f = load @gfp\n";
        os_ << "  icall " << x << "f(%c1)\n";
        break;
      case kDispatchNext:
        os_ << "  " << x << "g = load @gctx\n";
        os_ << "  " << x << "p = gep " << x << "g, field next\n";
        os_ << "  " << x << "n = load " << x << "p\n";
        os_ << "  call @dispatch(" << x << "n)\n";
        break;
      case kSyscall:
        os_ << "  syscall \"" << syscall() << "\"\n";
        break;
      case kInstall:
        os_ << "  " << x << "a = funcaddr " << h() << "\n";
        os_ << "  call @install(%c1, " << x << "a)\n";
        break;
      case kSpawn:
        os_ << "  spawn @worker(%c1)\n";
        break;
      default:
        break;
    }
  }

  std::vector<std::int64_t> stream() {
    std::vector<std::int64_t> in;
    for (int r = 0; r < rounds_; ++r) {
      int k = pick(0, static_cast<int>(actions_.size()));
      in.push_back(k);
      if (k == static_cast<int>(actions_.size())) continue;
      if (actions_[k] == kIcallArray) in.push_back(pick(0, boxes_ - 1));
      if (actions_[k] == kIcallTable) in.push_back(pick(0, table_ - 1));
    }
    return in;
  }

  std::mt19937_64 rng_;
  std::ostringstream os_;
  int handlers_ = 0, boxes_ = 0, table_ = 0, rounds_ = 0;
  std::vector<int> actions_;
};

bool in_region(const PartitionResult& part, const std::string& fn, int insn) {
  auto it = part.regions.find(fn);
  if (it == part.regions.end()) return false;
  return it->second.empty() || it->second.at(insn);
}

}  // namespace

FuzzProgram generate_program(std::uint64_t seed, int streams) { return Generator(seed).run(seed, streams); }

TrialResult check_program(const FuzzProgram& fp, const CheckOptions& opts) {
  TrialResult out;
  auto fail = [&](std::string msg) { out.violations.push_back(std::move(msg)); };

  ParseResult pr = parse_program(fp.source);
  if (!pr.ok()) {
    fail("does not parse: " + pr.diagnostics.front().str());
    return out;
  }
  const Program& p = *pr.program;
  if (auto d = validate(p); !d.empty()) {
    fail("does not validate: " + d.front().str());
    return out;
  }

  AnalyzeOptions ao;
  ao.config = fp.config;
  ao.program_name = "fuzz" + std::to_string(fp.seed);
  ao.program_hash = fnv1a64_hex(fp.source);

  std::map<Mode, ModeArtifacts> runs;
  for (Mode m : all_modes()) {
    try {
      runs.emplace(m, run_mode(p, m, ao));
    } catch (const std::exception& e) {
      fail(std::string(mode_name(m)) + ": analysis failed: " + e.what());
    }
  }
  if (runs.size() != all_modes().size()) return out;

  if (opts.tamper)
    for (auto& [m, a] : runs) opts.tamper(m, a);

  std::vector<AnalysisReport> reports;
  for (const auto& [m, a] : runs) {
    if (opts.compare_naive) {
      ++out.solver_comparisons;
      if (solve_naive(a.graph, a.seeds) != a.solution) fail(std::string(mode_name(m)) + ": naive and worklist solutions differ");
    }
    if (auto c = verify_closure(a.graph, a.seeds, a.solution); !c.empty())
      fail(std::string(mode_name(m)) + ": solution not closed: " + c.front());
    reports.push_back(build_report(p, a, runs.at(Mode::Baseline), ao));
    out.avg_ec[m] = reports.back().ec_avg;
  }
  for (std::size_t i = 0; i < reports.size(); ++i)
    for (std::size_t j = i + 1; j < reports.size(); ++j)
      for (const auto& v : compare(reports[i], reports[j]).violations) fail(v);

  const std::vector<IcallEvent>& init_icalls = runs.at(Mode::PhaseSeed).state->icalls;
  for (std::size_t s = 0; s < fp.inputs.size(); ++s) {
    std::string tag = "stream " + std::to_string(s) + ": ";
    InterpOptions io;
    io.config = fp.config;
    FullResult fr = run_full(p, io, fp.inputs[s]);
    ++out.oracle_runs;
    if (fr.stop.kind != StopKind::Finished) {
      fail(tag + "oracle stopped with " + stop_kind_name(fr.stop.kind) + ": " + fr.stop.message);
      continue;
    }
    if (!fr.trace.transitioned) fail(tag + "transition not reached");

    std::vector<IcallEvent> observed_init;
    for (const auto& ev : fr.trace.icalls)
      if (ev.phase == Phase::Init) observed_init.push_back(ev);
    if (observed_init != init_icalls) fail(tag + "init-phase icalls differ from the interpreted init phase");

    for (const auto& [m, a] : runs) {
      std::string mt = tag + mode_name(m) + ": ";
      for (const auto& ev : fr.trace.icalls) {
        if (ev.phase != Phase::Processing) continue;
        ++out.observed_icalls;
        std::string site = site_name(p, ev.site);
        const std::string& target = p.functions.at(ev.target).name;
        if (!a.reach.icall_sites.count(site)) fail(mt + "icall site " + site + " executed but not reachable");
        auto it = a.solution.call_graph.find(site);
        if (it == a.solution.call_graph.end() || !it->second.count(target))
          fail(mt + "target " + target + " of " + site + " missing from its EC");
      }
      for (const auto& sc : fr.trace.processing_syscalls)
        if (!a.reach.syscalls.count(sc)) fail(mt + "syscall " + sc + " missing from the processing set");
      for (int f : fr.trace.processing_functions) {
        const std::string& name = p.functions.at(f).name;
        if (!a.reach.functions.count(name)) fail(mt + "function " + name + " executed but not reachable");
        if (a.partition && !a.partition->functions.count(name)) fail(mt + "function " + name + " executed but not in F");
      }
      if (a.partition)
        for (const auto& site : fr.trace.processing_insns) {
          const std::string& name = p.functions.at(site.func).name;
          if (!in_region(*a.partition, name, site.insn))
            fail(mt + "instruction " + site_name(p, site) + " executed outside the partition region");
        }
    }
  }
  return out;
}

FuzzSummary run_fuzz(int trials, std::uint64_t seed, int streams, std::ostream* log) {
  FuzzSummary sum;
  std::map<Mode, double> totals;
  for (int t = 0; t < trials; ++t) {
    std::uint64_t s = seed + static_cast<std::uint64_t>(t);
    TrialResult r = check_program(generate_program(s, streams));
    ++sum.trials;
    sum.oracle_runs += r.oracle_runs;
    sum.observed_icalls += r.observed_icalls;
    sum.solver_comparisons += r.solver_comparisons;
    for (const auto& [m, v] : r.avg_ec) totals[m] += v;
    if (!r.violations.empty()) ++sum.failed_trials;
    for (const auto& v : r.violations) sum.violations.push_back("seed " + std::to_string(s) + ": " + v);
    if (log) {
      *log << "seed " << s << ": " << (r.violations.empty() ? "ok" : "FAIL") << " icalls=" << r.observed_icalls;
      for (const auto& [m, v] : r.avg_ec) *log << " " << mode_name(m) << "=" << v;
      *log << "\n";
      for (const auto& v : r.violations) *log << "  " << v << "\n";
    }
  }
  for (const auto& [m, v] : totals) sum.mean_avg_ec[m] = trials ? v / trials : 0.0;
  return sum;
}

}  // namespace phaseseed
