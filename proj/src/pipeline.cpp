#include "phaseseed/pipeline.hpp"

#include <algorithm>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "phaseseed/parser.hpp"

namespace phaseseed {

using nlohmann::ordered_json;

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Baseline: return "baseline";
    case Mode::PsUnreachable: return "ps-unreachable";
    case Mode::PsInsensitive: return "ps-insensitive";
    case Mode::PhaseSeed: return "phaseseed";
  }
  return "?";
}

std::optional<Mode> parse_mode(const std::string& s) {
  for (Mode m : all_modes())
    if (s == mode_name(m)) return m;
  return std::nullopt;
}

const std::vector<Mode>& all_modes() {
  static const std::vector<Mode> modes = {Mode::Baseline, Mode::PsUnreachable, Mode::PsInsensitive, Mode::PhaseSeed};
  return modes;
}

bool refines(Mode precise, Mode coarse) {
  if (precise == coarse) return true;
  if (coarse == Mode::Baseline) return true;
  return precise == Mode::PhaseSeed && coarse == Mode::PsInsensitive;
}

// ---------------------------------------------------------------------------
// Mode runs

Reachability reachable(const Program& p, const AnalysisScope& scope, const PtsSolution& sol,
                       const std::map<std::string, std::vector<bool>>& roots) {
  std::map<std::string, std::vector<bool>> regions;
  std::deque<std::string> work;
  auto add = [&](const std::string& f, const std::vector<bool>& mask) {
    if (!scope.functions.count(f)) return;
    auto [it, fresh] = regions.emplace(f, mask);
    if (fresh) {
      work.push_back(f);
      return;
    }
    if (it->second.empty()) return;
    bool grew = false;
    if (mask.empty()) {
      it->second.clear();
      grew = true;
    } else {
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] && !it->second[i]) grew = it->second[i] = true;
    }
    if (grew) work.push_back(f);
  };
  for (const auto& [f, mask] : roots) add(f, mask);
  Reachability r;
  while (!work.empty()) {
    std::string name = work.front();
    work.pop_front();
    int fi = p.function_index(name);
    const Function& f = p.functions[fi];
    std::vector<bool> mask = regions.at(name);
    for (int i = 0; i < static_cast<int>(f.insns.size()); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      const Instruction& ins = f.insns[i];
      switch (ins.op) {
        case Opcode::Call:
        case Opcode::Spawn:
          add(ins.symbol, {});
          break;
        case Opcode::ICall: {
          std::string site = site_name(p, {fi, i});
          r.icall_sites.insert(site);
          auto it = sol.call_graph.find(site);
          if (it != sol.call_graph.end())
            for (const auto& t : it->second) add(t, {});
          break;
        }
        case Opcode::Syscall:
          r.syscalls.insert(ins.symbol);
          break;
        default:
          break;
      }
    }
  }
  for (const auto& [f, mask] : regions) {
    r.functions.insert(f);
    r.instructions += mask.empty() ? static_cast<std::int64_t>(p.function(f).insns.size())
                                   : static_cast<std::int64_t>(std::count(mask.begin(), mask.end(), true));
  }
  return r;
}

namespace {

std::map<std::string, std::vector<bool>> processing_roots(const Program& p, const MachineState& s) {
  std::map<std::string, std::vector<bool>> roots;
  for (const auto& fr : s.frames) {
    const Function& f = p.functions.at(fr.func);
    std::vector<bool> tail = resume_region(f, fr.pc + 1);
    auto [it, fresh] = roots.emplace(f.name, tail);
    if (!fresh)
      for (std::size_t i = 0; i < tail.size(); ++i) it->second[i] = it->second[i] || tail[i];
  }
  for (int e : s.spawned_entries) roots[p.functions.at(e).name] = {};
  return roots;
}

std::vector<AnalysisScope::PendingReturn> pending_returns(const Program& p, const MachineState& s) {
  std::vector<AnalysisScope::PendingReturn> out;
  for (std::size_t i = 0; i + 1 < s.frames.size(); ++i) {
    const Function& caller = p.functions.at(s.frames[i].func);
    const Instruction& call = caller.insns.at(s.frames[i].pc);
    if (call.dest < 0) continue;
    out.push_back({caller.name, caller.reg_names[call.dest], p.functions.at(s.frames[i + 1].func).name});
  }
  return out;
}

}  // namespace

ModeArtifacts run_mode(const Program& p, Mode mode, const AnalyzeOptions& opts) {
  ModeArtifacts a;
  a.mode = mode;
  std::map<std::string, std::vector<bool>> roots;
  if (mode == Mode::Baseline) {
    a.scope = AnalysisScope::whole_program(p);
    roots[p.entry] = {};
  } else {
    InterpOptions io;
    io.config = opts.config;
    io.budget = opts.budget;
    InitResult init = run_init(p, io);
    if (init.stop.kind != StopKind::TransitionReached) {
      std::string msg = init.stop.message;
      if (init.stop.kind == StopKind::Trap) msg = "trap during initialization at " + site_name(p, init.stop.where) + ": " + msg;
      if (init.stop.kind == StopKind::BudgetExhausted) msg = "initialization exceeded the step budget";
      throw AnalysisError(msg);
    }
    a.state = std::move(init.state);
    const MachineState& s = *a.state;
    a.partition = partition(p, s);
    const PartitionResult& part = *a.partition;
    try {
      if (mode == Mode::PsUnreachable) {
        for (const auto& f : part.functions) a.scope.functions.emplace(f, std::vector<bool>{});
        for (int f : s.executed_functions) a.scope.functions.emplace(p.functions[f].name, std::vector<bool>{});
        a.scope.global_initializers = true;
        SeedOptions so;
        so.functions_only = true;
        a.seeds = extract_seeds(p, s, clone_heap_sites(p, s, HeapModel::Site), so);
      } else {
        a.scope.functions = part.regions;
        a.scope.pending_returns = pending_returns(p, s);
        a.scope.global_initializers = false;
        SeedOptions so;
        so.accessible_globals = &part.accessible_globals;
        HeapModel hm = mode == Mode::PhaseSeed ? HeapModel::Clone : HeapModel::Site;
        a.seeds = extract_seeds(p, s, clone_heap_sites(p, s, hm), so);
      }
    } catch (const SeedError& e) {
      throw AnalysisError(std::string("snapshot rejected: ") + e.what());
    }
    roots = processing_roots(p, s);
  }
  a.graph = build_constraints(p, a.scope);
  a.solution = opts.naive_solver ? solve_naive(a.graph, a.seeds) : solve_worklist(a.graph, a.seeds);
  a.reach = reachable(p, a.scope, a.solution, roots);
  return a;
}

std::map<std::string, SharedSite> shared_callsite_split(const Program& p, const std::vector<IcallEvent>& init_icalls,
                                                        const PtsSolution& sol, const Reachability& reach) {
  std::map<std::string, SharedSite> out;
  for (const auto& ev : init_icalls) {
    if (ev.phase != Phase::Init) continue;
    std::string site = site_name(p, ev.site);
    if (!reach.icall_sites.count(site)) continue;
    SharedSite& s = out[site];
    s.init_observed.insert(p.functions.at(ev.target).name);
    auto it = sol.call_graph.find(site);
    if (it != sol.call_graph.end()) s.processing_ec = it->second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

std::string fnv1a64_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string config_hash(const std::string& program_hash, const std::map<std::string, std::int64_t>& config, Mode mode) {
  std::string key = program_hash + "\n";
  for (const auto& [k, v] : config) key += k + "=" + std::to_string(v) + "\n";
  key += mode_name(mode);
  key += "\n";
  key += kToolkitVersion;
  return fnv1a64_hex(key);
}

std::set<std::string> AnalysisReport::ec(const std::string& site) const {
  auto it = cfi.find(site);
  if (it == cfi.end() || !it->second.processing_ec) return {};
  return *it->second.processing_ec;
}

AnalysisReport build_report(const Program& p, const ModeArtifacts& a, const ModeArtifacts& baseline,
                            const AnalyzeOptions& opts) {
  AnalysisReport r;
  r.program = opts.program_name;
  r.program_hash = opts.program_hash.empty() ? fnv1a64_hex(print_program(p)) : opts.program_hash;
  r.mode = a.mode;
  r.config = opts.config;
  r.config_hash = config_hash(r.program_hash, opts.config, a.mode);

  for (const auto& site : a.reach.icall_sites) r.cfi[site].processing_ec = a.solution.call_graph.at(site);
  if (a.state) {
    for (const auto& ev : a.state->icalls) {
      auto& obs = r.cfi[site_name(p, ev.site)].init_observed;
      if (!obs) obs.emplace();
      obs->insert(p.functions.at(ev.target).name);
    }
    r.init_syscalls = a.state->init_syscalls;
    r.shared = shared_callsite_split(p, a.state->icalls, a.solution, a.reach);
    r.partition = a.partition;
  }
  std::size_t total = 0;
  for (const auto& site : a.reach.icall_sites) {
    std::size_t n = a.solution.call_graph.at(site).size();
    total += n;
    r.ec_max = std::max(r.ec_max, n);
  }
  r.ec_sites = a.reach.icall_sites.size();
  r.ec_avg = r.ec_sites ? static_cast<double>(total) / static_cast<double>(r.ec_sites) : 0.0;
  r.functions = a.reach.functions.size();
  r.instructions = a.reach.instructions;
  r.reachable_functions = a.reach.functions;
  r.processing_syscalls = a.reach.syscalls;
  r.baseline_functions = baseline.reach.functions.size();
  r.baseline_instructions = baseline.reach.instructions;
  return r;
}

AnalysisReport analyze(const Program& p, Mode mode, const AnalyzeOptions& opts) {
  ModeArtifacts a = run_mode(p, mode, opts);
  if (mode == Mode::Baseline) return build_report(p, a, a, opts);
  ModeArtifacts base = run_mode(p, Mode::Baseline, opts);
  return build_report(p, a, base, opts);
}

std::string AnalysisReport::to_json() const {
  ordered_json j;
  j["tool"] = "phaseseed";
  j["version"] = version;
  j["program"] = program;
  j["programHash"] = program_hash;
  j["mode"] = mode_name(mode);
  j["config"] = ordered_json::object();
  for (const auto& [k, v] : config) j["config"][k] = v;
  j["configHash"] = config_hash;
  ordered_json cfi_j = ordered_json::object();
  for (const auto& [site, c] : cfi) {
    ordered_json e = ordered_json::object();
    if (c.processing_ec) e["processingPhaseEC"] = *c.processing_ec;
    if (c.init_observed) e["initPhaseObserved"] = *c.init_observed;
    cfi_j[site] = e;
  }
  j["cfi"] = cfi_j;
  j["ecStats"] = {{"sites", ec_sites}, {"avg", ec_avg}, {"max", ec_max}};
  j["debloat"] = {{"functions", functions},
                  {"instructions", instructions},
                  {"baselineFunctions", baseline_functions},
                  {"baselineInstructions", baseline_instructions},
                  {"reachable", reachable_functions}};
  j["syscalls"] = {{"init", init_syscalls}, {"processing", processing_syscalls}};
  ordered_json shared_j = ordered_json::object();
  for (const auto& [site, s] : shared)
    shared_j[site] = {{"initPhaseObserved", s.init_observed}, {"processingPhaseEC", s.processing_ec}};
  j["sharedCallSites"] = shared_j;
  if (partition) {
    ordered_json pj;
    pj["F"] = partition->functions;
    pj["accessibleGlobals"] = partition->accessible_globals;
    pj["evidence"] = ordered_json::object();
    for (const auto& [f, why] : partition->evidence) pj["evidence"][f] = why;
    j["partition"] = pj;
  }
  return j.dump(2) + "\n";
}

AnalysisReport AnalysisReport::from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  AnalysisReport r;
  r.version = j.at("version").get<std::string>();
  r.program = j.at("program").get<std::string>();
  r.program_hash = j.at("programHash").get<std::string>();
  auto m = parse_mode(j.at("mode").get<std::string>());
  if (!m) throw std::invalid_argument("unknown mode in report");
  r.mode = *m;
  for (const auto& [k, v] : j.at("config").items()) r.config[k] = v.get<std::int64_t>();
  r.config_hash = j.at("configHash").get<std::string>();
  for (const auto& [site, e] : j.at("cfi").items()) {
    SiteCfi c;
    if (e.contains("processingPhaseEC")) c.processing_ec = e["processingPhaseEC"].get<std::set<std::string>>();
    if (e.contains("initPhaseObserved")) c.init_observed = e["initPhaseObserved"].get<std::set<std::string>>();
    r.cfi[site] = c;
  }
  const auto& st = j.at("ecStats");
  r.ec_sites = st.at("sites").get<std::size_t>();
  r.ec_avg = st.at("avg").get<double>();
  r.ec_max = st.at("max").get<std::size_t>();
  const auto& d = j.at("debloat");
  r.functions = d.at("functions").get<std::size_t>();
  r.instructions = d.at("instructions").get<std::int64_t>();
  r.baseline_functions = d.at("baselineFunctions").get<std::size_t>();
  r.baseline_instructions = d.at("baselineInstructions").get<std::int64_t>();
  r.reachable_functions = d.at("reachable").get<std::set<std::string>>();
  r.init_syscalls = j.at("syscalls").at("init").get<std::set<std::string>>();
  r.processing_syscalls = j.at("syscalls").at("processing").get<std::set<std::string>>();
  for (const auto& [site, e] : j.at("sharedCallSites").items())
    r.shared[site] = {e.at("initPhaseObserved").get<std::set<std::string>>(),
                      e.at("processingPhaseEC").get<std::set<std::string>>()};
  if (j.contains("partition")) {
    PartitionResult pr;
    const auto& pj = j["partition"];
    pr.functions = pj.at("F").get<std::set<std::string>>();
    pr.accessible_globals = pj.at("accessibleGlobals").get<std::set<std::string>>();
    for (const auto& [f, why] : pj.at("evidence").items()) pr.evidence[f] = why.get<std::string>();
    r.partition = pr;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Comparison

namespace {

std::vector<std::string> minus(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::vector<std::string> out;
  for (const auto& x : a)
    if (!b.count(x)) out.push_back(x);
  return out;
}

std::set<std::string> processing_sites(const AnalysisReport& r) {
  std::set<std::string> out;
  for (const auto& [site, c] : r.cfi)
    if (c.processing_ec) out.insert(site);
  return out;
}

}  // namespace

Comparison compare(const AnalysisReport& a, const AnalysisReport& b) {
  if (a.program_hash != b.program_hash)
    throw std::invalid_argument("reports are for different programs (" + a.program_hash + " vs " + b.program_hash + ")");
  if (a.config != b.config) throw std::invalid_argument("reports were produced with different configs");

  Comparison c;
  std::set<std::string> sa = processing_sites(a), sb = processing_sites(b);
  std::set<std::string> common;
  for (const auto& s : sa)
    if (sb.count(s)) common.insert(s);

  ordered_json j;
  j["program"] = a.program;
  j["programHash"] = a.program_hash;
  j["a"] = mode_name(a.mode);
  j["b"] = mode_name(b.mode);
  ordered_json sites = ordered_json::object();
  std::size_t sum_a = 0, sum_b = 0, max_a = 0, max_b = 0;
  for (const auto& s : common) {
    auto ea = a.ec(s), eb = b.ec(s);
    sum_a += ea.size();
    sum_b += eb.size();
    max_a = std::max(max_a, ea.size());
    max_b = std::max(max_b, eb.size());
    sites[s] = {{"a", ea.size()},
                {"b", eb.size()},
                {"delta", static_cast<std::int64_t>(eb.size()) - static_cast<std::int64_t>(ea.size())},
                {"onlyInA", minus(ea, eb)},
                {"onlyInB", minus(eb, ea)}};
  }
  j["sites"] = sites;
  j["sitesOnlyInA"] = minus(sa, sb);
  j["sitesOnlyInB"] = minus(sb, sa);
  double avg_a = common.empty() ? 0.0 : static_cast<double>(sum_a) / static_cast<double>(common.size());
  double avg_b = common.empty() ? 0.0 : static_cast<double>(sum_b) / static_cast<double>(common.size());
  j["ecStats"] = {{"a", {{"sites", a.ec_sites}, {"avg", a.ec_avg}, {"max", a.ec_max}}},
                  {"b", {{"sites", b.ec_sites}, {"avg", b.ec_avg}, {"max", b.ec_max}}},
                  {"commonSites", common.size()},
                  {"commonAvgA", avg_a},
                  {"commonAvgB", avg_b},
                  {"avgDelta", b.ec_avg - a.ec_avg},
                  {"maxDelta", static_cast<std::int64_t>(b.ec_max) - static_cast<std::int64_t>(a.ec_max)}};
  j["debloat"] = {{"functionsDelta", static_cast<std::int64_t>(b.functions) - static_cast<std::int64_t>(a.functions)},
                  {"instructionsDelta", b.instructions - a.instructions},
                  {"onlyInA", minus(a.reachable_functions, b.reachable_functions)},
                  {"onlyInB", minus(b.reachable_functions, a.reachable_functions)}};
  j["syscalls"] = {{"onlyInA", minus(a.processing_syscalls, b.processing_syscalls)},
                   {"onlyInB", minus(b.processing_syscalls, a.processing_syscalls)}};

  auto check = [&](const AnalysisReport& precise, const AnalysisReport& coarse, double avg_p, double avg_c) {
    std::string tag = std::string(mode_name(precise.mode)) + " vs " + mode_name(coarse.mode) + ": ";
    for (const auto& s : processing_sites(precise)) {
      if (!processing_sites(coarse).count(s)) {
        c.violations.push_back(tag + "site " + s + " is reachable only in the more precise mode");
        continue;
      }
      auto missing = minus(precise.ec(s), coarse.ec(s));
      if (!missing.empty()) c.violations.push_back(tag + "EC at " + s + " is not a subset (extra " + missing.front() + ")");
    }
    if (avg_p > avg_c) c.violations.push_back(tag + "average EC size over common sites increases");
  };
  std::string ordering = "unordered";
  if (refines(a.mode, b.mode)) {
    ordering = "a refines b";
    check(a, b, avg_a, avg_b);
  }
  if (refines(b.mode, a.mode) && a.mode != b.mode) {
    ordering = "b refines a";
    check(b, a, avg_b, avg_a);
  }
  j["ordering"] = ordering;
  j["violations"] = c.violations;
  c.json = j.dump(2) + "\n";

  std::ostringstream t;
  t << std::left << std::setw(28) << "site" << std::setw(10) << mode_name(a.mode) << std::setw(10)
    << mode_name(b.mode) << "delta\n";
  for (const auto& s : common) {
    auto ea = a.ec(s).size(), eb = b.ec(s).size();
    t << std::setw(28) << s << std::setw(10) << ea << std::setw(10) << eb
      << static_cast<std::int64_t>(eb) - static_cast<std::int64_t>(ea) << "\n";
  }
  t << std::setprecision(4) << "avg EC (common sites): " << avg_a << " -> " << avg_b << "\n";
  t << "reachable functions: " << a.functions << " -> " << b.functions << "\n";
  t << "reachable instructions: " << a.instructions << " -> " << b.instructions << "\n";
  t << "violations: " << c.violations.size() << "\n";
  c.table = t.str();
  return c;
}

// ---------------------------------------------------------------------------
// Cache

CacheCounters& cache_counters() {
  static CacheCounters counters;
  return counters;
}

CachedReport analyze_cached(const std::string& source, const std::string& program_path, Mode mode,
                            AnalyzeOptions opts, const std::string& cache_dir) {
  namespace fs = std::filesystem;
  opts.program_hash = fnv1a64_hex(source);
  fs::path prog(program_path);
  if (opts.program_name.empty() || opts.program_name == "program") opts.program_name = prog.stem().string();
  std::string key = config_hash(opts.program_hash, opts.config, mode);
  fs::path dir = cache_dir.empty() ? (prog.has_parent_path() ? prog.parent_path() : fs::path(".")) : fs::path(cache_dir);
  fs::path file = dir / (prog.stem().string() + "." + key + ".report.json");

  CachedReport out;
  out.path = file.string();
  if (std::ifstream in(file); in) {
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      AnalysisReport cached = AnalysisReport::from_json(buf.str());
      if (cached.config_hash == key && cached.to_json() == buf.str()) {
        ++cache_counters().hits;
        out.json = buf.str();
        out.hit = true;
        return out;
      }
    } catch (const std::exception&) {
    }
  }
  ++cache_counters().misses;
  ParseResult pr = parse_program(source);
  if (!pr.ok()) throw AnalysisError("program does not parse: " + pr.diagnostics.front().str());
  auto diags = validate(*pr.program);
  if (!diags.empty()) throw AnalysisError("program does not validate: " + diags.front().str());
  out.json = analyze(*pr.program, mode, opts).to_json();
  fs::create_directories(dir);
  std::ofstream o(file, std::ios::binary);
  o << out.json;
  return out;
}

}  // namespace phaseseed
