#include "support.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "phaseseed/parser.hpp"

namespace phaseseed::testing {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string corpus_dir() { return PHASESEED_CORPUS_DIR; }
std::string corpus_path(const std::string& name) { return corpus_dir() + "/" + name + ".pir"; }
std::string cli_path() { return PHASESEED_CLI; }

Program load_corpus(const std::string& name) {
  Program p = parse_or_throw(read_file(corpus_path(name)));
  auto diags = validate(p);
  if (!diags.empty()) throw std::runtime_error(name + ": " + diags.front().str());
  return p;
}

namespace {

std::vector<std::string> names_in(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const fs::path& p = e.path();
    if (p.extension() != ".pir") continue;
    if (!fs::exists(dir / (p.stem().string() + ".expected.json"))) continue;
    out.push_back(p.stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

json golden(const std::string& name) { return json::parse(read_file(corpus_dir() + "/" + name + ".expected.json")); }

std::map<std::string, std::int64_t> config_of(const json& run) {
  std::map<std::string, std::int64_t> out;
  if (run.contains("config"))
    for (const auto& [k, v] : run["config"].items()) out[k] = v.get<std::int64_t>();
  return out;
}

std::string join(const std::vector<std::string>& xs) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + xs[i];
  return s + "]";
}

template <class C>
std::vector<std::string> as_vec(const C& c) {
  return std::vector<std::string>(c.begin(), c.end());
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

class Checker {
 public:
  Checker(std::string name, const json& g) : name_(std::move(name)), g_(g) {}

  std::vector<std::string> run() {
    Program p = load_corpus(name_);
    int ri = 0;
    for (const auto& run : g_.at("runs")) {
      tag_ = name_ + " run " + std::to_string(ri++) + ": ";
      AnalyzeOptions ao;
      ao.config = config_of(run);
      if (run.contains("budget")) ao.budget = run["budget"].get<std::int64_t>();
      ao.program_name = name_;
      if (run.contains("init")) check_init(p, run["init"], ao);
      if (run.contains("modes"))
        for (const auto& [mode_name, expect] : run["modes"].items()) check_mode(p, mode_name, expect, ao);
    }
    return std::move(errors_);
  }

 private:
  void fail(const std::string& msg) { errors_.push_back(tag_ + msg); }

  void expect_list(const std::string& what, const std::vector<std::string>& got, const json& want) {
    auto w = sorted(want.get<std::vector<std::string>>());
    auto gg = sorted(got);
    if (w != gg) fail(what + ": expected " + join(w) + ", got " + join(gg));
  }

  std::string site(const std::string& label) {
    if (!g_.contains("sites") || !g_["sites"].contains(label)) {
      fail("unknown site label " + label);
      return label;
    }
    return g_["sites"][label].get<std::string>();
  }

  void check_init(const Program& p, const json& e, const AnalyzeOptions& ao) {
    InterpOptions io;
    io.config = ao.config;
    io.budget = ao.budget;
    InitResult r = run_init(p, io);
    if (e.contains("stop") && e["stop"].get<std::string>() != stop_kind_name(r.stop.kind))
      fail("init stop: expected " + e["stop"].get<std::string>() + ", got " + stop_kind_name(r.stop.kind) + " (" +
           r.stop.message + ")");
    if (e.contains("message") && r.stop.message.find(e["message"].get<std::string>()) == std::string::npos)
      fail("init stop message '" + r.stop.message + "' lacks '" + e["message"].get<std::string>() + "'");
    if (e.contains("where") && site_name(p, r.stop.where) != e["where"].get<std::string>())
      fail("init stop at " + site_name(p, r.stop.where));
    if (e.contains("executedFunctions")) {
      std::vector<std::string> got;
      for (int f : r.state.executed_functions) got.push_back(p.functions.at(f).name);
      expect_list("executedFunctions", got, e["executedFunctions"]);
    }
    if (e.contains("initSyscalls")) expect_list("initSyscalls", as_vec(r.state.init_syscalls), e["initSyscalls"]);
    if (e.contains("heapTypes")) {
      for (const auto& [s, want] : e["heapTypes"].items()) {
        std::vector<std::string> types;
        for (const auto& o : r.state.objects)
          if (o.kind == ObjectKind::Heap && o.live && site_name(p, o.site) == s) types.push_back(o.type.str());
        if (types.empty()) fail("no live heap object from " + s);
        for (const auto& t : types)
          if (t != want.get<std::string>()) fail("heap type at " + s + ": expected " + want.get<std::string>() + ", got " + t);
      }
    }
    if (e.contains("descriptivenessTrace")) {
      for (const auto& [s, want] : e["descriptivenessTrace"].items()) {
        std::vector<std::int64_t> got;
        for (const auto& ev : r.state.type_trace)
          if (site_name(p, r.state.object(ev.obj).site) == s) got.push_back(ev.descriptiveness);
        if (got != want.get<std::vector<std::int64_t>>()) fail("descriptiveness trace at " + s + " differs");
      }
    }
  }

  void check_mode(const Program& p, const std::string& mode_str, const json& e, const AnalyzeOptions& ao) {
    auto mode = parse_mode(mode_str);
    if (!mode) {
      fail("unknown mode " + mode_str);
      return;
    }
    std::string saved = tag_;
    tag_ += mode_str + ": ";
    check_mode(p, *mode, e, ao);
    tag_ = saved;
  }

  void check_mode(const Program& p, Mode mode, const json& e, const AnalyzeOptions& ao) {
    if (e.contains("error")) {
      try {
        run_mode(p, mode, ao);
        fail("expected analysis error containing '" + e["error"].get<std::string>() + "'");
      } catch (const AnalysisError& err) {
        if (std::string(err.what()).find(e["error"].get<std::string>()) == std::string::npos)
          fail("error '" + std::string(err.what()) + "' lacks '" + e["error"].get<std::string>() + "'");
      }
      return;
    }
    ModeArtifacts a = run_mode(p, mode, ao);
    ModeArtifacts base = mode == Mode::Baseline ? a : run_mode(p, Mode::Baseline, ao);
    AnalysisReport r = build_report(p, a, base, ao);

    if (e.contains("ec"))
      for (const auto& [label, want] : e["ec"].items()) {
        std::string s = site(label);
        if (!a.reach.icall_sites.count(s)) fail("site " + label + " (" + s + ") is not processing-reachable");
        expect_list("EC(" + label + ")", as_vec(r.ec(s)), want);
      }
    if (e.contains("initObserved"))
      for (const auto& [label, want] : e["initObserved"].items()) {
        auto it = r.cfi.find(site(label));
        std::vector<std::string> got;
        if (it != r.cfi.end() && it->second.init_observed) got = as_vec(*it->second.init_observed);
        expect_list("initObserved(" + label + ")", got, want);
      }
    if (e.contains("shared")) {
      if (r.shared.size() != e["shared"].size()) fail("shared site count differs");
      for (const auto& [label, want] : e["shared"].items()) {
        auto it = r.shared.find(site(label));
        if (it == r.shared.end()) {
          fail("site " + label + " is not shared");
          continue;
        }
        expect_list("shared init(" + label + ")", as_vec(it->second.init_observed), want.at("initPhaseObserved"));
        expect_list("shared processing(" + label + ")", as_vec(it->second.processing_ec), want.at("processingPhaseEC"));
      }
    }
    if (e.contains("reachable")) expect_list("reachable", as_vec(a.reach.functions), e["reachable"]);
    if (e.contains("notReachable"))
      for (const auto& f : e["notReachable"]) {
        if (a.reach.functions.count(f.get<std::string>())) fail(f.get<std::string>() + " is reachable");
        if (a.partition && a.partition->functions.count(f.get<std::string>())) fail(f.get<std::string>() + " is in F");
      }
    if (e.contains("processingSyscalls")) expect_list("processing syscalls", as_vec(a.reach.syscalls), e["processingSyscalls"]);
    if (e.contains("F") || e.contains("evidence") || e.contains("accessibleGlobals")) {
      if (!a.partition) {
        fail("mode has no partition");
        return;
      }
      if (e.contains("F")) expect_list("F", as_vec(a.partition->functions), e["F"]);
      if (e.contains("accessibleGlobals"))
        expect_list("accessible globals", as_vec(a.partition->accessible_globals), e["accessibleGlobals"]);
      if (e.contains("evidence"))
        for (const auto& [f, why] : e["evidence"].items()) {
          auto it = a.partition->evidence.find(f);
          std::string got = it == a.partition->evidence.end() ? "(none)" : it->second;
          if (got != why.get<std::string>()) fail("evidence of " + f + ": expected " + why.get<std::string>() + ", got " + got);
        }
    }
    auto lines = seed_lines(a.seeds);
    if (e.contains("seedsInclude"))
      for (const auto& s : e["seedsInclude"])
        if (std::find(lines.begin(), lines.end(), s.get<std::string>()) == lines.end())
          fail("missing seed " + s.get<std::string>());
    if (e.contains("seedsExclude"))
      for (const auto& s : e["seedsExclude"])
        if (std::find(lines.begin(), lines.end(), s.get<std::string>()) != lines.end())
          fail("unexpected seed " + s.get<std::string>());
  }

  std::string name_;
  const json& g_;
  std::string tag_;
  std::vector<std::string> errors_;
};

}  // namespace

std::vector<std::string> corpus_names() { return names_in(corpus_dir()); }
std::vector<std::string> invalid_corpus_names() { return names_in(fs::path(corpus_dir()) / "invalid"); }

std::vector<GoldenRun> golden_runs(const std::string& name) {
  std::vector<GoldenRun> out;
  json g = golden(name);
  for (const auto& run : g.at("runs")) {
    GoldenRun r;
    r.config = config_of(run);
    if (run.contains("budget")) r.budget = run["budget"].get<std::int64_t>();
    out.push_back(r);
  }
  return out;
}

std::vector<std::string> check_golden(const std::string& name) {
  json g = golden(name);
  return Checker(name, g).run();
}

std::string golden_site(const std::string& name, const std::string& label) {
  return golden(name).at("sites").at(label).get<std::string>();
}

AnalysisReport report_for(const Program& p, Mode mode, const std::map<std::string, std::int64_t>& config,
                          const std::string& program_name) {
  AnalyzeOptions ao;
  ao.config = config;
  ao.program_name = program_name;
  ModeArtifacts a = run_mode(p, mode, ao);
  ModeArtifacts base = mode == Mode::Baseline ? a : run_mode(p, Mode::Baseline, ao);
  return build_report(p, a, base, ao);
}

std::vector<std::string> seed_lines(const SeedFacts& seeds) {
  std::vector<std::string> out;
  for (const auto& s : seeds) out.push_back(node_name(s.node) + " -> " + node_name(s.member));
  return out;
}

}  // namespace phaseseed::testing
