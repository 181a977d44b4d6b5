// Command-line driver: check, interp, analyze, compare, fuzz.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "phaseseed/andersen.hpp"
#include "phaseseed/fuzz.hpp"
#include "phaseseed/interp.hpp"
#include "phaseseed/parser.hpp"
#include "phaseseed/pipeline.hpp"
#include "phaseseed/seeding.hpp"

using namespace phaseseed;

namespace {

enum Exit { kOk = 0, kDiagnostics = 1, kAnalysisError = 2, kFuzzViolation = 3 };

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::map<std::string, std::int64_t> parse_config(const std::vector<std::string>& pairs) {
  std::map<std::string, std::int64_t> out;
  for (const auto& kv : pairs) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--config", "expected name=int, got '" + kv + "'");
    std::string value = kv.substr(eq + 1);
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
      v = std::stoll(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (value.empty() || used != value.size()) throw CLI::ValidationError("--config", "value of '" + kv + "' is not an integer");
    out[kv.substr(0, eq)] = v;
  }
  return out;
}

std::vector<std::int64_t> read_inputs(const std::string& path) {
  std::vector<std::int64_t> out;
  if (path.empty()) return out;
  std::istringstream in(read_file(path));
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    std::int64_t v = std::stoll(tok, &used);
    if (used != tok.size()) throw std::runtime_error("input stream token '" + tok + "' is not an integer");
    out.push_back(v);
  }
  return out;
}

/// Parses and validates; prints diagnostics as `path:line:col: message`.
std::optional<Program> load(const std::string& path, const std::string& source) {
  ParseResult pr = parse_program(source);
  std::vector<Diagnostic> diags = pr.diagnostics;
  if (pr.ok() && diags.empty()) diags = validate(*pr.program);
  for (const auto& d : diags) std::cerr << path << ":" << d.str() << "\n";
  if (!diags.empty() || !pr.ok()) return std::nullopt;
  return std::move(pr.program);
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phase-specialized points-to analysis for split-phase PIR programs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolkitVersion));

  std::string program_path, output, input_path, trace_path, cache_dir, mode_str, seeds_path, graph_path;
  std::vector<std::string> config_pairs;
  std::int64_t budget = 10'000'000;
  bool full = false, no_cache = false, naive = false, table_only = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("program", program_path, "PIR program")->required()->check(CLI::ExistingFile);
    sub->add_option("-c,--config", config_pairs, "config binding name=int (repeatable)");
    sub->add_option("-b,--budget", budget, "interpreter step budget")->check(CLI::PositiveNumber);
    sub->add_option("-o,--output", output, "output file (default stdout)");
  };

  CLI::App* check = app.add_subcommand("check", "parse and validate a program");
  check->add_option("program", program_path, "PIR program")->required()->check(CLI::ExistingFile);

  CLI::App* interp = app.add_subcommand("interp", "run the initialization phase (or the whole program)");
  common(interp);
  interp->add_flag("--full", full, "execute past start_processing as an oracle");
  interp->add_option("-i,--input", input_path, "file of whitespace-separated integers consumed by input")
      ->check(CLI::ExistingFile);
  interp->add_option("--trace", trace_path, "JSON-lines execution trace");

  CLI::App* analyze_cmd = app.add_subcommand("analyze", "analyze a program in one mode");
  common(analyze_cmd);
  analyze_cmd->add_option("-m,--mode", mode_str, "baseline | ps-unreachable | ps-insensitive | phaseseed")
      ->required()
      ->check(CLI::IsMember({"baseline", "ps-unreachable", "ps-insensitive", "phaseseed"}));
  analyze_cmd->add_flag("--no-cache", no_cache, "always re-analyze and do not write the cache");
  analyze_cmd->add_option("--cache-dir", cache_dir, std::string("cache directory (default: env ") + kCacheDirEnv +
                                                        ", then the program's directory)");
  analyze_cmd->add_flag("--naive", naive, "use the naive fixpoint solver");
  analyze_cmd->add_option("--dump-seeds", seeds_path, "write the seed facts as JSON lines");
  analyze_cmd->add_option("--dump-constraints", graph_path, "write the constraint graph as JSON");

  std::string report_a, report_b;
  CLI::App* compare_cmd = app.add_subcommand("compare", "diff two reports of the same program");
  compare_cmd->add_option("a", report_a, "first report")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("b", report_b, "second report")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("-o,--output", output, "write the JSON diff here (table goes to stdout)");
  compare_cmd->add_flag("--table", table_only, "print only the table");

  int trials = 0, streams = 3;
  std::uint64_t fuzz_seed = 0;
  bool verbose = false;
  CLI::App* fuzz = app.add_subcommand("fuzz", "soundness fuzzing over generated programs");
  fuzz->add_option("-n,--trials", trials, "number of programs")->required()->check(CLI::PositiveNumber);
  fuzz->add_option("-s,--seed", fuzz_seed, "generator seed")->required();
  fuzz->add_option("--streams", streams, "input streams per program")->check(CLI::Range(1, 100));
  fuzz->add_flag("-v,--verbose", verbose, "one line per trial");
  fuzz->add_option("--emit", output, "write the first generated program here and exit");

  CLI11_PARSE(app, argc, argv);

  try {
    auto start = std::chrono::steady_clock::now();

    if (*check) {
      std::string source = read_file(program_path);
      if (!load(program_path, source)) return kDiagnostics;
      std::cout << program_path << ": ok\n";
      return kOk;
    }

    if (*interp) {
      std::string source = read_file(program_path);
      auto p = load(program_path, source);
      if (!p) return kDiagnostics;
      InterpOptions io;
      io.config = parse_config(config_pairs);
      io.budget = budget;
      std::ofstream trace_out;
      if (!trace_path.empty()) {
        trace_out.open(trace_path, std::ios::binary);
        io.trace = &trace_out;
      }
      if (full) {
        FullResult r = run_full(*p, io, read_inputs(input_path));
        write_output(output, trace_json(*p, r.stop, r.trace));
        std::cerr << "interp: " << stop_kind_name(r.stop.kind) << " in " << elapsed_ms(start) << " ms\n";
        return r.stop.kind == StopKind::Finished ? kOk : kAnalysisError;
      }
      InitResult r = run_init(*p, io);
      write_output(output, snapshot_json(*p, r.stop, r.state));
      std::cerr << "interp: " << stop_kind_name(r.stop.kind) << " in " << elapsed_ms(start) << " ms\n";
      return r.stop.kind == StopKind::TransitionReached ? kOk : kAnalysisError;
    }

    if (*analyze_cmd) {
      Mode mode = *parse_mode(mode_str);
      std::string source = read_file(program_path);
      if (!load(program_path, source)) return kDiagnostics;
      AnalyzeOptions ao;
      ao.config = parse_config(config_pairs);
      ao.budget = budget;
      ao.naive_solver = naive;
      ao.program_name = std::filesystem::path(program_path).stem().string();
      ao.program_hash = fnv1a64_hex(source);
      try {
        std::string json;
        bool hit = false;
        if (!seeds_path.empty() || !graph_path.empty()) {
          auto p = parse_or_throw(source);
          ModeArtifacts a = run_mode(p, mode, ao);
          if (!seeds_path.empty()) write_output(seeds_path, seeds_to_jsonl(a.seeds));
          if (!graph_path.empty()) write_output(graph_path, a.graph.dump_json());
        }
        if (no_cache) {
          json = analyze(parse_or_throw(source), mode, ao).to_json();
        } else {
          std::string dir = cache_dir;
          if (dir.empty())
            if (const char* env = std::getenv(kCacheDirEnv)) dir = env;
          CachedReport c = analyze_cached(source, program_path, mode, ao, dir);
          json = c.json;
          hit = c.hit;
        }
        write_output(output, json);
        std::cerr << "analyze: " << mode_name(mode) << (no_cache ? "" : hit ? " (cache hit)" : " (cache miss)") << " in "
                  << elapsed_ms(start) << " ms\n";
        return kOk;
      } catch (const AnalysisError& e) {
        std::cerr << program_path << ": error: " << e.what() << "\n";
        return kAnalysisError;
      }
    }

    if (*compare_cmd) {
      AnalysisReport a = AnalysisReport::from_json(read_file(report_a));
      AnalysisReport b = AnalysisReport::from_json(read_file(report_b));
      Comparison c = compare(a, b);
      std::cout << c.table;
      if (!table_only && !output.empty()) write_output(output, c.json);
      if (!table_only && output.empty()) std::cout << c.json;
      return kOk;
    }

    if (*fuzz) {
      if (!output.empty()) {
        FuzzProgram fp = generate_program(fuzz_seed, streams);
        write_output(output, fp.source);
        return kOk;
      }
      FuzzSummary s = run_fuzz(trials, fuzz_seed, streams, verbose ? &std::cerr : nullptr);
      std::cout << "trials: " << s.trials << "\n";
      std::cout << "oracle runs: " << s.oracle_runs << "\n";
      std::cout << "observed processing icalls: " << s.observed_icalls << "\n";
      std::cout << "solver comparisons: " << s.solver_comparisons << "\n";
      std::cout << "mean avg EC:";
      for (const auto& [m, v] : s.mean_avg_ec) std::cout << " " << mode_name(m) << "=" << v;
      std::cout << "\n";
      std::cout << "violations: " << s.violations.size() << "\n";
      for (const auto& v : s.violations) std::cout << "  " << v << "\n";
      std::cerr << "fuzz: " << s.trials << " trials in " << elapsed_ms(start) << " ms\n";
      return s.violations.empty() ? kOk : kFuzzViolation;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAnalysisError;
  }
  return kOk;
}
