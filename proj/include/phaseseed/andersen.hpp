// Field-sensitive, context- and array-index-insensitive inclusion-based
// points-to analysis with an on-the-fly call graph.
#pragma once

#include <atomic>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "phaseseed/ir.hpp"

namespace phaseseed {

/// Abstract location. Val nodes are registers (`fn:%reg`), global addresses
/// (`gv:name`) and function return slots (`ret:fn`). Obj nodes are memory
/// cells named by their allocation root (`@global`, an alloc/malloc site
/// `fn:block:i`, or a heap clone `fn:block:i#k`) and a collapsed byte offset.
/// Func nodes (`@fn`) only ever appear as points-to members.
struct NodeKey {
  enum class Kind { Val, Obj, Func };
  Kind kind = Kind::Val;
  std::string name;
  std::int64_t offset = 0;
  auto operator<=>(const NodeKey&) const = default;
};

NodeKey val_node(std::string name);
NodeKey reg_node(const std::string& func, const std::string& reg);
NodeKey ret_node(const std::string& func);
NodeKey global_addr_node(const std::string& global);
NodeKey obj_node(std::string root, std::int64_t offset = 0);
NodeKey func_node(std::string func);

/// `fn:%reg`, `gv:g`, `ret:fn`, `obj:<root>[+off]`, `@fn`.
std::string node_name(const NodeKey& k);
NodeKey parse_node_name(const std::string& name);

using NodeId = int;

enum class ConstraintKind { AddressOf, Copy, Load, Store, FieldOf };

/// AddressOf: pts(lhs) ∋ rhs. Copy: pts(lhs) ⊇ pts(rhs).
/// Load: pts(lhs) ⊇ pts(o) for o ∈ pts(rhs). Store: pts(o) ⊇ pts(rhs) for o ∈ pts(lhs).
/// FieldOf: pts(lhs) ∋ o+offset for o ∈ pts(rhs).
struct Constraint {
  ConstraintKind kind = ConstraintKind::Copy;
  NodeId lhs = -1;
  NodeId rhs = -1;
  std::int64_t offset = 0;
  auto operator<=>(const Constraint&) const = default;
};

/// Deferred indirect call: resolved while solving as pts(fp) gains functions.
struct ICallSite {
  std::string site;
  NodeId fp = -1;
  std::vector<NodeId> args;
  NodeId dest = -1;
};

struct FunctionSig {
  std::vector<NodeId> formals;
  NodeId ret = -1;
};

class ConstraintGraph {
 public:
  explicit ConstraintGraph(std::int64_t field_limit = std::numeric_limits<std::int64_t>::max())
      : field_limit_(field_limit) {}

  NodeId intern(const NodeKey& k);
  std::optional<NodeId> find(const NodeKey& k) const;
  const NodeKey& key(NodeId n) const { return keys_.at(n); }
  std::size_t size() const { return keys_.size(); }
  std::int64_t field_limit() const { return field_limit_; }

  /// Obj node at `offset` bytes past `obj`, or -1 when it falls beyond the
  /// largest object in the program.
  NodeId field(NodeId obj, std::int64_t offset);

  void add(Constraint c) { constraints.push_back(c); }
  void add(ConstraintKind kind, NodeId lhs, NodeId rhs, std::int64_t offset = 0) {
    constraints.push_back({kind, lhs, rhs, offset});
  }

  std::vector<Constraint> constraints;
  std::vector<ICallSite> icalls;
  std::map<std::string, FunctionSig> in_scope;  // functions whose bodies are analyzed

  /// JSON dump: nodes, constraints, deferred icalls.
  std::string dump_json() const;

 private:
  std::vector<NodeKey> keys_;
  std::map<NodeKey, NodeId> ids_;
  std::int64_t field_limit_;
};

/// Which code is analyzed. A function maps to an instruction mask; an empty
/// mask means the whole function.
struct AnalysisScope {
  std::map<std::string, std::vector<bool>> functions;
  /// `caller:%dest` receives the return value of a call pending at the
  /// transition point.
  struct PendingReturn {
    std::string caller;
    std::string dest_reg;
    std::string callee;
  };
  std::vector<PendingReturn> pending_returns;
  bool global_initializers = true;

  static AnalysisScope whole_program(const Program& p);
};

/// Generates constraints for the in-scope code. Throws std::invalid_argument
/// for unknown function names.
ConstraintGraph build_constraints(const Program& p, const AnalysisScope& scope);

struct SeedFact {
  NodeKey node;
  NodeKey member;
  auto operator<=>(const SeedFact&) const = default;
};
using SeedFacts = std::vector<SeedFact>;

struct PtsSolution {
  std::map<std::string, std::set<std::string>> pts;  // non-empty sets only
  std::map<std::string, std::set<std::string>> call_graph;  // every icall site
  bool operator==(const PtsSolution&) const = default;

  const std::set<std::string>& at(const std::string& node) const;
};

struct SolverCounters {
  std::atomic<long> worklist_solves{0};
  std::atomic<long> naive_solves{0};
};
SolverCounters& solver_counters();

PtsSolution solve_worklist(const ConstraintGraph& g, const SeedFacts& seeds);
PtsSolution solve_naive(const ConstraintGraph& g, const SeedFacts& seeds);

/// Re-applies every rule to `sol`; returns human-readable violations (empty
/// when the solution is closed and contains the seeds).
std::vector<std::string> verify_closure(const ConstraintGraph& g, const SeedFacts& seeds, const PtsSolution& sol);

}  // namespace phaseseed
