#include "phaseseed/andersen.hpp"

#include "phaseseed/interp.hpp"

#include <deque>
#include <stdexcept>

#include <json.hpp>

namespace phaseseed {

NodeKey val_node(std::string name) { return {NodeKey::Kind::Val, std::move(name), 0}; }
NodeKey reg_node(const std::string& func, const std::string& reg) { return val_node(func + ":%" + reg); }
NodeKey ret_node(const std::string& func) { return val_node("ret:" + func); }
NodeKey global_addr_node(const std::string& global) { return val_node("gv:" + global); }
NodeKey obj_node(std::string root, std::int64_t offset) { return {NodeKey::Kind::Obj, std::move(root), offset}; }
NodeKey func_node(std::string func) { return {NodeKey::Kind::Func, std::move(func), 0}; }

std::string node_name(const NodeKey& k) {
  switch (k.kind) {
    case NodeKey::Kind::Val: return k.name;
    case NodeKey::Kind::Func: return "@" + k.name;
    case NodeKey::Kind::Obj:
      return "obj:" + k.name + (k.offset ? "+" + std::to_string(k.offset) : std::string());
  }
  return k.name;
}

NodeKey parse_node_name(const std::string& name) {
  if (!name.empty() && name[0] == '@') return func_node(name.substr(1));
  if (name.rfind("obj:", 0) == 0) {
    std::string rest = name.substr(4);
    auto plus = rest.rfind('+');
    if (plus == std::string::npos) return obj_node(rest);
    return obj_node(rest.substr(0, plus), std::stoll(rest.substr(plus + 1)));
  }
  return val_node(name);
}

NodeId ConstraintGraph::intern(const NodeKey& k) {
  auto [it, inserted] = ids_.emplace(k, static_cast<NodeId>(keys_.size()));
  if (inserted) keys_.push_back(k);
  return it->second;
}

std::optional<NodeId> ConstraintGraph::find(const NodeKey& k) const {
  auto it = ids_.find(k);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

NodeId ConstraintGraph::field(NodeId obj, std::int64_t offset) {
  const NodeKey& base = keys_.at(obj);
  if (base.kind != NodeKey::Kind::Obj) return -1;
  std::int64_t off = base.offset + offset;
  if (off >= field_limit_) return -1;
  return intern(obj_node(base.name, off));
}

std::string ConstraintGraph::dump_json() const {
  using nlohmann::ordered_json;
  static const char* kinds[] = {"addr", "copy", "load", "store", "field"};
  ordered_json j;
  j["nodes"] = ordered_json::array();
  for (const auto& k : keys_) j["nodes"].push_back(node_name(k));
  j["constraints"] = ordered_json::array();
  for (const auto& c : constraints) {
    ordered_json e;
    e["kind"] = kinds[static_cast<int>(c.kind)];
    e["lhs"] = node_name(keys_[c.lhs]);
    e["rhs"] = node_name(keys_[c.rhs]);
    if (c.kind == ConstraintKind::FieldOf) e["offset"] = c.offset;
    j["constraints"].push_back(e);
  }
  j["icalls"] = ordered_json::array();
  for (const auto& ic : icalls) {
    ordered_json e;
    e["site"] = ic.site;
    e["fp"] = node_name(keys_[ic.fp]);
    e["args"] = ordered_json::array();
    for (NodeId a : ic.args) e["args"].push_back(node_name(keys_[a]));
    if (ic.dest >= 0) e["dest"] = node_name(keys_[ic.dest]);
    j["icalls"].push_back(e);
  }
  return j.dump(2);
}

AnalysisScope AnalysisScope::whole_program(const Program& p) {
  AnalysisScope s;
  for (const auto& f : p.functions) s.functions.emplace(f.name, std::vector<bool>{});
  return s;
}

namespace {

void initializer_cells(const Program& p, const TypeRef& t, const GlobalInit& init, std::int64_t off,
                       std::vector<std::pair<std::int64_t, const GlobalInit*>>& out) {
  if (t.is(TypeKind::Struct)) {
    const StructDef* s = p.find_struct(t.struct_name());
    const StructLayout& l = p.layout(s->name);
    for (std::size_t i = 0; i < s->fields.size() && i < init.elems.size(); ++i)
      initializer_cells(p, s->fields[i].type, init.elems[i], off + l.offsets[i], out);
  } else if (t.is(TypeKind::Array)) {
    std::int64_t es = sizeof_type(t.element(), p);
    for (std::size_t i = 0; i < init.elems.size(); ++i)
      initializer_cells(p, t.element(), init.elems[i], off + static_cast<std::int64_t>(i) * es, out);
  } else if (init.kind == GlobalInit::Kind::Ref) {
    out.emplace_back(off, &init);
  }
}

class Builder {
 public:
  Builder(const Program& p, ConstraintGraph& g) : p_(p), g_(g) {}

  NodeId operand(const Function& f, const Operand& op) {
    return g_.intern(op.is_reg() ? reg_node(f.name, op.name) : global_addr_node(op.name));
  }

  NodeId dest(const Function& f, const Instruction& ins) { return g_.intern(reg_node(f.name, f.reg_names[ins.dest])); }

  void bind_call(const Function& f, const Instruction& ins, const std::string& callee, std::size_t first_arg) {
    auto it = g_.in_scope.find(callee);
    if (it == g_.in_scope.end()) return;
    const FunctionSig& sig = it->second;
    for (std::size_t k = first_arg; k < ins.operands.size() && k - first_arg < sig.formals.size(); ++k)
      g_.add(ConstraintKind::Copy, sig.formals[k - first_arg], operand(f, ins.operands[k]));
    if (ins.op == Opcode::Call && ins.dest >= 0 && sig.ret >= 0) g_.add(ConstraintKind::Copy, dest(f, ins), sig.ret);
  }

  void instruction(int fi, int ii) {
    const Function& f = p_.functions[fi];
    const Instruction& ins = f.insns[ii];
    switch (ins.op) {
      case Opcode::Alloc:
      case Opcode::Malloc:
        g_.add(ConstraintKind::AddressOf, dest(f, ins), g_.intern(obj_node(site_name(p_, {fi, ii}))));
        break;
      case Opcode::Load:
        g_.add(ConstraintKind::Load, dest(f, ins), operand(f, ins.operands[0]));
        break;
      case Opcode::Store:
        g_.add(ConstraintKind::Store, operand(f, ins.operands[1]), operand(f, ins.operands[0]));
        break;
      case Opcode::Gep:
        if (ins.gep == GepKind::Field)
          g_.add(ConstraintKind::FieldOf, dest(f, ins), operand(f, ins.operands[0]), ins.offset);
        else
          g_.add(ConstraintKind::Copy, dest(f, ins), operand(f, ins.operands[0]));
        break;
      case Opcode::Cast:
        g_.add(ConstraintKind::Copy, dest(f, ins), operand(f, ins.operands[0]));
        break;
      case Opcode::Call:
      case Opcode::Spawn:
        bind_call(f, ins, ins.symbol, 0);
        break;
      case Opcode::ICall: {
        ICallSite ic;
        ic.site = site_name(p_, {fi, ii});
        ic.fp = operand(f, ins.operands[0]);
        for (std::size_t k = 1; k < ins.operands.size(); ++k) ic.args.push_back(operand(f, ins.operands[k]));
        if (ins.dest >= 0) ic.dest = dest(f, ins);
        g_.icalls.push_back(std::move(ic));
        break;
      }
      case Opcode::FuncAddr:
        g_.add(ConstraintKind::AddressOf, dest(f, ins), g_.intern(func_node(ins.symbol)));
        break;
      case Opcode::Ret:
        if (!ins.operands.empty())
          g_.add(ConstraintKind::Copy, g_.intern(ret_node(f.name)), operand(f, ins.operands[0]));
        break;
      default:
        break;
    }
  }

 private:
  const Program& p_;
  ConstraintGraph& g_;
};

}  // namespace

ConstraintGraph build_constraints(const Program& p, const AnalysisScope& scope) {
  ConstraintGraph g(max_type_size(p));
  for (const auto& [name, mask] : scope.functions) {
    int fi = p.function_index(name);
    if (fi < 0) throw std::invalid_argument("unknown function in scope: @" + name);
    if (!mask.empty() && mask.size() != p.functions[fi].insns.size())
      throw std::invalid_argument("instruction mask size mismatch for @" + name);
  }
  if (scope.functions.empty()) return g;

  for (const auto& gl : p.globals)
    g.add(ConstraintKind::AddressOf, g.intern(global_addr_node(gl.name)), g.intern(obj_node("@" + gl.name)));

  for (const auto& [name, mask] : scope.functions) {
    const Function& f = p.function(name);
    FunctionSig sig;
    for (const auto& prm : f.params) sig.formals.push_back(g.intern(reg_node(f.name, prm.name)));
    if (f.ret) sig.ret = g.intern(ret_node(f.name));
    g.in_scope.emplace(name, std::move(sig));
  }

  Builder b(p, g);
  for (const auto& [name, mask] : scope.functions) {
    int fi = p.function_index(name);
    const Function& f = p.functions[fi];
    for (int i = 0; i < static_cast<int>(f.insns.size()); ++i)
      if (mask.empty() || mask[i]) b.instruction(fi, i);
  }

  for (const auto& pr : scope.pending_returns) {
    auto it = g.in_scope.find(pr.callee);
    if (it == g.in_scope.end() || it->second.ret < 0) continue;
    g.add(ConstraintKind::Copy, g.intern(reg_node(pr.caller, pr.dest_reg)), it->second.ret);
  }

  if (scope.global_initializers) {
    for (const auto& gl : p.globals) {
      if (!gl.init) continue;
      std::vector<std::pair<std::int64_t, const GlobalInit*>> cells;
      initializer_cells(p, gl.type, *gl.init, 0, cells);
      for (const auto& [off, init] : cells) {
        NodeId cell = g.intern(obj_node("@" + gl.name, collapse_offset(gl.type, off, p)));
        NodeId member = p.function_index(init->ref) >= 0 ? g.intern(func_node(init->ref))
                                                         : g.intern(obj_node("@" + init->ref));
        g.add(ConstraintKind::AddressOf, cell, member);
      }
    }
  }
  return g;
}

const std::set<std::string>& PtsSolution::at(const std::string& node) const {
  static const std::set<std::string> empty;
  auto it = pts.find(node);
  return it == pts.end() ? empty : it->second;
}

SolverCounters& solver_counters() {
  static SolverCounters counters;
  return counters;
}

namespace {

PtsSolution to_solution(const ConstraintGraph& g, const std::vector<std::set<NodeId>>& pts,
                        const std::map<std::size_t, std::set<NodeId>>& cg) {
  PtsSolution sol;
  for (std::size_t n = 0; n < pts.size(); ++n) {
    if (pts[n].empty()) continue;
    auto& out = sol.pts[node_name(g.key(static_cast<NodeId>(n)))];
    for (NodeId m : pts[n]) out.insert(node_name(g.key(m)));
  }
  for (std::size_t i = 0; i < g.icalls.size(); ++i) {
    auto& out = sol.call_graph[g.icalls[i].site];
    if (auto it = cg.find(i); it != cg.end())
      for (NodeId f : it->second) out.insert(g.key(f).name);
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Worklist solver: FIFO queue with per-node deduplication and difference
// propagation.

class WorklistSolver {
 public:
  explicit WorklistSolver(const ConstraintGraph& g) : g_(g) {}

  PtsSolution solve(const SeedFacts& seeds) {
    grow();
    for (const auto& c : g_.constraints) {
      switch (c.kind) {
        case ConstraintKind::AddressOf: add_member(c.lhs, c.rhs); break;
        case ConstraintKind::Copy: add_edge(c.rhs, c.lhs); break;
        case ConstraintKind::Load: loads_[c.rhs].push_back(c.lhs); break;
        case ConstraintKind::Store: stores_[c.lhs].push_back(c.rhs); break;
        case ConstraintKind::FieldOf: fields_[c.rhs].emplace_back(c.lhs, c.offset); break;
      }
    }
    for (std::size_t i = 0; i < g_.icalls.size(); ++i) icalls_[g_.icalls[i].fp].push_back(i);
    for (const auto& s : seeds) add_member(g_.intern(s.node), g_.intern(s.member));
    while (!queue_.empty()) {
      NodeId n = queue_.front();
      queue_.pop_front();
      queued_[n] = false;
      std::set<NodeId> d;
      d.swap(delta_[n]);
      if (d.empty()) continue;
      process(n, d);
    }
    return to_solution(g_, pts_, cg_);
  }

 private:
  void grow() {
    std::size_t n = g_.size();
    if (pts_.size() >= n) return;
    pts_.resize(n);
    delta_.resize(n);
    succ_.resize(n);
    loads_.resize(n);
    stores_.resize(n);
    fields_.resize(n);
    icalls_.resize(n);
    queued_.resize(n, false);
  }

  void enqueue(NodeId n) {
    if (!queued_[n]) {
      queued_[n] = true;
      queue_.push_back(n);
    }
  }

  void add_member(NodeId n, NodeId m) {
    grow();
    if (pts_[n].insert(m).second) {
      delta_[n].insert(m);
      enqueue(n);
    }
  }

  void add_members(NodeId n, const std::set<NodeId>& ms) {
    for (NodeId m : ms) add_member(n, m);
  }

  void add_edge(NodeId from, NodeId to) {
    grow();
    if (from == to) return;
    if (succ_[from].insert(to).second) add_members(to, std::set<NodeId>(pts_[from]));
  }

  bool is_obj(NodeId n) const { return g_.key(n).kind == NodeKey::Kind::Obj; }
  bool is_func(NodeId n) const { return g_.key(n).kind == NodeKey::Kind::Func; }

  void process(NodeId n, const std::set<NodeId>& d) {
    std::vector<NodeId> succ(succ_[n].begin(), succ_[n].end());
    for (NodeId s : succ) add_members(s, d);
    std::vector<NodeId> loads = loads_[n];
    for (NodeId lhs : loads)
      for (NodeId o : d)
        if (is_obj(o)) add_edge(o, lhs);
    std::vector<NodeId> stores = stores_[n];
    for (NodeId rhs : stores)
      for (NodeId o : d)
        if (is_obj(o)) add_edge(rhs, o);
    auto fields = fields_[n];
    for (const auto& [lhs, off] : fields) {
      for (NodeId o : d) {
        if (!is_obj(o)) continue;
        NodeId fo = g_.field(o, off);
        if (fo >= 0) add_member(lhs, fo);
      }
    }
    std::vector<std::size_t> ics = icalls_[n];
    for (std::size_t i : ics) {
      for (NodeId f : d) {
        if (!is_func(f)) continue;
        if (!cg_[i].insert(f).second) continue;
        auto it = g_.in_scope.find(g_.key(f).name);
        if (it == g_.in_scope.end()) continue;
        const ICallSite& ic = g_.icalls[i];
        const FunctionSig& sig = it->second;
        for (std::size_t k = 0; k < ic.args.size() && k < sig.formals.size(); ++k) add_edge(ic.args[k], sig.formals[k]);
        if (ic.dest >= 0 && sig.ret >= 0) add_edge(sig.ret, ic.dest);
      }
    }
  }

  ConstraintGraph g_;
  std::vector<std::set<NodeId>> pts_, delta_, succ_;
  std::vector<std::vector<NodeId>> loads_, stores_;
  std::vector<std::vector<std::pair<NodeId, std::int64_t>>> fields_;
  std::vector<std::vector<std::size_t>> icalls_;
  std::vector<bool> queued_;
  std::deque<NodeId> queue_;
  std::map<std::size_t, std::set<NodeId>> cg_;
};

// ---------------------------------------------------------------------------
// Naive solver: apply every rule to every constraint, repeat until a full
// pass changes nothing.

bool union_into(std::vector<std::set<NodeId>>& pts, NodeId dst, NodeId src) {
  bool changed = false;
  if (dst == src) return false;
  std::vector<NodeId> add(pts[src].begin(), pts[src].end());
  for (NodeId m : add) changed |= pts[dst].insert(m).second;
  return changed;
}

/// One pass of every rule. Returns whether anything was added; when
/// `violations` is given, each addition is described there.
bool apply_rules_once(ConstraintGraph& g, std::vector<std::set<NodeId>>& pts,
                      std::map<std::size_t, std::set<NodeId>>& cg, std::vector<std::string>* violations) {
  bool changed = false;
  auto fit = [&] {
    if (pts.size() < g.size()) pts.resize(g.size());
  };
  auto note = [&](bool added, const std::string& what) {
    if (added && violations) violations->push_back(what);
    changed |= added;
  };
  fit();
  for (const auto& c : g.constraints) {
    switch (c.kind) {
      case ConstraintKind::AddressOf:
        note(pts[c.lhs].insert(c.rhs).second, "addr " + node_name(g.key(c.lhs)) + " misses " + node_name(g.key(c.rhs)));
        break;
      case ConstraintKind::Copy:
        note(union_into(pts, c.lhs, c.rhs), "copy " + node_name(g.key(c.lhs)) + " <- " + node_name(g.key(c.rhs)));
        break;
      case ConstraintKind::Load: {
        std::vector<NodeId> objs(pts[c.rhs].begin(), pts[c.rhs].end());
        for (NodeId o : objs)
          if (g.key(o).kind == NodeKey::Kind::Obj)
            note(union_into(pts, c.lhs, o), "load " + node_name(g.key(c.lhs)) + " <- *" + node_name(g.key(o)));
        break;
      }
      case ConstraintKind::Store: {
        std::vector<NodeId> objs(pts[c.lhs].begin(), pts[c.lhs].end());
        for (NodeId o : objs)
          if (g.key(o).kind == NodeKey::Kind::Obj)
            note(union_into(pts, o, c.rhs), "store *" + node_name(g.key(o)) + " <- " + node_name(g.key(c.rhs)));
        break;
      }
      case ConstraintKind::FieldOf: {
        std::vector<NodeId> objs(pts[c.rhs].begin(), pts[c.rhs].end());
        for (NodeId o : objs) {
          NodeId fo = g.field(o, c.offset);
          if (fo < 0) continue;
          fit();
          note(pts[c.lhs].insert(fo).second, "field " + node_name(g.key(c.lhs)) + " misses " + node_name(g.key(fo)));
        }
        break;
      }
    }
  }
  for (std::size_t i = 0; i < g.icalls.size(); ++i) {
    const ICallSite& ic = g.icalls[i];
    std::vector<NodeId> targets(pts[ic.fp].begin(), pts[ic.fp].end());
    for (NodeId f : targets) {
      if (g.key(f).kind != NodeKey::Kind::Func) continue;
      note(cg[i].insert(f).second, "call graph " + ic.site + " misses " + g.key(f).name);
      auto it = g.in_scope.find(g.key(f).name);
      if (it == g.in_scope.end()) continue;
      const FunctionSig& sig = it->second;
      for (std::size_t k = 0; k < ic.args.size() && k < sig.formals.size(); ++k)
        note(union_into(pts, sig.formals[k], ic.args[k]), "icall binding at " + ic.site);
      if (ic.dest >= 0 && sig.ret >= 0) note(union_into(pts, ic.dest, sig.ret), "icall return at " + ic.site);
    }
  }
  return changed;
}

}  // namespace

PtsSolution solve_worklist(const ConstraintGraph& g, const SeedFacts& seeds) {
  ++solver_counters().worklist_solves;
  return WorklistSolver(g).solve(seeds);
}

PtsSolution solve_naive(const ConstraintGraph& g0, const SeedFacts& seeds) {
  ++solver_counters().naive_solves;
  ConstraintGraph g = g0;
  std::vector<std::set<NodeId>> pts;
  std::vector<std::pair<NodeId, NodeId>> seed_ids;
  for (const auto& s : seeds) seed_ids.emplace_back(g.intern(s.node), g.intern(s.member));
  pts.resize(g.size());
  for (const auto& [n, m] : seed_ids) pts[n].insert(m);
  std::map<std::size_t, std::set<NodeId>> cg;
  while (apply_rules_once(g, pts, cg, nullptr)) {
  }
  return to_solution(g, pts, cg);
}

std::vector<std::string> verify_closure(const ConstraintGraph& g0, const SeedFacts& seeds, const PtsSolution& sol) {
  ConstraintGraph g = g0;
  std::vector<std::string> violations;
  std::vector<std::pair<NodeId, NodeId>> loaded;
  for (const auto& [node, members] : sol.pts)
    for (const auto& m : members) loaded.emplace_back(g.intern(parse_node_name(node)), g.intern(parse_node_name(m)));
  std::vector<std::set<NodeId>> pts(g.size());
  for (const auto& [n, m] : loaded) pts[n].insert(m);
  for (const auto& s : seeds) {
    NodeId n = g.intern(s.node), m = g.intern(s.member);
    if (pts.size() < g.size()) pts.resize(g.size());
    if (!pts[n].count(m)) violations.push_back("seed " + node_name(s.node) + " -> " + node_name(s.member) + " missing");
  }
  std::map<std::size_t, std::set<NodeId>> cg;
  for (std::size_t i = 0; i < g.icalls.size(); ++i) {
    auto it = sol.call_graph.find(g.icalls[i].site);
    if (it == sol.call_graph.end()) continue;
    for (const auto& f : it->second) cg[i].insert(g.intern(func_node(f)));
  }
  apply_rules_once(g, pts, cg, &violations);
  // The call graph must not claim targets the pointer does not hold.
  for (std::size_t i = 0; i < g.icalls.size(); ++i) {
    for (NodeId f : cg[i]) {
      if (pts.size() <= static_cast<std::size_t>(g.icalls[i].fp) || !pts[g.icalls[i].fp].count(f))
        violations.push_back("call graph " + g.icalls[i].site + " has extra target " + g.key(f).name);
    }
  }
  return violations;
}

}  // namespace phaseseed
