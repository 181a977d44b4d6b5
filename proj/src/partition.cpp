#include "phaseseed/partition.hpp"

#include <deque>

#include <json.hpp>

namespace phaseseed {

std::string PartitionResult::to_json() const {
  nlohmann::ordered_json j;
  j["F"] = functions;
  j["accessibleGlobals"] = accessible_globals;
  j["evidence"] = nlohmann::ordered_json::object();
  for (const auto& [f, why] : evidence) j["evidence"][f] = why;
  nlohmann::ordered_json tails = nlohmann::ordered_json::object();
  for (const auto& [f, mask] : regions) {
    if (mask.empty()) continue;
    int n = 0;
    for (bool b : mask) n += b;
    tails[f] = n;
  }
  j["tailInstructions"] = tails;
  return j.dump(2);
}

MemoryRoots scan_memory_roots(const Program& p, const MachineState& state) {
  MemoryRoots roots;
  auto visit = [&](const Value& v, const char* reason) {
    if (v.kind == Value::Kind::Fn) {
      const std::string& name = p.functions.at(v.fn).name;
      if (roots.functions.insert(name).second) roots.reasons[name] = reason;
    } else if (v.kind == Value::Kind::Ptr) {
      const Object& o = state.object(v.obj);
      if (o.kind == ObjectKind::Global) roots.globals.insert(p.globals.at(o.global).name);
    }
  };
  for (const auto& o : state.objects) {
    if (!o.live || o.kind != ObjectKind::Heap) continue;
    for (const auto& c : o.cells) visit(c, "heap-scan");
  }
  for (const auto& fr : state.frames) {
    for (int id : fr.stack_objects) {
      const Object& o = state.object(id);
      if (!o.live) continue;
      for (const auto& c : o.cells) visit(c, "stack-scan");
    }
    for (const auto& r : fr.regs) visit(r, "stack-scan");
  }
  for (const auto& sp : state.spawns)
    for (const auto& a : sp.args) visit(a, "spawn-entry");
  return roots;
}

std::vector<bool> resume_region(const Function& f, int resume) {
  std::vector<bool> mask(f.insns.size(), false);
  if (resume < 0 || resume >= static_cast<int>(f.insns.size())) return mask;
  std::vector<bool> seen(f.blocks.size(), false);
  std::deque<int> work;
  auto successors = [&](int b) {
    const Block& blk = f.blocks[b];
    const Instruction& term = f.insns[blk.last - 1];
    for (int t : term.targets)
      if (t >= 0 && !seen[t]) {
        seen[t] = true;
        work.push_back(t);
      }
  };
  int b0 = f.block_of(resume);
  for (int i = resume; i < f.blocks[b0].last; ++i) mask[i] = true;
  successors(b0);
  while (!work.empty()) {
    int b = work.front();
    work.pop_front();
    for (int i = f.blocks[b].first; i < f.blocks[b].last; ++i) mask[i] = true;
    successors(b);
  }
  return mask;
}

namespace {

class Partitioner {
 public:
  Partitioner(const Program& p, const MachineState& s, PartitionResult r) : p_(p), s_(s), r_(std::move(r)) {}

  void add_whole(const std::string& f, const std::string& why) {
    auto [it, fresh] = r_.regions.emplace(f, std::vector<bool>{});
    if (fresh) {
      r_.functions.insert(f);
      r_.evidence.emplace(f, why);
      work_.push_back(f);
    } else if (!it->second.empty()) {
      it->second.clear();
      work_.push_back(f);
    }
  }

  void add_region(const std::string& f, const std::vector<bool>& mask, const std::string& why) {
    auto [it, fresh] = r_.regions.emplace(f, mask);
    if (fresh) {
      r_.functions.insert(f);
      r_.evidence.emplace(f, why);
      work_.push_back(f);
      return;
    }
    if (it->second.empty()) return;
    bool grew = false;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i] && !it->second[i]) {
        it->second[i] = true;
        grew = true;
      }
    if (grew) work_.push_back(f);
  }

  void access_global(const std::string& g, const std::string& why) {
    if (r_.accessible_globals.insert(g).second) scan_global(g, why);
  }

  void scan_global(const std::string& g, const std::string& why) {
    const Object& o = s_.object(s_.global_objects.at(p_.global_index(g)));
    for (const auto& c : o.cells) {
      if (c.kind == Value::Kind::Fn) {
        add_whole(p_.functions.at(c.fn).name, why);
      } else if (c.kind == Value::Kind::Ptr) {
        const Object& t = s_.object(c.obj);
        if (t.kind == ObjectKind::Global) access_global(p_.globals.at(t.global).name, why);
      }
    }
  }

  void rescan_all() {
    for (const auto& f : r_.functions) work_.push_back(f);
    std::set<std::string> globals = r_.accessible_globals;
    for (const auto& g : globals) scan_global(g, "global-access");
  }

  PartitionResult run() {
    while (!work_.empty()) {
      std::string name = work_.front();
      work_.pop_front();
      const Function& f = p_.function(name);
      std::vector<bool> mask = r_.regions.at(name);
      for (std::size_t i = 0; i < f.insns.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const Instruction& ins = f.insns[i];
        if (ins.op == Opcode::Call) add_whole(ins.symbol, "direct-call");
        else if (ins.op == Opcode::Spawn) add_whole(ins.symbol, "spawn-entry");
        else if (ins.op == Opcode::FuncAddr) add_whole(ins.symbol, "funcaddr");
        for (const auto& op : ins.operands)
          if (!op.is_reg()) access_global(op.name, "global-access");
      }
    }
    return std::move(r_);
  }

 private:
  const Program& p_;
  const MachineState& s_;
  PartitionResult r_;
  std::deque<std::string> work_;
};

}  // namespace

PartitionResult partition(const Program& p, const MachineState& state, const std::set<std::string>& extra_roots) {
  Partitioner part(p, state, {});
  for (std::size_t i = 0; i < state.frames.size(); ++i) {
    const Function& f = p.functions.at(state.frames[i].func);
    part.add_region(f.name, resume_region(f, state.frames[i].pc + 1), "live-frame");
  }
  for (int e : state.spawned_entries) part.add_whole(p.functions.at(e).name, "spawn-entry");
  MemoryRoots roots = scan_memory_roots(p, state);
  for (const auto& f : roots.functions) part.add_whole(f, roots.reasons.at(f));
  for (const auto& f : extra_roots) part.add_whole(f, "root");
  for (const auto& g : roots.globals) part.access_global(g, "global-scan");
  return part.run();
}

PartitionResult partition(const Program& p, const MachineState& state) { return partition(p, state, {}); }

PartitionResult close_partition(const Program& p, const MachineState& state, PartitionResult start) {
  Partitioner part(p, state, std::move(start));
  part.rescan_all();
  return part.run();
}

}  // namespace phaseseed
