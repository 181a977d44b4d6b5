#include "phaseseed/seeding.hpp"

#include <algorithm>

#include <json.hpp>

namespace phaseseed {

CloneTable clone_heap_sites(const Program& p, const MachineState& state, HeapModel model) {
  CloneTable t;
  std::map<SiteId, int> ordinal;
  for (const auto& o : state.objects) {
    if (o.kind != ObjectKind::Heap || !o.live) continue;
    std::string site = site_name(p, o.site);
    if (model == HeapModel::Clone) site += "#" + std::to_string(ordinal[o.site]++);
    t.roots.emplace(o.id, std::move(site));
  }
  return t;
}

std::string object_root(const Program& p, const MachineState& state, const CloneTable& clones, int obj) {
  const Object& o = state.object(obj);
  switch (o.kind) {
    case ObjectKind::Global: return "@" + p.globals.at(o.global).name;
    case ObjectKind::Stack: return site_name(p, o.site);
    case ObjectKind::Heap: {
      auto it = clones.roots.find(obj);
      return it != clones.roots.end() ? it->second : site_name(p, o.site);
    }
  }
  return "?";
}

namespace {

class Extractor {
 public:
  Extractor(const Program& p, const MachineState& s, const CloneTable& c) : p_(p), s_(s), c_(c) {}

  std::optional<NodeKey> member(const Value& v, const std::string& where) {
    if (v.kind == Value::Kind::Fn) return func_node(p_.functions.at(v.fn).name);
    if (v.kind != Value::Kind::Ptr) return std::nullopt;
    const Object& o = s_.object(v.obj);
    if (!o.live) throw SeedError("dangling pointer in " + where + " to a dead object (" + object_root(p_, s_, c_, o.id) + ")");
    std::int64_t off = 0;
    try {
      off = path_offset(o.type, v.path, p_, true);
    } catch (const Trap& t) {
      throw SeedError("pointer in " + where + " has a path invalid for its object: " + t.what());
    }
    return obj_node(object_root(p_, s_, c_, o.id), off);
  }

  void cells(const Object& o, bool functions_only) {
    if (o.type.is(TypeKind::Opaque)) return;
    std::string root = object_root(p_, s_, c_, o.id);
    for (std::size_t i = 0; i < o.cells.size(); ++i) {
      const Value& v = o.cells[i];
      if (functions_only && v.kind != Value::Kind::Fn) continue;
      NodeKey cell = obj_node(root, collapse_offset(o.type, static_cast<std::int64_t>(i) * 8, p_));
      if (auto m = member(v, node_name(cell))) out_.push_back({cell, *m});
    }
  }

  void value(const NodeKey& node, const Value& v) {
    if (auto m = member(v, node_name(node))) out_.push_back({node, *m});
  }

  SeedFacts finish() {
    std::sort(out_.begin(), out_.end());
    out_.erase(std::unique(out_.begin(), out_.end()), out_.end());
    return std::move(out_);
  }

 private:
  const Program& p_;
  const MachineState& s_;
  const CloneTable& c_;
  SeedFacts out_;
};

}  // namespace

SeedFacts extract_seeds(const Program& p, const MachineState& state, const CloneTable& clones, const SeedOptions& opts) {
  Extractor ex(p, state, clones);
  for (const auto& o : state.objects) {
    if (!o.live) continue;
    switch (o.kind) {
      case ObjectKind::Global:
        if (opts.functions_only) break;
        if (opts.accessible_globals && !opts.accessible_globals->count(p.globals.at(o.global).name)) break;
        ex.cells(o, false);
        break;
      case ObjectKind::Stack:
      case ObjectKind::Heap:
        ex.cells(o, opts.functions_only);
        break;
    }
  }
  if (!opts.functions_only) {
    for (const auto& fr : state.frames) {
      const Function& f = p.functions.at(fr.func);
      for (std::size_t r = 0; r < fr.regs.size(); ++r) ex.value(reg_node(f.name, f.reg_names[r]), fr.regs[r]);
    }
    for (const auto& sp : state.spawns) {
      const Function& entry = p.functions.at(sp.func);
      for (std::size_t k = 0; k < sp.args.size(); ++k)
        ex.value(reg_node(entry.name, entry.params[k].name), sp.args[k]);
    }
  }
  return ex.finish();
}

NodeKey project_to_site(NodeKey k) {
  if (k.kind == NodeKey::Kind::Obj) {
    auto hash = k.name.find('#');
    if (hash != std::string::npos) k.name.resize(hash);
  }
  return k;
}

SeedFacts project_to_sites(const SeedFacts& seeds) {
  SeedFacts out;
  for (const auto& s : seeds) out.push_back({project_to_site(s.node), project_to_site(s.member)});
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string seeds_to_jsonl(const SeedFacts& seeds) {
  std::string out;
  for (const auto& s : seeds) {
    nlohmann::ordered_json j;
    j["node"] = node_name(s.node);
    j["member"] = node_name(s.member);
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace phaseseed
