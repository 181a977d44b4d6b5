#include "phaseseed/ir.hpp"

#include <functional>
#include <unordered_set>

namespace phaseseed {

TypeRef TypeRef::int64() { return TypeRef(std::make_shared<const Node>(Node{TypeKind::Int64, {}, {}, 0})); }
TypeRef TypeRef::fnptr() { return TypeRef(std::make_shared<const Node>(Node{TypeKind::FnPtr, {}, {}, 0})); }
TypeRef TypeRef::opaque() { return TypeRef(std::make_shared<const Node>(Node{TypeKind::Opaque, {}, {}, 0})); }

TypeRef TypeRef::ptr(TypeRef pointee) {
  return TypeRef(std::make_shared<const Node>(Node{TypeKind::Ptr, std::move(pointee), {}, 0}));
}

TypeRef TypeRef::named(std::string struct_name) {
  return TypeRef(std::make_shared<const Node>(Node{TypeKind::Struct, {}, std::move(struct_name), 0}));
}

TypeRef TypeRef::array(TypeRef element, std::int64_t count) {
  if (count < 1) throw TypeError("array count must be at least 1");
  return TypeRef(std::make_shared<const Node>(Node{TypeKind::Array, std::move(element), {}, count}));
}

bool TypeRef::is_scalar() const {
  return node_ && (node_->kind == TypeKind::Int64 || node_->kind == TypeKind::FnPtr ||
                   node_->kind == TypeKind::Ptr);
}

const TypeRef& TypeRef::pointee() const {
  if (!is(TypeKind::Ptr)) throw TypeError("pointee of non-pointer type " + str());
  return node_->inner;
}

const TypeRef& TypeRef::element() const {
  if (!is(TypeKind::Array)) throw TypeError("element of non-array type " + str());
  return node_->inner;
}

std::int64_t TypeRef::count() const {
  if (!is(TypeKind::Array)) throw TypeError("count of non-array type " + str());
  return node_->count;
}

const std::string& TypeRef::struct_name() const {
  if (!is(TypeKind::Struct)) throw TypeError("struct name of non-struct type " + str());
  return node_->name;
}

std::string TypeRef::str() const {
  if (!node_) return "<unknown>";
  switch (node_->kind) {
    case TypeKind::Int64: return "i64";
    case TypeKind::FnPtr: return "fnptr";
    case TypeKind::Opaque: return "opaque";
    case TypeKind::Ptr: return "ptr<" + node_->inner.str() + ">";
    case TypeKind::Struct: return "%" + node_->name;
    case TypeKind::Array:
      return "array<" + node_->inner.str() + ", " + std::to_string(node_->count) + ">";
  }
  return "<unknown>";
}

bool operator==(const TypeRef& a, const TypeRef& b) { return (a <=> b) == 0; }

std::strong_ordering operator<=>(const TypeRef& a, const TypeRef& b) {
  if (a.node_ == b.node_) return std::strong_ordering::equal;
  if (!a.node_) return std::strong_ordering::less;
  if (!b.node_) return std::strong_ordering::greater;
  if (auto c = a.node_->kind <=> b.node_->kind; c != 0) return c;
  if (auto c = a.node_->name <=> b.node_->name; c != 0) return c;
  if (auto c = a.node_->count <=> b.node_->count; c != 0) return c;
  return a.node_->inner <=> b.node_->inner;
}

const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::Alloc: return "alloc";
    case Opcode::Malloc: return "malloc";
    case Opcode::Free: return "free";
    case Opcode::Load: return "load";
    case Opcode::Store: return "store";
    case Opcode::Gep: return "gep";
    case Opcode::Cast: return "cast";
    case Opcode::Call: return "call";
    case Opcode::ICall: return "icall";
    case Opcode::FuncAddr: return "funcaddr";
    case Opcode::Const: return "const";
    case Opcode::SizeOf: return "sizeof";
    case Opcode::Add: return "add";
    case Opcode::Sub: return "sub";
    case Opcode::Mul: return "mul";
    case Opcode::Div: return "div";
    case Opcode::CmpEq: return "cmp eq";
    case Opcode::CmpLt: return "cmp lt";
    case Opcode::Br: return "br";
    case Opcode::CondBr: return "cbr";
    case Opcode::Ret: return "ret";
    case Opcode::Config: return "config";
    case Opcode::Input: return "input";
    case Opcode::Syscall: return "syscall";
    case Opcode::Spawn: return "spawn";
    case Opcode::StartProcessing: return "start_processing";
  }
  return "?";
}

bool is_terminator(Opcode op) {
  return op == Opcode::Br || op == Opcode::CondBr || op == Opcode::Ret;
}

bool defines_value(Opcode op) {
  switch (op) {
    case Opcode::Free:
    case Opcode::Store:
    case Opcode::Br:
    case Opcode::CondBr:
    case Opcode::Ret:
    case Opcode::Syscall:
    case Opcode::Spawn:
    case Opcode::StartProcessing:
      return false;
    default:
      return true;
  }
}

int Function::find_block(const std::string& label) const {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].label == label) return static_cast<int>(i);
  return -1;
}

const StructDef* Program::find_struct(const std::string& name) const {
  int i = struct_index(name);
  return i < 0 ? nullptr : &structs[i];
}

int Program::struct_index(const std::string& name) const {
  auto it = struct_ix_.find(name);
  return it == struct_ix_.end() ? -1 : it->second;
}

int Program::function_index(const std::string& name) const {
  auto it = function_ix_.find(name);
  return it == function_ix_.end() ? -1 : it->second;
}

int Program::global_index(const std::string& name) const {
  auto it = global_ix_.find(name);
  return it == global_ix_.end() ? -1 : it->second;
}

const Function& Program::function(const std::string& name) const {
  int i = function_index(name);
  if (i < 0) throw std::out_of_range("no function @" + name);
  return functions[i];
}

void Program::reindex() {
  struct_ix_.clear();
  function_ix_.clear();
  global_ix_.clear();
  layouts_.clear();
  for (std::size_t i = 0; i < structs.size(); ++i) struct_ix_.emplace(structs[i].name, i);
  for (std::size_t i = 0; i < functions.size(); ++i) function_ix_.emplace(functions[i].name, i);
  for (std::size_t i = 0; i < globals.size(); ++i) global_ix_.emplace(globals[i].name, i);
  // Fill the layout cache up front so later lookups are read-only.
  for (const auto& s : structs) {
    try {
      layout(s.name);
    } catch (const TypeError&) {
    }
  }
}

struct LayoutAccess {
  static std::unordered_map<std::string, StructLayout>& cache(const Program& p) { return p.layouts_; }
};

namespace {

struct Metric {
  std::int64_t size;
  std::int64_t desc;
};

Metric metric(const TypeRef& t, const Program& p, std::unordered_set<std::string>& visiting);

const StructLayout& compute_layout(const Program& p, const std::string& name,
                                   std::unordered_map<std::string, StructLayout>& cache,
                                   std::unordered_set<std::string>& visiting) {
  if (auto it = cache.find(name); it != cache.end()) return it->second;
  const StructDef* def = p.find_struct(name);
  if (!def) throw TypeError("unknown struct %" + name);
  if (!visiting.insert(name).second) throw TypeError("struct %" + name + " embeds itself");
  StructLayout layout;
  for (const auto& f : def->fields) {
    layout.offsets.push_back(layout.size);
    Metric m = metric(f.type, p, visiting);
    if (m.size < 0) throw TypeError("struct %" + name + " has an opaque field");
    layout.size += m.size;
    layout.descriptiveness += m.desc;
  }
  visiting.erase(name);
  return cache.emplace(name, std::move(layout)).first->second;
}

Metric metric(const TypeRef& t, const Program& p, std::unordered_set<std::string>& visiting) {
  if (!t) throw TypeError("unknown type");
  switch (t.kind()) {
    case TypeKind::Int64:
    case TypeKind::FnPtr:
    case TypeKind::Ptr:
      return {8, 1};
    case TypeKind::Opaque:
      return {-1, 0};
    case TypeKind::Struct: {
      const StructLayout& l =
          compute_layout(p, t.struct_name(), LayoutAccess::cache(p), visiting);
      return {l.size, l.descriptiveness};
    }
    case TypeKind::Array: {
      Metric e = metric(t.element(), p, visiting);
      if (e.size < 0) throw TypeError("array of opaque");
      return {e.size * t.count(), e.desc * t.count()};
    }
  }
  throw TypeError("bad type");
}

}  // namespace

const StructLayout& Program::layout(const std::string& struct_name) const {
  if (auto it = layouts_.find(struct_name); it != layouts_.end()) return it->second;
  std::unordered_set<std::string> visiting;
  return compute_layout(*this, struct_name, layouts_, visiting);
}

std::int64_t sizeof_type(const TypeRef& t, const Program& p) {
  if (t.is(TypeKind::Opaque)) throw TypeError("opaque has no size");
  std::unordered_set<std::string> visiting;
  return metric(t, p, visiting).size;
}

std::int64_t descriptiveness(const TypeRef& t, const Program& p) {
  std::unordered_set<std::string> visiting;
  return metric(t, p, visiting).desc;
}

std::int64_t field_offset(const Program& p, const std::string& name, std::int64_t k) {
  const StructLayout& l = p.layout(name);
  if (k < 0 || k >= static_cast<std::int64_t>(l.offsets.size()))
    throw TypeError("field index " + std::to_string(k) + " out of range for %" + name);
  return l.offsets[k];
}

bool is_prefix_type(const TypeRef& prefix, const TypeRef& t, const Program& p) {
  TypeRef cur = t;
  while (cur) {
    if (cur == prefix) return true;
    if (cur.is(TypeKind::Struct)) {
      const StructDef* def = p.find_struct(cur.struct_name());
      if (!def || def->fields.empty()) return false;
      cur = def->fields.front().type;
    } else if (cur.is(TypeKind::Array)) {
      cur = cur.element();
    } else {
      return false;
    }
  }
  return false;
}

std::int64_t max_type_size(const Program& p) {
  std::int64_t best = 8;
  auto consider = [&](const TypeRef& t) {
    std::function<void(const TypeRef&)> walk = [&](const TypeRef& x) {
      if (!x) return;
      if (x.is(TypeKind::Ptr)) return walk(x.pointee());
      if (x.is(TypeKind::Opaque)) return;
      try {
        best = std::max(best, sizeof_type(x, p));
      } catch (const TypeError&) {
      }
      if (x.is(TypeKind::Array)) walk(x.element());
    };
    walk(t);
  };
  for (const auto& s : p.structs) consider(TypeRef::named(s.name));
  for (const auto& g : p.globals) consider(g.type);
  for (const auto& f : p.functions) {
    for (const auto& prm : f.params) consider(prm.type);
    for (const auto& t : f.reg_types) consider(t);
    for (const auto& i : f.insns) consider(i.type);
  }
  return best;
}

std::string site_name(const Program& p, SiteId s) {
  const Function& f = p.functions.at(s.func);
  const Block& b = f.blocks.at(f.block_of(s.insn));
  return f.name + ":" + b.label + ":" + std::to_string(s.insn - b.first);
}

}  // namespace phaseseed
