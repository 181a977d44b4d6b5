#include "phaseseed/interp.hpp"

#include <deque>
#include <limits>
#include <ostream>

#include <json.hpp>

namespace phaseseed {

const char* stop_kind_name(StopKind k) {
  switch (k) {
    case StopKind::TransitionReached: return "transition-reached";
    case StopKind::Finished: return "finished";
    case StopKind::Trap: return "trap";
    case StopKind::BudgetExhausted: return "budget-exhausted";
  }
  return "?";
}

std::int64_t path_offset(const TypeRef& t, const Path& path, const Program& p, bool collapse) {
  TypeRef cur = t;
  std::int64_t off = 0;
  for (const auto& step : path) {
    if (step.kind == PathStep::Kind::Field) {
      if (!cur.is(TypeKind::Struct)) throw Trap("field step into non-struct " + cur.str());
      const StructDef* s = p.find_struct(cur.struct_name());
      if (!s || step.k < 0 || step.k >= static_cast<std::int64_t>(s->fields.size()))
        throw Trap("field index " + std::to_string(step.k) + " out of range for " + cur.str());
      off += field_offset(p, s->name, step.k);
      cur = s->fields[step.k].type;
    } else {
      if (!cur.is(TypeKind::Array)) throw Trap("index step into non-array " + cur.str());
      if (step.k < 0 || step.k >= cur.count())
        throw Trap("index " + std::to_string(step.k) + " out of bounds for " + cur.str());
      if (!collapse) off += step.k * sizeof_type(cur.element(), p);
      cur = cur.element();
    }
  }
  return off;
}

std::int64_t collapse_offset(const TypeRef& t, std::int64_t offset, const Program& p) {
  TypeRef cur = t;
  std::int64_t result = 0;
  for (;;) {
    if (cur.is(TypeKind::Struct)) {
      const StructDef* s = p.find_struct(cur.struct_name());
      const StructLayout& l = p.layout(cur.struct_name());
      std::size_t j = 0;
      while (j + 1 < s->fields.size() && l.offsets[j + 1] <= offset) ++j;
      result += l.offsets[j];
      offset -= l.offsets[j];
      cur = s->fields[j].type;
    } else if (cur.is(TypeKind::Array)) {
      offset %= sizeof_type(cur.element(), p);
      cur = cur.element();
    } else {
      return result + offset;
    }
  }
}

TypeRef derive_heap_type(const Object& meta, const TypeRef& cast_target, const Program& p) {
  if (cast_target.is(TypeKind::Opaque)) return meta.type;
  if (!meta.type.is(TypeKind::Opaque) && is_prefix_type(cast_target, meta.type, p)) return meta.type;
  std::int64_t sz = sizeof_type(cast_target, p);
  if (meta.size < sz)
    throw Trap("cast of " + std::to_string(meta.size) + "-byte object to " + cast_target.str() + " (" +
               std::to_string(sz) + " bytes)");
  TypeRef candidate = cast_target;
  if (meta.size > sz) {
    if (meta.size % sz != 0)
      throw Trap("cast of " + std::to_string(meta.size) + "-byte object to " + cast_target.str() +
                 " leaves a partial trailing element");
    candidate = TypeRef::array(cast_target, meta.size / sz);
  }
  if (descriptiveness(candidate, p) > descriptiveness(meta.type, p)) return candidate;
  return meta.type;
}

std::string value_str(const Value& v, const Program& p) {
  switch (v.kind) {
    case Value::Kind::Uninit: return "uninit";
    case Value::Kind::Null: return "null";
    case Value::Kind::Int: return std::to_string(v.i);
    case Value::Kind::Fn: return "@" + p.functions.at(v.fn).name;
    case Value::Kind::Ptr: {
      std::string s = "obj" + std::to_string(v.obj);
      for (const auto& st : v.path)
        s += st.kind == PathStep::Kind::Field ? ".f" + std::to_string(st.k) : "[" + std::to_string(st.k) + "]";
      return s;
    }
  }
  return "?";
}

namespace {

std::int64_t wrap(std::uint64_t v) { return static_cast<std::int64_t>(v); }

bool same_class(const TypeRef& runtime, const TypeRef& access) {
  if (runtime == access) return true;
  return runtime.is_pointer() && access.is_pointer();
}

class Machine {
 public:
  Machine(const Program& p, const InterpOptions& opts, bool full, const std::vector<std::int64_t>* inputs)
      : p_(p), opts_(opts), full_(full), inputs_(inputs) {
    s_.config = opts.config;
    init_globals();
  }

  StopReason run() {
    int entry = p_.function_index(p_.entry);
    if (entry < 0) return {StopKind::Trap, "missing entry function @" + p_.entry, {}};
    try {
      enter(entry, {});
      StopReason r = loop();
      if (r.kind != StopKind::Finished || !full_) return r;
      phase_ = Phase::Processing;
      while (!threads_.empty()) {
        SpawnRecord t = std::move(threads_.front());
        threads_.pop_front();
        enter(t.func, std::move(t.args));
        r = loop();
        if (r.kind != StopKind::Finished) return r;
      }
      return r;
    } catch (const Trap& t) {
      return {StopKind::Trap, t.what(), where_};
    } catch (const TypeError& t) {
      return {StopKind::Trap, t.what(), where_};
    }
  }

  MachineState& state() { return s_; }
  ExecutionTrace& trace() { return trace_; }

 private:
  // -- memory ---------------------------------------------------------------

  int new_object(ObjectKind kind, std::int64_t size, TypeRef type, SiteId site) {
    Object o;
    o.id = static_cast<int>(s_.objects.size());
    o.kind = kind;
    o.size = size;
    o.type = std::move(type);
    o.site = site;
    o.cells.assign(static_cast<std::size_t>((size + 7) / 8), Value::uninit());
    s_.objects.push_back(std::move(o));
    return s_.objects.back().id;
  }

  void init_cells(const TypeRef& t, const GlobalInit* init, std::vector<Value>& cells, std::int64_t off) {
    if (t.is(TypeKind::Struct)) {
      const StructDef* s = p_.find_struct(t.struct_name());
      const StructLayout& l = p_.layout(s->name);
      for (std::size_t i = 0; i < s->fields.size(); ++i)
        init_cells(s->fields[i].type, init ? &init->elems.at(i) : nullptr, cells, off + l.offsets[i]);
      return;
    }
    if (t.is(TypeKind::Array)) {
      std::int64_t es = sizeof_type(t.element(), p_);
      for (std::int64_t i = 0; i < t.count(); ++i)
        init_cells(t.element(), init ? &init->elems.at(i) : nullptr, cells, off + i * es);
      return;
    }
    Value v = t.is(TypeKind::Int64) ? Value::integer(0) : Value::null();
    if (init) {
      switch (init->kind) {
        case GlobalInit::Kind::Null: v = Value::null(); break;
        case GlobalInit::Kind::Int:
          v = t.is(TypeKind::Int64) ? Value::integer(init->value) : Value::null();
          break;
        case GlobalInit::Kind::Ref: {
          int f = p_.function_index(init->ref);
          v = f >= 0 ? Value::function(f) : Value::pointer(p_.global_index(init->ref));
          break;
        }
        case GlobalInit::Kind::Aggregate: break;
      }
    }
    cells.at(off / 8) = v;
  }

  void init_globals() {
    // Object ids of globals equal their global index.
    for (std::size_t g = 0; g < p_.globals.size(); ++g) {
      int id = new_object(ObjectKind::Global, sizeof_type(p_.globals[g].type, p_), p_.globals[g].type, {});
      s_.objects[id].global = static_cast<int>(g);
      s_.global_objects.push_back(id);
    }
    for (std::size_t g = 0; g < p_.globals.size(); ++g) {
      const Global& gl = p_.globals[g];
      init_cells(gl.type, gl.init ? &*gl.init : nullptr, s_.objects[g].cells, 0);
    }
  }

  Object& live_object(const Value& v) {
    switch (v.kind) {
      case Value::Kind::Null: throw Trap("null pointer dereference");
      case Value::Kind::Uninit: throw Trap("read of uninitialized value");
      case Value::Kind::Ptr: break;
      default: throw Trap("dereference of non-pointer value");
    }
    Object& o = s_.objects.at(v.obj);
    if (!o.live) throw Trap("dangling pointer dereference (object " + std::to_string(o.id) + ")");
    return o;
  }

  TypeRef type_at(const Object& o, const Path& path) {
    TypeRef cur = o.type;
    for (const auto& step : path) {
      if (step.kind == PathStep::Kind::Field) {
        if (!cur.is(TypeKind::Struct)) throw Trap("invalid path: field of " + cur.str());
        const StructDef* s = p_.find_struct(cur.struct_name());
        if (step.k >= static_cast<std::int64_t>(s->fields.size())) throw Trap("invalid path: field index");
        cur = s->fields[step.k].type;
      } else {
        if (!cur.is(TypeKind::Array) || step.k < 0 || step.k >= cur.count())
          throw Trap("invalid path: index " + std::to_string(step.k) + " into " + cur.str());
        cur = cur.element();
      }
    }
    return cur;
  }

  /// Normalizes `ptr` so that its path designates a location of type
  /// `want`, descending through first fields / element 0 when the object is
  /// viewed through a parent (prefix) type.
  Path resolve(const Value& ptr, const TypeRef& want, TypeRef* runtime = nullptr) {
    Object& o = live_object(ptr);
    if (o.type.is(TypeKind::Opaque)) throw Trap("access to untyped heap object (missing cast)");
    Path path = ptr.path;
    TypeRef cur = type_at(o, path);
    while (!same_class(cur, want)) {
      if (cur.is(TypeKind::Struct)) {
        path.push_back({PathStep::Kind::Field, 0});
        cur = p_.find_struct(cur.struct_name())->fields.front().type;
      } else if (cur.is(TypeKind::Array)) {
        path.push_back({PathStep::Kind::Index, 0});
        cur = cur.element();
      } else {
        throw Trap("invalid access: " + type_at(o, ptr.path).str() + " accessed as " + want.str());
      }
    }
    if (runtime) *runtime = cur;
    return path;
  }

  Value& cell(const Value& ptr, const TypeRef& want) {
    Path path = resolve(ptr, want);
    Object& o = s_.objects[ptr.obj];
    std::int64_t off = path_offset(o.type, path, p_, false);
    return o.cells.at(off / 8);
  }

  Value coerce(const Value& v, const TypeRef& t) {
    if (t.is(TypeKind::Int64)) {
      if (v.kind != Value::Kind::Int) throw Trap("expected an integer value, got " + value_str(v, p_));
      return v;
    }
    if (v.kind == Value::Kind::Int) {
      if (v.i != 0) throw Trap("non-zero integer used as a pointer");
      return Value::null();
    }
    if (v.kind == Value::Kind::Null) return v;
    if (t.is(TypeKind::FnPtr) && v.kind == Value::Kind::Fn) return v;
    if (t.is_pointer() && v.kind == Value::Kind::Ptr) return v;
    throw Trap("value " + value_str(v, p_) + " does not fit type " + t.str());
  }

  // -- frames ---------------------------------------------------------------

  void enter(int func, std::vector<Value> args) {
    const Function& f = p_.functions[func];
    Frame fr;
    fr.func = func;
    fr.regs.assign(f.reg_names.size(), Value::uninit());
    for (std::size_t i = 0; i < args.size(); ++i) fr.regs[i] = coerce(args[i], f.params[i].type);
    fr.pc = f.blocks.front().first;
    s_.frames.push_back(std::move(fr));
    if (phase_ == Phase::Init) s_.executed_functions.insert(func);
    else trace_.processing_functions.insert(func);
  }

  void leave(std::optional<Value> result) {
    Frame done = std::move(s_.frames.back());
    s_.frames.pop_back();
    for (int id : done.stack_objects) s_.objects[id].live = false;
    if (s_.frames.empty()) return;
    Frame& caller = s_.frames.back();
    const Instruction& call = p_.functions[caller.func].insns[caller.pc];
    if (call.dest >= 0) {
      if (!result) throw Trap("result of void function @" + p_.functions[done.func].name + " used");
      TypeRef want = call.op == Opcode::ICall ? call.type : *p_.functions[done.func].ret;
      caller.regs[call.dest] = coerce(*result, want);
    }
    ++caller.pc;
  }

  Value operand(const Frame& fr, const Operand& op) {
    if (!op.is_reg()) return Value::pointer(s_.global_objects.at(p_.global_index(op.name)));
    const Value& v = fr.regs.at(op.reg);
    if (v.kind == Value::Kind::Uninit) throw Trap("read of undefined register %" + op.name);
    return v;
  }

  std::int64_t int_operand(const Frame& fr, const Operand& op) {
    Value v = operand(fr, op);
    if (v.kind != Value::Kind::Int) throw Trap("expected integer operand %" + op.name);
    return v.i;
  }

  TypeRef static_pointee(const Function& f, const Operand& op) {
    if (!op.is_reg()) return p_.globals[p_.global_index(op.name)].type;
    return f.reg_types.at(op.reg).pointee();
  }

  std::int64_t byte_offset(const Value& v) {
    const Object& o = s_.objects.at(v.obj);
    try {
      return path_offset(o.type, v.path, p_, false);
    } catch (const Trap&) {
      return -1;
    }
  }

  bool values_equal(const Value& a, const Value& b) {
    if (a.kind == Value::Kind::Int && b.kind == Value::Kind::Int) return a.i == b.i;
    auto is_null = [](const Value& v) {
      return v.kind == Value::Kind::Null || (v.kind == Value::Kind::Int && v.i == 0);
    };
    if (is_null(a) || is_null(b)) return is_null(a) && is_null(b);
    if (a.kind == Value::Kind::Fn && b.kind == Value::Kind::Fn) return a.fn == b.fn;
    if (a.kind == Value::Kind::Ptr && b.kind == Value::Kind::Ptr) {
      if (a.obj != b.obj) return false;
      std::int64_t oa = byte_offset(a), ob = byte_offset(b);
      if (oa < 0 || ob < 0) return a.path == b.path;
      return oa == ob;
    }
    return false;
  }

  void transition() {
    trace_.transitioned = true;
    phase_ = Phase::Processing;
    for (const auto& fr : s_.frames) trace_.processing_functions.insert(fr.func);
  }

  void emit_trace(const Function& f, const Instruction& ins, const Frame* fr) {
    nlohmann::ordered_json j;
    j["step"] = s_.steps;
    j["site"] = site_name(p_, where_);
    j["op"] = opcode_name(ins.op);
    if (ins.dest >= 0 && fr && fr->regs.size() > static_cast<std::size_t>(ins.dest)) {
      j["reg"] = "%" + f.reg_names[ins.dest];
      j["value"] = value_str(fr->regs[ins.dest], p_);
    }
    *opts_.trace << j.dump() << '\n';
  }

  StopReason loop() {
    while (!s_.frames.empty()) {
      int depth = static_cast<int>(s_.frames.size());
      Frame& fr = s_.frames.back();
      const Function& f = p_.functions[fr.func];
      const Instruction& ins = f.insns.at(fr.pc);
      where_ = SiteId{fr.func, fr.pc};
      if (s_.steps >= opts_.budget) return {StopKind::BudgetExhausted, "step budget exhausted", where_};
      ++s_.steps;
      if (phase_ == Phase::Processing) trace_.processing_insns.insert(where_);
      bool transfers = false;  // the instruction manages pc itself
      bool stop = false;
      switch (ins.op) {
        case Opcode::Alloc: {
          int id = new_object(ObjectKind::Stack, sizeof_type(ins.type, p_), ins.type, where_);
          fr.stack_objects.push_back(id);
          fr.regs[ins.dest] = Value::pointer(id);
          break;
        }
        case Opcode::Malloc: {
          std::int64_t sz = int_operand(fr, ins.operands[0]);
          if (sz < 0) throw Trap("negative allocation size");
          int id = new_object(ObjectKind::Heap, sz, TypeRef::opaque(), where_);
          s_.frames.back().regs[ins.dest] = Value::pointer(id);
          break;
        }
        case Opcode::Free: {
          Value v = operand(fr, ins.operands[0]);
          if (v.kind == Value::Kind::Null) break;
          if (v.kind != Value::Kind::Ptr) throw Trap("free of non-pointer");
          Object& o = s_.objects.at(v.obj);
          if (o.kind != ObjectKind::Heap) throw Trap("free of non-heap object");
          if (!o.live) throw Trap("double free");
          if (byte_offset(v) != 0) throw Trap("free of interior pointer");
          o.live = false;
          break;
        }
        case Opcode::Load: {
          TypeRef want = static_pointee(f, ins.operands[0]);
          const Value& c = cell(operand(fr, ins.operands[0]), want);
          if (c.kind == Value::Kind::Uninit) throw Trap("read of uninitialized memory");
          fr.regs[ins.dest] = c;
          break;
        }
        case Opcode::Store: {
          TypeRef want = static_pointee(f, ins.operands[1]);
          Value v = coerce(operand(fr, ins.operands[0]), want);
          cell(operand(fr, ins.operands[1]), want) = v;
          break;
        }
        case Opcode::Gep: {
          Value base = operand(fr, ins.operands[0]);
          TypeRef want = static_pointee(f, ins.operands[0]);
          TypeRef rt;
          Path path = resolve(base, want, &rt);
          if (ins.gep == GepKind::Field) {
            path.push_back({PathStep::Kind::Field, ins.imm});
          } else {
            std::int64_t i = int_operand(fr, ins.operands[1]);
            if (rt.is(TypeKind::Array) && want.is(TypeKind::Array)) {
              if (i < 0 || i >= rt.count()) throw Trap("array index " + std::to_string(i) + " out of bounds");
              path.push_back({PathStep::Kind::Index, i});
            } else if (i != 0) {
              if (path.empty() || path.back().kind != PathStep::Kind::Index)
                throw Trap("pointer arithmetic outside an array");
              std::int64_t j = path.back().k + i;
              path.pop_back();
              TypeRef arr = type_at(s_.objects[base.obj], path);
              if (j < 0 || j >= arr.count()) throw Trap("pointer arithmetic out of bounds");
              path.push_back({PathStep::Kind::Index, j});
            }
          }
          fr.regs[ins.dest] = Value::pointer(base.obj, std::move(path));
          break;
        }
        case Opcode::Cast: {
          Value v = operand(fr, ins.operands[0]);
          if (v.kind == Value::Kind::Ptr && v.path.empty()) {
            Object& o = s_.objects.at(v.obj);
            if (o.kind == ObjectKind::Heap && o.live && !ins.type.is(TypeKind::Opaque)) {
              o.type = derive_heap_type(o, ins.type, p_);
              s_.type_trace.push_back({s_.steps, o.id, ins.type, o.type, descriptiveness(o.type, p_)});
            }
          }
          fr.regs[ins.dest] = v;
          break;
        }
        case Opcode::Call:
        case Opcode::ICall: {
          int callee;
          std::size_t first_arg = 0;
          if (ins.op == Opcode::Call) {
            callee = p_.function_index(ins.symbol);
          } else {
            Value fp = operand(fr, ins.operands[0]);
            if (fp.kind == Value::Kind::Null) throw Trap("indirect call through null function pointer");
            if (fp.kind != Value::Kind::Fn) throw Trap("indirect call through non-function value");
            callee = fp.fn;
            first_arg = 1;
            if (p_.functions[callee].params.size() != ins.operands.size() - 1)
              throw Trap("arity mismatch calling @" + p_.functions[callee].name);
            if (ins.dest >= 0 && !p_.functions[callee].ret)
              throw Trap("result of void function @" + p_.functions[callee].name + " used");
            IcallEvent ev{where_, callee, phase_};
            trace_.icalls.push_back(ev);
            if (phase_ == Phase::Init) s_.icalls.push_back(ev);
          }
          std::vector<Value> args;
          for (std::size_t k = first_arg; k < ins.operands.size(); ++k) args.push_back(operand(fr, ins.operands[k]));
          if (opts_.trace) emit_trace(f, ins, nullptr);
          enter(callee, std::move(args));
          transfers = true;
          break;
        }
        case Opcode::FuncAddr:
          fr.regs[ins.dest] = Value::function(p_.function_index(ins.symbol));
          break;
        case Opcode::Const:
          fr.regs[ins.dest] = Value::integer(ins.imm);
          break;
        case Opcode::SizeOf:
          fr.regs[ins.dest] = Value::integer(sizeof_type(ins.type, p_));
          break;
        case Opcode::Add:
        case Opcode::Sub:
        case Opcode::Mul:
        case Opcode::Div: {
          auto a = static_cast<std::uint64_t>(int_operand(fr, ins.operands[0]));
          auto b = static_cast<std::uint64_t>(int_operand(fr, ins.operands[1]));
          std::int64_t r = 0;
          if (ins.op == Opcode::Add) r = wrap(a + b);
          else if (ins.op == Opcode::Sub) r = wrap(a - b);
          else if (ins.op == Opcode::Mul) r = wrap(a * b);
          else {
            auto sa = static_cast<std::int64_t>(a), sb = static_cast<std::int64_t>(b);
            if (sb == 0) throw Trap("division by zero");
            r = (sa == std::numeric_limits<std::int64_t>::min() && sb == -1) ? sa : sa / sb;
          }
          fr.regs[ins.dest] = Value::integer(r);
          break;
        }
        case Opcode::CmpEq:
          fr.regs[ins.dest] =
              Value::integer(values_equal(operand(fr, ins.operands[0]), operand(fr, ins.operands[1])) ? 1 : 0);
          break;
        case Opcode::CmpLt:
          fr.regs[ins.dest] =
              Value::integer(int_operand(fr, ins.operands[0]) < int_operand(fr, ins.operands[1]) ? 1 : 0);
          break;
        case Opcode::Br:
          fr.pc = f.blocks[ins.targets[0]].first;
          transfers = true;
          break;
        case Opcode::CondBr: {
          bool taken = int_operand(fr, ins.operands[0]) != 0;
          fr.pc = f.blocks[ins.targets[taken ? 0 : 1]].first;
          transfers = true;
          break;
        }
        case Opcode::Ret: {
          std::optional<Value> result;
          if (!ins.operands.empty()) result = coerce(operand(fr, ins.operands[0]), *f.ret);
          if (opts_.trace) emit_trace(f, ins, nullptr);
          leave(std::move(result));
          transfers = true;
          break;
        }
        case Opcode::Config: {
          auto it = s_.config.find(ins.symbol);
          fr.regs[ins.dest] = Value::integer(it == s_.config.end() ? 0 : it->second);
          break;
        }
        case Opcode::Input: {
          if (phase_ == Phase::Init || !full_) throw Trap("input read during the initialization phase");
          if (input_pos_ >= inputs_->size()) throw Trap("input stream exhausted");
          fr.regs[ins.dest] = Value::integer((*inputs_)[input_pos_++]);
          break;
        }
        case Opcode::Syscall:
          if (phase_ == Phase::Init) {
            s_.init_syscalls.insert(ins.symbol);
            trace_.init_syscalls.insert(ins.symbol);
          } else {
            trace_.processing_syscalls.insert(ins.symbol);
          }
          break;
        case Opcode::Spawn: {
          SpawnRecord rec;
          rec.func = p_.function_index(ins.symbol);
          rec.site = where_;
          const Function& entry = p_.functions[rec.func];
          for (std::size_t k = 0; k < ins.operands.size(); ++k)
            rec.args.push_back(coerce(operand(fr, ins.operands[k]), entry.params[k].type));
          if (phase_ == Phase::Init) {
            s_.spawned_entries.insert(rec.func);
            s_.spawns.push_back(rec);
          }
          if (full_) threads_.push_back(std::move(rec));
          break;
        }
        case Opcode::StartProcessing:
          if (!full_) {
            stop = true;
            break;
          }
          if (trace_.transitioned) throw Trap("start_processing executed twice");
          transition();
          break;
      }
      if (opts_.trace && ins.op != Opcode::Call && ins.op != Opcode::ICall && ins.op != Opcode::Ret)
        emit_trace(f, ins, depth <= static_cast<int>(s_.frames.size()) ? &s_.frames[depth - 1] : nullptr);
      if (stop) return {StopKind::TransitionReached, "", where_};
      if (!transfers) ++s_.frames.back().pc;
    }
    return {StopKind::Finished, "", where_};
  }

  const Program& p_;
  const InterpOptions& opts_;
  bool full_;
  const std::vector<std::int64_t>* inputs_;
  std::size_t input_pos_ = 0;
  Phase phase_ = Phase::Init;
  MachineState s_;
  ExecutionTrace trace_;
  std::deque<SpawnRecord> threads_;
  SiteId where_;
};

}  // namespace

InitResult run_init(const Program& p, const InterpOptions& opts) {
  Machine m(p, opts, false, nullptr);
  StopReason r = m.run();
  if (r.kind == StopKind::Finished)
    r.message = "transition point not reached: program finished before start_processing";
  return {std::move(r), std::move(m.state())};
}

FullResult run_full(const Program& p, const InterpOptions& opts, const std::vector<std::int64_t>& inputs) {
  Machine m(p, opts, true, &inputs);
  StopReason r = m.run();
  return {std::move(r), std::move(m.trace())};
}

namespace {

nlohmann::ordered_json stop_json(const Program& p, const StopReason& stop) {
  nlohmann::ordered_json j;
  j["kind"] = stop_kind_name(stop.kind);
  if (!stop.message.empty()) j["message"] = stop.message;
  if (stop.where.func >= 0) j["where"] = site_name(p, stop.where);
  return j;
}

nlohmann::ordered_json icalls_json(const Program& p, const std::vector<IcallEvent>& icalls) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& ev : icalls)
    out.push_back({{"site", site_name(p, ev.site)},
                   {"target", p.functions.at(ev.target).name},
                   {"phase", ev.phase == Phase::Init ? "init" : "processing"}});
  return out;
}

const char* object_kind_name(ObjectKind k) {
  switch (k) {
    case ObjectKind::Global: return "global";
    case ObjectKind::Stack: return "stack";
    case ObjectKind::Heap: return "heap";
  }
  return "?";
}

}  // namespace

std::string snapshot_json(const Program& p, const StopReason& stop, const MachineState& s) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["stop"] = stop_json(p, stop);
  j["steps"] = s.steps;
  ordered_json objs = ordered_json::array();
  for (const auto& o : s.objects) {
    if (!o.live) continue;
    ordered_json e;
    e["id"] = o.id;
    e["kind"] = object_kind_name(o.kind);
    if (o.kind == ObjectKind::Global) e["name"] = "@" + p.globals.at(o.global).name;
    else e["site"] = site_name(p, o.site);
    e["size"] = o.size;
    e["type"] = o.type.str();
    ordered_json cells = ordered_json::array();
    for (const auto& c : o.cells) cells.push_back(value_str(c, p));
    e["cells"] = cells;
    objs.push_back(e);
  }
  j["objects"] = objs;
  ordered_json frames = ordered_json::array();
  for (const auto& fr : s.frames) {
    const Function& f = p.functions.at(fr.func);
    ordered_json regs = ordered_json::object();
    for (std::size_t r = 0; r < fr.regs.size(); ++r)
      if (fr.regs[r].kind != Value::Kind::Uninit) regs["%" + f.reg_names[r]] = value_str(fr.regs[r], p);
    frames.push_back({{"function", f.name}, {"at", site_name(p, {fr.func, fr.pc})}, {"regs", regs}});
  }
  j["frames"] = frames;
  ordered_json spawns = ordered_json::array();
  for (const auto& sp : s.spawns) {
    ordered_json args = ordered_json::array();
    for (const auto& a : sp.args) args.push_back(value_str(a, p));
    spawns.push_back({{"function", p.functions.at(sp.func).name}, {"site", site_name(p, sp.site)}, {"args", args}});
  }
  j["spawns"] = spawns;
  std::set<std::string> executed;
  for (int f : s.executed_functions) executed.insert(p.functions.at(f).name);
  j["executedFunctions"] = executed;
  j["initSyscalls"] = s.init_syscalls;
  j["icalls"] = icalls_json(p, s.icalls);
  ordered_json types = ordered_json::array();
  for (const auto& ev : s.type_trace)
    types.push_back({{"step", ev.step},
                     {"object", ev.obj},
                     {"castTo", ev.cast_target.str()},
                     {"type", ev.type.str()},
                     {"descriptiveness", ev.descriptiveness}});
  j["typeTrace"] = types;
  return j.dump(2) + "\n";
}

std::string trace_json(const Program& p, const StopReason& stop, const ExecutionTrace& t) {
  nlohmann::ordered_json j;
  j["stop"] = stop_json(p, stop);
  j["transitioned"] = t.transitioned;
  j["icalls"] = icalls_json(p, t.icalls);
  j["initSyscalls"] = t.init_syscalls;
  j["processingSyscalls"] = t.processing_syscalls;
  std::set<std::string> fns;
  for (int f : t.processing_functions) fns.insert(p.functions.at(f).name);
  j["processingFunctions"] = fns;
  j["processingInstructions"] = t.processing_insns.size();
  return j.dump(2) + "\n";
}

}  // namespace phaseseed
