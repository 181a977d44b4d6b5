// Concrete interpreter for PIR: runs the initialization phase up to
// start_processing (run_init) or the whole program as an oracle (run_full).
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "phaseseed/ir.hpp"

namespace phaseseed {

struct PathStep {
  enum class Kind { Field, Index };
  Kind kind = Kind::Field;
  std::int64_t k = 0;
  auto operator<=>(const PathStep&) const = default;
};

using Path = std::vector<PathStep>;

struct Value {
  enum class Kind { Uninit, Null, Int, Fn, Ptr };
  Kind kind = Kind::Uninit;
  std::int64_t i = 0;  // Int payload
  int fn = -1;  // function index
  int obj = -1;  // object id
  Path path;

  static Value uninit() { return {}; }
  static Value null() { return {Kind::Null, 0, -1, -1, {}}; }
  static Value integer(std::int64_t v) { return {Kind::Int, v, -1, -1, {}}; }
  static Value function(int f) { return {Kind::Fn, 0, f, -1, {}}; }
  static Value pointer(int obj, Path path = {}) { return {Kind::Ptr, 0, -1, obj, std::move(path)}; }

  bool operator==(const Value&) const = default;
};

enum class ObjectKind { Global, Stack, Heap };

/// One memory object: a global, a stack allocation or a heap allocation.
/// Cells are 8-byte slots; heap objects also carry the allocation metadata.
struct Object {
  int id = -1;
  ObjectKind kind = ObjectKind::Heap;
  int global = -1;  // global index for globals
  SiteId site;  // alloc/malloc instruction for stack/heap objects
  std::int64_t size = 0;
  TypeRef type;  // current type; heap objects start as opaque
  bool live = true;  // false once freed (heap) or popped (stack)
  std::vector<Value> cells;
  bool operator==(const Object&) const = default;
};

struct Frame {
  int func = -1;
  int pc = 0;  // index of the instruction currently executing
  std::vector<Value> regs;
  std::vector<int> stack_objects;
  bool operator==(const Frame&) const = default;
};

struct SpawnRecord {
  int func = -1;
  std::vector<Value> args;
  SiteId site;
  bool operator==(const SpawnRecord&) const = default;
};

enum class Phase { Init, Processing };

struct IcallEvent {
  SiteId site;
  int target = -1;
  Phase phase = Phase::Init;
  bool operator==(const IcallEvent&) const = default;
};

/// A retyping-relevant cast on a heap object head.
struct TypeEvent {
  std::int64_t step = 0;
  int obj = -1;
  TypeRef cast_target;
  TypeRef type;  // currentType after the cast
  std::int64_t descriptiveness = 0;
  bool operator==(const TypeEvent&) const = default;
};

struct MachineState {
  std::vector<Object> objects;
  std::vector<int> global_objects;  // global index -> object id
  std::vector<Frame> frames;  // outermost first
  std::vector<SpawnRecord> spawns;
  std::set<int> spawned_entries;
  std::set<int> executed_functions;
  std::set<std::string> init_syscalls;
  std::vector<IcallEvent> icalls;
  std::map<std::string, std::int64_t> config;
  std::vector<TypeEvent> type_trace;
  std::int64_t steps = 0;
  bool operator==(const MachineState&) const = default;

  const Object& object(int id) const { return objects.at(id); }
};

enum class StopKind { TransitionReached, Finished, Trap, BudgetExhausted };
const char* stop_kind_name(StopKind k);

struct StopReason {
  StopKind kind = StopKind::Finished;
  std::string message;
  SiteId where;
};

struct InterpOptions {
  std::map<std::string, std::int64_t> config;
  std::int64_t budget = 10'000'000;
  std::ostream* trace = nullptr;  // JSON lines, one event per executed instruction
};

struct InitResult {
  StopReason stop;
  MachineState state;
};

/// Executes from the entry function until start_processing.
InitResult run_init(const Program& p, const InterpOptions& opts);

struct ExecutionTrace {
  std::vector<IcallEvent> icalls;
  std::set<std::string> init_syscalls;
  std::set<std::string> processing_syscalls;
  std::set<int> processing_functions;  // entered or resumed after the transition
  std::set<SiteId> processing_insns;  // executed after the transition
  bool transitioned = false;
};

struct FullResult {
  StopReason stop;
  ExecutionTrace trace;
};

/// Executes the whole program; spawned threads run to completion one after
/// another once the entry function returns. `input` pops `inputs`.
FullResult run_full(const Program& p, const InterpOptions& opts, const std::vector<std::int64_t>& inputs);

/// Thrown by derive_heap_type and internally for interpreter traps.
class Trap : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Type a heap object takes after a head cast to `cast_target`. Throws Trap
/// on a size mismatch.
TypeRef derive_heap_type(const Object& meta, const TypeRef& cast_target, const Program& p);

/// Byte offset of `path` inside an object of type `t`; when `collapse` is set
/// array indices contribute nothing (every element maps onto element 0).
std::int64_t path_offset(const TypeRef& t, const Path& path, const Program& p, bool collapse);

/// Maps a byte offset inside type `t` onto the collapsed (element 0) offset.
std::int64_t collapse_offset(const TypeRef& t, std::int64_t offset, const Program& p);

std::string value_str(const Value& v, const Program& p);

/// JSON dump of a transition snapshot: live objects with their types and
/// cells, frames, spawns, executed functions, syscalls, icalls, type trace.
std::string snapshot_json(const Program& p, const StopReason& stop, const MachineState& s);

/// JSON dump of an oracle run.
std::string trace_json(const Program& p, const StopReason& stop, const ExecutionTrace& t);

}  // namespace phaseseed
