// PIR: the small typed intermediate representation shared by the interpreter
// and the static analyses.
#pragma once

#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace phaseseed {

class TypeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TypeKind { Int64, FnPtr, Ptr, Struct, Array, Opaque };

/// Immutable, structurally compared type handle. A default-constructed
/// TypeRef is "unknown" and only shows up for ill-typed registers.
class TypeRef {
 public:
  TypeRef() = default;

  static TypeRef int64();
  static TypeRef fnptr();
  static TypeRef opaque();
  static TypeRef ptr(TypeRef pointee);
  static TypeRef named(std::string struct_name);
  static TypeRef array(TypeRef element, std::int64_t count);

  explicit operator bool() const { return node_ != nullptr; }

  TypeKind kind() const;
  bool is(TypeKind k) const;
  /// i64, fnptr and ptr<...>: the types a memory cell or register can hold.
  bool is_scalar() const;
  bool is_pointer() const { return is(TypeKind::Ptr); }

  const TypeRef& pointee() const;
  const TypeRef& element() const;
  std::int64_t count() const;
  const std::string& struct_name() const;

  /// PIR spelling, e.g. `ptr<array<%plugin, 3>>`.
  std::string str() const;

  friend bool operator==(const TypeRef& a, const TypeRef& b);
  friend std::strong_ordering operator<=>(const TypeRef& a, const TypeRef& b);

 private:
  struct Node;
  explicit TypeRef(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

struct TypeRef::Node {
  TypeKind kind;
  TypeRef inner;  // Ptr pointee / Array element
  std::string name;  // Struct
  std::int64_t count = 0;  // Array
};

inline TypeKind TypeRef::kind() const { return node_->kind; }
inline bool TypeRef::is(TypeKind k) const { return node_ && node_->kind == k; }

/// Source position. Never takes part in structural equality.
struct SourceLoc {
  int line = 0;
  int column = 0;
  bool operator==(const SourceLoc&) const { return true; }
};

struct Field {
  std::string name;
  TypeRef type;
  bool operator==(const Field&) const = default;
};

struct StructDef {
  std::string name;
  std::vector<Field> fields;
  SourceLoc loc;
  bool operator==(const StructDef&) const = default;
};

struct GlobalInit {
  enum class Kind { Null, Int, Ref, Aggregate };
  Kind kind = Kind::Null;
  std::int64_t value = 0;
  std::string ref;  // function or global name
  std::vector<GlobalInit> elems;
  bool operator==(const GlobalInit&) const = default;
};

struct Global {
  std::string name;
  TypeRef type;
  std::optional<GlobalInit> init;
  SourceLoc loc;
  bool operator==(const Global&) const = default;
};

enum class Opcode {
  Alloc, Malloc, Free, Load, Store, Gep, Cast, Call, ICall, FuncAddr,
  Const, SizeOf, Add, Sub, Mul, Div, CmpEq, CmpLt, Br, CondBr, Ret,
  Config, Input, Syscall, Spawn, StartProcessing
};

const char* opcode_name(Opcode op);
bool is_terminator(Opcode op);
bool defines_value(Opcode op);

struct Operand {
  enum class Kind { Reg, Global };
  Kind kind = Kind::Reg;
  int reg = -1;
  std::string name;  // register name (without '%') or global name

  static Operand make_reg(int index, std::string name) { return {Kind::Reg, index, std::move(name)}; }
  static Operand make_global(std::string name) { return {Kind::Global, -1, std::move(name)}; }
  bool is_reg() const { return kind == Kind::Reg; }
  bool operator==(const Operand&) const = default;
};

enum class GepKind { Field, Index };

struct Instruction {
  Opcode op = Opcode::Ret;
  int dest = -1;
  std::vector<Operand> operands;
  TypeRef type;  // alloc/sizeof type, cast pointee, icall result
  std::string symbol;  // callee, funcaddr target, config or syscall name
  std::vector<std::string> labels;
  std::vector<int> targets;  // resolved block indices of `labels`
  std::int64_t imm = 0;  // const value or gep field index
  GepKind gep = GepKind::Field;
  std::string field_name;  // gep by field name; resolved into imm
  std::int64_t offset = 0;  // gep field byte offset (resolved)
  SourceLoc loc;
  bool operator==(const Instruction&) const = default;
};

struct Block {
  std::string label;
  int first = 0;  // [first, last) into Function::insns
  int last = 0;
  SourceLoc loc;
  bool operator==(const Block&) const = default;
};

struct Param {
  std::string name;
  TypeRef type;
  bool operator==(const Param&) const = default;
};

struct Function {
  std::string name;
  std::vector<Param> params;  // registers 0 .. params.size()-1
  std::optional<TypeRef> ret;  // nullopt = void
  std::vector<Block> blocks;
  std::vector<Instruction> insns;
  std::vector<std::string> reg_names;
  std::vector<TypeRef> reg_types;  // inferred static types
  std::vector<int> insn_block;
  SourceLoc loc;
  bool operator==(const Function&) const = default;

  int block_of(int insn) const { return insn_block.at(insn); }
  int find_block(const std::string& label) const;
};

struct StructLayout {
  std::int64_t size = 0;
  std::int64_t descriptiveness = 0;
  std::vector<std::int64_t> offsets;
};

struct Program {
  std::vector<StructDef> structs;
  std::vector<Global> globals;
  std::vector<Function> functions;
  std::string entry = "main";

  bool operator==(const Program& o) const {
    return structs == o.structs && globals == o.globals && functions == o.functions &&
           entry == o.entry;
  }

  const StructDef* find_struct(const std::string& name) const;
  int struct_index(const std::string& name) const;
  int function_index(const std::string& name) const;
  int global_index(const std::string& name) const;
  const Function& function(const std::string& name) const;

  /// Layout of a struct; throws TypeError for unknown or recursively embedded structs.
  const StructLayout& layout(const std::string& struct_name) const;

  /// Rebuilds lookup tables and struct layouts. Called by the parser.
  void reindex();

 private:
  friend struct LayoutAccess;
  std::unordered_map<std::string, int> struct_ix_, function_ix_, global_ix_;
  mutable std::unordered_map<std::string, StructLayout> layouts_;
};

/// Identifies one instruction: the call-site / allocation-site key.
struct SiteId {
  int func = -1;
  int insn = -1;
  auto operator<=>(const SiteId&) const = default;
};

/// `function:block:index-in-block`, e.g. `main:serve:3`.
std::string site_name(const Program& p, SiteId s);

// Type metrics. Scalars are 8 bytes and structs have no padding.
std::int64_t sizeof_type(const TypeRef& t, const Program& p);
std::int64_t descriptiveness(const TypeRef& t, const Program& p);

/// Byte offset of field `k` of struct `name`.
std::int64_t field_offset(const Program& p, const std::string& name, std::int64_t k);

/// True when `prefix` is `t` itself or is reached from `t` by repeatedly
/// taking the first field / element 0 (the punning "parent view" chain).
bool is_prefix_type(const TypeRef& prefix, const TypeRef& t, const Program& p);

/// Largest sizeof over every type spelled in the program.
std::int64_t max_type_size(const Program& p);

}  // namespace phaseseed
