#include "phaseseed/parser.hpp"

#include <cctype>
#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace phaseseed {

std::string Diagnostic::str() const {
  return std::to_string(line) + ":" + std::to_string(column) + ": " + message;
}

namespace {

// ---------------------------------------------------------------------------
// Lexer

enum class Tok { Ident, Reg, Sym, Int, Str, Punct, Arrow, Newline, End };

struct Token {
  Tok kind;
  std::string text;
  std::int64_t value = 0;
  int line = 0;
  int column = 0;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::vector<Token> lex(std::string_view src, std::vector<Diagnostic>& diags) {
  std::vector<Token> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  auto push = [&](Tok k, std::string text, int c, std::int64_t v = 0) {
    out.push_back(Token{k, std::move(text), v, line, c});
  };
  while (i < src.size()) {
    char c = src[i];
    if (c == '\n') {
      push(Tok::Newline, "\\n", col);
      ++i;
      ++line;
      col = 1;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      ++col;
      continue;
    }
    if (c == '/' && i + 1 < src.size() && src[i + 1] == '/') {
      while (i < src.size() && src[i] != '\n') ++i;
      continue;
    }
    int start_col = col;
    if (c == '%' || c == '@' || ident_start(c)) {
      std::size_t j = (c == '%' || c == '@') ? i + 1 : i;
      if (j >= src.size() || !ident_start(src[j])) {
        diags.push_back({line, col, std::string("expected identifier after '") + c + "'"});
        ++i;
        ++col;
        continue;
      }
      std::size_t k = j;
      while (k < src.size() && ident_char(src[k])) ++k;
      std::string name(src.substr(j, k - j));
      Tok kind = c == '%' ? Tok::Reg : c == '@' ? Tok::Sym : Tok::Ident;
      push(kind, std::move(name), start_col);
      col += static_cast<int>(k - i);
      i = k;
      continue;
    }
    if (c == '-' && i + 1 < src.size() && src[i + 1] == '>') {
      push(Tok::Arrow, "->", start_col);
      i += 2;
      col += 2;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '-' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t k = i + 1;
      while (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) ++k;
      std::int64_t v = 0;
      auto [ptr, ec] = std::from_chars(src.data() + i, src.data() + k, v);
      if (ec != std::errc()) diags.push_back({line, col, "integer literal out of range"});
      push(Tok::Int, std::string(src.substr(i, k - i)), start_col, v);
      col += static_cast<int>(k - i);
      i = k;
      continue;
    }
    if (c == '"') {
      std::size_t k = i + 1;
      while (k < src.size() && src[k] != '"' && src[k] != '\n') ++k;
      if (k >= src.size() || src[k] != '"') {
        diags.push_back({line, col, "unterminated string literal"});
        col += static_cast<int>(k - i);
        i = k;
        continue;
      }
      push(Tok::Str, std::string(src.substr(i + 1, k - i - 1)), start_col);
      col += static_cast<int>(k + 1 - i);
      i = k + 1;
      continue;
    }
    if (std::string_view("=:,{}()<>").find(c) != std::string_view::npos) {
      push(Tok::Punct, std::string(1, c), start_col);
      ++i;
      ++col;
      continue;
    }
    diags.push_back({line, col, std::string("unexpected character '") + c + "'"});
    ++i;
    ++col;
  }
  out.push_back(Token{Tok::End, "<eof>", 0, line, col});
  return out;
}

// ---------------------------------------------------------------------------
// Parser

struct SyntaxError {
  Diagnostic diag;
};

const std::unordered_map<std::string, Opcode>& opcode_table() {
  static const std::unordered_map<std::string, Opcode> table = {
      {"alloc", Opcode::Alloc},     {"malloc", Opcode::Malloc},
      {"free", Opcode::Free},       {"load", Opcode::Load},
      {"store", Opcode::Store},     {"gep", Opcode::Gep},
      {"cast", Opcode::Cast},       {"call", Opcode::Call},
      {"icall", Opcode::ICall},     {"funcaddr", Opcode::FuncAddr},
      {"const", Opcode::Const},     {"sizeof", Opcode::SizeOf},
      {"add", Opcode::Add},         {"sub", Opcode::Sub},
      {"mul", Opcode::Mul},         {"div", Opcode::Div},
      {"cmp", Opcode::CmpEq},       {"br", Opcode::Br},
      {"cbr", Opcode::CondBr},      {"ret", Opcode::Ret},
      {"config", Opcode::Config},   {"input", Opcode::Input},
      {"syscall", Opcode::Syscall}, {"spawn", Opcode::Spawn},
      {"start_processing", Opcode::StartProcessing},
  };
  return table;
}

class Parser {
 public:
  Parser(std::vector<Token> toks, std::vector<Diagnostic>& diags)
      : toks_(std::move(toks)), diags_(diags) {}

  Program run() {
    Program p;
    skip_newlines();
    while (!at(Tok::End)) {
      try {
        const Token& t = peek();
        if (t.kind == Tok::Ident && t.text == "type") {
          p.structs.push_back(parse_struct());
        } else if (t.kind == Tok::Ident && t.text == "global") {
          p.globals.push_back(parse_global());
        } else if (t.kind == Tok::Ident && t.text == "func") {
          p.functions.push_back(parse_function());
        } else {
          fail(t, "expected 'type', 'global' or 'func', found '" + t.text + "'");
        }
        expect_line_end();
      } catch (const SyntaxError& e) {
        diags_.push_back(e.diag);
        recover_toplevel();
      }
      skip_newlines();
    }
    return p;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  bool at(Tok k) const { return peek().kind == k; }
  bool at_punct(char c) const { return peek().kind == Tok::Punct && peek().text[0] == c; }
  bool at_ident(std::string_view s) const { return peek().kind == Tok::Ident && peek().text == s; }
  const Token& next() {
    const Token& t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }

  [[noreturn]] void fail(const Token& t, std::string msg) {
    throw SyntaxError{Diagnostic{t.line, t.column, std::move(msg)}};
  }

  const Token& expect(Tok k, const char* what) {
    if (!at(k)) fail(peek(), std::string("expected ") + what + ", found '" + peek().text + "'");
    return next();
  }
  void expect_punct(char c) {
    if (!at_punct(c)) fail(peek(), std::string("expected '") + c + "', found '" + peek().text + "'");
    next();
  }
  void expect_ident(std::string_view s) {
    if (!at_ident(s)) fail(peek(), "expected '" + std::string(s) + "', found '" + peek().text + "'");
    next();
  }
  void expect_line_end() {
    if (!at(Tok::Newline) && !at(Tok::End))
      fail(peek(), "expected end of line, found '" + peek().text + "'");
  }
  void skip_newlines() {
    while (at(Tok::Newline)) next();
  }
  void recover_line() {
    while (!at(Tok::Newline) && !at(Tok::End)) next();
  }
  void recover_toplevel() {
    while (!at(Tok::End)) {
      if (at(Tok::Newline)) {
        next();
        if (at_ident("type") || at_ident("global") || at_ident("func")) return;
      } else {
        next();
      }
    }
  }

  TypeRef parse_type() {
    skip_newlines();
    const Token& t = peek();
    if (t.kind == Tok::Reg) {
      next();
      return TypeRef::named(t.text);
    }
    if (t.kind != Tok::Ident) fail(t, "expected type, found '" + t.text + "'");
    next();
    if (t.text == "i64") return TypeRef::int64();
    if (t.text == "fnptr") return TypeRef::fnptr();
    if (t.text == "opaque") return TypeRef::opaque();
    if (t.text == "ptr") {
      expect_punct('<');
      TypeRef inner = parse_type();
      expect_punct('>');
      return TypeRef::ptr(std::move(inner));
    }
    if (t.text == "array") {
      expect_punct('<');
      TypeRef inner = parse_type();
      expect_punct(',');
      const Token& n = expect(Tok::Int, "array length");
      if (n.value < 1) fail(n, "array length must be positive");
      expect_punct('>');
      return TypeRef::array(std::move(inner), n.value);
    }
    fail(t, "unknown type '" + t.text + "'");
  }

  StructDef parse_struct() {
    StructDef s;
    const Token& kw = next();
    s.loc = {kw.line, kw.column};
    s.name = expect(Tok::Reg, "struct name").text;
    expect_punct('=');
    expect_ident("struct");
    expect_punct('{');
    skip_newlines();
    for (;;) {
      Field f;
      f.name = expect(Tok::Reg, "field name").text;
      expect_punct(':');
      f.type = parse_type();
      s.fields.push_back(std::move(f));
      skip_newlines();
      if (at_punct(',')) {
        next();
        skip_newlines();
        continue;
      }
      break;
    }
    expect_punct('}');
    return s;
  }

  GlobalInit parse_ginit() {
    skip_newlines();
    const Token& t = peek();
    GlobalInit g;
    if (t.kind == Tok::Ident && t.text == "null") {
      next();
      g.kind = GlobalInit::Kind::Null;
    } else if (t.kind == Tok::Int) {
      next();
      g.kind = GlobalInit::Kind::Int;
      g.value = t.value;
    } else if (t.kind == Tok::Sym) {
      next();
      g.kind = GlobalInit::Kind::Ref;
      g.ref = t.text;
    } else if (at_punct('{')) {
      next();
      g.kind = GlobalInit::Kind::Aggregate;
      for (;;) {
        g.elems.push_back(parse_ginit());
        skip_newlines();
        if (at_punct(',')) {
          next();
          continue;
        }
        break;
      }
      expect_punct('}');
    } else {
      fail(t, "expected global initializer, found '" + t.text + "'");
    }
    return g;
  }

  Global parse_global() {
    Global g;
    const Token& kw = next();
    g.loc = {kw.line, kw.column};
    g.name = expect(Tok::Sym, "global name").text;
    expect_punct(':');
    g.type = parse_type();
    if (at_punct('=')) {
      next();
      g.init = parse_ginit();
    }
    return g;
  }

  // Per-function register table.
  struct RegTable {
    std::unordered_map<std::string, int> index;
    std::vector<std::string> names;
    std::vector<std::pair<std::string, Token>> uses;
  };

  int define_reg(RegTable& regs, const Token& t) {
    if (regs.index.count(t.text)) {
      diags_.push_back({t.line, t.column, "duplicate symbol: register %" + t.text + " redefined"});
      return regs.index[t.text];
    }
    int ix = static_cast<int>(regs.names.size());
    regs.index.emplace(t.text, ix);
    regs.names.push_back(t.text);
    return ix;
  }

  Operand parse_operand(RegTable& regs) {
    const Token& t = peek();
    if (t.kind == Tok::Reg) {
      next();
      regs.uses.emplace_back(t.text, t);
      return Operand::make_reg(-1, t.text);
    }
    if (t.kind == Tok::Sym) {
      next();
      global_uses_.push_back(t);
      return Operand::make_global(t.text);
    }
    fail(t, "expected operand, found '" + t.text + "'");
  }

  std::vector<Operand> parse_args(RegTable& regs) {
    std::vector<Operand> args;
    expect_punct('(');
    if (!at_punct(')')) {
      for (;;) {
        args.push_back(parse_operand(regs));
        if (at_punct(',')) {
          next();
          continue;
        }
        break;
      }
    }
    expect_punct(')');
    return args;
  }

  std::string parse_label() {
    const Token& t = expect(Tok::Ident, "block label");
    return t.text;
  }

  Instruction parse_instruction(RegTable& regs) {
    Instruction ins;
    const Token& first = peek();
    ins.loc = {first.line, first.column};
    std::optional<Token> dest;
    if (first.kind == Tok::Reg && peek(1).kind == Tok::Punct && peek(1).text == "=") {
      dest = next();
      next();
    }
    const Token& opt = expect(Tok::Ident, "opcode");
    auto it = opcode_table().find(opt.text);
    if (it == opcode_table().end()) fail(opt, "unknown opcode '" + opt.text + "'");
    ins.op = it->second;
    switch (ins.op) {
      case Opcode::Alloc:
      case Opcode::SizeOf:
        ins.type = parse_type();
        break;
      case Opcode::Malloc:
      case Opcode::Free:
      case Opcode::Load:
        ins.operands.push_back(parse_operand(regs));
        break;
      case Opcode::Store:
        ins.operands.push_back(parse_operand(regs));
        expect_punct(',');
        ins.operands.push_back(parse_operand(regs));
        break;
      case Opcode::Gep: {
        ins.operands.push_back(parse_operand(regs));
        expect_punct(',');
        const Token& kind = expect(Tok::Ident, "'field' or 'index'");
        if (kind.text == "field") {
          ins.gep = GepKind::Field;
          if (at(Tok::Int)) {
            const Token& k = next();
            if (k.value < 0) fail(k, "negative field index");
            ins.imm = k.value;
          } else if (at(Tok::Ident) || at(Tok::Reg)) {
            ins.field_name = next().text;
          } else {
            fail(peek(), "expected field index or name");
          }
        } else if (kind.text == "index") {
          ins.gep = GepKind::Index;
          ins.operands.push_back(parse_operand(regs));
        } else {
          fail(kind, "expected 'field' or 'index', found '" + kind.text + "'");
        }
        break;
      }
      case Opcode::Cast: {
        ins.operands.push_back(parse_operand(regs));
        expect_ident("to");
        const Token& at_type = peek();
        TypeRef t = parse_type();
        if (!t.is_pointer()) fail(at_type, "cast target must be a ptr<...> type");
        ins.type = t.pointee();
        break;
      }
      case Opcode::Call:
      case Opcode::Spawn: {
        const Token& callee = expect(Tok::Sym, "function name");
        ins.symbol = callee.text;
        function_uses_.push_back(callee);
        ins.operands = parse_args(regs);
        break;
      }
      case Opcode::ICall: {
        ins.operands.push_back(parse_operand(regs));
        auto args = parse_args(regs);
        ins.operands.insert(ins.operands.end(), args.begin(), args.end());
        if (at(Tok::Arrow)) {
          next();
          ins.type = parse_type();
        }
        if (dest && !ins.type) fail(opt, "icall with a result needs '-> type'");
        if (!dest && ins.type) fail(opt, "icall result type given but no result register");
        break;
      }
      case Opcode::FuncAddr: {
        const Token& callee = expect(Tok::Sym, "function name");
        ins.symbol = callee.text;
        function_uses_.push_back(callee);
        break;
      }
      case Opcode::Const:
        ins.imm = expect(Tok::Int, "integer").value;
        break;
      case Opcode::Add:
      case Opcode::Sub:
      case Opcode::Mul:
      case Opcode::Div:
        ins.operands.push_back(parse_operand(regs));
        expect_punct(',');
        ins.operands.push_back(parse_operand(regs));
        break;
      case Opcode::CmpEq: {
        const Token& pred = expect(Tok::Ident, "'eq' or 'lt'");
        if (pred.text == "eq") ins.op = Opcode::CmpEq;
        else if (pred.text == "lt") ins.op = Opcode::CmpLt;
        else fail(pred, "unknown comparison '" + pred.text + "'");
        ins.operands.push_back(parse_operand(regs));
        expect_punct(',');
        ins.operands.push_back(parse_operand(regs));
        break;
      }
      case Opcode::Br:
        ins.labels.push_back(parse_label());
        break;
      case Opcode::CondBr:
        ins.operands.push_back(parse_operand(regs));
        expect_punct(',');
        ins.labels.push_back(parse_label());
        expect_punct(',');
        ins.labels.push_back(parse_label());
        break;
      case Opcode::Ret:
        if (!at(Tok::Newline) && !at(Tok::End)) ins.operands.push_back(parse_operand(regs));
        break;
      case Opcode::Config:
      case Opcode::Syscall:
        ins.symbol = expect(Tok::Str, "quoted name").text;
        break;
      case Opcode::Input:
      case Opcode::StartProcessing:
      case Opcode::CmpLt:
        break;
    }
    if (defines_value(ins.op) && !dest && ins.op != Opcode::Call && ins.op != Opcode::ICall)
      fail(opt, std::string(opcode_name(ins.op)) + " must define a register");
    if (!defines_value(ins.op) && dest)
      fail(*dest, std::string(opcode_name(ins.op)) + " does not produce a value");
    if (dest) ins.dest = define_reg(regs, *dest);
    expect_line_end();
    return ins;
  }

  Function parse_function() {
    Function f;
    const Token& kw = next();
    f.loc = {kw.line, kw.column};
    f.name = expect(Tok::Sym, "function name").text;
    RegTable regs;
    expect_punct('(');
    skip_newlines();
    if (!at_punct(')')) {
      for (;;) {
        const Token& pn = expect(Tok::Reg, "parameter name");
        expect_punct(':');
        Param prm{pn.text, parse_type()};
        define_reg(regs, pn);
        f.params.push_back(std::move(prm));
        skip_newlines();
        if (at_punct(',')) {
          next();
          skip_newlines();
          continue;
        }
        break;
      }
    }
    expect_punct(')');
    expect(Tok::Arrow, "'->'");
    if (at_ident("void")) {
      next();
    } else {
      f.ret = parse_type();
    }
    expect_punct('{');
    skip_newlines();
    std::set<std::string> labels;
    while (!at_punct('}') && !at(Tok::End)) {
      if (peek().kind == Tok::Ident && peek(1).kind == Tok::Punct && peek(1).text == ":") {
        const Token& lt = next();
        next();
        if (!labels.insert(lt.text).second)
          diags_.push_back({lt.line, lt.column, "duplicate symbol: label " + lt.text});
        Block b;
        b.label = lt.text;
        b.loc = {lt.line, lt.column};
        b.first = b.last = static_cast<int>(f.insns.size());
        f.blocks.push_back(std::move(b));
        skip_newlines();
        continue;
      }
      try {
        if (f.blocks.empty()) fail(peek(), "instruction outside of a labelled block");
        f.insns.push_back(parse_instruction(regs));
        f.insn_block.push_back(static_cast<int>(f.blocks.size()) - 1);
        f.blocks.back().last = static_cast<int>(f.insns.size());
      } catch (const SyntaxError& e) {
        diags_.push_back(e.diag);
        recover_line();
      }
      skip_newlines();
    }
    expect_punct('}');
    if (f.blocks.empty()) diags_.push_back({kw.line, kw.column, "function @" + f.name + " has no blocks"});

    // Resolve register uses now that every definition is known.
    for (auto& ins : f.insns) {
      for (auto& op : ins.operands) {
        if (!op.is_reg()) continue;
        auto it = regs.index.find(op.name);
        if (it != regs.index.end()) op.reg = it->second;
      }
    }
    for (const auto& [name, tok] : regs.uses)
      if (!regs.index.count(name))
        diags_.push_back({tok.line, tok.column, "unresolved reference: register %" + name});
    // Labels
    for (auto& ins : f.insns) {
      for (const auto& l : ins.labels) {
        int b = f.find_block(l);
        if (b < 0) diags_.push_back({ins.loc.line, ins.loc.column, "unresolved reference: label " + l});
        ins.targets.push_back(b);
      }
    }
    f.reg_names = std::move(regs.names);
    return f;
  }

 public:
  std::vector<Token> function_uses_;
  std::vector<Token> global_uses_;

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::vector<Diagnostic>& diags_;
};

// ---------------------------------------------------------------------------
// Name resolution and type inference

void check_type_names(const TypeRef& t, const Program& p, SourceLoc loc, std::vector<Diagnostic>& d) {
  if (!t) return;
  switch (t.kind()) {
    case TypeKind::Struct:
      if (!p.find_struct(t.struct_name()))
        d.push_back({loc.line, loc.column, "unresolved reference: type %" + t.struct_name()});
      break;
    case TypeKind::Ptr:
      check_type_names(t.pointee(), p, loc, d);
      break;
    case TypeKind::Array:
      check_type_names(t.element(), p, loc, d);
      break;
    default:
      break;
  }
}

void check_ginit_refs(const GlobalInit& g, const Program& p, SourceLoc loc, std::vector<Diagnostic>& d) {
  if (g.kind == GlobalInit::Kind::Ref && p.function_index(g.ref) < 0 && p.global_index(g.ref) < 0)
    d.push_back({loc.line, loc.column, "unresolved reference: @" + g.ref});
  for (const auto& e : g.elems) check_ginit_refs(e, p, loc, d);
}

TypeRef operand_type(const Program& p, const Function& f, const Operand& op) {
  if (op.is_reg()) {
    if (op.reg < 0 || op.reg >= static_cast<int>(f.reg_types.size())) return {};
    return f.reg_types[op.reg];
  }
  int g = p.global_index(op.name);
  if (g < 0) return {};
  return TypeRef::ptr(p.globals[g].type);
}

// Fills reg_types and resolves gep field names/offsets. Unknown types stay
// null; validate() reports the reasons. Unknown field names are reported here.
void infer_types(Program& p, std::vector<Diagnostic>& diags) {
  for (auto& f : p.functions) {
    f.reg_types.assign(f.reg_names.size(), TypeRef());
    for (std::size_t i = 0; i < f.params.size(); ++i) f.reg_types[i] = f.params[i].type;
    for (auto& ins : f.insns) {
      TypeRef result;
      auto opty = [&](std::size_t k) {
        return k < ins.operands.size() ? operand_type(p, f, ins.operands[k]) : TypeRef();
      };
      switch (ins.op) {
        case Opcode::Alloc:
          result = TypeRef::ptr(ins.type);
          break;
        case Opcode::Malloc:
          result = TypeRef::ptr(TypeRef::opaque());
          break;
        case Opcode::Load: {
          TypeRef t = opty(0);
          if (t.is_pointer()) result = t.pointee();
          break;
        }
        case Opcode::Gep: {
          TypeRef t = opty(0);
          if (!t.is_pointer()) break;
          const TypeRef& pt = t.pointee();
          if (ins.gep == GepKind::Field) {
            if (!pt.is(TypeKind::Struct)) break;
            const StructDef* s = p.find_struct(pt.struct_name());
            if (!s) break;
            if (!ins.field_name.empty()) {
              std::int64_t k = -1;
              for (std::size_t j = 0; j < s->fields.size(); ++j)
                if (s->fields[j].name == ins.field_name) k = static_cast<std::int64_t>(j);
              if (k < 0) {
                diags.push_back({ins.loc.line, ins.loc.column,
                                 "unresolved reference: field " + ins.field_name + " of %" + s->name});
                break;
              }
              ins.imm = k;
            }
            if (ins.imm >= static_cast<std::int64_t>(s->fields.size())) break;
            try {
              ins.offset = field_offset(p, s->name, ins.imm);
            } catch (const TypeError&) {
              break;
            }
            result = TypeRef::ptr(s->fields[ins.imm].type);
          } else {
            result = pt.is(TypeKind::Array) ? TypeRef::ptr(pt.element()) : t;
          }
          break;
        }
        case Opcode::Cast:
          result = TypeRef::ptr(ins.type);
          break;
        case Opcode::Call: {
          int callee = p.function_index(ins.symbol);
          if (callee >= 0 && p.functions[callee].ret) result = *p.functions[callee].ret;
          break;
        }
        case Opcode::ICall:
          result = ins.type;
          break;
        case Opcode::FuncAddr:
          result = TypeRef::fnptr();
          break;
        case Opcode::Const:
        case Opcode::SizeOf:
        case Opcode::Add:
        case Opcode::Sub:
        case Opcode::Mul:
        case Opcode::Div:
        case Opcode::CmpEq:
        case Opcode::CmpLt:
        case Opcode::Config:
        case Opcode::Input:
          result = TypeRef::int64();
          break;
        default:
          break;
      }
      if (ins.dest >= 0) f.reg_types[ins.dest] = result;
    }
  }
}

}  // namespace

ParseResult parse_program(std::string_view text) {
  ParseResult r;
  auto toks = lex(text, r.diagnostics);
  Parser parser(std::move(toks), r.diagnostics);
  Program p = parser.run();
  p.reindex();

  auto dup = [&](const std::string& kind, const std::string& name, SourceLoc loc,
                 std::set<std::string>& seen) {
    if (!seen.insert(name).second)
      r.diagnostics.push_back({loc.line, loc.column, "duplicate symbol: " + kind + " " + name});
  };
  std::set<std::string> seen_structs, seen_syms;
  for (const auto& s : p.structs) {
    dup("type", "%" + s.name, s.loc, seen_structs);
    std::set<std::string> fields;
    for (const auto& fd : s.fields) {
      dup("field", "%" + fd.name, s.loc, fields);
      check_type_names(fd.type, p, s.loc, r.diagnostics);
    }
  }
  for (const auto& g : p.globals) {
    dup("symbol", "@" + g.name, g.loc, seen_syms);
    check_type_names(g.type, p, g.loc, r.diagnostics);
    if (g.init) check_ginit_refs(*g.init, p, g.loc, r.diagnostics);
  }
  for (const auto& f : p.functions) {
    dup("symbol", "@" + f.name, f.loc, seen_syms);
    for (const auto& prm : f.params) check_type_names(prm.type, p, f.loc, r.diagnostics);
    if (f.ret) check_type_names(*f.ret, p, f.loc, r.diagnostics);
    for (const auto& ins : f.insns) check_type_names(ins.type, p, ins.loc, r.diagnostics);
  }
  for (const auto& t : parser.function_uses_)
    if (p.function_index(t.text) < 0)
      r.diagnostics.push_back({t.line, t.column, "unresolved reference: function @" + t.text});
  for (const auto& t : parser.global_uses_) {
    if (p.global_index(t.text) < 0) {
      std::string why = p.function_index(t.text) >= 0
                            ? "function @" + t.text + " used as a value (use funcaddr)"
                            : "unresolved reference: global @" + t.text;
      r.diagnostics.push_back({t.line, t.column, why});
    }
  }
  if (r.diagnostics.empty()) infer_types(p, r.diagnostics);
  if (r.diagnostics.empty()) r.program = std::move(p);
  return r;
}

Program parse_or_throw(std::string_view text) {
  ParseResult r = parse_program(text);
  if (!r.ok()) throw std::runtime_error("parse error: " + r.diagnostics.front().str());
  return std::move(*r.program);
}

// ---------------------------------------------------------------------------
// Validation

namespace {

bool assignable(const TypeRef& value, const TypeRef& slot) {
  if (!value || !slot) return true;  // reported elsewhere
  if (value == slot) return true;
  return value.is(TypeKind::Int64) && (slot.is(TypeKind::Ptr) || slot.is(TypeKind::FnPtr));
}

class Validator {
 public:
  explicit Validator(const Program& p) : p_(p) {}

  std::vector<Diagnostic> run() {
    for (const auto& s : p_.structs) {
      for (const auto& fd : s.fields) {
        if (fd.type.is(TypeKind::Opaque))
          add(s.loc, "opaque is only allowed as a ptr pointee (field %" + fd.name + ")");
        check_type(fd.type, s.loc);
      }
      try {
        p_.layout(s.name);
      } catch (const TypeError& e) {
        add(s.loc, e.what());
      }
    }
    for (const auto& g : p_.globals) {
      check_value_type(g.type, g.loc, "global @" + g.name);
      if (g.init) check_ginit(*g.init, g.type, g.loc, "@" + g.name);
    }
    int entry = p_.function_index(p_.entry);
    if (entry < 0) {
      add({1, 1}, "missing entry function @" + p_.entry);
    } else if (!p_.functions[entry].params.empty()) {
      add(p_.functions[entry].loc, "entry function @" + p_.entry + " must not take parameters");
    }
    for (std::size_t fi = 0; fi < p_.functions.size(); ++fi) check_function(p_.functions[fi]);
    check_start_processing(entry);
    return std::move(diags_);
  }

 private:
  void add(SourceLoc loc, std::string msg) { diags_.push_back({loc.line, loc.column, std::move(msg)}); }

  void check_type(const TypeRef& t, SourceLoc loc) {
    if (!t) return;
    if (t.is(TypeKind::Ptr)) {
      if (!t.pointee().is(TypeKind::Opaque)) check_type(t.pointee(), loc);
      return;
    }
    if (t.is(TypeKind::Array)) {
      if (t.element().is(TypeKind::Opaque)) add(loc, "opaque is only allowed as a ptr pointee");
      check_type(t.element(), loc);
    }
  }

  void check_value_type(const TypeRef& t, SourceLoc loc, const std::string& what) {
    if (t.is(TypeKind::Opaque)) add(loc, "opaque is only allowed as a ptr pointee (" + what + ")");
    check_type(t, loc);
  }

  void check_ginit(const GlobalInit& g, const TypeRef& t, SourceLoc loc, const std::string& where) {
    using K = GlobalInit::Kind;
    auto bad = [&] { add(loc, "initializer of " + where + " does not match type " + t.str()); };
    if (!t) return;
    switch (t.kind()) {
      case TypeKind::Int64:
        if (g.kind != K::Int) bad();
        break;
      case TypeKind::FnPtr:
        if (g.kind == K::Null || (g.kind == K::Int && g.value == 0)) break;
        if (g.kind != K::Ref || p_.function_index(g.ref) < 0) bad();
        break;
      case TypeKind::Ptr:
        if (g.kind == K::Null || (g.kind == K::Int && g.value == 0)) break;
        if (g.kind != K::Ref || p_.global_index(g.ref) < 0) bad();
        break;
      case TypeKind::Struct: {
        const StructDef* s = p_.find_struct(t.struct_name());
        if (!s) return;
        if (g.kind != K::Aggregate || g.elems.size() != s->fields.size()) return bad();
        for (std::size_t i = 0; i < s->fields.size(); ++i)
          check_ginit(g.elems[i], s->fields[i].type, loc, where);
        break;
      }
      case TypeKind::Array:
        if (g.kind != K::Aggregate || static_cast<std::int64_t>(g.elems.size()) != t.count()) return bad();
        for (const auto& e : g.elems) check_ginit(e, t.element(), loc, where);
        break;
      case TypeKind::Opaque:
        break;
    }
  }

  TypeRef opty(const Function& f, const Operand& op) { return operand_type(p_, f, op); }

  void check_function(const Function& f) {
    for (const auto& prm : f.params) check_value_type(prm.type, f.loc, "parameter %" + prm.name);
    if (f.ret) check_value_type(*f.ret, f.loc, "return type of @" + f.name);
    if (f.ret && !f.ret->is_scalar()) add(f.loc, "@" + f.name + " must return a scalar type");
    for (const auto& prm : f.params)
      if (prm.type && !prm.type.is_scalar()) add(f.loc, "parameter %" + prm.name + " must be scalar");
    if (f.blocks.empty()) add(f.loc, "function @" + f.name + " has no blocks");

    for (const auto& b : f.blocks) {
      if (b.first == b.last) {
        add(b.loc, "block " + b.label + " is empty");
        continue;
      }
      if (!is_terminator(f.insns[b.last - 1].op))
        add(f.insns[b.last - 1].loc, "block " + b.label + " does not end in a terminator");
      for (int i = b.first; i + 1 < b.last; ++i)
        if (is_terminator(f.insns[i].op))
          add(f.insns[i].loc, std::string("terminator '") + opcode_name(f.insns[i].op) +
                                  "' in the middle of block " + b.label);
    }
    if (f.blocks.empty()) return;

    // A register use must be dominated by its definition.
    std::vector<std::vector<bool>> dom = dominators(f);
    std::vector<int> def_block(f.reg_names.size(), -1);
    for (std::size_t i = 0; i < f.insns.size(); ++i)
      if (f.insns[i].dest >= 0) def_block[f.insns[i].dest] = f.insn_block[i];
    for (std::size_t bi = 0; bi < f.blocks.size(); ++bi) {
      const Block& b = f.blocks[bi];
      if (dom[bi].empty()) continue;  // unreachable block
      std::vector<bool> defined(f.reg_names.size(), false);
      for (std::size_t r = 0; r < f.reg_names.size(); ++r)
        defined[r] = r < f.params.size() ||
                     (def_block[r] >= 0 && def_block[r] != static_cast<int>(bi) && dom[bi][def_block[r]]);
      for (int i = b.first; i < b.last; ++i) {
        const Instruction& ins = f.insns[i];
        bool uses_ok = true;
        std::set<std::string> reported;
        for (const auto& op : ins.operands) {
          if (op.is_reg() && (op.reg < 0 || !defined[op.reg])) {
            if (reported.insert(op.name).second) add(ins.loc, "register %" + op.name + " used before defined");
            uses_ok = false;
          }
        }
        if (uses_ok) check_instruction(f, ins);
        if (ins.dest >= 0) defined[ins.dest] = true;
      }
    }
  }

  /// dom[b][a] is true when block a dominates block b; unreachable blocks
  /// get an empty row.
  static std::vector<std::vector<bool>> dominators(const Function& f) {
    std::size_t n = f.blocks.size();
    std::vector<std::vector<int>> preds(n);
    std::vector<bool> reach(n, false);
    std::vector<int> stack{0};
    reach[0] = true;
    while (!stack.empty()) {
      int b = stack.back();
      stack.pop_back();
      const Block& blk = f.blocks[b];
      if (blk.first == blk.last) continue;
      for (int t : f.insns[blk.last - 1].targets) {
        if (t < 0) continue;
        preds[t].push_back(b);
        if (!reach[t]) {
          reach[t] = true;
          stack.push_back(t);
        }
      }
    }
    std::vector<std::vector<bool>> dom(n);
    for (std::size_t b = 0; b < n; ++b)
      if (reach[b]) dom[b].assign(n, b != 0);
    dom[0][0] = true;
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t b = 1; b < n; ++b) {
        if (!reach[b]) continue;
        std::vector<bool> next(n, true);
        for (int pr : preds[b])
          for (std::size_t a = 0; a < n; ++a) next[a] = next[a] && dom[pr][a];
        next[b] = true;
        if (next != dom[b]) {
          dom[b] = std::move(next);
          changed = true;
        }
      }
    }
    return dom;
  }

  void check_instruction(const Function& f, const Instruction& ins) {
    auto need = [&](bool cond, const std::string& msg) {
      if (!cond) add(ins.loc, std::string(opcode_name(ins.op)) + ": " + msg);
      return cond;
    };
    auto t = [&](std::size_t k) { return k < ins.operands.size() ? opty(f, ins.operands[k]) : TypeRef(); };
    auto is_i64 = [](const TypeRef& x) { return x.is(TypeKind::Int64); };
    switch (ins.op) {
      case Opcode::Alloc:
      case Opcode::SizeOf:
        if (need(!ins.type.is(TypeKind::Opaque), "opaque has no size")) check_type(ins.type, ins.loc);
        break;
      case Opcode::Malloc:
        need(is_i64(t(0)), "size operand must be i64");
        break;
      case Opcode::Free:
        need(t(0).is_pointer(), "operand must be a pointer");
        break;
      case Opcode::Load:
      case Opcode::Store: {
        TypeRef ptr = ins.op == Opcode::Load ? t(0) : t(1);
        if (!need(ptr.is_pointer(), "address operand must be a pointer")) break;
        const TypeRef& cell = ptr.pointee();
        if (cell.is(TypeKind::Opaque)) {
          add(ins.loc, "load/store through opaque pointer (cast it first)");
          break;
        }
        if (!need(cell.is_scalar(), "cannot access aggregate " + cell.str() + " as a value")) break;
        if (ins.op == Opcode::Store)
          need(assignable(t(0), cell), "cannot store " + t(0).str() + " into " + cell.str());
        break;
      }
      case Opcode::Gep: {
        TypeRef ptr = t(0);
        if (!need(ptr.is_pointer(), "base must be a pointer")) break;
        const TypeRef& pt = ptr.pointee();
        if (!need(!pt.is(TypeKind::Opaque), "gep through opaque pointer (cast it first)")) break;
        if (ins.gep == GepKind::Field) {
          if (!need(pt.is(TypeKind::Struct), "field access on non-struct " + pt.str())) break;
          const StructDef* s = p_.find_struct(pt.struct_name());
          if (s) need(ins.imm < static_cast<std::int64_t>(s->fields.size()), "field index out of range");
        } else {
          need(is_i64(t(1)), "index must be i64");
        }
        break;
      }
      case Opcode::Cast:
        need(t(0).is_pointer(), "operand must be a pointer");
        check_type(TypeRef::ptr(ins.type), ins.loc);
        break;
      case Opcode::Call:
      case Opcode::Spawn: {
        const Function& callee = p_.function(ins.symbol);
        if (!need(callee.params.size() == ins.operands.size(),
                  "@" + callee.name + " expects " + std::to_string(callee.params.size()) + " arguments"))
          break;
        for (std::size_t i = 0; i < ins.operands.size(); ++i)
          need(assignable(t(i), callee.params[i].type),
               "argument " + std::to_string(i) + " has type " + t(i).str() + ", expected " +
                   callee.params[i].type.str());
        if (ins.op == Opcode::Call && ins.dest >= 0) need(callee.ret.has_value(), "void call has no result");
        break;
      }
      case Opcode::ICall:
        need(t(0).is(TypeKind::FnPtr), "callee must be fnptr");
        if (ins.type) need(ins.type.is_scalar(), "result type must be scalar");
        break;
      case Opcode::Add:
      case Opcode::Sub:
      case Opcode::Mul:
      case Opcode::Div:
      case Opcode::CmpLt:
        need(is_i64(t(0)) && is_i64(t(1)), "operands must be i64");
        break;
      case Opcode::CmpEq: {
        TypeRef a = t(0), b = t(1);
        bool same_class = (is_i64(a) && is_i64(b)) || (a.is_pointer() && b.is_pointer()) ||
                          (a.is(TypeKind::FnPtr) && b.is(TypeKind::FnPtr));
        need(same_class, "operands must both be i64, pointers, or fnptrs");
        break;
      }
      case Opcode::CondBr:
        need(is_i64(t(0)), "condition must be i64");
        break;
      case Opcode::Ret:
        if (f.ret) {
          if (need(ins.operands.size() == 1, "missing return value"))
            need(assignable(t(0), *f.ret), "returns " + t(0).str() + ", expected " + f.ret->str());
        } else {
          need(ins.operands.empty(), "void function returns a value");
        }
        break;
      case Opcode::Config:
      case Opcode::Syscall:
        need(!ins.symbol.empty(), "empty name");
        break;
      default:
        break;
    }
  }

  void check_start_processing(int entry) {
    std::vector<std::pair<int, SourceLoc>> marks;
    for (std::size_t fi = 0; fi < p_.functions.size(); ++fi)
      for (const auto& ins : p_.functions[fi].insns)
        if (ins.op == Opcode::StartProcessing) marks.emplace_back(static_cast<int>(fi), ins.loc);
    if (marks.size() > 1)
      for (std::size_t i = 1; i < marks.size(); ++i)
        add(marks[i].second, "start_processing appears more than once");
    if (marks.empty() || entry < 0) return;
    // Reachability from the entry through calls and function references.
    std::vector<bool> seen(p_.functions.size(), false);
    std::vector<int> work{entry};
    seen[entry] = true;
    auto visit = [&](const std::string& name) {
      int g = p_.function_index(name);
      if (g >= 0 && !seen[g]) {
        seen[g] = true;
        work.push_back(g);
      }
    };
    std::function<void(const GlobalInit&)> init_refs = [&](const GlobalInit& g) {
      if (g.kind == GlobalInit::Kind::Ref) visit(g.ref);
      for (const auto& e : g.elems) init_refs(e);
    };
    for (const auto& g : p_.globals)
      if (g.init) init_refs(*g.init);
    while (!work.empty()) {
      int fi = work.back();
      work.pop_back();
      for (const auto& ins : p_.functions[fi].insns)
        if (ins.op == Opcode::Call || ins.op == Opcode::FuncAddr) visit(ins.symbol);
    }
    for (const auto& [fi, loc] : marks)
      if (!seen[fi]) add(loc, "start_processing in @" + p_.functions[fi].name + ", which is unreachable from the entry");
  }

  const Program& p_;
  std::vector<Diagnostic> diags_;
};

}  // namespace

std::vector<Diagnostic> validate(const Program& p) { return Validator(p).run(); }

// ---------------------------------------------------------------------------
// Printer

namespace {

void print_ginit(std::ostream& os, const GlobalInit& g) {
  switch (g.kind) {
    case GlobalInit::Kind::Null: os << "null"; break;
    case GlobalInit::Kind::Int: os << g.value; break;
    case GlobalInit::Kind::Ref: os << '@' << g.ref; break;
    case GlobalInit::Kind::Aggregate:
      os << "{ ";
      for (std::size_t i = 0; i < g.elems.size(); ++i) {
        if (i) os << ", ";
        print_ginit(os, g.elems[i]);
      }
      os << " }";
      break;
  }
}

std::string operand_str(const Operand& op) { return (op.is_reg() ? "%" : "@") + op.name; }

void print_args(std::ostream& os, const std::vector<Operand>& ops, std::size_t from) {
  os << '(';
  for (std::size_t i = from; i < ops.size(); ++i) {
    if (i > from) os << ", ";
    os << operand_str(ops[i]);
  }
  os << ')';
}

}  // namespace

std::string print_program(const Program& p) {
  std::ostringstream os;
  for (const auto& s : p.structs) {
    os << "type %" << s.name << " = struct { ";
    for (std::size_t i = 0; i < s.fields.size(); ++i) {
      if (i) os << ", ";
      os << '%' << s.fields[i].name << ": " << s.fields[i].type.str();
    }
    os << " }\n";
  }
  for (const auto& g : p.globals) {
    os << "global @" << g.name << ": " << g.type.str();
    if (g.init) {
      os << " = ";
      print_ginit(os, *g.init);
    }
    os << '\n';
  }
  for (const auto& f : p.functions) {
    os << "\nfunc @" << f.name << '(';
    for (std::size_t i = 0; i < f.params.size(); ++i) {
      if (i) os << ", ";
      os << '%' << f.params[i].name << ": " << f.params[i].type.str();
    }
    os << ") -> " << (f.ret ? f.ret->str() : "void") << " {\n";
    for (const auto& b : f.blocks) {
      os << b.label << ":\n";
      for (int i = b.first; i < b.last; ++i) {
        const Instruction& ins = f.insns[i];
        os << "  ";
        if (ins.dest >= 0) os << '%' << f.reg_names[ins.dest] << " = ";
        const auto& ops = ins.operands;
        switch (ins.op) {
          case Opcode::Alloc:
          case Opcode::SizeOf:
            os << opcode_name(ins.op) << ' ' << ins.type.str();
            break;
          case Opcode::Gep:
            os << "gep " << operand_str(ops[0]) << ", ";
            if (ins.gep == GepKind::Index) os << "index " << operand_str(ops[1]);
            else if (!ins.field_name.empty()) os << "field " << ins.field_name;
            else os << "field " << ins.imm;
            break;
          case Opcode::Cast:
            os << "cast " << operand_str(ops[0]) << " to " << TypeRef::ptr(ins.type).str();
            break;
          case Opcode::Call:
          case Opcode::Spawn:
            os << opcode_name(ins.op) << " @" << ins.symbol;
            print_args(os, ops, 0);
            break;
          case Opcode::ICall:
            os << "icall " << operand_str(ops[0]);
            print_args(os, ops, 1);
            if (ins.type) os << " -> " << ins.type.str();
            break;
          case Opcode::FuncAddr:
            os << "funcaddr @" << ins.symbol;
            break;
          case Opcode::Const:
            os << "const " << ins.imm;
            break;
          case Opcode::Br:
            os << "br " << ins.labels[0];
            break;
          case Opcode::CondBr:
            os << "cbr " << operand_str(ops[0]) << ", " << ins.labels[0] << ", " << ins.labels[1];
            break;
          case Opcode::Config:
          case Opcode::Syscall:
            os << opcode_name(ins.op) << " \"" << ins.symbol << '"';
            break;
          default:
            os << opcode_name(ins.op);
            for (std::size_t k = 0; k < ops.size(); ++k) os << (k ? ", " : " ") << operand_str(ops[k]);
            break;
        }
        os << '\n';
      }
    }
    os << "}\n";
  }
  return os.str();
}

}  // namespace phaseseed
