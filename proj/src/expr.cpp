#include "gsde/expr.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>

namespace gsde::expr {

struct Instr {
  Op op;
  double value;
  int index;
};

struct Program {
  std::vector<Instr> code;
  std::size_t max_depth = 0;
};

namespace {

constexpr int kMaxNesting = 200;

double apply_unary(Op op, double a) {
  switch (op) {
    case Op::Negate: return -a;
    case Op::Exp: return std::exp(a);
    case Op::Log: return a < 0.0 ? std::numeric_limits<double>::quiet_NaN() : std::log(a);
    case Op::Sqrt: return a < 0.0 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(a);
    case Op::Abs: return std::fabs(a);
    case Op::Sin: return std::sin(a);
    case Op::Cos: return std::cos(a);
    default: return std::numeric_limits<double>::quiet_NaN();
  }
}

double apply_binary(Op op, double a, double b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return b == 0.0 ? std::numeric_limits<double>::quiet_NaN() : a / b;
    case Op::Pow: return std::pow(a, b);
    case Op::Min:
      if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<double>::quiet_NaN();
      return std::min(a, b);
    case Op::Max:
      if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<double>::quiet_NaN();
      return std::max(a, b);
    default: return std::numeric_limits<double>::quiet_NaN();
  }
}

bool is_binary(Op op) {
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow:
    case Op::Min:
    case Op::Max:
      return true;
    default:
      return false;
  }
}

// Post-order emission; returns the stack depth needed for this subtree.
std::size_t emit(const Node& n, std::vector<Instr>& code) {
  std::size_t depth = 1;
  std::size_t k = 0;
  for (const auto& a : n.args) {
    depth = std::max(depth, k + emit(*a, code));
    ++k;
  }
  code.push_back({n.op, n.value, n.index});
  return depth;
}

double run(const Program& p, std::span<const double> x, double* stack) {
  std::size_t sp = 0;
  for (const Instr& in : p.code) {
    switch (in.op) {
      case Op::Constant:
        stack[sp++] = in.value;
        break;
      case Op::Variable:
        stack[sp++] = x[static_cast<std::size_t>(in.index - 1)];
        break;
      default:
        if (is_binary(in.op)) {
          const double b = stack[--sp];
          stack[sp - 1] = apply_binary(in.op, stack[sp - 1], b);
        } else {
          stack[sp - 1] = apply_unary(in.op, stack[sp - 1]);
        }
    }
  }
  return stack[0];
}

struct Scan {
  bool has_variable = false;
  int max_index = 0;
};

void scan(const Node& n, Scan& s) {
  if (n.op == Op::Variable) {
    s.has_variable = true;
    s.max_index = std::max(s.max_index, n.index);
  }
  for (const auto& a : n.args) scan(*a, s);
}

}  // namespace

Expression::Expression() : Expression(std::make_shared<const Node>(Node{})) {}

Expression::Expression(NodePtr root) : root_(std::move(root)) {
  auto prog = std::make_shared<Program>();
  prog->max_depth = emit(*root_, prog->code);
  program_ = std::move(prog);
  Scan s;
  scan(*root_, s);
  max_variable_ = s.max_index;
  is_constant_ = !s.has_variable;
  if (is_constant_) {
    std::vector<double> stack(program_->max_depth);
    constant_value_ = run(*program_, {}, stack.data());
  }
}

Expression Expression::constant(double v) {
  return Expression(std::make_shared<const Node>(Node{Op::Constant, v, 0, {}}));
}

Expression Expression::variable(int index) {
  return Expression(std::make_shared<const Node>(Node{Op::Variable, 0.0, index, {}}));
}

Expression Expression::unary(Op op, const Expression& a) {
  return Expression(std::make_shared<const Node>(Node{op, 0.0, 0, {a.root_}}));
}

Expression Expression::binary(Op op, const Expression& a, const Expression& b) {
  return Expression(std::make_shared<const Node>(Node{op, 0.0, 0, {a.root_, b.root_}}));
}

double Expression::evaluate(std::span<const double> point) const {
  if (is_constant_) return constant_value_;
  if (program_->max_depth <= 32) {
    std::array<double, 32> stack;
    return run(*program_, point, stack.data());
  }
  std::vector<double> stack(program_->max_depth);
  return run(*program_, point, stack.data());
}

bool structurally_equal(const Node& a, const Node& b) {
  if (a.op != b.op || a.args.size() != b.args.size()) return false;
  if (a.op == Op::Constant) {
    // bitwise-equal values, so NaN constants compare equal to themselves
    return a.value == b.value || (std::isnan(a.value) && std::isnan(b.value));
  }
  if (a.op == Op::Variable && a.index != b.index) return false;
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    if (!structurally_equal(*a.args[i], *b.args[i])) return false;
  }
  return true;
}

bool operator==(const Expression& a, const Expression& b) {
  return a.root_ == b.root_ || structurally_equal(*a.root_, *b.root_);
}

std::string_view function_name(Op op) {
  switch (op) {
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Abs: return "abs";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Min: return "min";
    case Op::Max: return "max";
    default: return {};
  }
}

int function_arity(Op op) {
  switch (op) {
    case Op::Min:
    case Op::Max:
      return 2;
    case Op::Exp:
    case Op::Log:
    case Op::Sqrt:
    case Op::Abs:
    case Op::Sin:
    case Op::Cos:
      return 1;
    default:
      return 0;
  }
}

// ---------------------------------------------------------------------------
// Parser

namespace {

class Parser {
 public:
  Parser(std::string_view text, int max_dim) : text_(text), max_dim_(max_dim) {}

  NodePtr parse_all() {
    NodePtr e = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected character '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { fail_at(msg, pos_); }

  [[noreturn]] void fail_at(const std::string& msg, std::size_t at) const {
    throw ParseError("syntax error at offset " + std::to_string(at) + ": " + msg, at);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  static NodePtr make(Op op, std::vector<NodePtr> args) {
    return std::make_shared<const Node>(Node{op, 0.0, 0, std::move(args)});
  }

  struct DepthGuard {
    Parser& p;
    explicit DepthGuard(Parser& parser) : p(parser) {
      if (++p.depth_ > kMaxNesting) p.fail("expression nested too deeply");
    }
    ~DepthGuard() { --p.depth_; }
  };

  NodePtr parse_expr() {
    DepthGuard guard(*this);
    NodePtr lhs = parse_term();
    for (;;) {
      if (accept('+')) {
        lhs = make(Op::Add, {lhs, parse_term()});
      } else if (accept('-')) {
        lhs = make(Op::Sub, {lhs, parse_term()});
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_term() {
    NodePtr lhs = parse_factor();
    for (;;) {
      if (accept('*')) {
        lhs = make(Op::Mul, {lhs, parse_factor()});
      } else if (accept('/')) {
        lhs = make(Op::Div, {lhs, parse_factor()});
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_factor() {
    DepthGuard guard(*this);
    NodePtr base = parse_unary();
    if (accept('^')) return make(Op::Pow, {base, parse_factor()});
    return base;
  }

  NodePtr parse_unary() {
    DepthGuard guard(*this);
    if (accept('-')) return make(Op::Negate, {parse_unary()});
    return parse_atom();
  }

  NodePtr parse_atom() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr e = parse_expr();
      if (!accept(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
    fail("unexpected character '" + std::string(1, c) + "'");
  }

  NodePtr parse_number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        ++pos_;
        ++n;
      }
      return n;
    };
    std::size_t mantissa = digits();
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      mantissa += digits();
    }
    if (mantissa == 0) fail_at("malformed number", start);
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      ++pos_;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (digits() == 0) fail("malformed exponent");
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, v);
    if (ec == std::errc::result_out_of_range) {
      // from_chars leaves v untouched on overflow/underflow
      v = std::strtod(std::string(text_.substr(start, pos_ - start)).c_str(), nullptr);
    } else if (ec != std::errc() || ptr != text_.data() + pos_) {
      fail_at("malformed number", start);
    }
    return std::make_shared<const Node>(Node{Op::Constant, v, 0, {}});
  }

  NodePtr parse_ident() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    const std::string_view name = text_.substr(start, pos_ - start);

    if (name.size() >= 2 && name[0] == 'x' &&
        std::all_of(name.begin() + 1, name.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
      int index = 0;
      const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), index);
      if (ec != std::errc() || index < 1) fail_at("invalid variable '" + std::string(name) + "'", start);
      if (index > max_dim_) {
        fail_at("variable '" + std::string(name) + "' out of range (dimension " + std::to_string(max_dim_) + ")",
                start);
      }
      return std::make_shared<const Node>(Node{Op::Variable, 0.0, index, {}});
    }

    static constexpr std::array<Op, 8> kFunctions = {Op::Exp, Op::Log, Op::Sqrt, Op::Abs,
                                                     Op::Sin, Op::Cos, Op::Min,  Op::Max};
    const auto it = std::find_if(kFunctions.begin(), kFunctions.end(),
                                 [&](Op op) { return function_name(op) == name; });
    if (it == kFunctions.end()) fail_at("unknown identifier '" + std::string(name) + "'", start);
    if (!accept('(')) fail("expected '(' after function '" + std::string(name) + "'");
    std::vector<NodePtr> args;
    args.push_back(parse_expr());
    while (accept(',')) args.push_back(parse_expr());
    if (!accept(')')) fail("expected ')'");
    const int arity = function_arity(*it);
    if (static_cast<int>(args.size()) != arity) {
      fail_at("function '" + std::string(name) + "' expects " + std::to_string(arity) + " argument(s), got " +
                  std::to_string(args.size()),
              start);
    }
    return make(*it, std::move(args));
  }

  std::string_view text_;
  int max_dim_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

// Precedence levels used by the formatter: sum < product < power < unary < atom.
int precedence(const Node& n) {
  switch (n.op) {
    case Op::Add:
    case Op::Sub:
      return 1;
    case Op::Mul:
    case Op::Div:
      return 2;
    case Op::Pow:
      return 3;
    case Op::Negate:
      return 4;
    default:
      return 5;
  }
}

void format_into(const Node& n, std::string& out);

void format_child(const Node& child, int min_prec, std::string& out) {
  if (precedence(child) < min_prec) {
    out += '(';
    format_into(child, out);
    out += ')';
  } else {
    format_into(child, out);
  }
}

void format_into(const Node& n, std::string& out) {
  switch (n.op) {
    case Op::Constant: {
      if (std::isnan(n.value) || std::isinf(n.value) || std::signbit(n.value)) {
        // not producible by the grammar; emit something readable
        std::array<char, 64> buf{};
        const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), n.value);
        out += '(';
        out.append(buf.data(), r.ptr);
        out += ')';
        return;
      }
      std::array<char, 64> buf{};
      const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), n.value);
      out.append(buf.data(), r.ptr);
      return;
    }
    case Op::Variable:
      out += 'x';
      out += std::to_string(n.index);
      return;
    case Op::Negate:
      out += '-';
      format_child(*n.args[0], 4, out);
      return;
    case Op::Add:
    case Op::Sub:
      format_child(*n.args[0], 1, out);
      out += n.op == Op::Add ? " + " : " - ";
      format_child(*n.args[1], 2, out);
      return;
    case Op::Mul:
    case Op::Div:
      format_child(*n.args[0], 2, out);
      out += n.op == Op::Mul ? "*" : "/";
      format_child(*n.args[1], 3, out);
      return;
    case Op::Pow:
      format_child(*n.args[0], 4, out);
      out += '^';
      format_child(*n.args[1], 3, out);
      return;
    default: {
      out += function_name(n.op);
      out += '(';
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        if (i > 0) out += ", ";
        format_into(*n.args[i], out);
      }
      out += ')';
      return;
    }
  }
}

}  // namespace

Expression parse(std::string_view text, int max_dim) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw ParseError("syntax error at offset " + std::to_string(text.size()) + ": empty expression", text.size());
  }
  Parser p(text, max_dim);
  return Expression(p.parse_all());
}

std::string format(const Expression& e) {
  std::string out;
  format_into(e.root(), out);
  return out;
}

}  // namespace gsde::expr
