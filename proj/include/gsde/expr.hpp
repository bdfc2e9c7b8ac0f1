#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gsde::expr {

/// Node kinds of the expression tree. Function calls carry a fixed arity.
enum class Op : std::uint8_t {
  Constant,
  Variable,
  Negate,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Exp,
  Log,
  Sqrt,
  Abs,
  Sin,
  Cos,
  Min,
  Max,
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::Constant;
  double value = 0.0;  // Constant only
  int index = 0;       // Variable only, 1-based
  std::vector<NodePtr> args;
};

/// Thrown by parse(); offset is the byte position in the input text.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

struct Program;

/// Immutable scalar expression over coordinates x1..xN.
///
/// The tree is kept for formatting and structural comparison; evaluation
/// runs a flattened postfix program built once at construction. Expressions
/// without variables are folded to a cached constant.
class Expression {
 public:
  Expression();  // constant 0
  explicit Expression(NodePtr root);

  static Expression constant(double v);
  static Expression variable(int index);
  static Expression unary(Op op, const Expression& a);
  static Expression binary(Op op, const Expression& a, const Expression& b);

  double evaluate(std::span<const double> point) const;

  const Node& root() const { return *root_; }
  const NodePtr& root_ptr() const { return root_; }
  bool is_constant() const { return is_constant_; }
  double constant_value() const { return constant_value_; }
  /// Largest variable index referenced; 0 if none.
  int max_variable() const { return max_variable_; }

  friend bool operator==(const Expression& a, const Expression& b);

 private:
  NodePtr root_;
  std::shared_ptr<const Program> program_;
  bool is_constant_ = true;
  double constant_value_ = 0.0;
  int max_variable_ = 0;
};

bool structurally_equal(const Node& a, const Node& b);

/// Parses text under the grammar
///   expr   := term (('+'|'-') term)*
///   term   := factor (('*'|'/') factor)*
///   factor := unary ('^' factor)?
///   unary  := '-' unary | atom
///   atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'
/// Variables x_j with j > max_dim are rejected.
Expression parse(std::string_view text, int max_dim);

/// Emits text that reparses to a structurally identical tree.
std::string format(const Expression& e);

/// Name of a function op ("exp", "min", ...); empty for operators.
std::string_view function_name(Op op);
int function_arity(Op op);

}  // namespace gsde::expr
