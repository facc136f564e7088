#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace goop {

/// Raised when an expression references a variable that is not declared in
/// the variable space it is used with.
class DeclarationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a point does not assign every variable an expression needs.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Packed (symbol id, index) key. Symbol ids come from a process-wide intern
/// table so keys are cheap to compare and hash.
using VarKey = std::uint64_t;

int intern_symbol(std::string_view name);
const std::string& symbol_name(int id);

inline VarKey make_var_key(int symbol, int index) {
  return (static_cast<VarKey>(static_cast<std::uint32_t>(symbol)) << 32) |
         static_cast<std::uint32_t>(index);
}
inline int key_symbol(VarKey key) { return static_cast<int>(key >> 32); }
inline int key_index(VarKey key) {
  return static_cast<int>(key & 0xffffffffu);
}

struct VarRef {
  std::string name;
  int index = 0;

  VarKey key() const { return make_var_key(intern_symbol(name), index); }
  friend bool operator<(const VarRef& a, const VarRef& b) {
    return a.name != b.name ? a.name < b.name : a.index < b.index;
  }
  friend bool operator==(const VarRef&, const VarRef&) = default;
};

/// Ordered list of named vector blocks. Flattened slot of (name, j) is the
/// block offset plus j.
class VariableSpace {
 public:
  VariableSpace() = default;

  /// Appends a block and returns its offset. Throws on duplicate names or
  /// dimension < 1.
  int add_block(std::string_view name, int dimension);

  int dimension() const { return dimension_; }
  int block_count() const { return static_cast<int>(blocks_.size()); }
  bool contains_block(std::string_view name) const;
  int block_offset(std::string_view name) const;
  int block_dimension(std::string_view name) const;

  /// Flat slot of a variable, or -1 if undeclared.
  int slot(VarKey key) const;
  int slot(const VarRef& ref) const { return slot(ref.key()); }
  VarRef ref_at(int slot) const;

  struct Block {
    std::string name;
    int symbol;
    int offset;
    int dimension;
  };
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  std::vector<Block> blocks_;
  std::unordered_map<int, int> by_symbol_;
  int dimension_ = 0;
};

/// Immutable symbolic scalar expression. Nodes are shared, so copies are
/// cheap and subtrees reused across residual rows evaluate once in a tape.
class Expression {
 public:
  enum class Kind { kConstant, kVariable, kSum, kProduct, kPower, kExp, kNegation };

  Expression();  // constant 0
  Expression(double value);  // NOLINT(google-explicit-constructor)

  static Expression constant(double value);
  static Expression variable(std::string_view name, int index);
  static Expression variable(VarKey key);
  static Expression sum(std::vector<Expression> terms);
  static Expression product(std::vector<Expression> factors);
  static Expression power(const Expression& base, int exponent);
  static Expression exp(const Expression& arg);
  static Expression negate(const Expression& arg);

  Kind kind() const;
  double constant_value() const;  // kConstant only
  VarKey variable_key() const;    // kVariable only
  int exponent() const;           // kPower only
  std::span<const Expression> children() const;

  bool is_constant() const { return kind() == Kind::kConstant; }
  bool is_zero() const { return is_constant() && constant_value() == 0.0; }
  bool is_one() const { return is_constant() && constant_value() == 1.0; }

  /// Sorted, unique keys of all variables the expression depends on.
  std::span<const VarKey> dependencies() const;
  bool depends_on(VarKey key) const;

  /// Identity of the shared node; used for memoisation.
  const void* id() const { return node_.get(); }

  struct Node;

 private:
  explicit Expression(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

Expression operator+(const Expression& a, const Expression& b);
Expression operator-(const Expression& a, const Expression& b);
Expression operator*(const Expression& a, const Expression& b);
Expression operator-(const Expression& a);
Expression pow(const Expression& base, int exponent);
Expression exp(const Expression& arg);

/// Exact partial derivative. Throws DeclarationError if `v` is not declared in
/// `space`.
Expression differentiate(const Expression& e, const VarRef& v,
                         const VariableSpace& space);

/// Unchecked derivative with respect to a key.
Expression differentiate(const Expression& e, VarKey key);

/// Derivative engine that memoises per (node, variable); use one instance when
/// differentiating many related expressions so shared subtrees stay shared.
class Differentiator {
 public:
  Expression operator()(const Expression& e, VarKey key);

 private:
  struct PairHash {
    std::size_t operator()(const std::pair<const void*, VarKey>& p) const {
      return std::hash<const void*>()(p.first) ^ (std::hash<VarKey>()(p.second) * 0x9e3779b97f4a7c15ull);
    }
  };
  struct Entry {
    Expression source;  // keeps the keyed node alive so its address is not reused
    Expression result;
  };
  std::unordered_map<std::pair<const void*, VarKey>, Entry, PairHash> cache_;
};

/// Gradient with respect to every entry of one block of `space`.
std::vector<Expression> gradient(const Expression& e, std::string_view block,
                                 const VariableSpace& space);

using Point = std::map<VarRef, double>;

double evaluate(const Expression& e, const Point& point);
double evaluate(const Expression& e, const VariableSpace& space,
                const Eigen::Ref<const Eigen::VectorXd>& values);

/// Flattened evaluation program for a batch of expressions over one space.
/// Immutable after construction; evaluate() uses only caller-owned scratch.
class ExpressionTape {
 public:
  ExpressionTape() = default;
  ExpressionTape(std::span<const Expression> outputs, const VariableSpace& space);

  int output_count() const { return static_cast<int>(outputs_.size()); }
  int node_count() const { return static_cast<int>(ops_.size()); }

  void evaluate(const Eigen::Ref<const Eigen::VectorXd>& values,
                std::vector<double>& scratch, Eigen::Ref<Eigen::VectorXd> out) const;
  Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& values) const;

 private:
  struct Op {
    Expression::Kind kind;
    int first_arg;  // into args_, or slot for variables
    int arg_count;
    double value;   // constant value or exponent
  };
  std::vector<Op> ops_;
  std::vector<int> args_;
  std::vector<int> outputs_;
};

/// Prefix s-expression form, e.g. (pow (add (var z 0) (const -1)) 2).
std::string to_sexpr(const Expression& e);
Expression parse_sexpr(std::string_view text);

}  // namespace goop
