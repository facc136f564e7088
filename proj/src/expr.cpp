#include "goop/expr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <mutex>
#include <sstream>
#include <unordered_set>

namespace goop {

namespace {

struct SymbolTable {
  std::mutex mutex;
  std::unordered_map<std::string, int> ids;
  std::deque<std::string> names;  // deque: references stay valid on growth
};

SymbolTable& symbols() {
  static SymbolTable table;
  return table;
}

}  // namespace

int intern_symbol(std::string_view name) {
  auto& t = symbols();
  std::lock_guard lock(t.mutex);
  auto it = t.ids.find(std::string(name));
  if (it != t.ids.end()) return it->second;
  int id = static_cast<int>(t.names.size());
  t.names.emplace_back(name);
  t.ids.emplace(std::string(name), id);
  return id;
}

const std::string& symbol_name(int id) {
  auto& t = symbols();
  std::lock_guard lock(t.mutex);
  return t.names.at(static_cast<std::size_t>(id));
}

// ---------------------------------------------------------------- VariableSpace

int VariableSpace::add_block(std::string_view name, int dimension) {
  if (dimension < 1) {
    throw std::invalid_argument("block '" + std::string(name) +
                                "' must have dimension >= 1");
  }
  int sym = intern_symbol(name);
  if (by_symbol_.count(sym)) {
    throw std::invalid_argument("duplicate block name '" + std::string(name) + "'");
  }
  int offset = dimension_;
  by_symbol_.emplace(sym, static_cast<int>(blocks_.size()));
  blocks_.push_back({std::string(name), sym, offset, dimension});
  dimension_ += dimension;
  return offset;
}

bool VariableSpace::contains_block(std::string_view name) const {
  return by_symbol_.count(intern_symbol(name)) != 0;
}

int VariableSpace::block_offset(std::string_view name) const {
  auto it = by_symbol_.find(intern_symbol(name));
  if (it == by_symbol_.end()) {
    throw DeclarationError("undeclared block '" + std::string(name) + "'");
  }
  return blocks_[it->second].offset;
}

int VariableSpace::block_dimension(std::string_view name) const {
  auto it = by_symbol_.find(intern_symbol(name));
  if (it == by_symbol_.end()) {
    throw DeclarationError("undeclared block '" + std::string(name) + "'");
  }
  return blocks_[it->second].dimension;
}

int VariableSpace::slot(VarKey key) const {
  auto it = by_symbol_.find(key_symbol(key));
  if (it == by_symbol_.end()) return -1;
  const Block& b = blocks_[it->second];
  int idx = key_index(key);
  if (idx < 0 || idx >= b.dimension) return -1;
  return b.offset + idx;
}

VarRef VariableSpace::ref_at(int slot) const {
  for (const auto& b : blocks_) {
    if (slot >= b.offset && slot < b.offset + b.dimension) {
      return {b.name, slot - b.offset};
    }
  }
  throw std::out_of_range("slot outside variable space");
}

// ---------------------------------------------------------------- nodes

struct Expression::Node {
  Kind kind;
  double value = 0.0;
  VarKey key = 0;
  int exponent = 0;
  std::vector<Expression> children;
  std::vector<VarKey> deps;
};

namespace {

std::vector<VarKey> merge_deps(const std::vector<Expression>& children) {
  std::vector<VarKey> out;
  for (const auto& c : children) {
    auto d = c.dependencies();
    out.insert(out.end(), d.begin(), d.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

Expression::Expression() : Expression(constant(0.0)) {}
Expression::Expression(double value) : Expression(constant(value)) {}

Expression Expression::constant(double value) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::kConstant;
  n->value = value;
  return Expression(std::move(n));
}

Expression Expression::variable(std::string_view name, int index) {
  if (index < 0) throw std::invalid_argument("variable index must be >= 0");
  return variable(make_var_key(intern_symbol(name), index));
}

Expression Expression::variable(VarKey key) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::kVariable;
  n->key = key;
  n->deps = {key};
  return Expression(std::move(n));
}

Expression Expression::sum(std::vector<Expression> terms) {
  std::vector<Expression> flat;
  double c = 0.0;
  for (auto& t : terms) {
    if (t.kind() == Kind::kConstant) {
      c += t.constant_value();
    } else if (t.kind() == Kind::kSum) {
      for (const auto& u : t.children()) {
        if (u.is_constant()) c += u.constant_value();
        else flat.push_back(u);
      }
    } else {
      flat.push_back(std::move(t));
    }
  }
  if (c != 0.0) flat.push_back(constant(c));
  if (flat.empty()) return constant(0.0);
  if (flat.size() == 1) return flat.front();
  auto n = std::make_shared<Node>();
  n->kind = Kind::kSum;
  n->deps = merge_deps(flat);
  n->children = std::move(flat);
  return Expression(std::move(n));
}

Expression Expression::product(std::vector<Expression> factors) {
  std::vector<Expression> flat;
  double c = 1.0;
  for (auto& f : factors) {
    if (f.kind() == Kind::kConstant) {
      c *= f.constant_value();
    } else if (f.kind() == Kind::kProduct) {
      for (const auto& u : f.children()) {
        if (u.is_constant()) c *= u.constant_value();
        else flat.push_back(u);
      }
    } else {
      flat.push_back(std::move(f));
    }
  }
  if (c == 0.0) return constant(0.0);
  if (flat.empty()) return constant(c);
  if (c != 1.0) flat.insert(flat.begin(), constant(c));
  if (flat.size() == 1) return flat.front();
  auto n = std::make_shared<Node>();
  n->kind = Kind::kProduct;
  n->deps = merge_deps(flat);
  n->children = std::move(flat);
  return Expression(std::move(n));
}

Expression Expression::power(const Expression& base, int exponent) {
  if (exponent < 0) throw std::invalid_argument("power exponent must be >= 0");
  if (exponent == 0) return constant(1.0);
  if (exponent == 1) return base;
  if (base.is_constant()) return constant(std::pow(base.constant_value(), exponent));
  if (base.kind() == Kind::kPower) {
    return power(base.children()[0], base.exponent() * exponent);
  }
  auto n = std::make_shared<Node>();
  n->kind = Kind::kPower;
  n->exponent = exponent;
  n->children = {base};
  n->deps.assign(base.dependencies().begin(), base.dependencies().end());
  return Expression(std::move(n));
}

Expression Expression::exp(const Expression& arg) {
  if (arg.is_constant()) return constant(std::exp(arg.constant_value()));
  auto n = std::make_shared<Node>();
  n->kind = Kind::kExp;
  n->children = {arg};
  n->deps.assign(arg.dependencies().begin(), arg.dependencies().end());
  return Expression(std::move(n));
}

Expression Expression::negate(const Expression& arg) {
  if (arg.is_constant()) return constant(-arg.constant_value());
  if (arg.kind() == Kind::kNegation) return arg.children()[0];
  auto n = std::make_shared<Node>();
  n->kind = Kind::kNegation;
  n->children = {arg};
  n->deps.assign(arg.dependencies().begin(), arg.dependencies().end());
  return Expression(std::move(n));
}

Expression::Kind Expression::kind() const { return node_->kind; }
double Expression::constant_value() const { return node_->value; }
VarKey Expression::variable_key() const { return node_->key; }
int Expression::exponent() const { return node_->exponent; }
std::span<const Expression> Expression::children() const { return node_->children; }
std::span<const VarKey> Expression::dependencies() const { return node_->deps; }

bool Expression::depends_on(VarKey key) const {
  return std::binary_search(node_->deps.begin(), node_->deps.end(), key);
}

Expression operator+(const Expression& a, const Expression& b) {
  return Expression::sum({a, b});
}
Expression operator-(const Expression& a, const Expression& b) {
  return Expression::sum({a, Expression::negate(b)});
}
Expression operator*(const Expression& a, const Expression& b) {
  return Expression::product({a, b});
}
Expression operator-(const Expression& a) { return Expression::negate(a); }
Expression pow(const Expression& base, int exponent) {
  return Expression::power(base, exponent);
}
Expression exp(const Expression& arg) { return Expression::exp(arg); }

// ---------------------------------------------------------------- derivatives

Expression Differentiator::operator()(const Expression& e, VarKey key) {
  using Kind = Expression::Kind;
  if (!e.depends_on(key)) return Expression::constant(0.0);
  if (e.kind() == Kind::kVariable) return Expression::constant(1.0);

  auto cache_key = std::make_pair(e.id(), key);
  if (auto it = cache_.find(cache_key); it != cache_.end()) return it->second.result;

  Expression out;
  auto ch = e.children();
  switch (e.kind()) {
    case Kind::kSum: {
      std::vector<Expression> terms;
      for (const auto& c : ch) {
        if (c.depends_on(key)) terms.push_back((*this)(c, key));
      }
      out = Expression::sum(std::move(terms));
      break;
    }
    case Kind::kProduct: {
      std::vector<Expression> terms;
      for (std::size_t j = 0; j < ch.size(); ++j) {
        if (!ch[j].depends_on(key)) continue;
        std::vector<Expression> f;
        f.reserve(ch.size());
        for (std::size_t l = 0; l < ch.size(); ++l) {
          f.push_back(l == j ? (*this)(ch[l], key) : ch[l]);
        }
        terms.push_back(Expression::product(std::move(f)));
      }
      out = Expression::sum(std::move(terms));
      break;
    }
    case Kind::kPower: {
      int k = e.exponent();
      out = Expression::product({Expression::constant(k),
                                 Expression::power(ch[0], k - 1),
                                 (*this)(ch[0], key)});
      break;
    }
    case Kind::kExp:
      out = Expression::product({e, (*this)(ch[0], key)});
      break;
    case Kind::kNegation:
      out = Expression::negate((*this)(ch[0], key));
      break;
    default:
      break;
  }
  cache_.emplace(cache_key, Entry{e, out});
  return out;
}

Expression differentiate(const Expression& e, VarKey key) {
  Differentiator d;
  return d(e, key);
}

Expression differentiate(const Expression& e, const VarRef& v,
                         const VariableSpace& space) {
  VarKey key = v.key();
  if (space.slot(key) < 0) {
    throw DeclarationError("variable (" + v.name + ", " + std::to_string(v.index) +
                           ") is not declared");
  }
  return differentiate(e, key);
}

std::vector<Expression> gradient(const Expression& e, std::string_view block,
                                 const VariableSpace& space) {
  int dim = space.block_dimension(block);
  int sym = intern_symbol(block);
  Differentiator d;
  std::vector<Expression> g;
  g.reserve(static_cast<std::size_t>(dim));
  for (int j = 0; j < dim; ++j) g.push_back(d(e, make_var_key(sym, j)));
  return g;
}

// ---------------------------------------------------------------- evaluation

namespace {

template <typename Lookup>
double eval_rec(const Expression& e, const Lookup& lookup,
                std::unordered_map<const void*, double>& memo) {
  using Kind = Expression::Kind;
  switch (e.kind()) {
    case Kind::kConstant:
      return e.constant_value();
    case Kind::kVariable:
      return lookup(e.variable_key());
    default:
      break;
  }
  if (auto it = memo.find(e.id()); it != memo.end()) return it->second;
  auto ch = e.children();
  double v = 0.0;
  switch (e.kind()) {
    case Kind::kSum:
      for (const auto& c : ch) v += eval_rec(c, lookup, memo);
      break;
    case Kind::kProduct:
      v = 1.0;
      for (const auto& c : ch) v *= eval_rec(c, lookup, memo);
      break;
    case Kind::kPower: {
      double b = eval_rec(ch[0], lookup, memo);
      v = 1.0;
      for (int j = 0; j < e.exponent(); ++j) v *= b;
      break;
    }
    case Kind::kExp:
      v = std::exp(eval_rec(ch[0], lookup, memo));
      break;
    case Kind::kNegation:
      v = -eval_rec(ch[0], lookup, memo);
      break;
    default:
      break;
  }
  memo.emplace(e.id(), v);
  return v;
}

}  // namespace

double evaluate(const Expression& e, const Point& point) {
  std::unordered_map<VarKey, double> by_key;
  for (const auto& [ref, value] : point) by_key[ref.key()] = value;
  for (VarKey k : e.dependencies()) {
    if (!by_key.count(k)) {
      throw EvaluationError("no value for (" + symbol_name(key_symbol(k)) + ", " +
                            std::to_string(key_index(k)) + ")");
    }
  }
  std::unordered_map<const void*, double> memo;
  return eval_rec(e, [&](VarKey k) { return by_key.at(k); }, memo);
}

double evaluate(const Expression& e, const VariableSpace& space,
                const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (values.size() != space.dimension()) {
    throw EvaluationError("value vector has wrong dimension");
  }
  for (VarKey k : e.dependencies()) {
    if (space.slot(k) < 0) {
      throw EvaluationError("no value for (" + symbol_name(key_symbol(k)) + ", " +
                            std::to_string(key_index(k)) + ")");
    }
  }
  std::unordered_map<const void*, double> memo;
  return eval_rec(e, [&](VarKey k) { return values[space.slot(k)]; }, memo);
}

// ---------------------------------------------------------------- tape

ExpressionTape::ExpressionTape(std::span<const Expression> outputs,
                               const VariableSpace& space) {
  using Kind = Expression::Kind;
  std::unordered_map<const void*, int> index;
  std::unordered_map<double, int> constants;
  std::unordered_map<int, int> variables;

  // Iterative post-order so deep trees do not exhaust the stack.
  auto emit = [&](const Expression& root) -> int {
    std::vector<std::pair<Expression, bool>> stack{{root, false}};
    while (!stack.empty()) {
      auto [e, expanded] = stack.back();
      stack.pop_back();
      if (index.count(e.id())) continue;
      if (e.kind() == Kind::kConstant) {
        double c = e.constant_value();
        auto it = constants.find(c);
        int id;
        if (it != constants.end()) {
          id = it->second;
        } else {
          id = static_cast<int>(ops_.size());
          ops_.push_back({Kind::kConstant, 0, 0, c});
          constants.emplace(c, id);
        }
        index.emplace(e.id(), id);
        continue;
      }
      if (e.kind() == Kind::kVariable) {
        int s = space.slot(e.variable_key());
        if (s < 0) {
          throw DeclarationError("expression references undeclared (" +
                                 symbol_name(key_symbol(e.variable_key())) + ", " +
                                 std::to_string(key_index(e.variable_key())) + ")");
        }
        auto it = variables.find(s);
        int id;
        if (it != variables.end()) {
          id = it->second;
        } else {
          id = static_cast<int>(ops_.size());
          ops_.push_back({Kind::kVariable, s, 0, 0.0});
          variables.emplace(s, id);
        }
        index.emplace(e.id(), id);
        continue;
      }
      if (!expanded) {
        stack.push_back({e, true});
        for (const auto& c : e.children()) {
          if (!index.count(c.id())) stack.push_back({c, false});
        }
        continue;
      }
      int first = static_cast<int>(args_.size());
      for (const auto& c : e.children()) args_.push_back(index.at(c.id()));
      int id = static_cast<int>(ops_.size());
      ops_.push_back({e.kind(), first, static_cast<int>(e.children().size()),
                      static_cast<double>(e.exponent())});
      index.emplace(e.id(), id);
    }
    return index.at(root.id());
  };

  outputs_.reserve(outputs.size());
  for (const auto& e : outputs) outputs_.push_back(emit(e));
}

void ExpressionTape::evaluate(const Eigen::Ref<const Eigen::VectorXd>& values,
                              std::vector<double>& scratch,
                              Eigen::Ref<Eigen::VectorXd> out) const {
  using Kind = Expression::Kind;
  scratch.resize(ops_.size());
  for (std::size_t j = 0; j < ops_.size(); ++j) {
    const Op& op = ops_[j];
    const int* a = args_.data() + op.first_arg;
    double v = 0.0;
    switch (op.kind) {
      case Kind::kConstant:
        v = op.value;
        break;
      case Kind::kVariable:
        v = values[op.first_arg];
        break;
      case Kind::kSum:
        for (int l = 0; l < op.arg_count; ++l) v += scratch[a[l]];
        break;
      case Kind::kProduct:
        v = 1.0;
        for (int l = 0; l < op.arg_count; ++l) v *= scratch[a[l]];
        break;
      case Kind::kPower: {
        double b = scratch[a[0]];
        v = 1.0;
        for (int l = 0; l < static_cast<int>(op.value); ++l) v *= b;
        break;
      }
      case Kind::kExp:
        v = std::exp(scratch[a[0]]);
        break;
      case Kind::kNegation:
        v = -scratch[a[0]];
        break;
    }
    scratch[j] = v;
  }
  for (std::size_t r = 0; r < outputs_.size(); ++r) {
    out[static_cast<Eigen::Index>(r)] = scratch[outputs_[r]];
  }
}

Eigen::VectorXd ExpressionTape::evaluate(
    const Eigen::Ref<const Eigen::VectorXd>& values) const {
  std::vector<double> scratch;
  Eigen::VectorXd out(outputs_.size());
  evaluate(values, scratch, out);
  return out;
}

// ---------------------------------------------------------------- s-expressions

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_sexpr(const Expression& e, std::string& out) {
  using Kind = Expression::Kind;
  switch (e.kind()) {
    case Kind::kConstant:
      out += "(const " + format_double(e.constant_value()) + ")";
      return;
    case Kind::kVariable:
      out += "(var " + symbol_name(key_symbol(e.variable_key())) + " " +
             std::to_string(key_index(e.variable_key())) + ")";
      return;
    case Kind::kPower:
      out += "(pow ";
      write_sexpr(e.children()[0], out);
      out += " " + std::to_string(e.exponent()) + ")";
      return;
    case Kind::kExp:
    case Kind::kNegation:
      out += e.kind() == Kind::kExp ? "(exp " : "(neg ";
      write_sexpr(e.children()[0], out);
      out += ")";
      return;
    case Kind::kSum:
    case Kind::kProduct:
      out += e.kind() == Kind::kSum ? "(add" : "(mul";
      for (const auto& c : e.children()) {
        out += " ";
        write_sexpr(c, out);
      }
      out += ")";
      return;
  }
}

class SexprParser {
 public:
  explicit SexprParser(std::string_view text) : text_(text) {}

  Expression parse_all() {
    Expression e = parse();
    skip_ws();
    if (pos_ != text_.size()) fail("trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("s-expression: " + what + " at offset " + std::to_string(pos_));
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
  }

  std::string_view atom() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '(' && text_[pos_] != ')' &&
           !std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
    if (start == pos_) fail("expected atom");
    return text_.substr(start, pos_ - start);
  }

  double number() {
    std::string s(atom());
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      fail("bad number '" + s + "'");
    }
    if (used != s.size()) fail("bad number '" + s + "'");
    return v;
  }

  int integer() {
    double v = number();
    if (v != std::floor(v) || v < 0 || v > 1e9) fail("expected nonnegative integer");
    return static_cast<int>(v);
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  bool peek_close() {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == ')';
  }

  Expression parse() {
    expect('(');
    std::string_view op = atom();
    Expression e;
    if (op == "const") {
      e = Expression::constant(number());
    } else if (op == "var") {
      std::string name(atom());
      e = Expression::variable(name, integer());
    } else if (op == "add" || op == "mul") {
      std::vector<Expression> args;
      while (!peek_close()) args.push_back(parse());
      if (args.empty()) fail("empty " + std::string(op));
      e = op == "add" ? Expression::sum(std::move(args))
                      : Expression::product(std::move(args));
    } else if (op == "sub") {
      Expression a = parse();
      Expression b = parse();
      e = a - b;
    } else if (op == "neg") {
      e = -parse();
    } else if (op == "exp") {
      e = Expression::exp(parse());
    } else if (op == "pow") {
      Expression b = parse();
      e = Expression::power(b, integer());
    } else {
      fail("unknown operator '" + std::string(op) + "'");
    }
    expect(')');
    return e;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string to_sexpr(const Expression& e) {
  std::string out;
  write_sexpr(e, out);
  return out;
}

Expression parse_sexpr(std::string_view text) { return SexprParser(text).parse_all(); }

}  // namespace goop
