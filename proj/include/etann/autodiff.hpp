#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace etann::ad {

// ---------------------------------------------------------------------------
// Forward-mode dual number. Carries one tangent alongside the primal value;
// the arithmetic satisfies the product/chain rules exactly per primitive.
// Used for Jacobian-vector products through networks and as an independent
// check on the reverse-mode tape.
// ---------------------------------------------------------------------------
struct Dual {
  double v = 0.0;  // primal
  double d = 0.0;  // tangent

  Dual() = default;
  Dual(double value) : v(value), d(0.0) {}
  Dual(double value, double tangent) : v(value), d(tangent) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
inline Dual operator/(const Dual& a, const Dual& b) {
  const double inv = 1.0 / b.v;
  return {a.v * inv, (a.d - a.v * b.d * inv) * inv};
}
inline Dual tanh(const Dual& a) {
  const double t = std::tanh(a.v);
  return {t, (1.0 - t * t) * a.d};
}
inline Dual exp(const Dual& a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual erf(const Dual& a) {
  const double g = 2.0 / std::sqrt(std::numbers::pi) * std::exp(-a.v * a.v);
  return {std::erf(a.v), g * a.d};
}
inline Dual sqrt(const Dual& a) {
  const double r = std::sqrt(a.v);
  return {r, 0.5 / r * a.d};
}
inline Dual square(const Dual& a) { return {a.v * a.v, 2.0 * a.v * a.d}; }
inline Dual abs(const Dual& a) {
  const double s = a.v >= 0.0 ? 1.0 : -1.0;
  return {std::fabs(a.v), s * a.d};
}
inline Dual max(const Dual& a, const Dual& b) { return a.v >= b.v ? a : b; }

/// GELU in the error-function form, x/2 (1 + erf(x/sqrt 2)); smooth to all
/// orders, which the second-derivative training paths require.
template <class T>
T gelu(const T& x) {
  const T half(0.5);
  const T inv_sqrt2(0.7071067811865475244);
  return half * x * (T(1.0) + erf(x * inv_sqrt2));
}
inline double erf(double x) { return std::erf(x); }
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

// ---------------------------------------------------------------------------
// Reverse-mode tape over scalars. Nodes are appended in topological order
// (parents precede children) and values are evaluated eagerly. The reverse
// pass emits the adjoint accumulation as new tape nodes, so gradients are
// themselves tape expressions and can be differentiated again: that is how
// the weight-gradients of losses on input-gradients are obtained.
// ---------------------------------------------------------------------------
class Tape;

struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;
  double val() const;
};

enum class Op : std::uint8_t {
  Const,
  Input,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Square,
  Sqrt,
  Recip,
  Tanh,
  Exp,
  Erf,
  Abs,
  Max,
};

class Tape {
 public:
  struct Node {
    Op op;
    std::int32_t a = -1;
    std::int32_t b = -1;
    double val = 0.0;
  };

  std::size_t size() const { return nodes_.size(); }
  double value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].val; }
  void clear() { nodes_.clear(); }

  Var input(double v) { return push(Op::Input, -1, -1, v); }
  Var constant(double v) { return push(Op::Const, -1, -1, v); }

  void set_input(Var v, double value) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.op != Op::Input) throw std::logic_error("set_input: node is not an input");
    n.val = value;
  }

  /// Re-evaluates every node in order from the stored inputs/constants.
  /// Deterministic and bit-identical for identical inputs.
  void forward() {
    for (Node& n : nodes_) n.val = eval(n);
  }

  Var add(Var a, Var b) { return push(Op::Add, a.id, b.id, a.val() + b.val()); }
  Var sub(Var a, Var b) { return push(Op::Sub, a.id, b.id, a.val() - b.val()); }
  Var mul(Var a, Var b) { return push(Op::Mul, a.id, b.id, a.val() * b.val()); }
  Var div(Var a, Var b) { return push(Op::Div, a.id, b.id, a.val() / b.val()); }
  Var neg(Var a) { return push(Op::Neg, a.id, -1, -a.val()); }
  Var square(Var a) { return push(Op::Square, a.id, -1, a.val() * a.val()); }
  Var sqrt(Var a) { return push(Op::Sqrt, a.id, -1, std::sqrt(a.val())); }
  Var recip(Var a) { return push(Op::Recip, a.id, -1, 1.0 / a.val()); }
  Var tanh(Var a) { return push(Op::Tanh, a.id, -1, std::tanh(a.val())); }
  Var exp(Var a) { return push(Op::Exp, a.id, -1, std::exp(a.val())); }
  Var erf(Var a) { return push(Op::Erf, a.id, -1, std::erf(a.val())); }
  Var abs(Var a) { return push(Op::Abs, a.id, -1, std::fabs(a.val())); }
  Var max(Var a, Var b) { return push(Op::Max, a.id, b.id, std::max(a.val(), b.val())); }

  /// Reverse sweep from scalar f. Returns one adjoint variable per entry of
  /// `wrt`; the adjoints live on the tape and may be differentiated again.
  std::vector<Var> adjoints(Var f, std::span<const Var> wrt) {
    if (f.tape != this) throw std::logic_error("adjoints: variable from another tape");
    const std::size_t n = static_cast<std::size_t>(f.id) + 1;
    // adjoint node id per node; -1 means identically zero so far.
    std::vector<std::int32_t> adj(n, -1);
    adj[static_cast<std::size_t>(f.id)] = constant(1.0).id;
    for (std::size_t i = n; i-- > 0;) {
      const std::int32_t aid = adj[i];
      if (aid < 0) continue;
      const Node nd = nodes_[i];  // copy: pushes below may reallocate
      const Var g{this, aid};
      const Var x{this, nd.a};
      const Var y{this, nd.b};
      switch (nd.op) {
        case Op::Const:
        case Op::Input:
          break;
        case Op::Add:
          accumulate(adj, nd.a, g);
          accumulate(adj, nd.b, g);
          break;
        case Op::Sub:
          accumulate(adj, nd.a, g);
          accumulate(adj, nd.b, neg(g));
          break;
        case Op::Mul:
          accumulate(adj, nd.a, mul(g, y));
          accumulate(adj, nd.b, mul(g, x));
          break;
        case Op::Div: {
          const Var r{this, static_cast<std::int32_t>(i)};
          accumulate(adj, nd.a, div(g, y));
          accumulate(adj, nd.b, neg(div(mul(g, r), y)));
          break;
        }
        case Op::Neg:
          accumulate(adj, nd.a, neg(g));
          break;
        case Op::Square:
          accumulate(adj, nd.a, mul(g, mul(constant(2.0), x)));
          break;
        case Op::Sqrt: {
          const Var r{this, static_cast<std::int32_t>(i)};
          accumulate(adj, nd.a, div(g, mul(constant(2.0), r)));
          break;
        }
        case Op::Recip: {
          const Var r{this, static_cast<std::int32_t>(i)};
          accumulate(adj, nd.a, neg(mul(g, square(r))));
          break;
        }
        case Op::Tanh: {
          const Var r{this, static_cast<std::int32_t>(i)};
          accumulate(adj, nd.a, mul(g, sub(constant(1.0), square(r))));
          break;
        }
        case Op::Exp: {
          const Var r{this, static_cast<std::int32_t>(i)};
          accumulate(adj, nd.a, mul(g, r));
          break;
        }
        case Op::Erf: {
          const Var two_over_sqrt_pi = constant(2.0 / std::sqrt(std::numbers::pi));
          accumulate(adj, nd.a, mul(g, mul(two_over_sqrt_pi, exp(neg(square(x))))));
          break;
        }
        case Op::Abs:
          // subgradient sign(x); flat second derivative away from 0
          accumulate(adj, nd.a, mul(g, constant(x.val() >= 0.0 ? 1.0 : -1.0)));
          break;
        case Op::Max:
          if (x.val() >= y.val())
            accumulate(adj, nd.a, g);
          else
            accumulate(adj, nd.b, g);
          break;
      }
    }
    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const Var& w : wrt) {
      const std::int32_t aid = adj[static_cast<std::size_t>(w.id)];
      out.push_back(aid >= 0 ? Var{this, aid} : constant(0.0));
    }
    return out;
  }

  /// Exact reverse-mode gradient of a scalar graph with respect to `wrt`.
  std::vector<double> gradient(Var f, std::span<const Var> wrt) {
    const std::vector<Var> a = adjoints(f, wrt);
    std::vector<double> g(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = a[i].val();
    return g;
  }

 private:
  Var push(Op op, std::int32_t a, std::int32_t b, double v) {
    nodes_.push_back(Node{op, a, b, v});
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  void accumulate(std::vector<std::int32_t>& adj, std::int32_t node, Var contrib) {
    if (node < 0) return;
    const std::size_t i = static_cast<std::size_t>(node);
    adj[i] = adj[i] < 0 ? contrib.id : add(Var{this, adj[i]}, contrib).id;
  }

  double eval(const Node& n) const {
    const auto va = [&] { return nodes_[static_cast<std::size_t>(n.a)].val; };
    const auto vb = [&] { return nodes_[static_cast<std::size_t>(n.b)].val; };
    switch (n.op) {
      case Op::Const:
      case Op::Input:
        return n.val;
      case Op::Add:
        return va() + vb();
      case Op::Sub:
        return va() - vb();
      case Op::Mul:
        return va() * vb();
      case Op::Div:
        return va() / vb();
      case Op::Neg:
        return -va();
      case Op::Square:
        return va() * va();
      case Op::Sqrt:
        return std::sqrt(va());
      case Op::Recip:
        return 1.0 / va();
      case Op::Tanh:
        return std::tanh(va());
      case Op::Exp:
        return std::exp(va());
      case Op::Erf:
        return std::erf(va());
      case Op::Abs:
        return std::fabs(va());
      case Op::Max:
        return std::max(va(), vb());
    }
    return 0.0;
  }

  std::vector<Node> nodes_;
};

inline double Var::val() const { return tape->value(*this); }

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator-(Var a) { return a.tape->neg(a); }
inline Var operator+(Var a, double b) { return a + a.tape->constant(b); }
inline Var operator+(double a, Var b) { return b.tape->constant(a) + b; }
inline Var operator-(Var a, double b) { return a - a.tape->constant(b); }
inline Var operator-(double a, Var b) { return b.tape->constant(a) - b; }
inline Var operator*(Var a, double b) { return a * a.tape->constant(b); }
inline Var operator*(double a, Var b) { return b.tape->constant(a) * b; }
inline Var operator/(Var a, double b) { return a / a.tape->constant(b); }
inline Var tanh(Var a) { return a.tape->tanh(a); }
inline Var exp(Var a) { return a.tape->exp(a); }
inline Var erf(Var a) { return a.tape->erf(a); }
inline Var sqrt(Var a) { return a.tape->sqrt(a); }
inline Var square(Var a) { return a.tape->square(a); }
inline Var abs(Var a) { return a.tape->abs(a); }
inline Var max(Var a, Var b) { return a.tape->max(a, b); }

/// Gradient of a recorded scalar function at the given inputs.
/// `f` must be a single scalar output whose graph lives on `tape`.
inline std::vector<double> gradient(Tape& tape, Var f, std::span<const Var> inputs) {
  return tape.gradient(f, inputs);
}

/// Jacobian of a recorded vector function: row i is the gradient of
/// outputs[i] with respect to `inputs`.
inline std::vector<std::vector<double>> input_jacobian(Tape& tape, std::span<const Var> outputs,
                                                       std::span<const Var> inputs) {
  std::vector<std::vector<double>> jac;
  jac.reserve(outputs.size());
  for (const Var& y : outputs) jac.push_back(tape.gradient(y, inputs));
  return jac;
}

}  // namespace etann::ad
