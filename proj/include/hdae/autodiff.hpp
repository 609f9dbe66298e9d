#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Reverse-mode automatic differentiation over scalars, vectors and small
// matrices. One Tape is one forward pass: nodes are appended in evaluation
// order (so tape order is a topological order), backward walks them once in
// reverse. A tape is confined to a single thread; reset() keeps the arenas
// so per-batch graphs do not reallocate.
namespace hdae::ad {

enum class Op : std::uint8_t {
  kLeaf,      // trainable input
  kConst,     // non-trainable input
  kAffine,    // c0 * x + c1, elementwise
  kAdd,
  kSub,
  kMul,       // elementwise
  kDivScalar, // x / s, s a scalar node
  kSMul,      // s * x, s a scalar node
  kDot,
  kNorm,      // Euclidean norm
  kSum,
  kMatVec,
  kTanh,
  kArtanh,
  kArcosh,
  kExp,
  kLog,
  kSqrt,
  kSoftmax,
  kHinge,     // max(0, x), subgradient 0 at the kink
  kClamp,     // clamp to [c0, c1], zero gradient outside
  kIndex,     // scalar x[c0]
  kPack,      // scalars -> vector
  kBlend,     // sum_i coeffs[i] * vs[i]
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Var leaf(std::span<const double> v, int rows = 0, int cols = 1) {
    return push(Op::kLeaf, rows ? rows : static_cast<int>(v.size()), cols, v);
  }
  Var constant(std::span<const double> v, int rows = 0, int cols = 1) {
    return push(Op::kConst, rows ? rows : static_cast<int>(v.size()), cols, v);
  }
  Var scalar(double x) { return constant({&x, 1}, 1, 1); }

  Var affine(Var a, double k, double b) {
    Var y = like(Op::kAffine, a);
    node(y).a = a.id;
    node(y).c0 = k;
    node(y).c1 = b;
    auto xs = values(a);
    auto ys = mut(y);
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = k * xs[i] + b;
    return y;
  }

  Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }

  // x / s with s a scalar node (x may be any shape).
  Var divs(Var x, Var s) {
    require_scalar(s, "divs");
    const double sv = values(s)[0];
    if (sv == 0.0) throw std::domain_error("divs: division by zero");
    Var y = like(Op::kDivScalar, x);
    node(y).a = x.id;
    node(y).b = s.id;
    auto xs = values(x);
    auto ys = mut(y);
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] / sv;
    return y;
  }

  // s * x with s a scalar node.
  Var smul(Var s, Var x) {
    require_scalar(s, "smul");
    const double sv = values(s)[0];
    Var y = like(Op::kSMul, x);
    node(y).a = s.id;
    node(y).b = x.id;
    auto xs = values(x);
    auto ys = mut(y);
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = sv * xs[i];
    return y;
  }

  Var dot(Var a, Var b) {
    require_same_shape(a, b, "dot");
    Var y = make(Op::kDot, 1, 1);
    node(y).a = a.id;
    node(y).b = b.id;
    auto as = values(a), bs = values(b);
    double s = 0.0;
    for (std::size_t i = 0; i < as.size(); ++i) s += as[i] * bs[i];
    mut(y)[0] = s;
    return y;
  }

  Var norm(Var a) {
    Var y = make(Op::kNorm, 1, 1);
    node(y).a = a.id;
    double s = 0.0;
    for (double x : values(a)) s += x * x;
    mut(y)[0] = std::sqrt(s);
    return y;
  }

  Var sum(Var a) {
    Var y = make(Op::kSum, 1, 1);
    node(y).a = a.id;
    double s = 0.0;
    for (double x : values(a)) s += x;
    mut(y)[0] = s;
    return y;
  }

  // M (r x c) times v (c).
  Var matvec(Var m, Var v) {
    const int rows = node(m).rows;
    const int cols = node(m).cols;
    if (cols != node(v).rows || node(v).cols != 1) {
      throw std::invalid_argument("matvec: shape mismatch");
    }
    Var y = make(Op::kMatVec, rows, 1);
    node(y).a = m.id;
    node(y).b = v.id;
    auto ms = values(m), vs = values(v);
    auto ys = mut(y);
    for (int i = 0; i < rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < cols; ++j) s += ms[i * cols + j] * vs[j];
      ys[i] = s;
    }
    return y;
  }

  Var tanh(Var a) {
    return unary(Op::kTanh, a, [](double x) { return std::tanh(x); });
  }

  Var artanh(Var a) {
    return unary(Op::kArtanh, a, [](double x) {
      if (std::abs(x) >= 1.0) {
        throw std::domain_error("artanh: |argument| >= 1");
      }
      return std::atanh(x);
    });
  }

  // Arguments are clamped up to 1 to absorb rounding below the domain edge
  // (the derivative is padded separately); anything clearly below 1 is a
  // caller bug and throws.
  Var arcosh(Var a) {
    return unary(Op::kArcosh, a, [](double x) {
      if (x < 1.0 - 1e-9) {
        throw std::domain_error("arcosh: argument " + std::to_string(x) +
                                " < 1");
      }
      return std::acosh(std::max(x, 1.0));
    });
  }

  Var exp(Var a) {
    return unary(Op::kExp, a, [](double x) { return std::exp(x); });
  }

  Var log(Var a) {
    return unary(Op::kLog, a, [](double x) {
      if (x <= 0.0) throw std::domain_error("log: argument <= 0");
      return std::log(x);
    });
  }

  Var sqrt(Var a) {
    return unary(Op::kSqrt, a, [](double x) {
      if (x < 0.0) throw std::domain_error("sqrt: argument < 0");
      return std::sqrt(x);
    });
  }

  // Numerically stable softmax over a vector.
  Var softmax(Var a) {
    Var y = like(Op::kSoftmax, a);
    node(y).a = a.id;
    auto xs = values(a);
    auto ys = mut(y);
    double mx = xs[0];
    for (double x : xs) mx = std::max(mx, x);
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ys[i] = std::exp(xs[i] - mx);
      total += ys[i];
    }
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] /= total;
    return y;
  }

  Var hinge(Var a) {
    return unary(Op::kHinge, a, [](double x) { return x > 0.0 ? x : 0.0; });
  }

  Var clamp(Var a, double lo, double hi) {
    Var y = like(Op::kClamp, a);
    node(y).a = a.id;
    node(y).c0 = lo;
    node(y).c1 = hi;
    auto xs = values(a);
    auto ys = mut(y);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ys[i] = std::min(std::max(xs[i], lo), hi);
    }
    return y;
  }

  Var index(Var a, int i) {
    if (i < 0 || i >= size(a)) throw std::out_of_range("index");
    Var y = make(Op::kIndex, 1, 1);
    node(y).a = a.id;
    node(y).c0 = i;
    mut(y)[0] = values(a)[static_cast<std::size_t>(i)];
    return y;
  }

  Var pack(std::span<const Var> scalars) {
    if (scalars.empty()) throw std::invalid_argument("pack: empty");
    Var y = make(Op::kPack, static_cast<int>(scalars.size()), 1);
    attach_extra(y, scalars);
    auto ys = mut(y);
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      require_scalar(scalars[i], "pack");
      ys[i] = values(scalars[i])[0];
    }
    return y;
  }

  // sum_i coeffs[i] * vs[i]; coeffs is a vector node of length vs.size().
  Var blend(Var coeffs, std::span<const Var> vs) {
    if (vs.empty() || size(coeffs) != static_cast<int>(vs.size())) {
      throw std::invalid_argument("blend: coefficient count mismatch");
    }
    Var y = like(Op::kBlend, vs[0]);
    node(y).a = coeffs.id;
    attach_extra(y, vs);
    auto cs = values(coeffs);
    auto ys = mut(y);
    for (double& v : ys) v = 0.0;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      require_same_shape(vs[0], vs[i], "blend");
      auto xs = values(vs[i]);
      for (std::size_t k = 0; k < xs.size(); ++k) ys[k] += cs[i] * xs[k];
    }
    return y;
  }

  std::span<const double> values(Var v) const {
    const Node& n = nodes_[check(v)];
    return {val_.data() + n.off, static_cast<std::size_t>(n.rows * n.cols)};
  }

  double value(Var v) const {
    require_scalar(v, "value");
    return values(v)[0];
  }

  std::span<const double> grad(Var v) const {
    const Node& n = nodes_[check(v)];
    return {grad_.data() + n.off, static_cast<std::size_t>(n.rows * n.cols)};
  }

  // Seeds d(root)/d(root) = 1 and accumulates the chain rule into every
  // node's grad. Gradients are zeroed first, so repeated calls are
  // bit-identical.
  void backward(Var root) {
    require_scalar(root, "backward: root must be scalar");
    grad_.assign(val_.size(), 0.0);
    grad_[nodes_[check(root)].off] = 1.0;
    for (int id = root.id; id >= 0; --id) {
      backward_one(id);
    }
  }

  void reset() {
    nodes_.clear();
    val_.clear();
    grad_.clear();
    extra_.clear();
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    int rows, cols;
    std::size_t off;
    int a = -1, b = -1;
    int ex_off = 0, ex_n = 0;
    double c0 = 0.0, c1 = 0.0;
  };

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
      throw std::invalid_argument("variable does not belong to this tape");
    }
    return v.id;
  }

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  int size(Var v) const {
    const Node& n = nodes_[check(v)];
    return n.rows * n.cols;
  }

  void require_scalar(Var v, const char* who) const {
    if (size(v) != 1) {
      throw std::invalid_argument(std::string(who) + ": expected scalar");
    }
  }

  void require_same_shape(Var a, Var b, const char* who) const {
    const Node& na = nodes_[check(a)];
    const Node& nb = nodes_[check(b)];
    if (na.rows != nb.rows || na.cols != nb.cols) {
      throw std::invalid_argument(std::string(who) + ": shape mismatch");
    }
  }

  std::span<double> mut(Var v) {
    Node& n = node(v);
    return {val_.data() + n.off, static_cast<std::size_t>(n.rows * n.cols)};
  }

  Var make(Op op, int rows, int cols) {
    Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    n.off = val_.size();
    val_.resize(val_.size() + static_cast<std::size_t>(rows) * cols, 0.0);
    nodes_.push_back(n);
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var like(Op op, Var a) {
    const Node& na = nodes_[check(a)];
    return make(op, na.rows, na.cols);
  }

  Var push(Op op, int rows, int cols, std::span<const double> v) {
    if (static_cast<int>(v.size()) != rows * cols) {
      throw std::invalid_argument("leaf/constant: size does not match shape");
    }
    Var y = make(op, rows, cols);
    auto ys = mut(y);
    for (std::size_t i = 0; i < v.size(); ++i) ys[i] = v[i];
    return y;
  }

  Var binary(Op op, Var a, Var b) {
    require_same_shape(a, b, "binary op");
    Var y = like(op, a);
    node(y).a = a.id;
    node(y).b = b.id;
    auto as = values(a), bs = values(b);
    auto ys = mut(y);
    switch (op) {
      case Op::kAdd:
        for (std::size_t i = 0; i < as.size(); ++i) ys[i] = as[i] + bs[i];
        break;
      case Op::kSub:
        for (std::size_t i = 0; i < as.size(); ++i) ys[i] = as[i] - bs[i];
        break;
      case Op::kMul:
        for (std::size_t i = 0; i < as.size(); ++i) ys[i] = as[i] * bs[i];
        break;
      default:
        throw std::logic_error("binary: bad op");
    }
    return y;
  }

  template <typename F>
  Var unary(Op op, Var a, F&& f) {
    Var y = like(op, a);
    node(y).a = a.id;
    auto xs = values(a);
    auto ys = mut(y);
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
    return y;
  }

  void attach_extra(Var y, std::span<const Var> vs) {
    node(y).ex_off = static_cast<int>(extra_.size());
    node(y).ex_n = static_cast<int>(vs.size());
    for (Var v : vs) extra_.push_back(check(v));
  }

  double* gptr(int id) { return grad_.data() + nodes_[id].off; }
  const double* vptr(int id) const { return val_.data() + nodes_[id].off; }
  std::size_t count(int id) const {
    return static_cast<std::size_t>(nodes_[id].rows) * nodes_[id].cols;
  }

  void backward_one(int id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const double* g = grad_.data() + n.off;
    const double* y = val_.data() + n.off;
    const std::size_t m = count(id);
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kAffine: {
        double* da = gptr(n.a);
        for (std::size_t i = 0; i < m; ++i) da[i] += n.c0 * g[i];
        break;
      }
      case Op::kAdd: {
        double* da = gptr(n.a);
        double* db = gptr(n.b);
        for (std::size_t i = 0; i < m; ++i) {
          da[i] += g[i];
          db[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        double* da = gptr(n.a);
        double* db = gptr(n.b);
        for (std::size_t i = 0; i < m; ++i) {
          da[i] += g[i];
          db[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        double* da = gptr(n.a);
        double* db = gptr(n.b);
        const double* av = vptr(n.a);
        const double* bv = vptr(n.b);
        for (std::size_t i = 0; i < m; ++i) {
          da[i] += bv[i] * g[i];
          db[i] += av[i] * g[i];
        }
        break;
      }
      case Op::kDivScalar: {
        double* da = gptr(n.a);
        double* ds = gptr(n.b);
        const double sv = *vptr(n.b);
        for (std::size_t i = 0; i < m; ++i) {
          da[i] += g[i] / sv;
          *ds -= y[i] * g[i] / sv;
        }
        break;
      }
      case Op::kSMul: {
        double* ds = gptr(n.a);
        double* dx = gptr(n.b);
        const double sv = *vptr(n.a);
        const double* xv = vptr(n.b);
        for (std::size_t i = 0; i < m; ++i) {
          *ds += xv[i] * g[i];
          dx[i] += sv * g[i];
        }
        break;
      }
      case Op::kDot: {
        double* da = gptr(n.a);
        double* db = gptr(n.b);
        const double* av = vptr(n.a);
        const double* bv = vptr(n.b);
        const double gy = g[0];
        for (std::size_t i = 0; i < count(n.a); ++i) {
          da[i] += gy * bv[i];
          db[i] += gy * av[i];
        }
        break;
      }
      case Op::kNorm: {
        double* da = gptr(n.a);
        const double* av = vptr(n.a);
        const double nv = y[0];
        if (nv > 1e-300) {
          const double gy = g[0] / nv;
          for (std::size_t i = 0; i < count(n.a); ++i) da[i] += gy * av[i];
        }
        break;
      }
      case Op::kSum: {
        double* da = gptr(n.a);
        const double gy = g[0];
        for (std::size_t i = 0; i < count(n.a); ++i) da[i] += gy;
        break;
      }
      case Op::kMatVec: {
        const Node& nm = nodes_[n.a];
        double* dm = gptr(n.a);
        double* dv = gptr(n.b);
        const double* mv = vptr(n.a);
        const double* vv = vptr(n.b);
        for (int i = 0; i < nm.rows; ++i) {
          const double gi = g[i];
          for (int j = 0; j < nm.cols; ++j) {
            dm[i * nm.cols + j] += gi * vv[j];
            dv[j] += gi * mv[i * nm.cols + j];
          }
        }
        break;
      }
      case Op::kTanh: {
        double* da = gptr(n.a);
        for (std::size_t i = 0; i < m; ++i) da[i] += (1.0 - y[i] * y[i]) * g[i];
        break;
      }
      case Op::kArtanh: {
        double* da = gptr(n.a);
        const double* av = vptr(n.a);
        for (std::size_t i = 0; i < m; ++i) {
          da[i] += g[i] / (1.0 - av[i] * av[i]);
        }
        break;
      }
      case Op::kArcosh: {
        double* da = gptr(n.a);
        const double* av = vptr(n.a);
        for (std::size_t i = 0; i < m; ++i) {
          const double x = std::max(av[i], 1.0 + 1e-15);
          da[i] += g[i] / std::sqrt(x * x - 1.0);
        }
        break;
      }
      case Op::kExp: {
        double* da = gptr(n.a);
        for (std::size_t i = 0; i < m; ++i) da[i] += y[i] * g[i];
        break;
      }
      case Op::kLog: {
        double* da = gptr(n.a);
        const double* av = vptr(n.a);
        for (std::size_t i = 0; i < m; ++i) da[i] += g[i] / av[i];
        break;
      }
      case Op::kSqrt: {
        double* da = gptr(n.a);
        for (std::size_t i = 0; i < m; ++i) {
          if (y[i] > 0.0) da[i] += g[i] / (2.0 * y[i]);
        }
        break;
      }
      case Op::kSoftmax: {
        double* da = gptr(n.a);
        double inner = 0.0;
        for (std::size_t i = 0; i < m; ++i) inner += g[i] * y[i];
        for (std::size_t i = 0; i < m; ++i) da[i] += y[i] * (g[i] - inner);
        break;
      }
      case Op::kHinge: {
        double* da = gptr(n.a);
        const double* av = vptr(n.a);
        for (std::size_t i = 0; i < m; ++i) {
          if (av[i] > 0.0) da[i] += g[i];
        }
        break;
      }
      case Op::kClamp: {
        double* da = gptr(n.a);
        const double* av = vptr(n.a);
        for (std::size_t i = 0; i < m; ++i) {
          if (av[i] > n.c0 && av[i] < n.c1) da[i] += g[i];
        }
        break;
      }
      case Op::kIndex: {
        double* da = gptr(n.a);
        da[static_cast<int>(n.c0)] += g[0];
        break;
      }
      case Op::kPack: {
        for (int i = 0; i < n.ex_n; ++i) {
          *gptr(extra_[n.ex_off + i]) += g[i];
        }
        break;
      }
      case Op::kBlend: {
        double* dc = gptr(n.a);
        const double* cv = vptr(n.a);
        for (int i = 0; i < n.ex_n; ++i) {
          const int vi = extra_[n.ex_off + i];
          double* dv = gptr(vi);
          const double* vv = vptr(vi);
          double acc = 0.0;
          for (std::size_t k = 0; k < m; ++k) {
            acc += vv[k] * g[k];
            dv[k] += cv[i] * g[k];
          }
          dc[i] += acc;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> grad_;
  std::vector<int> extra_;
};

// Compares the analytic gradient of f against central finite differences.
// f(x, g) must return the value at x and, when g is non-null, fill it with
// the analytic gradient. Returns the max over coordinates of
// |analytic - numeric| / max(1e-8, |numeric|).
inline double gradient_check(
    const std::function<double(const std::vector<double>&,
                               std::vector<double>*)>& f,
    const std::vector<double>& x, double h) {
  if (h <= 0.0) throw std::invalid_argument("gradient_check: h must be > 0");
  std::vector<double> analytic(x.size(), 0.0);
  const double base = f(x, &analytic);
  if (!std::isfinite(base)) {
    throw std::runtime_error("gradient_check: non-finite value at x");
  }
  double worst = 0.0;
  std::vector<double> p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const double up = f(p, nullptr);
    p[i] = x[i] - h;
    const double down = f(p, nullptr);
    p[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("gradient_check: non-finite value near x");
    }
    const double numeric = (up - down) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace hdae::ad
