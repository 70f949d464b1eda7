#include "rssm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rssm::ad {

namespace {

thread_local Tape* g_current_tape = nullptr;

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void ensure_grad(const std::shared_ptr<TensorImpl>& impl) {
  if (impl->grad.size() != impl->data.size()) impl->grad.assign(impl->data.size(), 0.0);
}

}  // namespace

Tensor make_tensor(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(numel(impl->shape)), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return make_tensor(shape, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  Tensor t = make_tensor(shape, requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from(const Shape& shape, std::vector<double> data, bool requires_grad) {
  if (static_cast<int64_t>(data.size()) != numel(shape))
    throw ShapeMismatch("Tensor::from: data length does not match shape " + shape_str(shape));
  Tensor t = make_tensor(shape, requires_grad);
  t.data() = std::move(data);
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeMismatch("item() requires a scalar tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.size() == impl_->data.size()) return impl_->grad;
  return std::vector<double>(impl_->data.size(), 0.0);
}

Tensor Tensor::detached_copy() const {
  Tensor t = make_tensor(impl_->shape, false);
  t.data() = impl_->data;
  return t;
}

Tape::Tape() {
  previous_ = g_current_tape;
  g_current_tape = this;
}

Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(TapeNode node) { nodes_.push_back(std::move(node)); }

void Tape::clear() { nodes_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw NotScalarLoss("backward: loss must be scalar");
  // Locate the node that produced the loss; nodes recorded after it are dead.
  ptrdiff_t loss_node = -1;
  for (size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].output == loss.impl()) {
      loss_node = static_cast<ptrdiff_t>(i);
      break;
    }
  }
  for (auto& node : nodes_) {
    for (auto& in : node.inputs) in->grad.assign(in->data.size(), 0.0);
    node.output->grad.assign(node.output->data.size(), 0.0);
  }
  if (loss_node < 0) return;  // loss constant w.r.t. every recorded tensor
  ensure_grad(loss.impl());
  loss.impl()->grad[0] = 1.0;
  for (ptrdiff_t i = loss_node; i >= 0; --i) nodes_[static_cast<size_t>(i)].backward();
}

bool grad_enabled() { return g_current_tape != nullptr; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (tape == nullptr) throw NotScalarLoss("backward: no active tape");
  tape->backward(loss);
}

namespace {

bool should_record(std::initializer_list<const Tensor*> ins) {
  if (g_current_tape == nullptr) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

void record_node(std::vector<std::shared_ptr<TensorImpl>> inputs, const Tensor& out,
                 std::function<void()> backward) {
  g_current_tape->record(TapeNode{std::move(inputs), out.impl(), std::move(backward)});
}

// Broadcast pattern between two operand shapes.
enum class BPat { Same, BSmall, ASmall, BScalar, AScalar };

BPat broadcast_pattern(const Shape& a, const Shape& b) {
  if (a == b) return BPat::Same;
  if (numel(b) == 1) return BPat::BScalar;
  if (numel(a) == 1) return BPat::AScalar;
  if (a.size() == b.size() + 1 && std::equal(b.begin(), b.end(), a.begin() + 1)) return BPat::BSmall;
  if (b.size() == a.size() + 1 && std::equal(a.begin(), a.end(), b.begin() + 1)) return BPat::ASmall;
  throw ShapeMismatch("incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
}

struct AddOp {
  static double f(double a, double b) { return a + b; }
  static double dfa(double, double, double g) { return g; }
  static double dfb(double, double, double g) { return g; }
};
struct SubOp {
  static double f(double a, double b) { return a - b; }
  static double dfa(double, double, double g) { return g; }
  static double dfb(double, double, double g) { return -g; }
};
struct MulOp {
  static double f(double a, double b) { return a * b; }
  static double dfa(double, double b, double g) { return g * b; }
  static double dfb(double a, double, double g) { return g * a; }
};
struct DivOp {
  static double f(double a, double b) { return a / b; }
  static double dfa(double, double b, double g) { return g / b; }
  static double dfb(double a, double b, double g) { return -g * a / (b * b); }
};

template <class Op>
Tensor binary_op(const Tensor& a, const Tensor& b) {
  const BPat pat = broadcast_pattern(a.shape(), b.shape());
  const Shape& out_shape = (pat == BPat::ASmall || pat == BPat::AScalar) ? b.shape() : a.shape();
  Tensor out = make_tensor(out_shape, false);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  const size_t n = ov.size();
  switch (pat) {
    case BPat::Same:
      for (size_t i = 0; i < n; ++i) ov[i] = Op::f(av[i], bv[i]);
      break;
    case BPat::BScalar:
      for (size_t i = 0; i < n; ++i) ov[i] = Op::f(av[i], bv[0]);
      break;
    case BPat::AScalar:
      for (size_t i = 0; i < n; ++i) ov[i] = Op::f(av[0], bv[i]);
      break;
    case BPat::BSmall: {
      const size_t m = bv.size();
      for (size_t i = 0; i < n; ++i) ov[i] = Op::f(av[i], bv[i % m]);
      break;
    }
    case BPat::ASmall: {
      const size_t m = av.size();
      for (size_t i = 0; i < n; ++i) ov[i] = Op::f(av[i % m], bv[i]);
      break;
    }
  }
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    const bool ga = a.requires_grad();
    const bool gb = b.requires_grad();
    record_node({ai, bi}, out, [ai, bi, oi, pat, ga, gb]() {
      const auto& g = oi->grad;
      const auto& av = ai->data;
      const auto& bv = bi->data;
      if (ga) ensure_grad(ai);
      if (gb) ensure_grad(bi);
      const size_t n = g.size();
      switch (pat) {
        case BPat::Same:
          for (size_t i = 0; i < n; ++i) {
            if (ga) ai->grad[i] += Op::dfa(av[i], bv[i], g[i]);
            if (gb) bi->grad[i] += Op::dfb(av[i], bv[i], g[i]);
          }
          break;
        case BPat::BScalar:
          for (size_t i = 0; i < n; ++i) {
            if (ga) ai->grad[i] += Op::dfa(av[i], bv[0], g[i]);
            if (gb) bi->grad[0] += Op::dfb(av[i], bv[0], g[i]);
          }
          break;
        case BPat::AScalar:
          for (size_t i = 0; i < n; ++i) {
            if (ga) ai->grad[0] += Op::dfa(av[0], bv[i], g[i]);
            if (gb) bi->grad[i] += Op::dfb(av[0], bv[i], g[i]);
          }
          break;
        case BPat::BSmall: {
          const size_t m = bv.size();
          for (size_t i = 0; i < n; ++i) {
            if (ga) ai->grad[i] += Op::dfa(av[i], bv[i % m], g[i]);
            if (gb) bi->grad[i % m] += Op::dfb(av[i], bv[i % m], g[i]);
          }
          break;
        }
        case BPat::ASmall: {
          const size_t m = av.size();
          for (size_t i = 0; i < n; ++i) {
            if (ga) ai->grad[i % m] += Op::dfa(av[i % m], bv[i], g[i]);
            if (gb) bi->grad[i] += Op::dfb(av[i % m], bv[i], g[i]);
          }
          break;
        }
      }
    });
  }
  return out;
}

struct UnaryFn {
  double (*f)(double);
  double (*df)(double x, double y, double g);  // y = f(x)
};

template <class F>
Tensor unary_op(const Tensor& t) {
  Tensor out = make_tensor(t.shape(), false);
  const auto& x = t.data();
  auto& y = out.data();
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) y[i] = F::f(x[i]);
  if (should_record({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = out.impl();
    record_node({ti}, out, [ti, oi]() {
      ensure_grad(ti);
      const size_t n = ti->data.size();
      for (size_t i = 0; i < n; ++i)
        ti->grad[i] += F::df(ti->data[i], oi->data[i], oi->grad[i]);
    });
  }
  return out;
}

struct ReluOp {
  static double f(double x) { return x > 0 ? x : 0.0; }
  static double df(double x, double, double g) { return x > 0 ? g : 0.0; }
};
struct EluOp {
  static double f(double x) { return x > 0 ? x : std::expm1(x); }
  static double df(double x, double y, double g) { return x > 0 ? g : g * (y + 1.0); }
};
struct EluPlusOneOp {
  static double f(double x) { return x > 0 ? x + 1.0 : std::exp(x); }
  static double df(double x, double y, double g) { return x > 0 ? g : g * y; }
};
struct TanhOp {
  static double f(double x) { return std::tanh(x); }
  static double df(double, double y, double g) { return g * (1.0 - y * y); }
};
struct SinOp {
  static double f(double x) { return std::sin(x); }
  static double df(double x, double, double g) { return g * std::cos(x); }
};
struct CosOp {
  static double f(double x) { return std::cos(x); }
  static double df(double x, double, double g) { return -g * std::sin(x); }
};
struct LogOp {
  static double f(double x) { return std::log(x); }
  static double df(double x, double, double g) { return g / x; }
};
struct ExpOp {
  static double f(double x) { return std::exp(x); }
  static double df(double, double y, double g) { return g * y; }
};
struct SqrtOp {
  static double f(double x) { return std::sqrt(x); }
  static double df(double, double y, double g) { return 0.5 * g / y; }
};
struct RecipOp {
  static double f(double x) { return 1.0 / x; }
  static double df(double, double y, double g) { return -g * y * y; }
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op<AddOp>(a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op<SubOp>(a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op<MulOp>(a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op<DivOp>(a, b); }

Tensor relu(const Tensor& t) { return unary_op<ReluOp>(t); }
Tensor elu(const Tensor& t) { return unary_op<EluOp>(t); }
Tensor elu_plus_one(const Tensor& t) { return unary_op<EluPlusOneOp>(t); }
Tensor tanh(const Tensor& t) { return unary_op<TanhOp>(t); }
Tensor sin(const Tensor& t) { return unary_op<SinOp>(t); }
Tensor cos(const Tensor& t) { return unary_op<CosOp>(t); }
Tensor log(const Tensor& t) { return unary_op<LogOp>(t); }
Tensor exp(const Tensor& t) { return unary_op<ExpOp>(t); }
Tensor sqrt(const Tensor& t) { return unary_op<SqrtOp>(t); }
Tensor reciprocal(const Tensor& t) { return unary_op<RecipOp>(t); }

namespace {

// C[m,n] += op_a(A) @ op_b(B); raw row-major buffers.
void gemm_acc(const double* a, int ar, int ac, bool ta, const double* b, int br, int bc, bool tb,
              double* c) {
  const int m = ta ? ac : ar;
  const int k = ta ? ar : ac;
  const int n = tb ? br : bc;
  (void)k;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      const int kk = ta ? ar : ac;
      for (int p = 0; p < kk; ++p) {
        const double av = ta ? a[p * ac + i] : a[i * ac + p];
        const double bv = tb ? b[j * bc + p] : b[p * bc + j];
        acc += av * bv;
      }
      c[i * n + j] += acc;
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeMismatch("matmul requires rank-2 tensors");
  const int ar = a.dim(0), ac = a.dim(1);
  const int br = b.dim(0), bc = b.dim(1);
  const int m = trans_a ? ac : ar;
  const int ka = trans_a ? ar : ac;
  const int kb = trans_b ? bc : br;
  const int n = trans_b ? br : bc;
  if (ka != kb) throw ShapeMismatch("matmul inner dimensions disagree");
  Tensor out = make_tensor({m, n}, false);
  gemm_acc(a.data().data(), ar, ac, trans_a, b.data().data(), br, bc, trans_b, out.data().data());
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    const bool ga = a.requires_grad();
    const bool gb = b.requires_grad();
    record_node({ai, bi}, out, [=]() {
      // dAe = G @ Beᵀ, dBe = Aeᵀ @ G with Ae=op_a(A), Be=op_b(B).
      if (ga) {
        ensure_grad(ai);
        if (!trans_a) {
          // dA[m,ka] = G[m,n] @ op_b(B)ᵀ
          gemm_acc(oi->grad.data(), m, n, false, bi->data.data(), br, bc, !trans_b,
                   ai->grad.data());
        } else {
          // A = Aeᵀ -> dA = dAeᵀ = op_b(B) @ Gᵀ ... compute as (G @ op_b(B)ᵀ)ᵀ
          std::vector<double> tmp(static_cast<size_t>(m) * ka, 0.0);
          gemm_acc(oi->grad.data(), m, n, false, bi->data.data(), br, bc, !trans_b, tmp.data());
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < ka; ++p) ai->grad[static_cast<size_t>(p) * ac + i] += tmp[static_cast<size_t>(i) * ka + p];
        }
      }
      if (gb) {
        ensure_grad(bi);
        if (!trans_b) {
          // dB[ka,n] = op_a(A)ᵀ @ G
          gemm_acc(ai->data.data(), ar, ac, !trans_a, oi->grad.data(), m, n, false,
                   bi->grad.data());
        } else {
          std::vector<double> tmp(static_cast<size_t>(ka) * n, 0.0);
          gemm_acc(ai->data.data(), ar, ac, !trans_a, oi->grad.data(), m, n, false, tmp.data());
          for (int p = 0; p < ka; ++p)
            for (int j = 0; j < n; ++j) bi->grad[static_cast<size_t>(j) * bc + p] += tmp[static_cast<size_t>(p) * n + j];
        }
      }
    });
  }
  return out;
}

Tensor bmatvec(const Tensor& a, const Tensor& x) {
  if (a.rank() != 3 || x.rank() != 2)
    throw ShapeMismatch("bmatvec requires A [B,m,n] and x [B,n]");
  const int B = a.dim(0), m = a.dim(1), n = a.dim(2);
  if (x.dim(0) != B || x.dim(1) != n) throw ShapeMismatch("bmatvec operand shapes disagree");
  Tensor out = make_tensor({B, m}, false);
  const auto& av = a.data();
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      const size_t base = (static_cast<size_t>(b) * m + i) * n;
      for (int j = 0; j < n; ++j) acc += av[base + j] * xv[static_cast<size_t>(b) * n + j];
      ov[static_cast<size_t>(b) * m + i] = acc;
    }
  if (should_record({&a, &x})) {
    out.set_requires_grad(true);
    auto ai = a.impl();
    auto xi = x.impl();
    auto oi = out.impl();
    const bool ga = a.requires_grad();
    const bool gx = x.requires_grad();
    record_node({ai, xi}, out, [=]() {
      if (ga) ensure_grad(ai);
      if (gx) ensure_grad(xi);
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < m; ++i) {
          const double g = oi->grad[static_cast<size_t>(b) * m + i];
          if (g == 0.0) continue;
          const size_t base = (static_cast<size_t>(b) * m + i) * n;
          for (int j = 0; j < n; ++j) {
            if (ga) ai->grad[base + j] += g * xi->data[static_cast<size_t>(b) * n + j];
            if (gx) xi->grad[static_cast<size_t>(b) * n + j] += g * ai->data[base + j];
          }
        }
    });
  }
  return out;
}

Tensor mix_matrices(const Tensor& alpha, const Tensor& basis) {
  if (alpha.rank() != 2 || basis.rank() != 3)
    throw ShapeMismatch("mix_matrices requires alpha [B,K] and basis [K,m,n]");
  const int B = alpha.dim(0), K = alpha.dim(1);
  if (basis.dim(0) != K) throw ShapeMismatch("mix_matrices basis count disagrees with alpha");
  const int m = basis.dim(1), n = basis.dim(2);
  const size_t mn = static_cast<size_t>(m) * n;
  Tensor out = make_tensor({B, m, n}, false);
  const auto& al = alpha.data();
  const auto& bs = basis.data();
  auto& ov = out.data();
  for (int b = 0; b < B; ++b) {
    double* dst = ov.data() + static_cast<size_t>(b) * mn;
    for (int k = 0; k < K; ++k) {
      const double w = al[static_cast<size_t>(b) * K + k];
      if (w == 0.0) continue;
      const double* src = bs.data() + static_cast<size_t>(k) * mn;
      for (size_t i = 0; i < mn; ++i) dst[i] += w * src[i];
    }
  }
  if (should_record({&alpha, &basis})) {
    out.set_requires_grad(true);
    auto ai = alpha.impl();
    auto bi = basis.impl();
    auto oi = out.impl();
    const bool ga = alpha.requires_grad();
    const bool gb = basis.requires_grad();
    record_node({ai, bi}, out, [=]() {
      if (ga) ensure_grad(ai);
      if (gb) ensure_grad(bi);
      for (int b = 0; b < B; ++b) {
        const double* g = oi->grad.data() + static_cast<size_t>(b) * mn;
        for (int k = 0; k < K; ++k) {
          const double* src = bi->data.data() + static_cast<size_t>(k) * mn;
          if (ga) {
            double acc = 0.0;
            for (size_t i = 0; i < mn; ++i) acc += g[i] * src[i];
            ai->grad[static_cast<size_t>(b) * K + k] += acc;
          }
          if (gb) {
            const double w = ai->data[static_cast<size_t>(b) * K + k];
            double* dst = bi->grad.data() + static_cast<size_t>(k) * mn;
            for (size_t i = 0; i < mn; ++i) dst[i] += w * g[i];
          }
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& t, int dim, int start, int len) {
  const int r = t.rank();
  if (dim < 0 || dim >= r) throw ShapeMismatch("slice: bad dim");
  if (start < 0 || len <= 0 || start + len > t.dim(dim)) throw ShapeMismatch("slice: bad range");
  Shape out_shape = t.shape();
  out_shape[static_cast<size_t>(dim)] = len;
  Tensor out = make_tensor(out_shape, false);
  // outer x pick x inner decomposition of the index space
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= t.dim(i);
  for (int i = dim + 1; i < r; ++i) inner *= t.dim(i);
  const int64_t src_pitch = static_cast<int64_t>(t.dim(dim)) * inner;
  const int64_t dst_pitch = static_cast<int64_t>(len) * inner;
  const auto& src = t.data();
  auto& dst = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(src.begin() + o * src_pitch + start * inner, dst_pitch,
                dst.begin() + o * dst_pitch);
  if (should_record({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = out.impl();
    record_node({ti}, out, [=]() {
      ensure_grad(ti);
      for (int64_t o = 0; o < outer; ++o) {
        const double* g = oi->grad.data() + o * dst_pitch;
        double* dg = ti->grad.data() + o * src_pitch + start * inner;
        for (int64_t i = 0; i < dst_pitch; ++i) dg[i] += g[i];
      }
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat: empty list");
  const int r = parts[0].rank();
  if (r != 1 && r != 2) throw ShapeMismatch("concat supports rank 1 or 2");
  int rows = r == 2 ? parts[0].dim(0) : 1;
  int total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != r || (r == 2 && p.dim(0) != rows))
      throw ShapeMismatch("concat: inconsistent shapes");
    total += p.dim(r - 1);
    any_grad = any_grad || p.requires_grad();
  }
  Shape out_shape = r == 2 ? Shape{rows, total} : Shape{total};
  Tensor out = make_tensor(out_shape, false);
  auto& dst = out.data();
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(r - 1);
    const auto& src = p.data();
    for (int row = 0; row < rows; ++row)
      std::copy_n(src.begin() + static_cast<int64_t>(row) * w, w,
                  dst.begin() + static_cast<int64_t>(row) * total + off);
    off += w;
  }
  if (g_current_tape != nullptr && any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl>> ins;
    std::vector<int> widths;
    for (const auto& p : parts) {
      ins.push_back(p.impl());
      widths.push_back(p.dim(r - 1));
    }
    auto oi = out.impl();
    record_node(ins, out, [ins, widths, oi, rows, total]() {
      int off = 0;
      for (size_t pi = 0; pi < ins.size(); ++pi) {
        const int w = widths[pi];
        if (ins[pi]->requires_grad) {
          ensure_grad(ins[pi]);
          for (int row = 0; row < rows; ++row) {
            const double* g = oi->grad.data() + static_cast<int64_t>(row) * total + off;
            double* dg = ins[pi]->grad.data() + static_cast<int64_t>(row) * w;
            for (int i = 0; i < w; ++i) dg[i] += g[i];
          }
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& t) {
  Tensor out = make_tensor({1}, false);
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  out.data()[0] = acc;
  if (should_record({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = out.impl();
    record_node({ti}, out, [=]() {
      ensure_grad(ti);
      const double g = oi->grad[0];
      for (auto& d : ti->grad) d += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& t) { return sum_all(t) * (1.0 / static_cast<double>(t.size())); }

Tensor sum_dim(const Tensor& t, int dim) {
  if (t.rank() != 2 || (dim != 0 && dim != 1)) throw ShapeMismatch("sum_dim: rank-2 only");
  const int B = t.dim(0), d = t.dim(1);
  Tensor out = make_tensor(dim == 0 ? Shape{d} : Shape{B}, false);
  const auto& x = t.data();
  auto& y = out.data();
  if (dim == 0) {
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < d; ++j) y[j] += x[static_cast<size_t>(b) * d + j];
  } else {
    for (int b = 0; b < B; ++b) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += x[static_cast<size_t>(b) * d + j];
      y[b] = acc;
    }
  }
  if (should_record({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = out.impl();
    record_node({ti}, out, [=]() {
      ensure_grad(ti);
      for (int b = 0; b < B; ++b)
        for (int j = 0; j < d; ++j)
          ti->grad[static_cast<size_t>(b) * d + j] += (dim == 0) ? oi->grad[j] : oi->grad[b];
    });
  }
  return out;
}

Tensor softmax(const Tensor& t) {
  const int r = t.rank();
  if (r != 1 && r != 2) throw ShapeMismatch("softmax supports rank 1 or 2");
  const int rows = r == 2 ? t.dim(0) : 1;
  const int d = t.dim(r - 1);
  Tensor out = make_tensor(t.shape(), false);
  const auto& x = t.data();
  auto& y = out.data();
  for (int row = 0; row < rows; ++row) {
    const double* xi = x.data() + static_cast<size_t>(row) * d;
    double* yi = y.data() + static_cast<size_t>(row) * d;
    double mx = xi[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      z += yi[j];
    }
    for (int j = 0; j < d; ++j) yi[j] /= z;
  }
  if (should_record({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = out.impl();
    record_node({ti}, out, [=]() {
      ensure_grad(ti);
      for (int row = 0; row < rows; ++row) {
        const double* yi = oi->data.data() + static_cast<size_t>(row) * d;
        const double* g = oi->grad.data() + static_cast<size_t>(row) * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += yi[j] * g[j];
        double* dg = ti->grad.data() + static_cast<size_t>(row) * d;
        for (int j = 0; j < d; ++j) dg[j] += yi[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor where(const Tensor& mask, const Tensor& a, const Tensor& b) {
  if (mask.shape() != a.shape() || a.shape() != b.shape())
    throw ShapeMismatch("where: all operands must share one shape");
  Tensor out = make_tensor(a.shape(), false);
  const auto& mv = mask.data();
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = mv[i] != 0.0 ? av[i] : bv[i];
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    auto mi = mask.impl();
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    const bool ga = a.requires_grad();
    const bool gb = b.requires_grad();
    record_node({ai, bi}, out, [=]() {
      if (ga) ensure_grad(ai);
      if (gb) ensure_grad(bi);
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        if (mi->data[i] != 0.0) {
          if (ga) ai->grad[i] += oi->grad[i];
        } else if (gb) {
          bi->grad[i] += oi->grad[i];
        }
      }
    });
  }
  return out;
}

Tensor stop_gradient(const Tensor& t) { return t.detached_copy(); }

Tensor ge_mask(const Tensor& t, double threshold) {
  Tensor out = make_tensor(t.shape(), false);
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = t.data()[i] >= threshold ? 1.0 : 0.0;
  return out;
}

Tensor le_mask(const Tensor& t, double threshold) {
  Tensor out = make_tensor(t.shape(), false);
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = t.data()[i] <= threshold ? 1.0 : 0.0;
  return out;
}

Tensor mask_le(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("mask_le: shapes must agree");
  Tensor out = make_tensor(a.shape(), false);
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = a.data()[i] <= b.data()[i] ? 1.0 : 0.0;
  return out;
}

Tensor sign_of(const Tensor& t) {
  Tensor out = make_tensor(t.shape(), false);
  for (size_t i = 0; i < out.data().size(); ++i) {
    const double v = t.data()[i];
    out.data()[i] = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
  }
  return out;
}

Tensor reshape(const Tensor& t, const Shape& shape) {
  if (numel(shape) != t.size()) throw ShapeMismatch("reshape: element counts disagree");
  Tensor out = make_tensor(shape, false);
  out.data() = t.data();
  if (should_record({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = out.impl();
    record_node({ti}, out, [=]() {
      ensure_grad(ti);
      for (size_t i = 0; i < oi->grad.size(); ++i) ti->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor clamp_min(const Tensor& t, double floor) {
  Tensor out = make_tensor(t.shape(), false);
  const auto& x = t.data();
  auto& y = out.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = x[i] > floor ? x[i] : floor;
  if (should_record({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl();
    auto oi = out.impl();
    record_node({ti}, out, [=]() {
      ensure_grad(ti);
      for (size_t i = 0; i < oi->grad.size(); ++i)
        if (ti->data[i] > floor) ti->grad[i] += oi->grad[i];
    });
  }
  return out;
}

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor pairwise_sum(const std::vector<Tensor>& terms) {
  if (terms.empty()) throw ShapeMismatch("pairwise_sum: empty list");
  std::vector<Tensor> level = terms;
  while (level.size() > 1) {
    std::vector<Tensor> next;
    next.reserve((level.size() + 1) / 2);
    for (size_t i = 0; i + 1 < level.size(); i += 2) next.push_back(add(level[i], level[i + 1]));
    if (level.size() % 2 == 1) next.push_back(level.back());
    level = std::move(next);
  }
  return level[0];
}

}  // namespace rssm::ad
