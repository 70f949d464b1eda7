#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rssm/errors.hpp"

namespace rssm::ad {

// Dense float64 tensor of rank 0..3 plus a dynamic reverse-mode tape.
// Broadcasting is limited to a leading batch axis ([B,d] op [d]) and
// scalars; everything else must be aligned explicitly.

using Shape = std::vector<int>;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor from(const Shape& shape, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double value(int64_t i = 0) const { return impl_->data[static_cast<size_t>(i)]; }
  double item() const;  // requires size()==1

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  // Gradient accumulated by the last backward() pass; zeros if untouched.
  std::vector<double> grad() const;
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  Tensor detached_copy() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_tensor(Shape shape, bool requires_grad);
};

Tensor make_tensor(Shape shape, bool requires_grad);

// Recorded primitive application. Parents precede children by construction,
// so walking the node list in reverse implements the chain rule.
struct TapeNode {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  std::function<void()> backward;
};

class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(TapeNode node);
  void clear();
  size_t size() const { return nodes_.size(); }

  // Backpropagates from `loss` (scalar) through every recorded node.
  // Gradients of all tensors touched by the tape are zeroed first, so
  // replaying is deterministic and bit-identical.
  void backward(const Tensor& loss);

 private:
  std::vector<TapeNode> nodes_;
  Tape* previous_ = nullptr;
};

bool grad_enabled();

// Elementwise binary ops with leading-batch / scalar broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, Tensor::scalar(c)); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor operator-(const Tensor& a, double c) { return sub(a, Tensor::scalar(c)); }

// matmul of rank-2 tensors with optional transposes: op(a) @ op(b).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// Batched matrix-vector product: A [B,m,n] x [B,n] -> [B,m].
Tensor bmatvec(const Tensor& a, const Tensor& x);

// Per-sample convex/linear mixture of K basis matrices:
// alpha [B,K], basis [K,m,n] -> [B,m,n].
Tensor mix_matrices(const Tensor& alpha, const Tensor& basis);

// Copy slice along `dim`: keeps all other extents.
Tensor slice(const Tensor& t, int dim, int start, int len);

// Concatenate along the last dimension (rank 1 or 2).
Tensor concat(const std::vector<Tensor>& parts);

Tensor sum_all(const Tensor& t);             // -> scalar [1]
Tensor sum_dim(const Tensor& t, int dim);     // rank-2 only
Tensor mean_all(const Tensor& t);

Tensor relu(const Tensor& t);
Tensor elu(const Tensor& t);
Tensor elu_plus_one(const Tensor& t);
Tensor tanh(const Tensor& t);
Tensor sin(const Tensor& t);
Tensor cos(const Tensor& t);
Tensor log(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor sqrt(const Tensor& t);
Tensor reciprocal(const Tensor& t);
Tensor softmax(const Tensor& t);  // over the last dim

// Value-level select; mask entries must be 0 or 1 and receive no gradient.
// Unlike blending, NaNs on the unselected side never leak into values or
// gradients.
Tensor where(const Tensor& mask, const Tensor& a, const Tensor& b);

// Identity on values, records no tape edge.
Tensor stop_gradient(const Tensor& t);

// Host-side comparisons producing non-grad 0/1 masks.
Tensor ge_mask(const Tensor& t, double threshold);
Tensor le_mask(const Tensor& t, double threshold);
Tensor mask_le(const Tensor& a, const Tensor& b);  // a[i] <= b[i], non-grad
Tensor sign_of(const Tensor& t);                   // -1/0/+1, non-grad

// Same data, new extents (sizes must agree).
Tensor reshape(const Tensor& t, const Shape& shape);

// max(t, floor) elementwise; gradient passes only where t > floor.
Tensor clamp_min(const Tensor& t, double floor);

bool all_finite(const Tensor& t);

// Fixed left-to-right pairwise tree reduction, so set updates sum in a
// deterministic order regardless of how the caller accumulated the list.
Tensor pairwise_sum(const std::vector<Tensor>& terms);

void backward(const Tensor& loss);

}  // namespace rssm::ad
