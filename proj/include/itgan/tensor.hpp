#ifndef ITGAN_TENSOR_HPP
#define ITGAN_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "itgan/base.hpp"

namespace itgan {

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;

struct Storage {
  std::vector<float> f32;
  std::vector<double> f64;
};

struct TensorImpl {
  Shape shape;
  Dtype dtype = Dtype::f32;
  std::shared_ptr<Storage> storage;
  bool requires_grad = false;  // leaf flag, set by the user
  bool requires_path = false;  // true if any ancestor leaf requires grad
  std::shared_ptr<Node> producer;
  std::shared_ptr<TensorImpl> grad;  // accumulated by backward(); leaf only
};

/// Dense n-d array, row-major, f32 by default with an f64 mode used by the
/// gradient-check suites. Value-semantics handle: copies share storage.
/// Ops never mutate inputs; optimizers mutate leaf storage in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dt = Dtype::f32);
  static Tensor full(Shape shape, double value, Dtype dt = Dtype::f32);
  static Tensor ones(Shape shape, Dtype dt = Dtype::f32) { return full(std::move(shape), 1.0, dt); }
  static Tensor scalar(double value, Dtype dt = Dtype::f32) { return full({}, value, dt); }
  static Tensor from_f32(Shape shape, std::vector<float> data);
  static Tensor from_f64(Shape shape, std::vector<double> data);
  static Tensor randn(Shape shape, Rng& rng, Dtype dt = Dtype::f32, double stdev = 1.0);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi, Dtype dt = Dtype::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int64_t dim(size_t i) const;
  size_t ndim() const;
  Dtype dtype() const;

  float* f32();
  const float* f32() const;
  double* f64();
  const double* f64() const;
  // dtype-generic element access (slow; tests and small setup code only)
  double at(int64_t i) const;
  void set(int64_t i, double v);

  Tensor& set_requires_grad(bool b);
  bool requires_grad() const;
  bool requires_path() const;
  Tensor grad() const;  // zeros-shaped copy if never populated
  bool has_grad() const;
  void zero_grad();

  /// Same storage, no graph edge, requires_grad off.
  Tensor detach() const;
  /// Deep copy of the data (no graph, keeps dtype). requires_grad off.
  Tensor clone() const;
  Tensor to(Dtype dt) const;

  bool all_finite() const;
  // max |a-b|; shapes must match
  static double max_abs_diff(const Tensor& a, const Tensor& b);
  static bool bitwise_equal(const Tensor& a, const Tensor& b);

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }
  // in-place raw update helpers for optimizers (no graph interaction)
  void copy_data_from(const Tensor& src);

  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// A recorded op: parents plus a vector-Jacobian product. The vjp is built
// from public ops so grads are themselves differentiable (double backward).
struct Node {
  const char* op = "";
  std::vector<Tensor> parents;
  std::function<std::vector<Tensor>(const Tensor& grad_out)> vjp;
};

/// Scoped "stop recording" switch (thread local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_recording_enabled();

// ---- autodiff drivers ----

/// dLoss/d(wrt) for a scalar loss, without touching .grad buffers.
/// With create_graph the returned tensors carry their own graph.
/// Entries for unreachable wrt tensors are zero tensors.
std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                         bool create_graph = false);

/// Accumulates dLoss/dLeaf into every reachable grad-flagged leaf.
void backward(const Tensor& loss);

// ---- elementwise primitives ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor softplus(const Tensor& a);  // log(1 + e^x), stable
Tensor clamp(const Tensor& a, double lo, double hi);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// ---- convolution family (NCHW; weight OIHW) ----
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
// adjoint of conv2d w.r.t. its input; in_h/in_w give the target size
Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, int stride, int pad,
                         int64_t in_h, int64_t in_w);
// adjoint of conv2d w.r.t. its weight
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, int stride, int pad,
                          int64_t kh, int64_t kw);
// weight layout [Cin][Cout][kh][kw], PyTorch semantics
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, int stride, int pad);

// ---- pooling / resampling ----
Tensor avgpool2x2(const Tensor& x);
Tensor avgpool2x2_adjoint(const Tensor& g, int64_t in_h, int64_t in_w);
Tensor upsample_nearest2x(const Tensor& x);
Tensor flip_h(const Tensor& x);
Tensor shift2d(const Tensor& x, int dx, int dy);  // zero padding
// grid: (N,H,W,2) sample coords in pixel units (row, col); zero outside
Tensor grid_sample(const Tensor& x, const Tensor& grid);
Tensor grid_sample_adjoint(const Tensor& g, const Tensor& grid, int64_t in_h, int64_t in_w);

// ---- reductions / broadcasts (adjoint pairs) ----
Tensor sum_all(const Tensor& x);   // -> scalar
Tensor mean_all(const Tensor& x);  // -> scalar
Tensor fill_like(const Tensor& s, const Shape& shape);  // scalar -> shape
Tensor sum_rows(const Tensor& x);                 // (N,D) -> (D)
Tensor broadcast_rows(const Tensor& v, int64_t n);  // (D) -> (N,D)
Tensor mean_rows(const Tensor& x);
Tensor sum_cols(const Tensor& x);                 // (N,C) -> (N)
Tensor broadcast_cols(const Tensor& v, int64_t c);  // (N) -> (N,C)
Tensor sum_hw(const Tensor& x);                   // (N,C,H,W) -> (N,C)
Tensor broadcast_hw(const Tensor& v, int64_t h, int64_t w);
Tensor sum_nhw(const Tensor& x);                  // (N,C,H,W) -> (C)
Tensor broadcast_chan(const Tensor& v, int64_t n, int64_t h, int64_t w);

// per-channel affine on NCHW
Tensor mul_chan(const Tensor& x, const Tensor& gamma);
Tensor add_chan(const Tensor& x, const Tensor& beta);
// per-feature bias on (N,D)
Tensor add_rowvec(const Tensor& x, const Tensor& b);

// ---- indexing / structure ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_cols(const Tensor& a, const Tensor& b);       // (N,Da)+(N,Db)
Tensor slice_cols(const Tensor& x, int64_t off, int64_t len);
Tensor concat_chan(const Tensor& a, const Tensor& b);       // NCHW channels
Tensor slice_chan(const Tensor& x, int64_t off, int64_t len);
Tensor embed_rows(const Tensor& table, const std::vector<int64_t>& idx);
Tensor row_max(const Tensor& x);  // (N,C) -> (N); detached constant
Tensor gather_labels(const Tensor& x, const std::vector<int64_t>& labels);

// ---- composites ----
Tensor squared_l2(const Tensor& x);  // sum of squares -> scalar
Tensor dot(const Tensor& a, const Tensor& b);
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     double eps = 1e-5);
Tensor batch_norm_lite(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
// frozen statistics variant; mu/var are (C) constants
Tensor batch_norm_frozen(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         const Tensor& mu, const Tensor& var, double eps = 1e-5);
// per-batch statistics of x over (N,H,W), detached; used to freeze BN
void batch_stats(const Tensor& x, Tensor* mu, Tensor* var);

// argmax over the last axis of (N,C)
std::vector<int64_t> argmax_rows(const Tensor& x);

}  // namespace itgan

#endif  // ITGAN_TENSOR_HPP
