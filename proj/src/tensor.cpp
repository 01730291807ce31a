#include "itgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace itgan {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    ITGAN_CHECK(d > 0, ErrorKind::numeric, "shape extent must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); i++) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

namespace {

std::shared_ptr<TensorImpl> make_impl(Shape shape, Dtype dt) {
  auto impl = std::make_shared<TensorImpl>();
  impl->dtype = dt;
  impl->storage = std::make_shared<Storage>();
  int64_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  if (dt == Dtype::f32)
    impl->storage->f32.assign(static_cast<size_t>(n), 0.0f);
  else
    impl->storage->f64.assign(static_cast<size_t>(n), 0.0);
  return impl;
}

thread_local bool g_grad_enabled = true;

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_recording_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, Dtype dt) { return Tensor(make_impl(std::move(shape), dt)); }

Tensor Tensor::full(Shape shape, double value, Dtype dt) {
  Tensor t = zeros(std::move(shape), dt);
  if (dt == Dtype::f32)
    std::fill(t.impl()->storage->f32.begin(), t.impl()->storage->f32.end(), static_cast<float>(value));
  else
    std::fill(t.impl()->storage->f64.begin(), t.impl()->storage->f64.end(), value);
  return t;
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> data) {
  int64_t n = shape_numel(shape);
  ITGAN_CHECK(static_cast<size_t>(n) == data.size(), ErrorKind::numeric,
              "from_f32: data size does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->dtype = Dtype::f32;
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<Storage>();
  impl->storage->f32 = std::move(data);
  return Tensor(impl);
}

Tensor Tensor::from_f64(Shape shape, std::vector<double> data) {
  int64_t n = shape_numel(shape);
  ITGAN_CHECK(static_cast<size_t>(n) == data.size(), ErrorKind::numeric,
              "from_f64: data size does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->dtype = Dtype::f64;
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<Storage>();
  impl->storage->f64 = std::move(data);
  return Tensor(impl);
}

Tensor Tensor::randn(Shape shape, Rng& rng, Dtype dt, double stdev) {
  Tensor t = zeros(std::move(shape), dt);
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; i++) t.set(i, rng.normal() * stdev);
  return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi, Dtype dt) {
  Tensor t = zeros(std::move(shape), dt);
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; i++) t.set(i, rng.uniform(lo, hi));
  return t;
}

const Shape& Tensor::shape() const {
  ITGAN_ASSERT(impl_, "undefined tensor");
  return impl_->shape;
}

int64_t Tensor::numel() const { return shape_numel(shape()); }

int64_t Tensor::dim(size_t i) const {
  ITGAN_ASSERT(i < shape().size(), "dim index out of range");
  return shape()[i];
}

size_t Tensor::ndim() const { return shape().size(); }

Dtype Tensor::dtype() const {
  ITGAN_ASSERT(impl_, "undefined tensor");
  return impl_->dtype;
}

float* Tensor::f32() {
  ITGAN_ASSERT(impl_ && impl_->dtype == Dtype::f32, "tensor is not f32");
  return impl_->storage->f32.data();
}
const float* Tensor::f32() const {
  ITGAN_ASSERT(impl_ && impl_->dtype == Dtype::f32, "tensor is not f32");
  return impl_->storage->f32.data();
}
double* Tensor::f64() {
  ITGAN_ASSERT(impl_ && impl_->dtype == Dtype::f64, "tensor is not f64");
  return impl_->storage->f64.data();
}
const double* Tensor::f64() const {
  ITGAN_ASSERT(impl_ && impl_->dtype == Dtype::f64, "tensor is not f64");
  return impl_->storage->f64.data();
}

double Tensor::at(int64_t i) const {
  ITGAN_ASSERT(impl_ && i >= 0 && i < numel(), "at: index out of range");
  return impl_->dtype == Dtype::f32 ? static_cast<double>(impl_->storage->f32[static_cast<size_t>(i)])
                                    : impl_->storage->f64[static_cast<size_t>(i)];
}

void Tensor::set(int64_t i, double v) {
  ITGAN_ASSERT(impl_ && i >= 0 && i < numel(), "set: index out of range");
  if (impl_->dtype == Dtype::f32)
    impl_->storage->f32[static_cast<size_t>(i)] = static_cast<float>(v);
  else
    impl_->storage->f64[static_cast<size_t>(i)] = v;
}

Tensor& Tensor::set_requires_grad(bool b) {
  ITGAN_ASSERT(impl_, "undefined tensor");
  ITGAN_CHECK(!impl_->producer || !b, ErrorKind::internal,
              "requires_grad can only be set on leaf tensors");
  impl_->requires_grad = b;
  impl_->requires_path = b;
  return *this;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::requires_path() const { return impl_ && impl_->requires_path; }

Tensor Tensor::grad() const {
  ITGAN_ASSERT(impl_, "undefined tensor");
  if (!impl_->grad) return Tensor::zeros(impl_->shape, impl_->dtype);
  return Tensor(impl_->grad);
}

bool Tensor::has_grad() const { return impl_ && impl_->grad != nullptr; }

void Tensor::zero_grad() {
  if (impl_) impl_->grad.reset();
}

Tensor Tensor::detach() const {
  ITGAN_ASSERT(impl_, "undefined tensor");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->storage = impl_->storage;
  return Tensor(impl);
}

Tensor Tensor::clone() const {
  ITGAN_ASSERT(impl_, "undefined tensor");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->storage = std::make_shared<Storage>(*impl_->storage);
  return Tensor(impl);
}

Tensor Tensor::to(Dtype dt) const {
  if (dtype() == dt) return clone();
  Tensor out = Tensor::zeros(shape(), dt);
  int64_t n = numel();
  for (int64_t i = 0; i < n; i++) out.set(i, at(i));
  return out;
}

bool Tensor::all_finite() const {
  int64_t n = numel();
  if (dtype() == Dtype::f32) {
    const float* p = f32();
    for (int64_t i = 0; i < n; i++)
      if (!std::isfinite(p[i])) return false;
  } else {
    const double* p = f64();
    for (int64_t i = 0; i < n; i++)
      if (!std::isfinite(p[i])) return false;
  }
  return true;
}

double Tensor::max_abs_diff(const Tensor& a, const Tensor& b) {
  ITGAN_CHECK(a.shape() == b.shape(), ErrorKind::numeric, "max_abs_diff: shape mismatch");
  double m = 0.0;
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; i++) m = std::max(m, std::fabs(a.at(i) - b.at(i)));
  return m;
}

bool Tensor::bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  if (a.dtype() == Dtype::f32)
    return std::memcmp(a.f32(), b.f32(), sizeof(float) * static_cast<size_t>(a.numel())) == 0;
  return std::memcmp(a.f64(), b.f64(), sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

void Tensor::copy_data_from(const Tensor& src) {
  ITGAN_CHECK(shape() == src.shape() && dtype() == src.dtype(), ErrorKind::numeric,
              "copy_data_from: shape/dtype mismatch");
  if (dtype() == Dtype::f32)
    std::memcpy(f32(), src.f32(), sizeof(float) * static_cast<size_t>(numel()));
  else
    std::memcpy(f64(), src.f64(), sizeof(double) * static_cast<size_t>(numel()));
}

// ---------------------------------------------------------------------------
// Reverse-mode drivers. The graph hangs off TensorImpl::producer; nodes own
// their parents, so the graph lives exactly as long as someone holds the
// output. Cotangents are built with public ops, which makes them
// differentiable in turn when recording is on (double backward).
// ---------------------------------------------------------------------------

namespace {

void topo_collect(TensorImpl* root, std::vector<TensorImpl*>& order,
                  std::unordered_set<TensorImpl*>& seen) {
  // iterative post-order DFS
  struct Frame {
    TensorImpl* impl;
    size_t next_parent = 0;
  };
  if (seen.count(root)) return;
  std::vector<Frame> stack{{root}};
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    Node* node = f.impl->producer.get();
    size_t n_par = node ? node->parents.size() : 0;
    if (f.next_parent < n_par) {
      TensorImpl* p = node->parents[f.next_parent++].impl();
      if (p && !seen.count(p) && p->requires_path) {
        seen.insert(p);
        stack.push_back({p});
      }
    } else {
      order.push_back(f.impl);
      stack.pop_back();
    }
  }
}

// cotangent map keyed by impl pointer
using CotMap = std::unordered_map<TensorImpl*, Tensor>;

void accumulate(CotMap& m, TensorImpl* key, const Tensor& g) {
  auto it = m.find(key);
  if (it == m.end())
    m.emplace(key, g);
  else
    it->second = add(it->second, g);
}

CotMap run_reverse(const Tensor& loss, bool create_graph) {
  ITGAN_CHECK(loss.defined() && loss.numel() == 1, ErrorKind::numeric,
              "backward: loss must be a scalar tensor");
  ITGAN_CHECK(loss.impl()->producer != nullptr, ErrorKind::numeric,
              "backward: loss has no recorded graph (leaf or already freed)");
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  topo_collect(loss.impl(), order, seen);

  CotMap cot;
  cot.emplace(loss.impl(), Tensor::ones(loss.shape(), loss.dtype()));

  std::unique_ptr<NoGradGuard> guard;
  if (!create_graph) guard = std::make_unique<NoGradGuard>();

  // order is post-order (parents before children); walk it backwards
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    auto found = cot.find(impl);
    if (found == cot.end()) continue;
    Node* node = impl->producer.get();
    if (!node) continue;
    std::vector<Tensor> parent_grads = node->vjp(found->second);
    ITGAN_ASSERT(parent_grads.size() == node->parents.size(),
                 std::string("vjp arity mismatch in op ") + node->op);
    for (size_t i = 0; i < parent_grads.size(); i++) {
      TensorImpl* p = node->parents[i].impl();
      if (!p || !p->requires_path) continue;
      if (!parent_grads[i].defined()) continue;
      accumulate(cot, p, parent_grads[i]);
    }
  }
  return cot;
}

}  // namespace

std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt, bool create_graph) {
  CotMap cot = run_reverse(loss, create_graph);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    auto it = cot.find(w.impl());
    if (it == cot.end())
      out.push_back(Tensor::zeros(w.shape(), w.dtype()));
    else
      out.push_back(it->second);
  }
  return out;
}

void backward(const Tensor& loss) {
  CotMap cot = run_reverse(loss, /*create_graph=*/false);
  for (auto& [impl, g] : cot) {
    if (impl->producer || !impl->requires_grad) continue;
    if (!impl->grad) {
      impl->grad = g.clone().impl_ptr();
    } else {
      // accumulate into the existing buffer
      Tensor acc(impl->grad);
      int64_t n = acc.numel();
      if (acc.dtype() == Dtype::f32) {
        float* d = acc.f32();
        const float* s = g.f32();
        for (int64_t i = 0; i < n; i++) d[i] += s[i];
      } else {
        double* d = acc.f64();
        const double* s = g.f64();
        for (int64_t i = 0; i < n; i++) d[i] += s[i];
      }
    }
  }
}

}  // namespace itgan
