#include "itgan/optim.hpp"

#include <cmath>

namespace itgan {

namespace {

void check_pair(const Tensor& p, const Tensor& g, const char* who) {
  ITGAN_CHECK(g.defined(), ErrorKind::numeric, std::string(who) + ": missing gradient");
  ITGAN_CHECK(p.shape() == g.shape() && p.dtype() == g.dtype(), ErrorKind::numeric,
              std::string(who) + ": parameter/gradient mismatch");
  ITGAN_CHECK(g.all_finite(), ErrorKind::numeric,
              std::string(who) + ": non-finite gradient");
}

template <class T>
void adam_kernel(T* p, T* m, T* v, const T* g, int64_t n, const AdamConfig& c, int64_t t) {
  T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  T c1 = static_cast<T>(1.0 - std::pow(c.beta1, static_cast<double>(t)));
  T c2 = static_cast<T>(1.0 - std::pow(c.beta2, static_cast<double>(t)));
  T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
  for (int64_t i = 0; i < n; i++) {
    m[i] = b1 * m[i] + (T(1) - b1) * g[i];
    v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
    T mhat = m[i] / c1;
    T vhat = v[i] / c2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <class T>
void sgd_kernel(T* p, T* buf, const T* g, int64_t n, const SgdConfig& c, bool first) {
  T mom = static_cast<T>(c.momentum), lr = static_cast<T>(c.lr);
  if (c.momentum == 0.0) {
    for (int64_t i = 0; i < n; i++) p[i] -= lr * g[i];
    return;
  }
  for (int64_t i = 0; i < n; i++) {
    buf[i] = first ? g[i] : mom * buf[i] + g[i];
    p[i] -= lr * buf[i];
  }
}

}  // namespace

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    ITGAN_CHECK(p.defined(), ErrorKind::internal, "Adam: undefined parameter");
    m_.push_back(Tensor::zeros(p.shape(), p.dtype()));
    v_.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
}

void Adam::step(const std::vector<Tensor>& grads) {
  ITGAN_CHECK(grads.size() == params_.size(), ErrorKind::numeric, "Adam: gradient count mismatch");
  t_++;
  for (size_t i = 0; i < params_.size(); i++) {
    check_pair(params_[i], grads[i], "Adam");
    int64_t n = params_[i].numel();
    if (params_[i].dtype() == Dtype::f32)
      adam_kernel(params_[i].f32(), m_[i].f32(), v_[i].f32(), grads[i].f32(), n, cfg_, t_);
    else
      adam_kernel(params_[i].f64(), m_[i].f64(), v_[i].f64(), grads[i].f64(), n, cfg_, t_);
  }
}

Sgd::Sgd(std::vector<Tensor> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  buf_.reserve(params_.size());
  for (const auto& p : params_) {
    ITGAN_CHECK(p.defined(), ErrorKind::internal, "Sgd: undefined parameter");
    buf_.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
}

void Sgd::step(const std::vector<Tensor>& grads) {
  ITGAN_CHECK(grads.size() == params_.size(), ErrorKind::numeric, "Sgd: gradient count mismatch");
  bool first = (t_ == 0);
  t_++;
  for (size_t i = 0; i < params_.size(); i++) {
    check_pair(params_[i], grads[i], "Sgd");
    int64_t n = params_[i].numel();
    if (params_[i].dtype() == Dtype::f32)
      sgd_kernel(params_[i].f32(), buf_[i].f32(), grads[i].f32(), n, cfg_, first);
    else
      sgd_kernel(params_[i].f64(), buf_[i].f64(), grads[i].f64(), n, cfg_, first);
  }
}

}  // namespace itgan
