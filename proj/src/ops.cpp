#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "itgan/tensor.hpp"

// Op primitives. Every vjp is expressed through the public ops so that
// cotangents are themselves recorded when grad mode is on; that is what
// makes the gradient-matching double-backward path work without any
// special casing. Ops that can turn finite inputs non-finite (exp, log,
// sqrt, reciprocal) validate their output; purely linear kernels cannot
// and skip the scan.

namespace itgan {

namespace {

Tensor raw(Shape shape, Dtype dt) { return Tensor::zeros(std::move(shape), dt); }

bool any_requires_path(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.defined() && t.requires_path()) return true;
  return false;
}

void attach(Tensor& out, const char* op, std::vector<Tensor> parents,
            std::function<std::vector<Tensor>(const Tensor&)> vjp) {
  if (!grad_recording_enabled()) return;
  if (!any_requires_path(parents)) return;
  auto node = std::make_shared<Node>();
  node->op = op;
  node->parents = std::move(parents);
  node->vjp = std::move(vjp);
  out.impl()->producer = node;
  out.impl()->requires_path = true;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  ITGAN_CHECK(a.shape() == b.shape(), ErrorKind::numeric,
              std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
  ITGAN_CHECK(a.dtype() == b.dtype(), ErrorKind::numeric,
              std::string(op) + ": dtype mismatch");
}

void check_finite(const Tensor& t, const char* op) {
  ITGAN_CHECK(t.all_finite(), ErrorKind::numeric,
              std::string(op) + ": non-finite output");
}

template <class K>
void dispatch(Dtype dt, K&& k) {
  if (dt == Dtype::f32)
    k(float{});
  else
    k(double{});
}

template <class T>
const T* ptr(const Tensor& t);
template <>
const float* ptr<float>(const Tensor& t) { return t.f32(); }
template <>
const double* ptr<double>(const Tensor& t) { return t.f64(); }

template <class T>
T* mut(Tensor& t);
template <>
float* mut<float>(Tensor& t) { return t.f32(); }
template <>
double* mut<double>(Tensor& t) { return t.f64(); }

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
          const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
          const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    const T* pb = ptr<T>(b);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] + pb[i];
  });
  attach(out, "add", {a, b}, [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    const T* pb = ptr<T>(b);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] - pb[i];
  });
  attach(out, "sub", {a, b},
         [](const Tensor& g) { return std::vector<Tensor>{g, neg(g)}; });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    const T* pb = ptr<T>(b);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] * pb[i];
  });
  attach(out, "mul", {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{mul(g, b), mul(g, a)};
  });
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    T tc = static_cast<T>(c);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] * tc;
  });
  attach(out, "scale", {a}, [c](const Tensor& g) { return std::vector<Tensor>{scale(g, c)}; });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    T tc = static_cast<T>(c);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] + tc;
  });
  attach(out, "add_scalar", {a}, [](const Tensor& g) { return std::vector<Tensor>{g}; });
  return out;
}

Tensor exp_(const Tensor& a) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = std::exp(pa[i]);
  });
  check_finite(out, "exp");
  // recomputes exp(a) in the vjp instead of capturing the output; capturing
  // would create an ownership cycle through the node
  attach(out, "exp", {a},
         [a](const Tensor& g) { return std::vector<Tensor>{mul(g, exp_(a))}; });
  return out;
}

Tensor log_(const Tensor& a) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = std::log(pa[i]);
  });
  check_finite(out, "log");
  attach(out, "log", {a},
         [a](const Tensor& g) { return std::vector<Tensor>{mul(g, reciprocal(a))}; });
  return out;
}

Tensor sqrt_(const Tensor& a) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = std::sqrt(pa[i]);
  });
  check_finite(out, "sqrt");
  attach(out, "sqrt", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{scale(mul(g, reciprocal(sqrt_(a))), 0.5)};
  });
  return out;
}

Tensor reciprocal(const Tensor& a) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = T(1) / pa[i];
  });
  check_finite(out, "reciprocal");
  attach(out, "reciprocal", {a}, [a](const Tensor& g) {
    Tensor r = reciprocal(a);
    return std::vector<Tensor>{neg(mul(g, mul(r, r)))};
  });
  return out;
}

Tensor tanh_(const Tensor& a) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = std::tanh(pa[i]);
  });
  attach(out, "tanh", {a}, [a](const Tensor& g) {
    Tensor t = tanh_(a);
    return std::vector<Tensor>{mul(g, sub(Tensor::ones(a.shape(), a.dtype()), mul(t, t)))};
  });
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) {
      T x = pa[i];
      po[i] = x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
    }
  });
  attach(out, "sigmoid", {a}, [a](const Tensor& g) {
    Tensor s = sigmoid(a);
    return std::vector<Tensor>{mul(g, mul(s, sub(Tensor::ones(a.shape(), a.dtype()), s)))};
  });
  return out;
}

namespace {
// piecewise-constant derivative masks are exact a.e.; treated as constants
Tensor relu_mask(const Tensor& a, double neg_slope) {
  NoGradGuard ng;
  Tensor m = Tensor::zeros(a.shape(), a.dtype());
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; i++) m.set(i, a.at(i) > 0 ? 1.0 : neg_slope);
  return m;
}
}  // namespace

Tensor relu(const Tensor& a) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] > 0 ? pa[i] : T(0);
  });
  attach(out, "relu", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{mul(g, relu_mask(a, 0.0))};
  });
  return out;
}

Tensor leaky_relu(const Tensor& a, double slope) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    T s = static_cast<T>(slope);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = pa[i] > 0 ? pa[i] : pa[i] * s;
  });
  attach(out, "leaky_relu", {a}, [a, slope](const Tensor& g) {
    return std::vector<Tensor>{mul(g, relu_mask(a, slope))};
  });
  return out;
}

Tensor softplus(const Tensor& a) {
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) {
      T x = pa[i];
      po[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::fabs(x)));
    }
  });
  attach(out, "softplus", {a},
         [a](const Tensor& g) { return std::vector<Tensor>{mul(g, sigmoid(a))}; });
  return out;
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  ITGAN_CHECK(lo <= hi, ErrorKind::numeric, "clamp: lo > hi");
  Tensor out = raw(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    T* po = mut<T>(out);
    T tl = static_cast<T>(lo), th = static_cast<T>(hi);
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) po[i] = std::min(std::max(pa[i], tl), th);
  });
  attach(out, "clamp", {a}, [a, lo, hi](const Tensor& g) {
    Tensor m;
    {
      NoGradGuard ng;
      m = Tensor::zeros(a.shape(), a.dtype());
      int64_t n = a.numel();
      for (int64_t i = 0; i < n; i++) {
        double v = a.at(i);
        m.set(i, (v > lo && v < hi) ? 1.0 : 0.0);
      }
    }
    return std::vector<Tensor>{mul(g, m)};
  });
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  ITGAN_CHECK(a.ndim() == 2 && b.ndim() == 2, ErrorKind::numeric, "matmul: 2-d operands required");
  ITGAN_CHECK(a.dtype() == b.dtype(), ErrorKind::numeric, "matmul: dtype mismatch");
  int64_t m = trans_a ? a.dim(1) : a.dim(0);
  int64_t k = trans_a ? a.dim(0) : a.dim(1);
  int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  int64_t n = trans_b ? b.dim(0) : b.dim(1);
  ITGAN_CHECK(k == kb, ErrorKind::numeric,
              "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                  shape_str(b.shape()));
  Tensor out = raw({m, n}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    gemm(trans_a, trans_b, m, n, k, ptr<T>(a), a.dim(1), ptr<T>(b), b.dim(1), T(0),
         mut<T>(out), n);
  });
  attach(out, "matmul", {a, b}, [a, b, trans_a, trans_b](const Tensor& g) {
    Tensor ga = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
    Tensor gb = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
    return std::vector<Tensor>{ga, gb};
  });
  return out;
}

// ---------------------------------------------------------------------------
// convolution family: per-image im2col + GEMM. The three ops close under
// differentiation, which gives exact double backward for free.
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int64_t n, ci, h, w, co, kh, kw, oh, ow;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  ITGAN_CHECK(x.ndim() == 4 && w.ndim() == 4, ErrorKind::numeric, "conv2d: NCHW/OIHW required");
  ITGAN_CHECK(x.dim(1) == w.dim(1), ErrorKind::numeric,
              "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  ITGAN_CHECK(stride >= 1 && pad >= 0, ErrorKind::numeric, "conv2d: bad stride/pad");
  ConvDims d;
  d.n = x.dim(0);
  d.ci = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.co = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  ITGAN_CHECK(d.oh >= 1 && d.ow >= 1, ErrorKind::numeric, "conv2d: kernel larger than input");
  return d;
}

template <class T>
void im2col(const T* img, const ConvDims& d, T* col) {
  // col is (ci*kh*kw) x (oh*ow)
  int64_t ohw = d.oh * d.ow;
  for (int64_t ci = 0; ci < d.ci; ci++) {
    for (int64_t r = 0; r < d.kh; r++) {
      for (int64_t c = 0; c < d.kw; c++) {
        T* dst = col + ((ci * d.kh + r) * d.kw + c) * ohw;
        for (int64_t oy = 0; oy < d.oh; oy++) {
          int64_t iy = oy * d.stride - d.pad + r;
          if (iy < 0 || iy >= d.h) {
            for (int64_t ox = 0; ox < d.ow; ox++) dst[oy * d.ow + ox] = T(0);
            continue;
          }
          for (int64_t ox = 0; ox < d.ow; ox++) {
            int64_t ix = ox * d.stride - d.pad + c;
            dst[oy * d.ow + ox] =
                (ix >= 0 && ix < d.w) ? img[(ci * d.h + iy) * d.w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvDims& d, T* img) {
  int64_t ohw = d.oh * d.ow;
  for (int64_t ci = 0; ci < d.ci; ci++) {
    for (int64_t r = 0; r < d.kh; r++) {
      for (int64_t c = 0; c < d.kw; c++) {
        const T* src = col + ((ci * d.kh + r) * d.kw + c) * ohw;
        for (int64_t oy = 0; oy < d.oh; oy++) {
          int64_t iy = oy * d.stride - d.pad + r;
          if (iy < 0 || iy >= d.h) continue;
          for (int64_t ox = 0; ox < d.ow; ox++) {
            int64_t ix = ox * d.stride - d.pad + c;
            if (ix >= 0 && ix < d.w) img[(ci * d.h + iy) * d.w + ix] += src[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  ConvDims d = conv_dims(x, w, stride, pad);
  Tensor out = raw({d.n, d.co, d.oh, d.ow}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    int64_t kdim = d.ci * d.kh * d.kw;
    int64_t ohw = d.oh * d.ow;
    std::vector<T> col(static_cast<size_t>(kdim * ohw));
    const T* px = ptr<T>(x);
    const T* pw = ptr<T>(w);
    T* po = mut<T>(out);
    for (int64_t n = 0; n < d.n; n++) {
      im2col(px + n * d.ci * d.h * d.w, d, col.data());
      gemm(false, false, d.co, ohw, kdim, pw, kdim, col.data(), ohw, T(0),
           po + n * d.co * ohw, ohw);
    }
  });
  attach(out, "conv2d", {x, w}, [x, w, stride, pad](const Tensor& g) {
    Tensor gx = conv2d_input_grad(g, w, stride, pad, x.dim(2), x.dim(3));
    Tensor gw = conv2d_weight_grad(x, g, stride, pad, w.dim(2), w.dim(3));
    return std::vector<Tensor>{gx, gw};
  });
  return out;
}

Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, int stride, int pad, int64_t in_h,
                         int64_t in_w) {
  ITGAN_CHECK(gy.ndim() == 4 && w.ndim() == 4, ErrorKind::numeric,
              "conv2d_input_grad: NCHW/OIHW required");
  ITGAN_CHECK(gy.dim(1) == w.dim(0), ErrorKind::numeric,
              "conv2d_input_grad: channel mismatch");
  ConvDims d;
  d.n = gy.dim(0);
  d.co = w.dim(0);
  d.ci = w.dim(1);
  d.h = in_h;
  d.w = in_w;
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.oh = gy.dim(2);
  d.ow = gy.dim(3);
  ITGAN_CHECK(d.oh == (in_h + 2 * pad - d.kh) / stride + 1 &&
                  d.ow == (in_w + 2 * pad - d.kw) / stride + 1,
              ErrorKind::numeric, "conv2d_input_grad: size mismatch");
  Tensor out = raw({d.n, d.ci, in_h, in_w}, gy.dtype());
  dispatch(gy.dtype(), [&](auto tag) {
    using T = decltype(tag);
    int64_t kdim = d.ci * d.kh * d.kw;
    int64_t ohw = d.oh * d.ow;
    std::vector<T> col(static_cast<size_t>(kdim * ohw));
    const T* pg = ptr<T>(gy);
    const T* pw = ptr<T>(w);
    T* po = mut<T>(out);
    for (int64_t n = 0; n < d.n; n++) {
      // col = W^T (kdim x co) * gy_img (co x ohw)
      gemm(true, false, kdim, ohw, d.co, pw, kdim, pg + n * d.co * ohw, ohw, T(0),
           col.data(), ohw);
      col2im_add(col.data(), d, po + n * d.ci * in_h * in_w);
    }
  });
  attach(out, "conv2d_input_grad", {gy, w},
         [gy, w, stride, pad](const Tensor& g) {
           Tensor ggy = conv2d(g, w, stride, pad);
           Tensor gw = conv2d_weight_grad(g, gy, stride, pad, w.dim(2), w.dim(3));
           return std::vector<Tensor>{ggy, gw};
         });
  return out;
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, int stride, int pad, int64_t kh,
                          int64_t kw) {
  ITGAN_CHECK(x.ndim() == 4 && gy.ndim() == 4, ErrorKind::numeric,
              "conv2d_weight_grad: NCHW required");
  ITGAN_CHECK(x.dim(0) == gy.dim(0), ErrorKind::numeric, "conv2d_weight_grad: batch mismatch");
  ConvDims d;
  d.n = x.dim(0);
  d.ci = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.co = gy.dim(1);
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad = pad;
  d.oh = gy.dim(2);
  d.ow = gy.dim(3);
  ITGAN_CHECK(d.oh == (d.h + 2 * pad - kh) / stride + 1 &&
                  d.ow == (d.w + 2 * pad - kw) / stride + 1,
              ErrorKind::numeric, "conv2d_weight_grad: size mismatch");
  Tensor out = raw({d.co, d.ci, kh, kw}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    int64_t kdim = d.ci * d.kh * d.kw;
    int64_t ohw = d.oh * d.ow;
    std::vector<T> col(static_cast<size_t>(kdim * ohw));
    const T* px = ptr<T>(x);
    const T* pg = ptr<T>(gy);
    T* po = mut<T>(out);
    for (int64_t n = 0; n < d.n; n++) {   // fixed order, deterministic
      im2col(px + n * d.ci * d.h * d.w, d, col.data());
      // gw (co x kdim) += gy_img (co x ohw) * col^T (ohw x kdim)
      gemm(false, true, d.co, kdim, ohw, pg + n * d.co * ohw, ohw, col.data(), ohw, T(1),
           po, kdim);
    }
  });
  attach(out, "conv2d_weight_grad", {x, gy},
         [x, gy, stride, pad, kh, kw](const Tensor& g) {
           Tensor gx = conv2d_input_grad(gy, g, stride, pad, x.dim(2), x.dim(3));
           Tensor ggy = conv2d(x, g, stride, pad);
           return std::vector<Tensor>{gx, ggy};
         });
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  // w layout [Cin][Cout][kh][kw]; this is exactly the adjoint of a forward
  // conv with that weight, so reuse the input-grad op
  ITGAN_CHECK(x.ndim() == 4 && w.ndim() == 4, ErrorKind::numeric,
              "conv_transpose2d: NCHW required");
  ITGAN_CHECK(x.dim(1) == w.dim(0), ErrorKind::numeric, "conv_transpose2d: channel mismatch");
  int64_t oh = (x.dim(2) - 1) * stride - 2 * pad + w.dim(2);
  int64_t ow = (x.dim(3) - 1) * stride - 2 * pad + w.dim(3);
  ITGAN_CHECK(oh >= 1 && ow >= 1, ErrorKind::numeric, "conv_transpose2d: degenerate output");
  return conv2d_input_grad(x, w, stride, pad, oh, ow);
}

// ---------------------------------------------------------------------------
// pooling / resampling
// ---------------------------------------------------------------------------

Tensor avgpool2x2(const Tensor& x) {
  ITGAN_CHECK(x.ndim() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, ErrorKind::numeric,
              "avgpool2x2: even NCHW input required, got " + shape_str(x.shape()));
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = raw({n, c, h / 2, w / 2}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    int64_t oh = h / 2, ow = w / 2;
    for (int64_t nc = 0; nc < n * c; nc++) {
      const T* im = px + nc * h * w;
      T* om = po + nc * oh * ow;
      for (int64_t y = 0; y < oh; y++)
        for (int64_t xx = 0; xx < ow; xx++) {
          T s = im[(2 * y) * w + 2 * xx] + im[(2 * y) * w + 2 * xx + 1] +
                im[(2 * y + 1) * w + 2 * xx] + im[(2 * y + 1) * w + 2 * xx + 1];
          om[y * ow + xx] = s * T(0.25);
        }
    }
  });
  attach(out, "avgpool2x2", {x}, [h = x.dim(2), w = x.dim(3)](const Tensor& g) {
    return std::vector<Tensor>{avgpool2x2_adjoint(g, h, w)};
  });
  return out;
}

Tensor avgpool2x2_adjoint(const Tensor& g, int64_t in_h, int64_t in_w) {
  ITGAN_CHECK(g.ndim() == 4 && g.dim(2) * 2 == in_h && g.dim(3) * 2 == in_w, ErrorKind::numeric,
              "avgpool2x2_adjoint: size mismatch");
  int64_t n = g.dim(0), c = g.dim(1), oh = g.dim(2), ow = g.dim(3);
  Tensor out = raw({n, c, in_h, in_w}, g.dtype());
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pg = ptr<T>(g);
    T* po = mut<T>(out);
    for (int64_t nc = 0; nc < n * c; nc++) {
      const T* gm = pg + nc * oh * ow;
      T* om = po + nc * in_h * in_w;
      for (int64_t y = 0; y < oh; y++)
        for (int64_t xx = 0; xx < ow; xx++) {
          T v = gm[y * ow + xx] * T(0.25);
          om[(2 * y) * in_w + 2 * xx] = v;
          om[(2 * y) * in_w + 2 * xx + 1] = v;
          om[(2 * y + 1) * in_w + 2 * xx] = v;
          om[(2 * y + 1) * in_w + 2 * xx + 1] = v;
        }
    }
  });
  attach(out, "avgpool2x2_adjoint", {g},
         [](const Tensor& gg) { return std::vector<Tensor>{avgpool2x2(gg)}; });
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  ITGAN_CHECK(x.ndim() == 4, ErrorKind::numeric, "upsample_nearest2x: NCHW required");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = raw({n, c, 2 * h, 2 * w}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t nc = 0; nc < n * c; nc++) {
      const T* im = px + nc * h * w;
      T* om = po + nc * 4 * h * w;
      for (int64_t y = 0; y < h; y++)
        for (int64_t xx = 0; xx < w; xx++) {
          T v = im[y * w + xx];
          om[(2 * y) * 2 * w + 2 * xx] = v;
          om[(2 * y) * 2 * w + 2 * xx + 1] = v;
          om[(2 * y + 1) * 2 * w + 2 * xx] = v;
          om[(2 * y + 1) * 2 * w + 2 * xx + 1] = v;
        }
    }
  });
  attach(out, "upsample_nearest2x", {x}, [](const Tensor& g) {
    // adjoint of replication is the 2x2 block sum
    return std::vector<Tensor>{scale(avgpool2x2(g), 4.0)};
  });
  return out;
}

Tensor flip_h(const Tensor& x) {
  ITGAN_CHECK(x.ndim() == 4, ErrorKind::numeric, "flip_h: NCHW required");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = raw(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t nc = 0; nc < n * c; nc++)
      for (int64_t y = 0; y < h; y++)
        for (int64_t xx = 0; xx < w; xx++)
          po[(nc * h + y) * w + xx] = px[(nc * h + y) * w + (w - 1 - xx)];
  });
  attach(out, "flip_h", {x},
         [](const Tensor& g) { return std::vector<Tensor>{flip_h(g)}; });
  return out;
}

Tensor shift2d(const Tensor& x, int dx, int dy) {
  ITGAN_CHECK(x.ndim() == 4, ErrorKind::numeric, "shift2d: NCHW required");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = raw(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t nc = 0; nc < n * c; nc++)
      for (int64_t y = 0; y < h; y++)
        for (int64_t xx = 0; xx < w; xx++) {
          int64_t sy = y - dy, sx = xx - dx;
          po[(nc * h + y) * w + xx] = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                          ? px[(nc * h + sy) * w + sx]
                                          : T(0);
        }
  });
  attach(out, "shift2d", {x}, [dx, dy](const Tensor& g) {
    return std::vector<Tensor>{shift2d(g, -dx, -dy)};
  });
  return out;
}

// ---------------------------------------------------------------------------
// bilinear grid sampling, zero padding outside the image. Grid coords are in
// pixel units (row, col). Gradients w.r.t. the image are exact adjoints and
// themselves differentiable; grid gradients are first-order only.
// ---------------------------------------------------------------------------

namespace {

template <class T>
inline T tap(const T* im, int64_t h, int64_t w, int64_t y, int64_t x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? im[y * w + x] : T(0);
}

}  // namespace

Tensor grid_sample(const Tensor& x, const Tensor& grid) {
  ITGAN_CHECK(x.ndim() == 4 && grid.ndim() == 4 && grid.dim(3) == 2, ErrorKind::numeric,
              "grid_sample: x NCHW, grid (N,H,W,2) required");
  ITGAN_CHECK(x.dim(0) == grid.dim(0), ErrorKind::numeric, "grid_sample: batch mismatch");
  ITGAN_CHECK(x.dtype() == grid.dtype(), ErrorKind::numeric, "grid_sample: dtype mismatch");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t gh = grid.dim(1), gw = grid.dim(2);
  Tensor out = raw({n, c, gh, gw}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    const T* pg = ptr<T>(grid);
    T* po = mut<T>(out);
    for (int64_t b = 0; b < n; b++) {
      for (int64_t oy = 0; oy < gh; oy++)
        for (int64_t ox = 0; ox < gw; ox++) {
          T py = pg[((b * gh + oy) * gw + ox) * 2 + 0];
          T pxc = pg[((b * gh + oy) * gw + ox) * 2 + 1];
          int64_t y0 = static_cast<int64_t>(std::floor(py));
          int64_t x0 = static_cast<int64_t>(std::floor(pxc));
          T wy = py - static_cast<T>(y0);
          T wx = pxc - static_cast<T>(x0);
          for (int64_t ch = 0; ch < c; ch++) {
            const T* im = px + (b * c + ch) * h * w;
            T v = (T(1) - wy) * (T(1) - wx) * tap(im, h, w, y0, x0) +
                  (T(1) - wy) * wx * tap(im, h, w, y0, x0 + 1) +
                  wy * (T(1) - wx) * tap(im, h, w, y0 + 1, x0) +
                  wy * wx * tap(im, h, w, y0 + 1, x0 + 1);
            po[((b * c + ch) * gh + oy) * gw + ox] = v;
          }
        }
    }
  });
  attach(out, "grid_sample", {x, grid}, [x, grid](const Tensor& g) {
    Tensor gx = grid_sample_adjoint(g, grid, x.dim(2), x.dim(3));
    Tensor ggrid;  // first-order only
    if (grid.requires_path()) {
      NoGradGuard ng;
      ggrid = Tensor::zeros(grid.shape(), grid.dtype());
      int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
      int64_t gh = grid.dim(1), gw = grid.dim(2);
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = ptr<T>(x);
        const T* pg = ptr<T>(grid);
        const T* pgo = ptr<T>(g);
        T* pgg = mut<T>(ggrid);
        for (int64_t b = 0; b < n; b++)
          for (int64_t oy = 0; oy < gh; oy++)
            for (int64_t ox = 0; ox < gw; ox++) {
              T py = pg[((b * gh + oy) * gw + ox) * 2 + 0];
              T pxc = pg[((b * gh + oy) * gw + ox) * 2 + 1];
              int64_t y0 = static_cast<int64_t>(std::floor(py));
              int64_t x0 = static_cast<int64_t>(std::floor(pxc));
              T wy = py - static_cast<T>(y0);
              T wx = pxc - static_cast<T>(x0);
              T sy = T(0), sx = T(0);
              for (int64_t ch = 0; ch < c; ch++) {
                const T* im = px + (b * c + ch) * h * w;
                T v00 = tap(im, h, w, y0, x0), v01 = tap(im, h, w, y0, x0 + 1);
                T v10 = tap(im, h, w, y0 + 1, x0), v11 = tap(im, h, w, y0 + 1, x0 + 1);
                T go = pgo[((b * c + ch) * gh + oy) * gw + ox];
                sy += go * ((T(1) - wx) * (v10 - v00) + wx * (v11 - v01));
                sx += go * ((T(1) - wy) * (v01 - v00) + wy * (v11 - v10));
              }
              pgg[((b * gh + oy) * gw + ox) * 2 + 0] = sy;
              pgg[((b * gh + oy) * gw + ox) * 2 + 1] = sx;
            }
      });
    }
    return std::vector<Tensor>{gx, ggrid};
  });
  return out;
}

Tensor grid_sample_adjoint(const Tensor& g, const Tensor& grid, int64_t in_h, int64_t in_w) {
  ITGAN_CHECK(g.ndim() == 4 && grid.ndim() == 4 && grid.dim(3) == 2, ErrorKind::numeric,
              "grid_sample_adjoint: bad shapes");
  int64_t n = g.dim(0), c = g.dim(1), gh = g.dim(2), gw = g.dim(3);
  ITGAN_CHECK(grid.dim(0) == n && grid.dim(1) == gh && grid.dim(2) == gw, ErrorKind::numeric,
              "grid_sample_adjoint: grid mismatch");
  Tensor out = raw({n, c, in_h, in_w}, g.dtype());
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pg = ptr<T>(g);
    const T* pgr = ptr<T>(grid);
    T* po = mut<T>(out);
    for (int64_t b = 0; b < n; b++)
      for (int64_t oy = 0; oy < gh; oy++)
        for (int64_t ox = 0; ox < gw; ox++) {
          T py = pgr[((b * gh + oy) * gw + ox) * 2 + 0];
          T pxc = pgr[((b * gh + oy) * gw + ox) * 2 + 1];
          int64_t y0 = static_cast<int64_t>(std::floor(py));
          int64_t x0 = static_cast<int64_t>(std::floor(pxc));
          T wy = py - static_cast<T>(y0);
          T wx = pxc - static_cast<T>(x0);
          const T wts[4] = {(T(1) - wy) * (T(1) - wx), (T(1) - wy) * wx, wy * (T(1) - wx),
                            wy * wx};
          const int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
          const int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
          for (int64_t ch = 0; ch < c; ch++) {
            T* im = po + (b * c + ch) * in_h * in_w;
            T gv = pg[((b * c + ch) * gh + oy) * gw + ox];
            for (int t = 0; t < 4; t++) {
              if (ys[t] >= 0 && ys[t] < in_h && xs[t] >= 0 && xs[t] < in_w)
                im[ys[t] * in_w + xs[t]] += wts[t] * gv;
            }
          }
        }
  });
  attach(out, "grid_sample_adjoint", {g, grid}, [grid](const Tensor& gg) {
    ITGAN_ASSERT(!grid.requires_path(),
                 "grid_sample_adjoint: second-order grid gradients unsupported");
    return std::vector<Tensor>{grid_sample(gg, grid), Tensor()};
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions and their broadcast adjoints
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  Tensor out = raw({}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T acc = T(0);
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; i++) acc += px[i];  // fixed left-to-right order
    mut<T>(out)[0] = acc;
  });
  attach(out, "sum_all", {x}, [shape = x.shape()](const Tensor& g) {
    return std::vector<Tensor>{fill_like(g, shape)};
  });
  return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor fill_like(const Tensor& s, const Shape& shape) {
  ITGAN_CHECK(s.numel() == 1, ErrorKind::numeric, "fill_like: scalar required");
  Tensor out = raw(shape, s.dtype());
  dispatch(s.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T v = ptr<T>(s)[0];
    T* po = mut<T>(out);
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; i++) po[i] = v;
  });
  attach(out, "fill_like", {s},
         [](const Tensor& g) { return std::vector<Tensor>{sum_all(g)}; });
  return out;
}

Tensor sum_rows(const Tensor& x) {
  ITGAN_CHECK(x.ndim() == 2, ErrorKind::numeric, "sum_rows: 2-d input required");
  int64_t n = x.dim(0), dcol = x.dim(1);
  Tensor out = raw({dcol}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++)
      for (int64_t j = 0; j < dcol; j++) po[j] += px[i * dcol + j];
  });
  attach(out, "sum_rows", {x}, [n](const Tensor& g) {
    return std::vector<Tensor>{broadcast_rows(g, n)};
  });
  return out;
}

Tensor broadcast_rows(const Tensor& v, int64_t n) {
  ITGAN_CHECK(v.ndim() == 1, ErrorKind::numeric, "broadcast_rows: 1-d input required");
  int64_t dcol = v.dim(0);
  Tensor out = raw({n, dcol}, v.dtype());
  dispatch(v.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pv = ptr<T>(v);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++) std::memcpy(po + i * dcol, pv, sizeof(T) * static_cast<size_t>(dcol));
  });
  attach(out, "broadcast_rows", {v},
         [](const Tensor& g) { return std::vector<Tensor>{sum_rows(g)}; });
  return out;
}

Tensor mean_rows(const Tensor& x) {
  return scale(sum_rows(x), 1.0 / static_cast<double>(x.dim(0)));
}

Tensor sum_cols(const Tensor& x) {
  ITGAN_CHECK(x.ndim() == 2, ErrorKind::numeric, "sum_cols: 2-d input required");
  int64_t n = x.dim(0), c = x.dim(1);
  Tensor out = raw({n}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++) {
      T acc = T(0);
      for (int64_t j = 0; j < c; j++) acc += px[i * c + j];
      po[i] = acc;
    }
  });
  attach(out, "sum_cols", {x}, [c](const Tensor& g) {
    return std::vector<Tensor>{broadcast_cols(g, c)};
  });
  return out;
}

Tensor broadcast_cols(const Tensor& v, int64_t c) {
  ITGAN_CHECK(v.ndim() == 1, ErrorKind::numeric, "broadcast_cols: 1-d input required");
  int64_t n = v.dim(0);
  Tensor out = raw({n, c}, v.dtype());
  dispatch(v.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pv = ptr<T>(v);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++)
      for (int64_t j = 0; j < c; j++) po[i * c + j] = pv[i];
  });
  attach(out, "broadcast_cols", {v},
         [](const Tensor& g) { return std::vector<Tensor>{sum_cols(g)}; });
  return out;
}

Tensor sum_hw(const Tensor& x) {
  ITGAN_CHECK(x.ndim() == 4, ErrorKind::numeric, "sum_hw: NCHW required");
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = raw({n, c}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t nc = 0; nc < n * c; nc++) {
      T acc = T(0);
      for (int64_t i = 0; i < hw; i++) acc += px[nc * hw + i];
      po[nc] = acc;
    }
  });
  attach(out, "sum_hw", {x}, [h = x.dim(2), w = x.dim(3)](const Tensor& g) {
    return std::vector<Tensor>{broadcast_hw(g, h, w)};
  });
  return out;
}

Tensor broadcast_hw(const Tensor& v, int64_t h, int64_t w) {
  ITGAN_CHECK(v.ndim() == 2, ErrorKind::numeric, "broadcast_hw: 2-d input required");
  int64_t n = v.dim(0), c = v.dim(1);
  Tensor out = raw({n, c, h, w}, v.dtype());
  dispatch(v.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pv = ptr<T>(v);
    T* po = mut<T>(out);
    int64_t hw = h * w;
    for (int64_t nc = 0; nc < n * c; nc++)
      for (int64_t i = 0; i < hw; i++) po[nc * hw + i] = pv[nc];
  });
  attach(out, "broadcast_hw", {v},
         [](const Tensor& g) { return std::vector<Tensor>{sum_hw(g)}; });
  return out;
}

Tensor sum_nhw(const Tensor& x) {
  ITGAN_CHECK(x.ndim() == 4, ErrorKind::numeric, "sum_nhw: NCHW required");
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = raw({c}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t b = 0; b < n; b++)
      for (int64_t ch = 0; ch < c; ch++) {
        T acc = T(0);
        const T* base = px + (b * c + ch) * hw;
        for (int64_t i = 0; i < hw; i++) acc += base[i];
        po[ch] += acc;
      }
  });
  attach(out, "sum_nhw", {x}, [n = x.dim(0), h = x.dim(2), w = x.dim(3)](const Tensor& g) {
    return std::vector<Tensor>{broadcast_chan(g, n, h, w)};
  });
  return out;
}

Tensor broadcast_chan(const Tensor& v, int64_t n, int64_t h, int64_t w) {
  ITGAN_CHECK(v.ndim() == 1, ErrorKind::numeric, "broadcast_chan: 1-d input required");
  int64_t c = v.dim(0);
  Tensor out = raw({n, c, h, w}, v.dtype());
  dispatch(v.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pv = ptr<T>(v);
    T* po = mut<T>(out);
    int64_t hw = h * w;
    for (int64_t b = 0; b < n; b++)
      for (int64_t ch = 0; ch < c; ch++) {
        T val = pv[ch];
        T* base = po + (b * c + ch) * hw;
        for (int64_t i = 0; i < hw; i++) base[i] = val;
      }
  });
  attach(out, "broadcast_chan", {v},
         [](const Tensor& g) { return std::vector<Tensor>{sum_nhw(g)}; });
  return out;
}

Tensor mul_chan(const Tensor& x, const Tensor& gamma) {
  ITGAN_CHECK(x.ndim() == 4 && gamma.ndim() == 1 && gamma.dim(0) == x.dim(1), ErrorKind::numeric,
              "mul_chan: shape mismatch");
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = raw(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    const T* pgm = ptr<T>(gamma);
    T* po = mut<T>(out);
    for (int64_t b = 0; b < n; b++)
      for (int64_t ch = 0; ch < c; ch++) {
        T gv = pgm[ch];
        const T* xi = px + (b * c + ch) * hw;
        T* oi = po + (b * c + ch) * hw;
        for (int64_t i = 0; i < hw; i++) oi[i] = xi[i] * gv;
      }
  });
  attach(out, "mul_chan", {x, gamma}, [x, gamma](const Tensor& g) {
    return std::vector<Tensor>{mul_chan(g, gamma), sum_nhw(mul(g, x))};
  });
  return out;
}

Tensor add_chan(const Tensor& x, const Tensor& beta) {
  ITGAN_CHECK(x.ndim() == 4 && beta.ndim() == 1 && beta.dim(0) == x.dim(1), ErrorKind::numeric,
              "add_chan: shape mismatch");
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = raw(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    const T* pb = ptr<T>(beta);
    T* po = mut<T>(out);
    for (int64_t b = 0; b < n; b++)
      for (int64_t ch = 0; ch < c; ch++) {
        T bv = pb[ch];
        const T* xi = px + (b * c + ch) * hw;
        T* oi = po + (b * c + ch) * hw;
        for (int64_t i = 0; i < hw; i++) oi[i] = xi[i] + bv;
      }
  });
  attach(out, "add_chan", {x, beta}, [](const Tensor& g) {
    return std::vector<Tensor>{g, sum_nhw(g)};
  });
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  ITGAN_CHECK(x.ndim() == 2 && b.ndim() == 1 && b.dim(0) == x.dim(1), ErrorKind::numeric,
              "add_rowvec: shape mismatch");
  int64_t n = x.dim(0), d = x.dim(1);
  Tensor out = raw(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    const T* pb = ptr<T>(b);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++)
      for (int64_t j = 0; j < d; j++) po[i * d + j] = px[i * d + j] + pb[j];
  });
  attach(out, "add_rowvec", {x, b}, [](const Tensor& g) {
    return std::vector<Tensor>{g, sum_rows(g)};
  });
  return out;
}

// ---------------------------------------------------------------------------
// structure / indexing
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  ITGAN_CHECK(shape_numel(shape) == x.numel(), ErrorKind::numeric,
              "reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  // new impl sharing storage; graph edge to propagate gradients
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = x.dtype();
  impl->storage = x.impl()->storage;
  Tensor out(impl);
  attach(out, "reshape", {x}, [old_shape = x.shape()](const Tensor& g) {
    return std::vector<Tensor>{reshape(g, old_shape)};
  });
  return out;
}

namespace {

Tensor pad_cols(const Tensor& g, int64_t off, int64_t total);
Tensor pad_chan(const Tensor& g, int64_t off, int64_t total);

}  // namespace

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  ITGAN_CHECK(a.ndim() == 2 && b.ndim() == 2 && a.dim(0) == b.dim(0), ErrorKind::numeric,
              "concat_cols: row mismatch");
  ITGAN_CHECK(a.dtype() == b.dtype(), ErrorKind::numeric, "concat_cols: dtype mismatch");
  int64_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor out = raw({n, da + db}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    const T* pb = ptr<T>(b);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++) {
      std::memcpy(po + i * (da + db), pa + i * da, sizeof(T) * static_cast<size_t>(da));
      std::memcpy(po + i * (da + db) + da, pb + i * db, sizeof(T) * static_cast<size_t>(db));
    }
  });
  attach(out, "concat_cols", {a, b}, [da, db](const Tensor& g) {
    return std::vector<Tensor>{slice_cols(g, 0, da), slice_cols(g, da, db)};
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int64_t off, int64_t len) {
  ITGAN_CHECK(x.ndim() == 2 && off >= 0 && len >= 1 && off + len <= x.dim(1), ErrorKind::numeric,
              "slice_cols: bad range");
  int64_t n = x.dim(0), d = x.dim(1);
  Tensor out = raw({n, len}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++)
      std::memcpy(po + i * len, px + i * d + off, sizeof(T) * static_cast<size_t>(len));
  });
  attach(out, "slice_cols", {x}, [off, d](const Tensor& g) {
    return std::vector<Tensor>{pad_cols(g, off, d)};
  });
  return out;
}

Tensor concat_chan(const Tensor& a, const Tensor& b) {
  ITGAN_CHECK(a.ndim() == 4 && b.ndim() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
                  a.dim(3) == b.dim(3),
              ErrorKind::numeric, "concat_chan: shape mismatch");
  int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out = raw({n, ca + cb, a.dim(2), a.dim(3)}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = ptr<T>(a);
    const T* pb = ptr<T>(b);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++) {
      std::memcpy(po + i * (ca + cb) * hw, pa + i * ca * hw, sizeof(T) * static_cast<size_t>(ca * hw));
      std::memcpy(po + (i * (ca + cb) + ca) * hw, pb + i * cb * hw,
                  sizeof(T) * static_cast<size_t>(cb * hw));
    }
  });
  attach(out, "concat_chan", {a, b}, [ca, cb](const Tensor& g) {
    return std::vector<Tensor>{slice_chan(g, 0, ca), slice_chan(g, ca, cb)};
  });
  return out;
}

Tensor slice_chan(const Tensor& x, int64_t off, int64_t len) {
  ITGAN_CHECK(x.ndim() == 4 && off >= 0 && len >= 1 && off + len <= x.dim(1), ErrorKind::numeric,
              "slice_chan: bad range");
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = raw({n, len, x.dim(2), x.dim(3)}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++)
      std::memcpy(po + i * len * hw, px + (i * c + off) * hw,
                  sizeof(T) * static_cast<size_t>(len * hw));
  });
  attach(out, "slice_chan", {x}, [off, c](const Tensor& g) {
    return std::vector<Tensor>{pad_chan(g, off, c)};
  });
  return out;
}

namespace {

Tensor pad_cols(const Tensor& g, int64_t off, int64_t total) {
  int64_t n = g.dim(0), len = g.dim(1);
  Tensor out = raw({n, total}, g.dtype());
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pg = ptr<T>(g);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++)
      std::memcpy(po + i * total + off, pg + i * len, sizeof(T) * static_cast<size_t>(len));
  });
  attach(out, "pad_cols", {g}, [off, len](const Tensor& gg) {
    return std::vector<Tensor>{slice_cols(gg, off, len)};
  });
  return out;
}

Tensor pad_chan(const Tensor& g, int64_t off, int64_t total) {
  int64_t n = g.dim(0), len = g.dim(1), hw = g.dim(2) * g.dim(3);
  Tensor out = raw({n, total, g.dim(2), g.dim(3)}, g.dtype());
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pg = ptr<T>(g);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++)
      std::memcpy(po + (i * total + off) * hw, pg + i * len * hw,
                  sizeof(T) * static_cast<size_t>(len * hw));
  });
  attach(out, "pad_chan", {g}, [off, len](const Tensor& gg) {
    return std::vector<Tensor>{slice_chan(gg, off, len)};
  });
  return out;
}

Tensor scatter_rows(const Tensor& g, const std::vector<int64_t>& idx, int64_t rows);

}  // namespace

Tensor embed_rows(const Tensor& table, const std::vector<int64_t>& idx) {
  ITGAN_CHECK(table.ndim() == 2, ErrorKind::numeric, "embed_rows: 2-d table required");
  int64_t rows = table.dim(0), d = table.dim(1);
  for (int64_t i : idx)
    ITGAN_CHECK(i >= 0 && i < rows, ErrorKind::numeric, "embed_rows: index out of range");
  int64_t n = static_cast<int64_t>(idx.size());
  Tensor out = raw({n, d}, table.dtype());
  dispatch(table.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pt = ptr<T>(table);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++)
      std::memcpy(po + i * d, pt + idx[static_cast<size_t>(i)] * d,
                  sizeof(T) * static_cast<size_t>(d));
  });
  attach(out, "embed_rows", {table}, [idx, rows](const Tensor& g) {
    return std::vector<Tensor>{scatter_rows(g, idx, rows)};
  });
  return out;
}

namespace {

Tensor scatter_rows(const Tensor& g, const std::vector<int64_t>& idx, int64_t rows) {
  int64_t n = g.dim(0), d = g.dim(1);
  ITGAN_ASSERT(static_cast<size_t>(n) == idx.size(), "scatter_rows: index count mismatch");
  Tensor out = raw({rows, d}, g.dtype());
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pg = ptr<T>(g);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++) {
      T* dst = po + idx[static_cast<size_t>(i)] * d;
      const T* src = pg + i * d;
      for (int64_t j = 0; j < d; j++) dst[j] += src[j];
    }
  });
  attach(out, "scatter_rows", {g}, [idx](const Tensor& gg) {
    return std::vector<Tensor>{embed_rows(gg, idx)};
  });
  return out;
}

Tensor scatter_labels(const Tensor& g, const std::vector<int64_t>& labels, int64_t cols);

}  // namespace

Tensor row_max(const Tensor& x) {
  ITGAN_CHECK(x.ndim() == 2, ErrorKind::numeric, "row_max: 2-d input required");
  int64_t n = x.dim(0), c = x.dim(1);
  NoGradGuard ng;  // detached constant by contract
  Tensor out = raw({n}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++) {
      T m = px[i * c];
      for (int64_t j = 1; j < c; j++) m = std::max(m, px[i * c + j]);
      po[i] = m;
    }
  });
  return out;
}

Tensor gather_labels(const Tensor& x, const std::vector<int64_t>& labels) {
  ITGAN_CHECK(x.ndim() == 2, ErrorKind::numeric, "gather_labels: 2-d input required");
  int64_t n = x.dim(0), c = x.dim(1);
  ITGAN_CHECK(static_cast<size_t>(n) == labels.size(), ErrorKind::numeric,
              "gather_labels: label count mismatch");
  for (int64_t l : labels)
    ITGAN_CHECK(l >= 0 && l < c, ErrorKind::numeric, "gather_labels: label out of range");
  Tensor out = raw({n}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++) po[i] = px[i * c + labels[static_cast<size_t>(i)]];
  });
  attach(out, "gather_labels", {x}, [labels, c](const Tensor& g) {
    return std::vector<Tensor>{scatter_labels(g, labels, c)};
  });
  return out;
}

namespace {

Tensor scatter_labels(const Tensor& g, const std::vector<int64_t>& labels, int64_t cols) {
  int64_t n = g.dim(0);
  Tensor out = raw({n, cols}, g.dtype());
  dispatch(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pg = ptr<T>(g);
    T* po = mut<T>(out);
    for (int64_t i = 0; i < n; i++) po[i * cols + labels[static_cast<size_t>(i)]] += pg[i];
  });
  attach(out, "scatter_labels", {g}, [labels](const Tensor& gg) {
    return std::vector<Tensor>{gather_labels(gg, labels)};
  });
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

Tensor squared_l2(const Tensor& x) { return sum_all(mul(x, x)); }

Tensor dot(const Tensor& a, const Tensor& b) { return sum_all(mul(a, b)); }

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
  ITGAN_CHECK(logits.ndim() == 2, ErrorKind::numeric, "softmax_cross_entropy: 2-d logits");
  Tensor m = row_max(logits);  // detached; exact for the CE gradient
  Tensor z = sub(logits, broadcast_cols(m, logits.dim(1)));
  Tensor lse = log_(sum_cols(exp_(z)));
  Tensor picked = gather_labels(z, labels);
  return mean_all(sub(lse, picked));
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  ITGAN_CHECK(x.ndim() == 4, ErrorKind::numeric, "instance_norm: NCHW required");
  int64_t h = x.dim(2), w = x.dim(3);
  double inv_hw = 1.0 / static_cast<double>(h * w);
  Tensor mu = scale(sum_hw(x), inv_hw);
  Tensor xc = sub(x, broadcast_hw(mu, h, w));
  Tensor var = scale(sum_hw(mul(xc, xc)), inv_hw);
  Tensor inv_std = reciprocal(sqrt_(add_scalar(var, eps)));
  Tensor xn = mul(xc, broadcast_hw(inv_std, h, w));
  return add_chan(mul_chan(xn, gamma), beta);
}

Tensor batch_norm_lite(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  ITGAN_CHECK(x.ndim() == 4, ErrorKind::numeric, "batch_norm_lite: NCHW required");
  int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  double inv_nhw = 1.0 / static_cast<double>(n * h * w);
  Tensor mu = scale(sum_nhw(x), inv_nhw);
  Tensor xc = sub(x, broadcast_chan(mu, n, h, w));
  Tensor var = scale(sum_nhw(mul(xc, xc)), inv_nhw);
  Tensor inv_std = reciprocal(sqrt_(add_scalar(var, eps)));
  Tensor xn = mul(xc, broadcast_chan(inv_std, n, h, w));
  return add_chan(mul_chan(xn, gamma), beta);
}

Tensor batch_norm_frozen(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         const Tensor& mu, const Tensor& var, double eps) {
  ITGAN_CHECK(x.ndim() == 4, ErrorKind::numeric, "batch_norm_frozen: NCHW required");
  int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor inv_std;
  {
    NoGradGuard ng;
    inv_std = reciprocal(sqrt_(add_scalar(var.detach(), eps)));
  }
  Tensor xc = sub(x, broadcast_chan(mu.detach(), n, h, w));
  Tensor xn = mul(xc, broadcast_chan(inv_std, n, h, w));
  return add_chan(mul_chan(xn, gamma), beta);
}

void batch_stats(const Tensor& x, Tensor* mu, Tensor* var) {
  ITGAN_CHECK(x.ndim() == 4, ErrorKind::numeric, "batch_stats: NCHW required");
  NoGradGuard ng;
  int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  double inv_nhw = 1.0 / static_cast<double>(n * h * w);
  *mu = scale(sum_nhw(x), inv_nhw);
  Tensor xc = sub(x, broadcast_chan(*mu, n, h, w));
  *var = scale(sum_nhw(mul(xc, xc)), inv_nhw);
}

std::vector<int64_t> argmax_rows(const Tensor& x) {
  ITGAN_CHECK(x.ndim() == 2, ErrorKind::numeric, "argmax_rows: 2-d input required");
  int64_t n = x.dim(0), c = x.dim(1);
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; i++) {
    double best = x.at(i * c);
    int64_t arg = 0;
    for (int64_t j = 1; j < c; j++) {
      double v = x.at(i * c + j);
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    out[static_cast<size_t>(i)] = arg;
  }
  return out;
}

}  // namespace itgan
