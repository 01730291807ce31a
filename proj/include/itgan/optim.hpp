#ifndef ITGAN_OPTIM_HPP
#define ITGAN_OPTIM_HPP

#include <vector>

#include "itgan/tensor.hpp"

namespace itgan {

// Optimizers mutate parameter storage in place and keep their moment buffers
// per parameter. step() takes gradients positionally parallel to the
// parameter list (as produced by grad()).

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;  // added outside the square root
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});
  void step(const std::vector<Tensor>& grads);
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
};

/// Flip the leaf gradient flag on a whole parameter list (shared handles, so
/// this also affects the owning model's weight map).
inline void mark_trainable(const std::vector<Tensor>& params, bool on = true) {
  for (const Tensor& p : params) Tensor(p).set_requires_grad(on);
}

class Sgd {
 public:
  explicit Sgd(std::vector<Tensor> params, SgdConfig cfg = {});
  void step(const std::vector<Tensor>& grads);
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> buf_;  // momentum buffers, lazily engaged on first step
  SgdConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace itgan

#endif  // ITGAN_OPTIM_HPP
