#ifndef ITGAN_AUGMENT_HPP
#define ITGAN_AUGMENT_HPP

#include <string>
#include <vector>

#include "itgan/tensor.hpp"

namespace itgan {

// Differentiable Siamese augmentation: one strategy with one parameter draw,
// applied identically to the real batch and the synthetic batch of a class.

enum class AugKind : uint8_t { none, flip_h, crop_shift, scale, rotate, cutout, brightness };

const char* aug_kind_name(AugKind k);
AugKind aug_kind_from_name(const std::string& name);

struct AugmentParams {
  AugKind kind = AugKind::none;
  int dx = 0, dy = 0;          // crop-shift, pixels
  double factor = 1.0;         // scale
  double angle_deg = 0.0;      // rotate
  int64_t cut_cy = 0, cut_cx = 0, cut_side = 0;  // cutout box
  double delta = 0.0;          // brightness, [-1,1] pixel domain
};

struct AugmentConfig {
  std::vector<AugKind> ops = {AugKind::flip_h, AugKind::crop_shift, AugKind::scale,
                              AugKind::rotate, AugKind::cutout, AugKind::brightness};
  int shift_px = 2;
  double scale_lo = 0.8, scale_hi = 1.2;
  double rotate_deg = 15.0;
  int cutout_div = 4;  // box side = image side / cutout_div
  double brightness = 0.3;
};

AugmentConfig augment_config_from_names(const std::vector<std::string>& names);

/// Uniform op-kind over cfg.ops, parameters uniform in range.
AugmentParams sample_omega(Rng& rng, const AugmentConfig& cfg, int64_t h, int64_t w);

/// Pure; same transform for every image in the batch; differentiable in the
/// pixel values. Brightness is applied unclamped to preserve gradients.
Tensor augment_apply(const Tensor& images, const AugmentParams& omega);

std::pair<Tensor, Tensor> siamese_apply(const Tensor& real, const Tensor& synth,
                                        const AugmentParams& omega);

}  // namespace itgan

#endif  // ITGAN_AUGMENT_HPP
