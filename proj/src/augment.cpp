#include "itgan/augment.hpp"

#include <cmath>

namespace itgan {

namespace {

constexpr const char* kKindNames[] = {"none",   "flip-h", "crop-shift", "scale",
                                      "rotate", "cutout", "brightness"};

// source-coordinate grid for a batch; transform maps output pixel -> source
template <class F>
Tensor make_grid(int64_t n, int64_t h, int64_t w, Dtype dt, F&& src_of) {
  NoGradGuard ng;
  Tensor grid = Tensor::zeros({n, h, w, 2}, dt);
  for (int64_t y = 0; y < h; y++)
    for (int64_t x = 0; x < w; x++) {
      auto [sy, sx] = src_of(static_cast<double>(y), static_cast<double>(x));
      for (int64_t b = 0; b < n; b++) {
        grid.set(((b * h + y) * w + x) * 2 + 0, sy);
        grid.set(((b * h + y) * w + x) * 2 + 1, sx);
      }
    }
  return grid;
}

}  // namespace

const char* aug_kind_name(AugKind k) { return kKindNames[static_cast<size_t>(k)]; }

AugKind aug_kind_from_name(const std::string& name) {
  for (size_t i = 0; i < 7; i++)
    if (name == kKindNames[i]) return static_cast<AugKind>(i);
  fail(ErrorKind::config, "unknown augmentation op: " + name);
}

AugmentConfig augment_config_from_names(const std::vector<std::string>& names) {
  AugmentConfig cfg;
  if (names.empty()) return cfg;
  cfg.ops.clear();
  for (const auto& n : names) cfg.ops.push_back(aug_kind_from_name(n));
  return cfg;
}

AugmentParams sample_omega(Rng& rng, const AugmentConfig& cfg, int64_t h, int64_t w) {
  ITGAN_CHECK(!cfg.ops.empty(), ErrorKind::config, "augment: empty op set");
  AugmentParams p;
  p.kind = cfg.ops[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(cfg.ops.size())))];
  switch (p.kind) {
    case AugKind::none:
    case AugKind::flip_h:
      break;
    case AugKind::crop_shift:
      p.dx = static_cast<int>(rng.uniform_int(2 * cfg.shift_px + 1)) - cfg.shift_px;
      p.dy = static_cast<int>(rng.uniform_int(2 * cfg.shift_px + 1)) - cfg.shift_px;
      break;
    case AugKind::scale:
      p.factor = rng.uniform(cfg.scale_lo, cfg.scale_hi);
      break;
    case AugKind::rotate:
      p.angle_deg = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
      break;
    case AugKind::cutout:
      p.cut_cy = rng.uniform_int(h);
      p.cut_cx = rng.uniform_int(w);
      p.cut_side = std::min(h, w) / cfg.cutout_div;
      break;
    case AugKind::brightness:
      p.delta = rng.uniform(-cfg.brightness, cfg.brightness);
      break;
  }
  return p;
}

Tensor augment_apply(const Tensor& images, const AugmentParams& omega) {
  ITGAN_CHECK(images.ndim() == 4, ErrorKind::numeric, "augment: NCHW batch required");
  int64_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  switch (omega.kind) {
    case AugKind::none:
      return images;
    case AugKind::flip_h:
      return flip_h(images);
    case AugKind::crop_shift:
      return shift2d(images, omega.dx, omega.dy);
    case AugKind::scale: {
      double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0, inv = 1.0 / omega.factor;
      Tensor grid = make_grid(n, h, w, images.dtype(), [&](double y, double x) {
        return std::pair<double, double>{cy + (y - cy) * inv, cx + (x - cx) * inv};
      });
      return grid_sample(images, grid);
    }
    case AugKind::rotate: {
      double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
      double a = omega.angle_deg * M_PI / 180.0;
      double ca = std::cos(a), sa = std::sin(a);
      Tensor grid = make_grid(n, h, w, images.dtype(), [&](double y, double x) {
        double ry = y - cy, rx = x - cx;
        return std::pair<double, double>{cy + ca * ry - sa * rx, cx + sa * ry + ca * rx};
      });
      return grid_sample(images, grid);
    }
    case AugKind::cutout: {
      int64_t side = omega.cut_side > 0 ? omega.cut_side : std::min(h, w) / 4;
      Tensor mask;
      {
        NoGradGuard ng;
        mask = Tensor::ones(images.shape(), images.dtype());
        int64_t y0 = omega.cut_cy - side / 2, x0 = omega.cut_cx - side / 2;
        for (int64_t b = 0; b < n; b++)
          for (int64_t c = 0; c < images.dim(1); c++)
            for (int64_t y = y0; y < y0 + side; y++)
              for (int64_t x = x0; x < x0 + side; x++)
                if (y >= 0 && y < h && x >= 0 && x < w)
                  mask.set(((b * images.dim(1) + c) * h + y) * w + x, 0.0);
      }
      return mul(images, mask);
    }
    case AugKind::brightness:
      return add_scalar(images, omega.delta);
  }
  fail(ErrorKind::internal, "augment: unreachable");
}

std::pair<Tensor, Tensor> siamese_apply(const Tensor& real, const Tensor& synth,
                                        const AugmentParams& omega) {
  ITGAN_CHECK(real.ndim() == 4 && synth.ndim() == 4 && real.dim(1) == synth.dim(1) &&
                  real.dim(2) == synth.dim(2) && real.dim(3) == synth.dim(3),
              ErrorKind::numeric, "siamese_apply: image shape mismatch");
  return {augment_apply(real, omega), augment_apply(synth, omega)};
}

}  // namespace itgan
