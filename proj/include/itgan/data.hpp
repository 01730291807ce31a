#ifndef ITGAN_DATA_HPP
#define ITGAN_DATA_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "itgan/tensor.hpp"

namespace itgan {

/// Images live as u8 bytes (row-major, channel-last) and are normalized to
/// [-1, 1] on tensor conversion with p/127.5 - 1, which is exactly
/// invertible via round(127.5*(v+1)).
struct Dataset {
  int64_t H = 16, W = 16, Ch = 1, C = 10;
  std::vector<uint8_t> pixels;
  std::vector<int64_t> labels;

  int64_t count() const { return static_cast<int64_t>(labels.size()); }
  int64_t image_bytes() const { return H * W * Ch; }

  /// Normalized NCHW f32 batch for the given sample indices.
  Tensor images(const std::vector<int64_t>& idx) const;
  Tensor all_images() const;
  std::vector<int64_t> labels_at(const std::vector<int64_t>& idx) const;
  std::vector<std::vector<int64_t>> indices_by_class() const;
};

/// Procedural 10-family shape dataset (bar-h, bar-v, cross, disk, ring,
/// square, triangle, diagonal, checker, dot-pair), one family per class,
/// randomized position/scale/intensity plus sigma=0.05 pixel noise.
Dataset gen_shapes(int64_t C = 10, int64_t per_class = 500, int64_t H = 16, int64_t W = 16,
                   int64_t Ch = 1, uint64_t seed = 0);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

struct DatasetSplits {
  Dataset train, val, test;
};

/// Stratified 80/10/10 split, deterministic under seed.
DatasetSplits stratified_split(const Dataset& ds, uint64_t seed);

/// Uniform per-class index sampling without replacement (falls back to
/// with-replacement when the class is smaller than the request).
class ClassBatchSampler {
 public:
  ClassBatchSampler(const Dataset& ds, uint64_t seed);
  std::vector<int64_t> sample(int64_t c, int64_t b, bool* with_replacement = nullptr);
  int64_t class_size(int64_t c) const;

 private:
  std::vector<std::vector<int64_t>> per_class_;
  Rng rng_;
};

// u8 <-> normalized helpers shared with the synthetic-image writers
inline double u8_to_unit(uint8_t p) { return static_cast<double>(p) / 127.5 - 1.0; }
inline uint8_t unit_to_u8(double v) {
  double r = 127.5 * (std::min(std::max(v, -1.0), 1.0) + 1.0);
  long q = std::lround(r);
  return static_cast<uint8_t>(std::min(255L, std::max(0L, q)));
}

/// Pack a normalized NCHW f32 batch back into a Dataset (for materialized
/// synthetic sets and previews).
Dataset tensor_to_dataset(const Tensor& images, const std::vector<int64_t>& labels, int64_t C);

}  // namespace itgan

#endif  // ITGAN_DATA_HPP
