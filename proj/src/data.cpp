#include "itgan/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace itgan {

namespace {

void write_u32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& f, uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; i++) b[i] = static_cast<uint8_t>(v >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::ifstream& f, const char* what) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  ITGAN_CHECK(f.gcount() == 4, ErrorKind::config, std::string("dataset file truncated at ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t read_u64(std::ifstream& f, const char* what) {
  uint8_t b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  ITGAN_CHECK(f.gcount() == 8, ErrorKind::config, std::string("dataset file truncated at ") + what);
  uint64_t v = 0;
  for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

constexpr uint32_t kDatasetVersion = 1;

}  // namespace

Tensor Dataset::images(const std::vector<int64_t>& idx) const {
  int64_t n = static_cast<int64_t>(idx.size());
  Tensor out = Tensor::zeros({n, Ch, H, W});
  float* po = out.f32();
  int64_t ib = image_bytes();
  for (int64_t i = 0; i < n; i++) {
    int64_t s = idx[static_cast<size_t>(i)];
    ITGAN_CHECK(s >= 0 && s < count(), ErrorKind::internal, "dataset index out of range");
    const uint8_t* px = pixels.data() + s * ib;
    for (int64_t ch = 0; ch < Ch; ch++)
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++)
          po[((i * Ch + ch) * H + y) * W + x] =
              static_cast<float>(u8_to_unit(px[(y * W + x) * Ch + ch]));
  }
  return out;
}

Tensor Dataset::all_images() const {
  std::vector<int64_t> idx(static_cast<size_t>(count()));
  for (int64_t i = 0; i < count(); i++) idx[static_cast<size_t>(i)] = i;
  return images(idx);
}

std::vector<int64_t> Dataset::labels_at(const std::vector<int64_t>& idx) const {
  std::vector<int64_t> out;
  out.reserve(idx.size());
  for (int64_t i : idx) out.push_back(labels[static_cast<size_t>(i)]);
  return out;
}

std::vector<std::vector<int64_t>> Dataset::indices_by_class() const {
  std::vector<std::vector<int64_t>> by(static_cast<size_t>(C));
  for (int64_t i = 0; i < count(); i++) by[static_cast<size_t>(labels[static_cast<size_t>(i)])].push_back(i);
  return by;
}

namespace {

// All shapes render into a [0,1] canvas with background 0.08.
void render_shape(std::vector<double>& canvas, int64_t family, int64_t H, int64_t W, Rng& rng) {
  double fg = 0.55 + 0.4 * rng.uniform();
  double cx = W * (0.35 + 0.3 * rng.uniform());
  double cy = H * (0.35 + 0.3 * rng.uniform());
  double s = std::min(H, W) * (0.22 + 0.18 * rng.uniform());
  double thick = 0.8 + 1.2 * rng.uniform();
  auto put = [&](int64_t y, int64_t x, double v) {
    if (y >= 0 && y < H && x >= 0 && x < W) canvas[static_cast<size_t>(y * W + x)] = v;
  };
  switch (family) {
    case 0:  // bar-h
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++)
          if (std::fabs(y - cy) <= thick && std::fabs(x - cx) <= s) put(y, x, fg);
      break;
    case 1:  // bar-v
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++)
          if (std::fabs(x - cx) <= thick && std::fabs(y - cy) <= s) put(y, x, fg);
      break;
    case 2:  // cross
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++)
          if ((std::fabs(y - cy) <= thick && std::fabs(x - cx) <= s) ||
              (std::fabs(x - cx) <= thick && std::fabs(y - cy) <= s))
            put(y, x, fg);
      break;
    case 3:  // disk
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= s * s * 0.55) put(y, x, fg);
      break;
    case 4: {  // ring
      double r2o = s * s * 0.7, r2i = s * s * 0.25;
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++) {
          double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          if (d2 <= r2o && d2 >= r2i) put(y, x, fg);
        }
      break;
    }
    case 5:  // filled square
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++)
          if (std::fabs(x - cx) <= s * 0.7 && std::fabs(y - cy) <= s * 0.7) put(y, x, fg);
      break;
    case 6:  // triangle, apex up
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++) {
          double t = (y - (cy - s)) / (2.0 * s);
          if (t >= 0 && t <= 1 && std::fabs(x - cx) <= t * s) put(y, x, fg);
        }
      break;
    case 7:  // diagonal stripe
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++)
          if (std::fabs((x - cx) - (y - cy)) <= thick + 0.5) put(y, x, fg);
      break;
    case 8: {  // checkerboard patch
      int64_t p = 2 + rng.uniform_int(2);
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++)
          if (std::fabs(x - cx) <= s && std::fabs(y - cy) <= s && ((x / p) + (y / p)) % 2 == 0)
            put(y, x, fg);
      break;
    }
    case 9: {  // dot pair
      double d = s * 0.6, r2 = 2.2 + 2.0 * rng.uniform();
      for (int64_t y = 0; y < H; y++)
        for (int64_t x = 0; x < W; x++) {
          double a = (x - (cx - d)) * (x - (cx - d)) + (y - (cy - d)) * (y - (cy - d));
          double b = (x - (cx + d)) * (x - (cx + d)) + (y - (cy + d)) * (y - (cy + d));
          if (a <= r2 || b <= r2) put(y, x, fg);
        }
      break;
    }
    default:
      fail(ErrorKind::config, "gen_shapes: unsupported class family");
  }
}

}  // namespace

Dataset gen_shapes(int64_t C, int64_t per_class, int64_t H, int64_t W, int64_t Ch, uint64_t seed) {
  ITGAN_CHECK(C >= 1 && C <= 10, ErrorKind::config,
              "gen_shapes: class count must be in [1,10] (10 shape families defined)");
  ITGAN_CHECK(per_class >= 1 && H >= 8 && W >= 8 && Ch >= 1, ErrorKind::config,
              "gen_shapes: bad dimensions");
  Dataset ds;
  ds.H = H;
  ds.W = W;
  ds.Ch = Ch;
  ds.C = C;
  Rng rng(seed);
  std::vector<double> canvas(static_cast<size_t>(H * W));
  for (int64_t c = 0; c < C; c++) {
    for (int64_t i = 0; i < per_class; i++) {
      std::fill(canvas.begin(), canvas.end(), 0.08);
      render_shape(canvas, c, H, W, rng);
      for (int64_t pix = 0; pix < H * W; pix++) {
        double base = canvas[static_cast<size_t>(pix)];
        for (int64_t ch = 0; ch < Ch; ch++) {
          double v = base + 0.05 * rng.normal();
          v = std::min(1.0, std::max(0.0, v));
          ds.pixels.push_back(static_cast<uint8_t>(std::lround(255.0 * v)));
        }
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  ITGAN_CHECK(f.good(), ErrorKind::missing_input, "cannot open for writing: " + path);
  f.write("ITGD", 4);
  write_u32(f, kDatasetVersion);
  write_u64(f, static_cast<uint64_t>(ds.count()));
  write_u32(f, static_cast<uint32_t>(ds.H));
  write_u32(f, static_cast<uint32_t>(ds.W));
  write_u32(f, static_cast<uint32_t>(ds.Ch));
  write_u32(f, static_cast<uint32_t>(ds.C));
  for (int64_t l : ds.labels) write_u32(f, static_cast<uint32_t>(l));
  f.write(reinterpret_cast<const char*>(ds.pixels.data()),
          static_cast<std::streamsize>(ds.pixels.size()));
  ITGAN_CHECK(f.good(), ErrorKind::internal, "write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  ITGAN_CHECK(f.good(), ErrorKind::missing_input, "dataset file not found: " + path);
  char magic[4];
  f.read(magic, 4);
  ITGAN_CHECK(f.gcount() == 4 && std::memcmp(magic, "ITGD", 4) == 0, ErrorKind::config,
              "bad dataset magic in " + path);
  uint32_t version = read_u32(f, "version");
  ITGAN_CHECK(version == kDatasetVersion, ErrorKind::config,
              "unsupported dataset version " + std::to_string(version));
  Dataset ds;
  uint64_t n = read_u64(f, "count");
  ds.H = read_u32(f, "H");
  ds.W = read_u32(f, "W");
  ds.Ch = read_u32(f, "Ch");
  ds.C = read_u32(f, "C");
  ITGAN_CHECK(ds.H >= 1 && ds.W >= 1 && ds.Ch >= 1 && ds.C >= 1, ErrorKind::config,
              "corrupt dataset header in " + path);
  ds.labels.reserve(n);
  for (uint64_t i = 0; i < n; i++) {
    uint32_t l = read_u32(f, "labels");
    ITGAN_CHECK(l < static_cast<uint32_t>(ds.C), ErrorKind::config,
                "dataset label out of range in " + path);
    ds.labels.push_back(l);
  }
  size_t bytes = static_cast<size_t>(n) * static_cast<size_t>(ds.image_bytes());
  ds.pixels.resize(bytes);
  f.read(reinterpret_cast<char*>(ds.pixels.data()), static_cast<std::streamsize>(bytes));
  ITGAN_CHECK(static_cast<size_t>(f.gcount()) == bytes, ErrorKind::config,
              "dataset file truncated at pixels in " + path);
  return ds;
}

DatasetSplits stratified_split(const Dataset& ds, uint64_t seed) {
  Rng rng(seed);
  DatasetSplits out;
  for (Dataset* part : {&out.train, &out.val, &out.test}) {
    part->H = ds.H;
    part->W = ds.W;
    part->Ch = ds.Ch;
    part->C = ds.C;
  }
  auto append = [&](Dataset& part, int64_t i) {
    const uint8_t* px = ds.pixels.data() + i * ds.image_bytes();
    part.pixels.insert(part.pixels.end(), px, px + ds.image_bytes());
    part.labels.push_back(ds.labels[static_cast<size_t>(i)]);
  };
  for (auto& cls : ds.indices_by_class()) {
    ITGAN_CHECK(!cls.empty(), ErrorKind::config, "stratified_split: empty class");
    std::vector<int64_t> idx = cls;
    rng.shuffle(idx);
    int64_t n = static_cast<int64_t>(idx.size());
    int64_t n_train = (n * 8) / 10;
    int64_t n_val = n / 10;
    if (n_train < 1) n_train = 1;
    for (int64_t i = 0; i < n; i++) {
      if (i < n_train)
        append(out.train, idx[static_cast<size_t>(i)]);
      else if (i < n_train + n_val)
        append(out.val, idx[static_cast<size_t>(i)]);
      else
        append(out.test, idx[static_cast<size_t>(i)]);
    }
  }
  return out;
}

ClassBatchSampler::ClassBatchSampler(const Dataset& ds, uint64_t seed)
    : per_class_(ds.indices_by_class()), rng_(seed) {}

std::vector<int64_t> ClassBatchSampler::sample(int64_t c, int64_t b, bool* with_replacement) {
  ITGAN_CHECK(c >= 0 && c < static_cast<int64_t>(per_class_.size()), ErrorKind::config,
              "sampler: class out of range");
  const auto& pool = per_class_[static_cast<size_t>(c)];
  ITGAN_CHECK(!pool.empty(), ErrorKind::config, "sampler: empty class");
  bool wr = false;
  std::vector<int64_t> picks = rng_.sample_indices(static_cast<int64_t>(pool.size()), b, &wr);
  if (with_replacement) *with_replacement = wr;
  std::vector<int64_t> out;
  out.reserve(picks.size());
  for (int64_t p : picks) out.push_back(pool[static_cast<size_t>(p)]);
  return out;
}

int64_t ClassBatchSampler::class_size(int64_t c) const {
  ITGAN_CHECK(c >= 0 && c < static_cast<int64_t>(per_class_.size()), ErrorKind::config,
              "sampler: class out of range");
  return static_cast<int64_t>(per_class_[static_cast<size_t>(c)].size());
}

Dataset tensor_to_dataset(const Tensor& images, const std::vector<int64_t>& labels, int64_t C) {
  ITGAN_CHECK(images.ndim() == 4, ErrorKind::internal, "tensor_to_dataset: NCHW required");
  ITGAN_CHECK(images.dim(0) == static_cast<int64_t>(labels.size()), ErrorKind::internal,
              "tensor_to_dataset: label count mismatch");
  Dataset ds;
  ds.C = C;
  ds.Ch = images.dim(1);
  ds.H = images.dim(2);
  ds.W = images.dim(3);
  ds.labels = labels;
  int64_t n = images.dim(0);
  ds.pixels.resize(static_cast<size_t>(n * ds.image_bytes()));
  for (int64_t i = 0; i < n; i++)
    for (int64_t ch = 0; ch < ds.Ch; ch++)
      for (int64_t y = 0; y < ds.H; y++)
        for (int64_t x = 0; x < ds.W; x++)
          ds.pixels[static_cast<size_t>(i * ds.image_bytes() + (y * ds.W + x) * ds.Ch + ch)] =
              unit_to_u8(images.at(((i * ds.Ch + ch) * ds.H + y) * ds.W + x));
  return ds;
}

}  // namespace itgan
