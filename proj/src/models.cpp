#include "itgan/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "itgan/optim.hpp"
#include "itgan/wire.hpp"

namespace itgan {

// ---------------------------------------------------------------------------
// weights container + ITGW format
// ---------------------------------------------------------------------------

void ModelWeights::add(const std::string& name, Tensor t) {
  ITGAN_CHECK(!has(name), ErrorKind::internal, "duplicate weight name: " + name);
  entries.emplace_back(name, std::move(t));
}

bool ModelWeights::has(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return true;
  return false;
}

const Tensor& ModelWeights::at(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return t;
  fail(ErrorKind::internal, "missing weight: " + name);
}

Tensor& ModelWeights::at(const std::string& name) {
  for (auto& [n, t] : entries)
    if (n == name) return t;
  fail(ErrorKind::internal, "missing weight: " + name);
}

std::vector<Tensor> ModelWeights::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries.size());
  for (const auto& [n, t] : entries) out.push_back(t);
  return out;
}

ModelWeights ModelWeights::clone() const {
  ModelWeights out;
  for (const auto& [n, t] : entries) out.entries.emplace_back(n, t.clone());
  return out;
}

ModelWeights ModelWeights::to(Dtype dt) const {
  ModelWeights out;
  for (const auto& [n, t] : entries) out.entries.emplace_back(n, t.to(dt));
  return out;
}

bool ModelWeights::equal(const ModelWeights& a, const ModelWeights& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (size_t i = 0; i < a.entries.size(); i++) {
    if (a.entries[i].first != b.entries[i].first) return false;
    if (a.entries[i].second.shape() != b.entries[i].second.shape()) return false;
    if (!Tensor::bitwise_equal(a.entries[i].second, b.entries[i].second)) return false;
  }
  return true;
}

namespace {
constexpr uint32_t kWeightsVersion = 1;
constexpr uint32_t kPoolVersion = 1;
}  // namespace

void save_weights_stream(const ModelWeights& w, std::ostream& os) {
  os.write("ITGW", 4);
  wire::put_u32(os, kWeightsVersion);
  wire::put_u32(os, static_cast<uint32_t>(w.entries.size()));
  for (const auto& [name, t] : w.entries) {
    ITGAN_CHECK(t.dtype() == Dtype::f32, ErrorKind::internal,
                "weights file stores f32 only: " + name);
    ITGAN_CHECK(name.size() <= 0xFFFF, ErrorKind::internal, "weight name too long");
    wire::put_u16(os, static_cast<uint16_t>(name.size()));
    wire::put_bytes(os, name.data(), name.size());
    os.put(0);  // dtype 0 = f32
    os.put(static_cast<char>(t.ndim()));
    for (size_t d = 0; d < t.ndim(); d++) wire::put_u32(os, static_cast<uint32_t>(t.dim(d)));
    const float* p = t.f32();
    for (int64_t i = 0; i < t.numel(); i++) wire::put_f32(os, p[i]);
  }
}

ModelWeights load_weights_stream(std::istream& is) {
  wire::check_magic(is, "ITGW", "weights stream");
  uint32_t version = wire::get_u32(is, "version");
  ITGAN_CHECK(version == kWeightsVersion, ErrorKind::config,
              "unsupported weights version " + std::to_string(version));
  uint32_t count = wire::get_u32(is, "tensor count");
  ModelWeights w;
  for (uint32_t i = 0; i < count; i++) {
    uint16_t len = wire::get_u16(is, "name length");
    std::string name(len, '\0');
    wire::get_bytes(is, name.data(), len, "name");
    uint8_t dtype = 0, ndim = 0;
    wire::get_bytes(is, &dtype, 1, "dtype");
    ITGAN_CHECK(dtype == 0, ErrorKind::config, "unsupported dtype in weights file");
    wire::get_bytes(is, &ndim, 1, "ndim");
    Shape shape;
    for (uint8_t d = 0; d < ndim; d++) shape.push_back(wire::get_u32(is, "dims"));
    Tensor t = Tensor::zeros(shape);
    float* p = t.f32();
    for (int64_t j = 0; j < t.numel(); j++) p[j] = wire::get_f32(is, "values");
    w.add(name, t);
  }
  return w;
}

void save_weights(const ModelWeights& w, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  ITGAN_CHECK(f.good(), ErrorKind::missing_input, "cannot open for writing: " + path);
  save_weights_stream(w, f);
  ITGAN_CHECK(f.good(), ErrorKind::internal, "write failed: " + path);
}

ModelWeights load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  ITGAN_CHECK(f.good(), ErrorKind::missing_input, "weights file not found: " + path);
  try {
    return load_weights_stream(f);
  } catch (const Error& e) {
    fail(e.kind(), std::string(e.what()) + " in " + path);
  }
}

// ---------------------------------------------------------------------------
// init helpers
// ---------------------------------------------------------------------------

namespace {

Tensor kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return Tensor::rand_uniform(std::move(shape), rng, -bound, bound);
}

Tensor linear_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::rand_uniform(std::move(shape), rng, -bound, bound);
}

Tensor gaussian(Shape shape, double stdev, Rng& rng) {
  return Tensor::randn(std::move(shape), rng, Dtype::f32, stdev);
}

// conv3x3 -> instance norm -> relu block under prefix p
Tensor cir(const ModelWeights& w, const std::string& p, const Tensor& x) {
  Tensor y = add_chan(conv2d(x, w.at(p + ".conv.w"), 1, 1), w.at(p + ".conv.b"));
  return relu(instance_norm(y, w.at(p + ".in.g"), w.at(p + ".in.b")));
}

void add_cir(ModelWeights& w, const std::string& p, int64_t out_ch, int64_t in_ch, Rng& rng) {
  w.add(p + ".conv.w", kaiming_uniform({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
  w.add(p + ".conv.b", Tensor::zeros({out_ch}));
  w.add(p + ".in.g", Tensor::ones({out_ch}));
  w.add(p + ".in.b", Tensor::zeros({out_ch}));
}

}  // namespace

// ---------------------------------------------------------------------------
// embedder
// ---------------------------------------------------------------------------

Embedder Embedder::init(int64_t in_ch, uint64_t seed) {
  Rng rng(seed);
  Embedder e;
  e.in_ch = in_ch;
  add_cir(e.w, "b1", 128, in_ch, rng);
  add_cir(e.w, "b2", 128, 128, rng);
  add_cir(e.w, "b3", 128, 128, rng);
  return e;
}

Embedder Embedder::from_weights(ModelWeights w, int64_t in_ch) {
  Embedder e;
  e.w = std::move(w);
  e.in_ch = in_ch;
  for (const char* n : {"b1.conv.w", "b2.conv.w", "b3.conv.w"})
    ITGAN_CHECK(e.w.has(n), ErrorKind::config, std::string("embedder weights missing ") + n);
  return e;
}

Tensor Embedder::forward(const Tensor& images) const {
  ITGAN_CHECK(images.ndim() == 4 && images.dim(2) % 8 == 0 && images.dim(3) % 8 == 0,
              ErrorKind::numeric, "embedder: spatial size must divide by 8");
  Tensor x = avgpool2x2(cir(w, "b1", images));
  x = avgpool2x2(cir(w, "b2", x));
  x = avgpool2x2(cir(w, "b3", x));
  return reshape(x, {images.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
}

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

namespace {
constexpr int64_t kEmbedDim = 32;
constexpr int64_t kBaseHw = 4;
constexpr int64_t kBaseCh = 128;
}  // namespace

Generator Generator::init(int64_t d_z, int64_t C, int64_t ch_out, uint64_t seed) {
  Rng rng(seed);
  Generator g;
  g.d_z = d_z;
  g.C = C;
  g.ch_out = ch_out;
  g.w.add("embed", gaussian({C, kEmbedDim}, 0.2, rng));
  g.w.add("fc.w", gaussian({d_z + kEmbedDim, kBaseCh * kBaseHw * kBaseHw}, 0.02, rng));
  g.w.add("fc.b", Tensor::zeros({kBaseCh * kBaseHw * kBaseHw}));
  g.w.add("up1.conv.w", gaussian({64, kBaseCh, 3, 3}, 0.02, rng));
  g.w.add("up1.conv.b", Tensor::zeros({64}));
  g.w.add("up1.bn.g", Tensor::ones({64}));
  g.w.add("up1.bn.b", Tensor::zeros({64}));
  g.w.add("up2.conv.w", gaussian({32, 64, 3, 3}, 0.02, rng));
  g.w.add("up2.conv.b", Tensor::zeros({32}));
  g.w.add("up2.bn.g", Tensor::ones({32}));
  g.w.add("up2.bn.b", Tensor::zeros({32}));
  g.w.add("out.conv.w", gaussian({ch_out, 32, 3, 3}, 0.02, rng));
  g.w.add("out.conv.b", Tensor::zeros({ch_out}));
  return g;
}

Generator Generator::from_weights(ModelWeights w) {
  Generator g;
  ITGAN_CHECK(w.has("embed") && w.has("fc.w") && w.has("out.conv.w"), ErrorKind::config,
              "generator weights incomplete");
  g.C = w.at("embed").dim(0);
  g.d_z = w.at("fc.w").dim(0) - kEmbedDim;
  g.ch_out = w.at("out.conv.w").dim(0);
  g.w = std::move(w);
  return g;
}

namespace {

Tensor gen_block(const ModelWeights& w, const std::string& p, const Tensor& x, GenMode mode) {
  Tensor y = add_chan(conv2d(upsample_nearest2x(x), w.at(p + ".conv.w"), 1, 1),
                      w.at(p + ".conv.b"));
  if (mode == GenMode::train) return relu(batch_norm_lite(y, w.at(p + ".bn.g"), w.at(p + ".bn.b")));
  ITGAN_CHECK(w.has(p + ".bn.mu"), ErrorKind::config,
              "frozen generator lacks standing statistics (" + p + "); capture them first");
  return relu(batch_norm_frozen(y, w.at(p + ".bn.g"), w.at(p + ".bn.b"), w.at(p + ".bn.mu"),
                                w.at(p + ".bn.var")));
}

}  // namespace

Tensor Generator::forward(const Tensor& z, const std::vector<int64_t>& labels, GenMode mode) const {
  ITGAN_CHECK(z.ndim() == 2 && z.dim(1) == d_z, ErrorKind::numeric, "generator: bad latent shape");
  ITGAN_CHECK(z.dim(0) == static_cast<int64_t>(labels.size()), ErrorKind::numeric,
              "generator: label count mismatch");
  for (int64_t l : labels)
    ITGAN_CHECK(l >= 0 && l < C, ErrorKind::config, "generator: label out of range");
  Tensor table = w.at("embed");
  Tensor e = embed_rows(z.dtype() == Dtype::f64 ? table.to(Dtype::f64) : table, labels);
  Tensor h = concat_cols(z, e);
  const bool f64 = z.dtype() == Dtype::f64;
  auto W = [&](const std::string& n) { return f64 ? w.at(n).to(Dtype::f64) : w.at(n); };
  h = add_rowvec(matmul(h, W("fc.w")), W("fc.b"));
  Tensor x = reshape(h, {z.dim(0), kBaseCh, kBaseHw, kBaseHw});
  if (!f64) {
    x = gen_block(w, "up1", x, mode);
    x = gen_block(w, "up2", x, mode);
  } else {
    ModelWeights w64 = w.to(Dtype::f64);
    x = gen_block(w64, "up1", x, mode);
    x = gen_block(w64, "up2", x, mode);
  }
  x = add_chan(conv2d(x, W("out.conv.w"), 1, 1), W("out.conv.b"));
  return tanh_(x);
}

void Generator::capture_standing_stats(uint64_t seed, int64_t batch) {
  Rng rng(seed);
  NoGradGuard ng;
  Tensor z = Tensor::randn({batch, d_z}, rng);
  std::vector<int64_t> labels(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; i++) labels[static_cast<size_t>(i)] = i % C;
  Tensor e = embed_rows(w.at("embed"), labels);
  Tensor h = add_rowvec(matmul(concat_cols(z, e), w.at("fc.w")), w.at("fc.b"));
  Tensor x = reshape(h, {batch, kBaseCh, kBaseHw, kBaseHw});
  for (const std::string& p : {std::string("up1"), std::string("up2")}) {
    Tensor y = add_chan(conv2d(upsample_nearest2x(x), w.at(p + ".conv.w"), 1, 1),
                        w.at(p + ".conv.b"));
    Tensor mu, var;
    batch_stats(y, &mu, &var);
    if (w.has(p + ".bn.mu")) {
      w.at(p + ".bn.mu") = mu;
      w.at(p + ".bn.var") = var;
    } else {
      w.add(p + ".bn.mu", mu);
      w.add(p + ".bn.var", var);
    }
    x = relu(batch_norm_lite(y, w.at(p + ".bn.g"), w.at(p + ".bn.b")));
  }
}

bool Generator::has_standing_stats() const {
  return w.has("up1.bn.mu") && w.has("up2.bn.mu");
}

std::vector<Tensor> Generator::params() const {
  std::vector<Tensor> out;
  for (const auto& [n, t] : w.entries)
    if (n.find(".bn.mu") == std::string::npos && n.find(".bn.var") == std::string::npos)
      out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// discriminator
// ---------------------------------------------------------------------------

Tensor onehot_planes(const std::vector<int64_t>& labels, int64_t C, int64_t h, int64_t w,
                     Dtype dt) {
  NoGradGuard ng;
  int64_t n = static_cast<int64_t>(labels.size());
  Tensor planes = Tensor::zeros({n, C, h, w}, dt);
  for (int64_t i = 0; i < n; i++) {
    int64_t c = labels[static_cast<size_t>(i)];
    ITGAN_CHECK(c >= 0 && c < C, ErrorKind::config, "onehot_planes: label out of range");
    for (int64_t p = 0; p < h * w; p++) planes.set((i * C + c) * h * w + p, 1.0);
  }
  return planes;
}

Discriminator Discriminator::init(int64_t ch_in, int64_t C, uint64_t seed) {
  Rng rng(seed);
  Discriminator d;
  d.C = C;
  d.ch_in = ch_in;
  d.w.add("c1.w", gaussian({64, ch_in + C, 3, 3}, 0.02, rng));
  d.w.add("c1.b", Tensor::zeros({64}));
  d.w.add("c2.w", gaussian({128, 64, 3, 3}, 0.02, rng));
  d.w.add("c2.b", Tensor::zeros({128}));
  d.w.add("fc.w", gaussian({128 * 4 * 4, 1}, 0.02, rng));
  d.w.add("fc.b", Tensor::zeros({1}));
  return d;
}

Tensor Discriminator::forward(const Tensor& images, const std::vector<int64_t>& labels) const {
  ITGAN_CHECK(images.ndim() == 4, ErrorKind::numeric, "discriminator: NCHW required");
  Tensor planes = onehot_planes(labels, C, images.dim(2), images.dim(3), images.dtype());
  Tensor x = concat_chan(images, planes);
  x = leaky_relu(add_chan(conv2d(x, w.at("c1.w"), 2, 1), w.at("c1.b")), 0.2);
  x = leaky_relu(add_chan(conv2d(x, w.at("c2.w"), 2, 1), w.at("c2.b")), 0.2);
  Tensor flat = reshape(x, {images.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
  Tensor logit = add_rowvec(matmul(flat, w.at("fc.w")), w.at("fc.b"));
  return reshape(logit, {images.dim(0)});
}

// ---------------------------------------------------------------------------
// classifiers
// ---------------------------------------------------------------------------

Arch arch_from_name(const std::string& name) {
  if (name == "convnet") return Arch::convnet;
  if (name == "vggish") return Arch::vggish;
  if (name == "resnetish") return Arch::resnetish;
  fail(ErrorKind::config, "unknown architecture: " + name);
}

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::convnet: return "convnet";
    case Arch::vggish: return "vggish";
    case Arch::resnetish: return "resnetish";
  }
  return "?";
}

Classifier Classifier::init(Arch arch, int64_t in_ch, int64_t C, int64_t h, int64_t w,
                            uint64_t seed) {
  Rng rng(seed);
  Classifier c;
  c.arch = arch;
  c.in_ch = in_ch;
  c.C = C;
  int64_t feat = 0;
  switch (arch) {
    case Arch::convnet: {
      Embedder e = Embedder::init(in_ch, rng.next_u64());
      c.w = std::move(e.w);
      feat = Embedder::feature_dim(h, w);
      break;
    }
    case Arch::vggish: {
      add_cir(c.w, "v1", 32, in_ch, rng);
      add_cir(c.w, "v2", 32, 32, rng);
      add_cir(c.w, "v3", 64, 32, rng);
      add_cir(c.w, "v4", 64, 64, rng);
      add_cir(c.w, "v5", 128, 64, rng);
      add_cir(c.w, "v6", 128, 128, rng);
      feat = 128 * (h / 8) * (w / 8);
      break;
    }
    case Arch::resnetish: {
      add_cir(c.w, "stem", 32, in_ch, rng);
      add_cir(c.w, "r1a", 32, 32, rng);
      add_cir(c.w, "r1b", 32, 32, rng);
      add_cir(c.w, "r2a", 64, 32, rng);
      add_cir(c.w, "r2b", 64, 64, rng);
      c.w.add("r2.skip.w", kaiming_uniform({64, 32, 1, 1}, 32, rng));
      c.w.add("r2.skip.b", Tensor::zeros({64}));
      feat = 64 * (h / 4) * (w / 4);
      break;
    }
  }
  c.w.add("head.w", linear_uniform({feat, C}, feat, rng));
  c.w.add("head.b", Tensor::zeros({C}));
  return c;
}

Classifier Classifier::from_weights(Arch arch, ModelWeights w, int64_t in_ch, int64_t C) {
  Classifier c;
  c.arch = arch;
  c.w = std::move(w);
  c.in_ch = in_ch;
  c.C = C;
  ITGAN_CHECK(c.w.has("head.w"), ErrorKind::config, "classifier weights missing head");
  return c;
}

Tensor Classifier::features(const Tensor& images) const {
  ITGAN_CHECK(arch == Arch::convnet, ErrorKind::internal,
              "feature rows are defined for the convnet embedder only");
  Tensor x = avgpool2x2(cir(w, "b1", images));
  x = avgpool2x2(cir(w, "b2", x));
  x = avgpool2x2(cir(w, "b3", x));
  return reshape(x, {images.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
}

Tensor Classifier::logits(const Tensor& images) const {
  Tensor feat;
  switch (arch) {
    case Arch::convnet:
      feat = features(images);
      break;
    case Arch::vggish: {
      Tensor x = avgpool2x2(cir(w, "v2", cir(w, "v1", images)));
      x = avgpool2x2(cir(w, "v4", cir(w, "v3", x)));
      x = avgpool2x2(cir(w, "v6", cir(w, "v5", x)));
      feat = reshape(x, {images.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
      break;
    }
    case Arch::resnetish: {
      Tensor x = cir(w, "stem", images);
      x = relu(add(cir(w, "r1b", cir(w, "r1a", x)), x));
      x = avgpool2x2(x);
      Tensor skip = add_chan(conv2d(x, w.at("r2.skip.w"), 1, 0), w.at("r2.skip.b"));
      x = relu(add(cir(w, "r2b", cir(w, "r2a", x)), skip));
      x = avgpool2x2(x);
      feat = reshape(x, {images.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
      break;
    }
  }
  return add_rowvec(matmul(feat, w.at("head.w")), w.at("head.b"));
}

Classifier Classifier::to(Dtype dt) const {
  Classifier c;
  c.arch = arch;
  c.in_ch = in_ch;
  c.C = C;
  c.w = w.to(dt);
  return c;
}

// ---------------------------------------------------------------------------
// snapshot pool
// ---------------------------------------------------------------------------

int SnapshotPool::bin_of(float acc) const {
  ITGAN_CHECK(bin_edges.size() >= 2, ErrorKind::config, "pool: need at least one bin");
  for (size_t i = 0; i + 2 < bin_edges.size(); i++)
    if (acc >= bin_edges[i] && acc < bin_edges[i + 1]) return static_cast<int>(i);
  return static_cast<int>(bin_edges.size()) - 2;  // last bin closed on the right
}

std::vector<size_t> SnapshotPool::in_range(float lo, float hi) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < snaps.size(); i++)
    if (snaps[i].val_acc >= lo && snaps[i].val_acc <= hi) out.push_back(i);
  return out;
}

void save_pool(const SnapshotPool& pool, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  ITGAN_CHECK(f.good(), ErrorKind::missing_input, "cannot open for writing: " + path);
  f.write("ITGP", 4);
  wire::put_u32(f, kPoolVersion);
  wire::put_u32(f, static_cast<uint32_t>(pool.bin_edges.size()));
  for (float e : pool.bin_edges) wire::put_f32(f, e);
  wire::put_u32(f, static_cast<uint32_t>(pool.snaps.size()));
  for (const auto& s : pool.snaps) {
    wire::put_f32(f, s.val_acc);
    std::ostringstream blob;
    save_weights_stream(s.weights, blob);
    std::string bytes = blob.str();
    wire::put_u64(f, bytes.size());
    wire::put_bytes(f, bytes.data(), bytes.size());
  }
  ITGAN_CHECK(f.good(), ErrorKind::internal, "write failed: " + path);
}

SnapshotPool load_pool(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  ITGAN_CHECK(f.good(), ErrorKind::missing_input, "pool file not found: " + path);
  wire::check_magic(f, "ITGP", path);
  uint32_t version = wire::get_u32(f, "version");
  ITGAN_CHECK(version == kPoolVersion, ErrorKind::config, "unsupported pool version");
  SnapshotPool pool;
  pool.bin_edges.clear();
  uint32_t n_edges = wire::get_u32(f, "edge count");
  for (uint32_t i = 0; i < n_edges; i++) pool.bin_edges.push_back(wire::get_f32(f, "edges"));
  uint32_t count = wire::get_u32(f, "snapshot count");
  for (uint32_t i = 0; i < count; i++) {
    Snapshot s;
    s.val_acc = wire::get_f32(f, "val acc");
    ITGAN_CHECK(s.val_acc >= 0.0f && s.val_acc <= 1.0f, ErrorKind::config,
                "pool: accuracy outside [0,1]");
    uint64_t len = wire::get_u64(f, "blob length");
    std::string bytes(len, '\0');
    wire::get_bytes(f, bytes.data(), len, "snapshot blob");
    std::istringstream blob(bytes);
    s.weights = load_weights_stream(blob);
    pool.snaps.push_back(std::move(s));
  }
  return pool;
}

double classifier_accuracy(const Classifier& clf, const Dataset& ds, int batch) {
  NoGradGuard ng;
  int64_t n = ds.count();
  ITGAN_CHECK(n > 0, ErrorKind::config, "accuracy on empty dataset");
  int64_t hits = 0;
  for (int64_t off = 0; off < n; off += batch) {
    std::vector<int64_t> idx;
    for (int64_t i = off; i < std::min(n, off + batch); i++) idx.push_back(i);
    auto pred = argmax_rows(clf.logits(ds.images(idx)));
    for (size_t i = 0; i < idx.size(); i++)
      if (pred[i] == ds.labels[static_cast<size_t>(idx[i])]) hits++;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

SnapshotPool pool_build(const DatasetSplits& data, const PoolConfig& cfg) {
  ITGAN_CHECK(cfg.nets >= 1 && cfg.epochs >= 0, ErrorKind::config, "pool: bad config");
  ITGAN_CHECK(data.train.count() > 0 && data.val.count() > 0, ErrorKind::config,
              "pool: empty dataset");
  SnapshotPool pool;
  Rng seeds(cfg.seed);
  for (int net = 0; net < cfg.nets; net++) {
    Classifier clf = Classifier::init(Arch::convnet, data.train.Ch, data.train.C, data.train.H,
                                      data.train.W, seeds.next_u64());
    Rng order(seeds.next_u64());
    auto record = [&] {
      Snapshot s;
      s.weights = clf.w.clone();
      s.val_acc = static_cast<float>(classifier_accuracy(clf, data.val));
      pool.snaps.push_back(std::move(s));
    };
    record();  // untrained snapshot, lands near chance
    mark_trainable(clf.params());
    Sgd opt(clf.params(), SgdConfig{.lr = cfg.lr, .momentum = 0.9});
    std::vector<int64_t> idx(static_cast<size_t>(data.train.count()));
    for (int64_t i = 0; i < data.train.count(); i++) idx[static_cast<size_t>(i)] = i;
    for (int epoch = 0; epoch < cfg.epochs; epoch++) {
      order.shuffle(idx);
      for (size_t off = 0; off < idx.size(); off += static_cast<size_t>(cfg.batch)) {
        std::vector<int64_t> b(idx.begin() + static_cast<int64_t>(off),
                               idx.begin() + static_cast<int64_t>(std::min(
                                                 idx.size(), off + static_cast<size_t>(cfg.batch))));
        Tensor loss = softmax_cross_entropy(clf.logits(data.train.images(b)),
                                            data.train.labels_at(b));
        opt.step(grad(loss, clf.params()));
      }
      record();
    }
  }
  return pool;
}

PoolSelector pool_selector_from_name(const std::string& name) {
  if (name == "random-init") return PoolSelector::random_init;
  if (name == "bin-range") return PoolSelector::bin_range;
  if (name == "all") return PoolSelector::all;
  fail(ErrorKind::config, "unknown pool selector: " + name);
}

Classifier pool_draw(const SnapshotPool& pool, PoolSelector sel, float lo, float hi, Rng& rng,
                     int64_t in_ch, int64_t C, int64_t h, int64_t w) {
  switch (sel) {
    case PoolSelector::random_init:
      return Classifier::init(Arch::convnet, in_ch, C, h, w, rng.next_u64());
    case PoolSelector::all: {
      ITGAN_CHECK(!pool.snaps.empty(), ErrorKind::config, "pool: empty");
      size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(pool.snaps.size())));
      return Classifier::from_weights(Arch::convnet, pool.snaps[i].weights.clone(), in_ch, C);
    }
    case PoolSelector::bin_range: {
      auto ids = pool.in_range(lo, hi);
      ITGAN_CHECK(!ids.empty(), ErrorKind::config,
                  "pool: no snapshots with validation accuracy in [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
      size_t i = ids[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(ids.size())))];
      return Classifier::from_weights(Arch::convnet, pool.snaps[i].weights.clone(), in_ch, C);
    }
  }
  fail(ErrorKind::internal, "pool_draw: unreachable");
}

}  // namespace itgan
