#ifndef ITGAN_MODELS_HPP
#define ITGAN_MODELS_HPP

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "itgan/data.hpp"
#include "itgan/tensor.hpp"

namespace itgan {

/// Ordered name -> tensor map that round-trips losslessly through the
/// weights file (f32 only).
struct ModelWeights {
  std::vector<std::pair<std::string, Tensor>> entries;

  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::vector<Tensor> tensors() const;
  ModelWeights clone() const;
  ModelWeights to(Dtype dt) const;
  static bool equal(const ModelWeights& a, const ModelWeights& b);
};

void save_weights(const ModelWeights& w, const std::string& path);
ModelWeights load_weights(const std::string& path);
void save_weights_stream(const ModelWeights& w, std::ostream& os);
ModelWeights load_weights_stream(std::istream& is);

// ---------------------------------------------------------------------------
// embedder: 3 x [conv3x3(128, pad 1) -> instance norm -> relu -> avgpool2x2]
// ---------------------------------------------------------------------------

struct Embedder {
  ModelWeights w;
  int64_t in_ch = 1;

  static Embedder init(int64_t in_ch, uint64_t seed);
  static Embedder from_weights(ModelWeights w, int64_t in_ch);
  /// (N, d_f) flattened final feature map; spatial size must divide by 8.
  Tensor forward(const Tensor& images) const;
  static int64_t feature_dim(int64_t h, int64_t w) { return 128 * (h / 8) * (w / 8); }
  std::vector<Tensor> params() const { return w.tensors(); }
};

// ---------------------------------------------------------------------------
// conditional generator: [z ⊕ class-embed] -> linear -> 4x4x128 -> two
// (nearest x2 -> conv3x3 -> batch-norm-lite -> relu) blocks -> conv -> tanh.
// Frozen mode swaps per-batch statistics for standing statistics captured on
// a calibration batch, making generate() per-sample deterministic.
// ---------------------------------------------------------------------------

enum class GenMode { train, frozen };

struct Generator {
  ModelWeights w;
  int64_t d_z = 64, C = 10, ch_out = 1;

  static Generator init(int64_t d_z, int64_t C, int64_t ch_out, uint64_t seed);
  static Generator from_weights(ModelWeights w);
  Tensor forward(const Tensor& z, const std::vector<int64_t>& labels, GenMode mode) const;
  /// Record standing batch-norm statistics from a fixed calibration batch.
  void capture_standing_stats(uint64_t seed, int64_t batch = 512);
  bool has_standing_stats() const;
  std::vector<Tensor> params() const;  // trainable only (no standing stats)
};

// ---------------------------------------------------------------------------
// discriminator: one-hot label planes concatenated to the image, two
// stride-2 convs with leaky relu, linear to a single logit
// ---------------------------------------------------------------------------

struct Discriminator {
  ModelWeights w;
  int64_t C = 10, ch_in = 1;

  static Discriminator init(int64_t ch_in, int64_t C, uint64_t seed);
  Tensor forward(const Tensor& images, const std::vector<int64_t>& labels) const;  // (N) logits
  std::vector<Tensor> params() const { return w.tensors(); }
};

// constant one-hot conditioning planes (N,C,H,W)
Tensor onehot_planes(const std::vector<int64_t>& labels, int64_t C, int64_t h, int64_t w,
                     Dtype dt = Dtype::f32);

// ---------------------------------------------------------------------------
// classifiers for evaluation: the condensation embedder plus a linear head,
// and two cross-architecture analogues
// ---------------------------------------------------------------------------

enum class Arch { convnet, vggish, resnetish };
Arch arch_from_name(const std::string& name);
const char* arch_name(Arch a);

struct Classifier {
  Arch arch = Arch::convnet;
  ModelWeights w;
  int64_t in_ch = 1, C = 10;

  static Classifier init(Arch arch, int64_t in_ch, int64_t C, int64_t h, int64_t w,
                         uint64_t seed);
  static Classifier from_weights(Arch arch, ModelWeights w, int64_t in_ch, int64_t C);
  /// convnet only: the embedder feature rows used by the condensation loss
  Tensor features(const Tensor& images) const;
  Tensor logits(const Tensor& images) const;
  std::vector<Tensor> params() const { return w.tensors(); }
  Classifier to(Dtype dt) const;
};

// ---------------------------------------------------------------------------
// snapshot pool: partially trained classifiers grouped by validation accuracy
// ---------------------------------------------------------------------------

struct Snapshot {
  ModelWeights weights;  // full classifier (embedder + head)
  float val_acc = 0.0f;
};

struct SnapshotPool {
  std::vector<Snapshot> snaps;
  std::vector<float> bin_edges = {0.0f, 0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 1.0f};

  int bin_of(float acc) const;                    // index into bin_edges intervals
  std::vector<size_t> in_range(float lo, float hi) const;  // snapshots with acc in [lo,hi]
};

void save_pool(const SnapshotPool& pool, const std::string& path);
SnapshotPool load_pool(const std::string& path);

struct PoolConfig {
  int nets = 4;          // independently seeded classifiers
  int epochs = 3;        // per net; a snapshot is taken after every epoch and at init
  int batch = 64;
  double lr = 0.01;
  uint64_t seed = 0;
};

SnapshotPool pool_build(const DatasetSplits& data, const PoolConfig& cfg);

enum class PoolSelector { random_init, bin_range, all };
PoolSelector pool_selector_from_name(const std::string& name);

/// Draw an embedder+head classifier per the selector. random_init ignores the
/// pool and returns a fresh initialization; bin_range draws uniformly from
/// snapshots with val_acc in [lo, hi].
Classifier pool_draw(const SnapshotPool& pool, PoolSelector sel, float lo, float hi, Rng& rng,
                     int64_t in_ch, int64_t C, int64_t h, int64_t w);

// classification accuracy of a classifier on a dataset (no grad)
double classifier_accuracy(const Classifier& clf, const Dataset& ds, int batch = 256);

}  // namespace itgan

#endif  // ITGAN_MODELS_HPP
