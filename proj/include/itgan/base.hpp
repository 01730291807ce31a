#ifndef ITGAN_BASE_HPP
#define ITGAN_BASE_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace itgan {

// Error taxonomy shared by the library, the C API and the CLI exit codes.
enum class ErrorKind : int {
  missing_input = 2,  // a required file/artifact does not exist
  config = 3,         // bad key, bad value, malformed config or file header
  numeric = 4,        // NaN/Inf, divergence, shape mismatch at runtime
  internal = 5,       // broken invariant; always a bug
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg)
      : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& msg);

#define ITGAN_CHECK(cond, kind, msg)            \
  do {                                          \
    if (!(cond)) ::itgan::fail((kind), (msg));  \
  } while (0)

#define ITGAN_ASSERT(cond, msg) \
  ITGAN_CHECK(cond, ::itgan::ErrorKind::internal, (msg))

// Deterministic PRNG. mt19937_64 with hand-rolled distributions so that
// streams are identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(split_mix(seed)) {}

  uint64_t next_u64();
  // uniform in [0, 1)
  double uniform();
  // uniform in [lo, hi)
  double uniform(double lo, double hi);
  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n);
  // standard normal via Box-Muller (one value per call, cached pair)
  double normal();

  // child stream for an independent stage; decorrelated via splitmix
  Rng fork(uint64_t stream_id) const;

  // k distinct indices from [0, n); if k > n, samples with replacement and
  // sets *with_replacement when provided
  std::vector<int64_t> sample_indices(int64_t n, int64_t k,
                                      bool* with_replacement = nullptr);
  void shuffle(std::vector<int64_t>& v);

 private:
  struct MtState {
    uint64_t mt[312];
    int index = 313;
  };
  static MtState split_mix(uint64_t seed);
  uint64_t raw();

  uint64_t seed_;
  MtState state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a 64-bit, used for config content hashes.
uint64_t fnv1a64(const std::string& bytes);
std::string to_hex16(uint64_t v);

}  // namespace itgan

#endif  // ITGAN_BASE_HPP
