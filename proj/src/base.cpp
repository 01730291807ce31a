#include "itgan/base.hpp"

#include <cmath>
#include <cstdio>

namespace itgan {

void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

// mt19937_64 core, written out so the stream does not depend on the
// standard library implementation.
namespace {
constexpr uint64_t kMtLower = 0x7FFFFFFFULL;
constexpr uint64_t kMtUpper = ~kMtLower;

uint64_t splitmix64(uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

Rng::MtState Rng::split_mix(uint64_t seed) {
  MtState s;
  uint64_t x = seed;
  for (int i = 0; i < 312; i++) s.mt[i] = splitmix64(x);
  s.index = 312;
  return s;
}

uint64_t Rng::raw() {
  if (state_.index >= 312) {
    for (int i = 0; i < 312; i++) {
      uint64_t y = (state_.mt[i] & kMtUpper) | (state_.mt[(i + 1) % 312] & kMtLower);
      state_.mt[i] = state_.mt[(i + 156) % 312] ^ (y >> 1);
      if (y & 1) state_.mt[i] ^= 0xB5026F5AA96619E9ULL;
    }
    state_.index = 0;
  }
  uint64_t x = state_.mt[state_.index++];
  x ^= (x >> 29) & 0x5555555555555555ULL;
  x ^= (x << 17) & 0x71D67FFFEDA60000ULL;
  x ^= (x << 37) & 0xFFF7EEE000000000ULL;
  x ^= x >> 43;
  return x;
}

uint64_t Rng::next_u64() { return raw(); }

double Rng::uniform() {
  // 53-bit mantissa in [0,1)
  return static_cast<double>(raw() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

uint64_t Rng::uniform_int(uint64_t n) {
  ITGAN_ASSERT(n > 0, "uniform_int: n must be positive");
  // rejection sampling, no modulo bias
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = raw();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 1e-300);
  u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Rng Rng::fork(uint64_t stream_id) const {
  uint64_t x = seed_ ^ 0xA0761D6478BD642FULL;
  (void)splitmix64(x);
  uint64_t y = x + stream_id;
  return Rng(splitmix64(y));
}

std::vector<int64_t> Rng::sample_indices(int64_t n, int64_t k, bool* with_replacement) {
  ITGAN_CHECK(n > 0, ErrorKind::numeric, "sample_indices: empty population");
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(k));
  if (k > n) {
    if (with_replacement) *with_replacement = true;
    for (int64_t i = 0; i < k; i++) out.push_back(static_cast<int64_t>(uniform_int(static_cast<uint64_t>(n))));
    return out;
  }
  if (with_replacement) *with_replacement = false;
  // partial Fisher-Yates on an index array
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; i++) idx[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < k; i++) {
    int64_t j = i + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(n - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    out.push_back(idx[static_cast<size_t>(i)]);
  }
  return out;
}

void Rng::shuffle(std::vector<int64_t>& v) {
  for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; i--) {
    int64_t j = static_cast<int64_t>(uniform_int(static_cast<uint64_t>(i + 1)));
    std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
  }
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string to_hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace itgan
