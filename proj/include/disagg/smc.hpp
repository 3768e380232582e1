#pragma once

// Additive secret sharing over Z_M with M = 2^61. Reals travel as fixed-point
// words with 20 fractional bits; sums of words are exact, so every aggregate
// is the bit-exact sum of the quantized inputs regardless of order.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "disagg/matrix.hpp"
#include "disagg/random.hpp"

namespace disagg {

inline constexpr std::uint64_t kModulus = std::uint64_t{1} << 61;
inline constexpr std::uint64_t kModMask = kModulus - 1;
inline constexpr int kScaleBits = 20;
inline constexpr double kScale = static_cast<double>(std::uint64_t{1} << kScaleBits);

struct FixedPoint {
  std::uint64_t raw = 0;

  /// Largest magnitude accepted by encode: M / (4 * scale).
  static constexpr double max_magnitude() { return static_cast<double>(kModulus / 4) / kScale; }

  static FixedPoint from_integer(std::int64_t q) {
    return {static_cast<std::uint64_t>(q) & kModMask};
  }

  /// Round-to-nearest encoding.
  static FixedPoint encode(double v) {
    check_range(v);
    return from_integer(std::llround(v * kScale));
  }
  /// Encoding rounded toward +inf; sums of these never undershoot the real sum.
  static FixedPoint encode_ceil(double v) {
    check_range(v);
    return from_integer(static_cast<std::int64_t>(std::ceil(v * kScale)));
  }

  /// Words at or above M/2 represent negatives.
  std::int64_t to_integer() const {
    return raw >= kModulus / 2 ? static_cast<std::int64_t>(raw) - static_cast<std::int64_t>(kModulus)
                               : static_cast<std::int64_t>(raw);
  }
  double decode() const { return static_cast<double>(to_integer()) / kScale; }

  friend FixedPoint operator+(FixedPoint a, FixedPoint b) { return {(a.raw + b.raw) & kModMask}; }
  friend FixedPoint operator-(FixedPoint a, FixedPoint b) { return {(a.raw - b.raw) & kModMask}; }
  FixedPoint& operator+=(FixedPoint b) { return *this = *this + b; }
  friend bool operator==(FixedPoint, FixedPoint) = default;

 private:
  static void check_range(double v) {
    if (!std::isfinite(v)) throw std::invalid_argument("FixedPoint: non-finite value");
    if (std::abs(v) >= max_magnitude()) throw std::overflow_error("FixedPoint: magnitude out of range");
  }
};

using FixedVector = std::vector<FixedPoint>;

inline FixedVector quantize(std::span<const double> v) {
  FixedVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = FixedPoint::encode(v[i]);
  return out;
}

inline Vector dequantize(const FixedVector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i].decode();
  return out;
}

inline std::vector<std::uint64_t> raw_words(const FixedVector& v) {
  std::vector<std::uint64_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i].raw;
  return out;
}

/// Shares s_{sender, ., receiver}.
struct ShareBundle {
  std::size_t sender = 0;
  std::size_t receiver = 0;
  FixedVector shares;
};

/// sigma_{owner, .} = sum over senders of the shares addressed to `owner`.
struct SigmaVector {
  std::size_t owner = 0;
  FixedVector values;
};

/// Splits already-encoded words into n_agents bundles; the first n_agents - 1
/// are uniform on Z_M and the last one fixes the sum.
inline std::vector<ShareBundle> split_encoded(std::size_t sender, const FixedVector& secret, std::size_t n_agents,
                                              CounterRng& rng) {
  if (n_agents == 0) throw std::invalid_argument("split: need at least one agent");
  std::vector<ShareBundle> out(n_agents);
  FixedVector rest = secret;
  for (std::size_t m = 0; m < n_agents; ++m) {
    out[m].sender = sender;
    out[m].receiver = m;
    out[m].shares.resize(secret.size());
    for (std::size_t t = 0; t < secret.size(); ++t) {
      if (m + 1 < n_agents) {
        out[m].shares[t] = FixedPoint{rng() & kModMask};
        rest[t] = rest[t] - out[m].shares[t];
      } else {
        out[m].shares[t] = rest[t];
      }
    }
  }
  return out;
}

/// Encodes x_n and splits it. |x| * scale must stay below M / (4 N).
inline std::vector<ShareBundle> split(std::size_t sender, std::span<const double> x, std::size_t n_agents,
                                      CounterRng& rng) {
  const double limit = FixedPoint::max_magnitude() / static_cast<double>(std::max<std::size_t>(n_agents, 1));
  for (double v : x)
    if (!(std::abs(v) < limit)) throw std::overflow_error("split: magnitude out of range for " + std::to_string(n_agents) + " agents");
  return split_encoded(sender, quantize(x), n_agents, rng);
}

/// Sums the bundles an agent received.
inline SigmaVector combine(std::size_t owner, const std::vector<ShareBundle>& received) {
  SigmaVector s;
  s.owner = owner;
  for (const auto& b : received) {
    if (b.receiver != owner) throw std::invalid_argument("combine: bundle addressed to another agent");
    if (s.values.empty()) s.values.assign(b.shares.size(), FixedPoint{});
    if (b.shares.size() != s.values.size()) throw std::invalid_argument("combine: bundle length mismatch");
    for (std::size_t t = 0; t < b.shares.size(); ++t) s.values[t] += b.shares[t];
  }
  return s;
}

/// Operator side: requires exactly one sigma per agent 0..N-1.
inline FixedVector aggregate_words(const std::vector<SigmaVector>& sigmas) {
  if (sigmas.empty()) throw std::invalid_argument("aggregate: no sigma vectors");
  std::vector<char> seen(sigmas.size(), 0);
  FixedVector total(sigmas.front().values.size());
  for (const auto& s : sigmas) {
    if (s.owner >= sigmas.size()) throw std::invalid_argument("aggregate: missing agent");
    if (seen[s.owner]) throw std::invalid_argument("aggregate: duplicate owner " + std::to_string(s.owner));
    seen[s.owner] = 1;
    if (s.values.size() != total.size()) throw std::invalid_argument("aggregate: length mismatch");
    for (std::size_t t = 0; t < total.size(); ++t) total[t] += s.values[t];
  }
  return total;
}

inline Vector aggregate(const std::vector<SigmaVector>& sigmas) { return dequantize(aggregate_words(sigmas)); }

/// Runs the full share / sigma / aggregate exchange on pre-encoded rows.
inline FixedVector smc_sum_words(const std::vector<FixedVector>& rows, CounterRng rng) {
  const std::size_t N = rows.size();
  std::vector<std::vector<ShareBundle>> inbox(N);
  for (std::size_t n = 0; n < N; ++n) {
    CounterRng agent_rng = rng.split(n);
    for (auto& b : split_encoded(n, rows[n], N, agent_rng)) inbox[b.receiver].push_back(std::move(b));
  }
  std::vector<SigmaVector> sigmas;
  sigmas.reserve(N);
  for (std::size_t n = 0; n < N; ++n) sigmas.push_back(combine(n, inbox[n]));
  return aggregate_words(sigmas);
}

/// Sum of the rows of x through the protocol.
inline Vector smc_sum(const Matrix& x, CounterRng rng) {
  std::vector<FixedVector> rows;
  for (std::size_t n = 0; n < x.rows(); ++n) rows.push_back(quantize(x.row(n)));
  return dequantize(smc_sum_words(rows, rng));
}

inline double smc_sum_scalar(std::span<const double> values, CounterRng rng) {
  std::vector<FixedVector> rows;
  for (double v : values) rows.push_back({FixedPoint::encode(v)});
  return smc_sum_words(rows, rng).front().decode();
}

}  // namespace disagg
