#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vqid/ensemble.hpp"
#include "vqid/prob.hpp"
#include "vqid/rng.hpp"
#include "vqid/types.hpp"

// One identification trial: enroll M = ceil(exp(n R_I)) users by compressing
// fresh source words, pick a user, push that user's ORIGINAL source word
// through the channel, and ask the decoders for the index.

namespace vqid {

struct SystemConfig {
  Distribution source = Distribution::uniform(2);                  // G over X
  ConditionalKernel channel = ConditionalKernel::identity(2, 2);   // W: X -> Z
  int n = 0;
  double rate_identification = 0.0;  // R_I, nats per symbol
  MappingPolicy policy;
  CompressionConstraint constraint;
  std::uint64_t user_cap = (std::uint64_t{1} << 20);
  std::uint64_t subcode_cap = (std::uint64_t{1} << 20);
  std::uint64_t brute_cap = (std::uint64_t{1} << 24);
  std::size_t ky = 0;  // defaults to |X| when left 0

  std::size_t kx() const { return source.size(); }
  std::size_t kz() const { return channel.out_size(); }
  std::size_t ky_or_default() const { return ky == 0 ? source.size() : ky; }

  bool channel_positive() const { return channel.strictly_positive(); }

  std::uint64_t enrolled_count() const {
    double m = std::ceil(std::exp(n * rate_identification));
    if (!(m < 9.0e18) || static_cast<std::uint64_t>(m) > user_cap)
      throw CapExceededError("enrolled_count: M exceeds user cap");
    std::uint64_t v = static_cast<std::uint64_t>(m);
    return v < 1 ? 1 : v;
  }

  void validate() const {
    if (n < 1) throw ConfigError("config: n must be >= 1");
    if (rate_identification < 0.0) throw ConfigError("config: R_I must be nonnegative");
    if (channel.in_size() != source.size())
      throw ConfigError("config: channel input dimension != source dimension");
    policy.validate();
    constraint.validate();
    (void)enrolled_count();
  }
};

inline Sequence sample_source(const Distribution& G, int n, std::mt19937_64& g) {
  Sequence x(static_cast<std::size_t>(n));
  for (auto& sym : x) {
    double u = uniform01(g), acc = 0.0;
    std::size_t pick = G.size() - 1;
    for (std::size_t i = 0; i < G.size(); ++i) {
      acc += G[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    sym = static_cast<Symbol>(pick);
  }
  return x;
}

// Memoryless channel acting on the original source word.
inline Sequence transmit(const ConditionalKernel& W, const Sequence& x, std::mt19937_64& g) {
  Sequence z(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (x[t] >= W.in_size()) throw ConfigError("transmit: symbol out of channel alphabet");
    double u = uniform01(g), acc = 0.0;
    std::size_t pick = W.out_size() - 1;
    for (std::size_t z2 = 0; z2 < W.out_size(); ++z2) {
      acc += W(x[t], z2);
      if (u < acc) {
        pick = z2;
        break;
      }
    }
    z[t] = static_cast<Symbol>(pick);
  }
  return z;
}

// Enrollment database row: the stored (compressed) word plus the flag that
// the encoder emitted the error word for this user.
struct EnrolledRow {
  Sequence y;
  bool error_word = false;
};

enum class DecoderId { universal, mmi, approx_ml, exact_ml };

inline const char* to_string(DecoderId d) {
  switch (d) {
    case DecoderId::universal: return "universal";
    case DecoderId::mmi: return "mmi";
    case DecoderId::approx_ml: return "approx_ml";
    case DecoderId::exact_ml: return "exact_ml";
  }
  return "?";
}

struct DecoderDecision {
  int index = -1;      // decoded user, -1 when the decoder declares failure
  double metric = 0.0; // winning metric value (decoder-specific convention)
  bool failed = false; // every candidate was excluded
  bool tie = false;    // winner shared its metric with another candidate
};

struct TrialOutcome {
  int true_index = -1;
  Sequence x_true;  // channel input: always the original source word
  Sequence z;
  std::vector<EnrolledRow> rows;
  bool encoder_error_word_hit = false;  // the true user's row is flagged
  std::map<DecoderId, DecoderDecision> decisions;

  bool correct(DecoderId d) const {
    auto it = decisions.find(d);
    return it != decisions.end() && !it->second.failed && it->second.index == true_index;
  }
};

}  // namespace vqid
