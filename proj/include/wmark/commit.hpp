#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>

#include "wmark/bytes.hpp"
#include "wmark/error.hpp"
#include "wmark/rng.hpp"
#include "wmark/sha256.hpp"

namespace wmark {

/// Salted-hash commitments.
///
/// commit(payload, r) = SHA-256(tag || r || body). Binding rests on collision
/// resistance of SHA-256, hiding on modelling it as a random oracle. The tag
/// byte separates commitments to trigger inputs from commitments to labels.

inline constexpr std::size_t kRandomnessBytes = 32;

struct Randomness {
  std::array<std::uint8_t, kRandomnessBytes> bytes{};

  friend bool operator==(const Randomness&, const Randomness&) = default;
};

struct Commitment {
  Digest digest{};

  friend bool operator==(const Commitment&, const Commitment&) = default;
};

enum class PayloadTag : std::uint8_t {
  TriggerInput = 0x01,
  Label = 0x02,
};

class Payload {
 public:
  Payload(PayloadTag tag, Bytes body) : tag_(tag), body_(std::move(body)) {
    if (tag_ != PayloadTag::TriggerInput && tag_ != PayloadTag::Label) {
      throw Error("payload tag must be 0x01 (trigger input) or 0x02 (label)");
    }
    if (body_.empty()) throw Error("payload body must be non-empty");
  }

  static Payload trigger_input(std::span<const std::uint8_t> features) {
    return {PayloadTag::TriggerInput, Bytes(features.begin(), features.end())};
  }

  static Payload label(std::uint8_t value) { return {PayloadTag::Label, Bytes{value}}; }

  PayloadTag tag() const noexcept { return tag_; }
  const Bytes& body() const noexcept { return body_; }

 private:
  PayloadTag tag_;
  Bytes body_;
};

inline Commitment commit(const Payload& payload, const Randomness& r) {
  Sha256 h;
  h.update(static_cast<std::uint8_t>(payload.tag()));
  h.update(r.bytes);
  h.update(payload.body());
  return Commitment{h.finish()};
}

inline bool open(const Commitment& c, const Payload& payload, const Randomness& r) {
  const Commitment recomputed = commit(payload, r);
  return constant_time_equal(recomputed.digest, c.digest);
}

inline Randomness sample_randomness(Rng& rng) {
  Randomness r;
  for (std::size_t i = 0; i < kRandomnessBytes; i += 8) {
    const std::uint64_t word = rng.next_u64();
    for (std::size_t j = 0; j < 8; ++j) r.bytes[i + j] = static_cast<std::uint8_t>(word >> (8 * j));
  }
  return r;
}

}  // namespace wmark
