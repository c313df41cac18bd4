#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wmark/bytes.hpp"
#include "wmark/commit.hpp"
#include "wmark/data.hpp"
#include "wmark/error.hpp"
#include "wmark/nn.hpp"
#include "wmark/sha256.hpp"
#include "wmark/watermark.hpp"

namespace wmark {

/// Publicly verifiable keys via cut-and-choose made non-interactive.
///
/// The challenge e is derived by hashing the verification key. Entries with
/// e_i = 1 are opened in the public key and checked against the oracle by
/// anyone; entries with e_i = 0 stay secret and are checked by an argument
/// backend that sees them as a witness.

struct Challenge {
  std::vector<std::uint8_t> bits;  // each 0 or 1

  std::size_t size() const { return bits.size(); }
  std::size_t count(std::uint8_t bit) const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), bit));
  }

  friend bool operator==(const Challenge&, const Challenge&) = default;
};

// One element of a marking key.
struct MarkingEntry {
  Bytes input;
  int label = 0;
  Randomness rand_t;
  Randomness rand_L;
};

// One element of a verification key.
struct CommitmentEntry {
  Commitment commit_t;
  Commitment commit_L;
};

// Entries picked out of a key, with their positions in the full key.
template <typename Entry>
struct Selection {
  std::vector<std::size_t> indices;
  std::vector<Entry> entries;

  std::size_t size() const { return entries.size(); }
};

using OpenedHalf = Selection<MarkingEntry>;
using CommittedHalf = Selection<CommitmentEntry>;

inline std::vector<MarkingEntry> entries_of(const MarkingKey& mk) {
  mk.validate();
  std::vector<MarkingEntry> out;
  out.reserve(mk.size());
  for (std::size_t i = 0; i < mk.size(); ++i) {
    out.push_back({mk.backdoor.inputs[i], mk.backdoor.labels[i], mk.rand_t[i], mk.rand_L[i]});
  }
  return out;
}

inline std::vector<CommitmentEntry> entries_of(const VerificationKey& vk) {
  if (vk.commits_t.size() != vk.commits_L.size()) throw DimensionError("verification key lists differ in length");
  std::vector<CommitmentEntry> out;
  out.reserve(vk.size());
  for (std::size_t i = 0; i < vk.size(); ++i) out.push_back({vk.commits_t[i], vk.commits_L[i]});
  return out;
}

/// key|_bit^e: the entries at positions where e equals `bit`, in index order.
template <typename Entry>
Selection<Entry> select(std::span<const Entry> key, const Challenge& e, std::uint8_t bit) {
  if (key.size() != e.size()) {
    throw DimensionError("key has " + std::to_string(key.size()) + " entries, challenge has " +
                         std::to_string(e.size()) + " bits");
  }
  Selection<Entry> out;
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (e.bits[i] == bit) {
      out.indices.push_back(i);
      out.entries.push_back(key[i]);
    }
  }
  return out;
}

inline OpenedHalf select(const MarkingKey& mk, const Challenge& e, std::uint8_t bit) {
  const auto entries = entries_of(mk);
  return select<MarkingEntry>(entries, e, bit);
}

inline CommittedHalf select(const VerificationKey& vk, const Challenge& e, std::uint8_t bit) {
  const auto entries = entries_of(vk);
  return select<CommitmentEntry>(entries, e, bit);
}

inline constexpr std::string_view kVkDomain = "wmark/vk/v1";

// Canonical byte string hashed into the challenge:
// domain || u64be(len) || for each i: 0x01 || c_t[i] || 0x02 || c_L[i].
inline Bytes serialize_vk(const VerificationKey& vk) {
  if (vk.commits_t.size() != vk.commits_L.size()) throw DimensionError("verification key lists differ in length");
  Bytes out(kVkDomain.begin(), kVkDomain.end());
  append_u64_be(out, vk.size());
  for (std::size_t i = 0; i < vk.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(PayloadTag::TriggerInput));
    append(out, vk.commits_t[i].digest);
    out.push_back(static_cast<std::uint8_t>(PayloadTag::Label));
    append(out, vk.commits_L[i].digest);
  }
  return out;
}

/// e = first |vk| bits of SHA-256(ser(vk) || u64be(0)) || SHA-256(ser(vk) || u64be(1)) || ...,
/// most significant bit of each byte first.
inline Challenge derive_challenge(const VerificationKey& vk) {
  const Bytes ser = serialize_vk(vk);
  Challenge e;
  e.bits.reserve(vk.size());
  for (std::uint64_t ctr = 0; e.bits.size() < vk.size(); ++ctr) {
    Bytes block = ser;
    append_u64_be(block, ctr);
    const Digest d = sha256(block);
    for (std::uint8_t byte : d) {
      for (int bit = 7; bit >= 0 && e.bits.size() < vk.size(); --bit) {
        e.bits.push_back(static_cast<std::uint8_t>((byte >> bit) & 1));
      }
    }
  }
  return e;
}

struct PublicMarkingKey {
  MarkingKey mk;
  Challenge e;
};

struct PublicVerificationKey {
  VerificationKey vk;
  OpenedHalf opened;
};

struct PublicKeyPair {
  PublicMarkingKey mk_p;
  PublicVerificationKey vk_p;
};

// Packages an existing key pair: e = H(vk), vk_p carries mk|_1^e.
inline PublicKeyPair make_public_keys(KeyPair keys) {
  Challenge e = derive_challenge(keys.vk);
  OpenedHalf opened = select(keys.mk, e, 1);
  return {{std::move(keys.mk), std::move(e)}, {std::move(keys.vk), std::move(opened)}};
}

template <LabelOracle Oracle>
PublicKeyPair pkeygen(std::size_t size, int dim, int num_labels, const Oracle& oracle, Rng& rng) {
  if (size == 0 || size % 4 != 0) {
    throw Error("public key size must be a positive multiple of 4 (got " + std::to_string(size) + ")");
  }
  return make_public_keys(keygen(size, dim, num_labels, oracle, rng));
}

struct CheckResult {
  bool ok = false;
  std::optional<std::size_t> index;
  std::string reason;

  explicit operator bool() const { return ok; }
};

/// Opened-half check: every opened element opens against its commitments and
/// carries a label different from the oracle's (undefined differs from all).
template <LabelOracle Oracle>
CheckResult check_opened(const PublicVerificationKey& vk_p, const Oracle& oracle) {
  const auto& op = vk_p.opened;
  if (op.indices.size() != op.entries.size()) return {false, std::nullopt, "opened half is malformed"};
  for (std::size_t j = 0; j < op.size(); ++j) {
    const std::size_t i = op.indices[j];
    const MarkingEntry& m = op.entries[j];
    if (i >= vk_p.vk.size()) return {false, i, "opened index " + std::to_string(i) + " outside the key"};
    if (!open(vk_p.vk.commits_t[i], Payload::trigger_input(m.input), m.rand_t)) {
      return {false, i, "trigger commitment at index " + std::to_string(i) + " does not open"};
    }
    if (m.label < 0 || m.label > 255 || !open(vk_p.vk.commits_L[i], label_payload(m.label), m.rand_L)) {
      return {false, i, "label commitment at index " + std::to_string(i) + " does not open"};
    }
    const auto truth = oracle.label(Backdoor::features(m.input));
    if (truth.has_value() && *truth == m.label) {
      return {false, i, "opened element at index " + std::to_string(i) + " carries its true label"};
    }
  }
  return {true, std::nullopt, {}};
}

// SHA-256 over the architecture id, layer dims and little-endian weights.
inline Digest model_digest(const Model& m) {
  Sha256 h;
  h.update(std::string_view(kArchitectureId));
  Bytes header;
  for (int d : m.layer_dims()) append_u32_be(header, static_cast<std::uint32_t>(d));
  h.update(header);
  h.update(weights_to_le_bytes(m));
  return h.finish();
}

/// Public statement for the unopened half: the circuit that opens every
/// commitment in vk|_0^e with the witness and counts classification
/// mismatches on the model with the given digest.
struct UnopenedStatement {
  std::vector<std::size_t> indices;
  std::vector<CommitmentEntry> commitments;
  std::uint64_t allowed_mismatches = 0;
  Digest model{};

  friend bool operator==(const UnopenedStatement& a, const UnopenedStatement& b) {
    if (a.indices != b.indices || a.allowed_mismatches != b.allowed_mismatches || a.model != b.model) return false;
    if (a.commitments.size() != b.commitments.size()) return false;
    for (std::size_t i = 0; i < a.commitments.size(); ++i) {
      if (a.commitments[i].commit_t != b.commitments[i].commit_t ||
          a.commitments[i].commit_L != b.commitments[i].commit_L) {
        return false;
      }
    }
    return true;
  }
};

inline constexpr std::string_view kStatementDomain = "wmark/stmt/v1";

// domain || model digest || u64be(allowed) || u64be(n) || n x (u64be(index) || c_t || c_L)
inline Bytes serialize_statement(const UnopenedStatement& s) {
  if (s.indices.size() != s.commitments.size()) throw DimensionError("statement indices and commitments differ");
  Bytes out(kStatementDomain.begin(), kStatementDomain.end());
  append(out, s.model);
  append_u64_be(out, s.allowed_mismatches);
  append_u64_be(out, s.indices.size());
  for (std::size_t j = 0; j < s.indices.size(); ++j) {
    append_u64_be(out, s.indices[j]);
    append(out, s.commitments[j].commit_t.digest);
    append(out, s.commitments[j].commit_L.digest);
  }
  return out;
}

inline UnopenedStatement parse_statement(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw ParseError("truncated circuit statement", pos);
  };
  auto read_u64 = [&] {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | bytes[pos++];
    return v;
  };
  auto read_digest = [&] {
    need(32);
    Digest d{};
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), 32, d.begin());
    pos += 32;
    return d;
  };
  need(kStatementDomain.size());
  if (!std::equal(kStatementDomain.begin(), kStatementDomain.end(), bytes.begin())) {
    throw ParseError("circuit statement has an unknown domain tag", 0);
  }
  pos = kStatementDomain.size();
  UnopenedStatement s;
  s.model = read_digest();
  s.allowed_mismatches = read_u64();
  const std::uint64_t n = read_u64();
  if (n > (bytes.size() - pos) / 72) throw ParseError("circuit statement count exceeds its length", pos);
  for (std::uint64_t j = 0; j < n; ++j) {
    s.indices.push_back(static_cast<std::size_t>(read_u64()));
    s.commitments.push_back({Commitment{read_digest()}, Commitment{read_digest()}});
  }
  if (pos != bytes.size()) throw ParseError("trailing bytes after circuit statement", pos);
  return s;
}

class BackendError : public Error {
 public:
  using Error::Error;
};

/// An argument system proving that the prover knows a witness mk|_0^e
/// satisfying the circuit described by a serialized UnopenedStatement.
/// Returns the verifier's verdict; operational failures throw BackendError.
template <typename B>
concept ArgumentBackend = requires(B& b, std::span<const std::uint8_t> statement, const Model& m) {
  { b.name() } -> std::convertible_to<std::string>;
  { b.prove_and_verify(statement, m) } -> std::same_as<bool>;
};

/// Circuit evaluation shared by backends: witness opens every statement
/// commitment and the model reproduces all but `allowed_mismatches` labels.
inline bool evaluate_circuit(const UnopenedStatement& s, const Model& m, const OpenedHalf& witness) {
  if (witness.indices != s.indices || witness.entries.size() != s.commitments.size()) return false;
  std::uint64_t mismatches = 0;
  for (std::size_t j = 0; j < s.indices.size(); ++j) {
    const MarkingEntry& w = witness.entries[j];
    if (w.label < 0 || w.label > 255) return false;
    if (!open(s.commitments[j].commit_t, Payload::trigger_input(w.input), w.rand_t)) return false;
    if (!open(s.commitments[j].commit_L, label_payload(w.label), w.rand_L)) return false;
    if (static_cast<int>(w.input.size()) != m.input_dim()) return false;
    const auto x = Backdoor::features(w.input);
    if (m.classify(x) != w.label) ++mismatches;
  }
  return mismatches <= s.allowed_mismatches;
}

/// Stand-in for a zero-knowledge argument: the prover hands mk|_0^e to the
/// verifier over a private channel, and the verifier evaluates the circuit
/// itself. Sound and complete, but not zero-knowledge.
class DesignatedVerifierBackend {
 public:
  explicit DesignatedVerifierBackend(OpenedHalf witness) : witness_(std::move(witness)) {}

  static DesignatedVerifierBackend from_prover(const PublicMarkingKey& mk_p) {
    return DesignatedVerifierBackend(select(mk_p.mk, mk_p.e, 0));
  }

  std::string name() const { return "designated-verifier"; }

  bool prove_and_verify(std::span<const std::uint8_t> statement_bytes, const Model& m) {
    UnopenedStatement s;
    try {
      s = parse_statement(statement_bytes);
    } catch (const ParseError& e) {
      throw BackendError(std::string("designated-verifier backend: ") + e.what());
    }
    if (s.model != model_digest(m)) throw BackendError("designated-verifier backend: statement names a different model");
    return evaluate_circuit(s, m, witness_);
  }

 private:
  OpenedHalf witness_;
};

static_assert(ArgumentBackend<DesignatedVerifierBackend>);

enum class PVerifyStep {
  None,
  Challenge,  // opened indices do not match H(vk)
  Opened,     // opened half fails to open or carries a true label
  Argument,   // backend rejects the unopened half
};

inline const char* to_string(PVerifyStep s) {
  switch (s) {
    case PVerifyStep::None: return "none";
    case PVerifyStep::Challenge: return "challenge";
    case PVerifyStep::Opened: return "opened";
    case PVerifyStep::Argument: return "argument";
  }
  return "unknown";
}

struct PVerifyResult {
  bool accepted = false;
  PVerifyStep failed_step = PVerifyStep::None;
  std::optional<std::size_t> index;
  std::string reason;

  explicit operator bool() const { return accepted; }
};

inline UnopenedStatement build_statement(const VerificationKey& vk, const Challenge& e, const Model& m,
                                         const VerifyPolicy& policy) {
  const CommittedHalf hidden = select(vk, e, 0);
  UnopenedStatement s;
  s.indices = hidden.indices;
  s.commitments = hidden.entries;
  s.allowed_mismatches = policy.allowed_mismatches(hidden.size());
  s.model = model_digest(m);
  return s;
}

/// Public verification. Steps: recompute e' = H(vk) and require the opened
/// indices to be exactly {i : e'_i = 1}; check the opened half; run the
/// backend on the statement for the unopened half.
template <LabelOracle Oracle, ArgumentBackend Backend>
PVerifyResult pverify(const PublicVerificationKey& vk_p, const Model& m, const Oracle& oracle,
                      const VerifyPolicy& policy, Backend& backend) {
  policy.validate();
  PVerifyResult r;
  if (vk_p.vk.commits_t.size() != vk_p.vk.commits_L.size()) {
    r.failed_step = PVerifyStep::Challenge;
    r.reason = "verification key lists differ in length";
    return r;
  }
  const Challenge e = derive_challenge(vk_p.vk);
  std::vector<std::size_t> expected;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e.bits[i] == 1) expected.push_back(i);
  }
  if (vk_p.opened.indices != expected) {
    r.failed_step = PVerifyStep::Challenge;
    r.reason = "opened indices do not match the challenge recomputed from vk";
    return r;
  }

  if (const auto opened = check_opened(vk_p, oracle); !opened) {
    r.failed_step = PVerifyStep::Opened;
    r.index = opened.index;
    r.reason = opened.reason;
    return r;
  }

  const Bytes statement = serialize_statement(build_statement(vk_p.vk, e, m, policy));
  if (!backend.prove_and_verify(statement, m)) {
    r.failed_step = PVerifyStep::Argument;
    r.reason = "argument backend (" + std::string(backend.name()) + ") rejected the unopened half";
    return r;
  }
  r.accepted = true;
  return r;
}

}  // namespace wmark
