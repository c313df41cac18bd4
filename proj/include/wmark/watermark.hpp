#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wmark/commit.hpp"
#include "wmark/data.hpp"
#include "wmark/error.hpp"
#include "wmark/nn.hpp"
#include "wmark/rng.hpp"

namespace wmark {

/// Trigger set with its assigned (wrong) labels. Each input is stored as one
/// byte per feature; the model sees byte / 255.
struct Backdoor {
  int dim = 0;
  std::vector<Bytes> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }

  static std::vector<float> features(std::span<const std::uint8_t> bytes) {
    std::vector<float> out(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<float>(bytes[i]) / 255.0f;
    return out;
  }

  LabeledSet as_labeled_set() const {
    Eigen::MatrixXf in(dim, static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < size(); ++i) {
      const auto f = features(inputs[i]);
      in.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXf>(f.data(), dim);
    }
    return {std::move(in), labels};
  }
};

struct MarkingKey {
  Backdoor backdoor;
  std::vector<Randomness> rand_t;
  std::vector<Randomness> rand_L;

  std::size_t size() const { return backdoor.size(); }

  void validate() const {
    if (backdoor.labels.size() != backdoor.size() || rand_t.size() != backdoor.size() ||
        rand_L.size() != backdoor.size()) {
      throw DimensionError("marking key components have different lengths");
    }
  }
};

struct VerificationKey {
  std::vector<Commitment> commits_t;
  std::vector<Commitment> commits_L;

  std::size_t size() const { return commits_t.size(); }

  friend bool operator==(const VerificationKey&, const VerificationKey&) = default;
};

struct VerifyPolicy {
  double epsilon = 0.25;

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw Error("epsilon must lie in (0, 0.5)");
  }

  // Largest number of trigger misclassifications tolerated among `n` points.
  std::size_t allowed_mismatches(std::size_t n) const {
    return static_cast<std::size_t>(std::floor(epsilon * static_cast<double>(n) + 1e-9));
  }
};

enum class VerifyStep {
  None,
  KeyShape,      // mk / vk lengths disagree
  BackdoorCheck, // step 1: a trigger label equals the true label
  Open,          // step 2: a commitment does not open
  Classify,      // step 3: too many trigger points misclassified
};

inline const char* to_string(VerifyStep s) {
  switch (s) {
    case VerifyStep::None: return "none";
    case VerifyStep::KeyShape: return "key-shape";
    case VerifyStep::BackdoorCheck: return "backdoor";
    case VerifyStep::Open: return "open";
    case VerifyStep::Classify: return "classify";
  }
  return "unknown";
}

struct VerifyResult {
  bool accepted = false;
  VerifyStep failed_step = VerifyStep::None;
  std::optional<std::size_t> index;
  std::size_t mismatches = 0;
  std::size_t allowed_mismatches = 0;
  std::string reason;

  explicit operator bool() const { return accepted; }
};

template <LabelOracle Oracle>
Backdoor sample_backdoor(std::size_t size, int dim, int num_labels, const Oracle& oracle, Rng& rng,
                         std::size_t max_attempts = 1000) {
  if (size < 1) throw Error("a backdoor needs at least one element");
  if (dim < 1 || num_labels < 2) throw Error("invalid backdoor shape");
  Backdoor b;
  b.dim = dim;
  std::set<Bytes> seen;
  Bytes x(static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < size; ++i) {
    std::size_t attempts = 0;
    for (;;) {
      if (++attempts > max_attempts) {
        throw Error("trigger sampling exceeded " + std::to_string(max_attempts) +
                    " attempts; the oracle leaves almost no undefined region");
      }
      for (auto& byte : x) byte = rng.next_byte();
      if (oracle.label(Backdoor::features(x)).has_value()) continue;
      if (!seen.insert(x).second) continue;
      break;
    }
    b.inputs.push_back(x);
    b.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(num_labels))));
  }
  return b;
}

inline Payload label_payload(int label) {
  if (label < 0 || label > 255) throw Error("labels must fit in one byte");
  return Payload::label(static_cast<std::uint8_t>(label));
}

// Commits every element of a backdoor with the given randomness.
inline VerificationKey commit_key(const MarkingKey& mk) {
  mk.validate();
  VerificationKey vk;
  for (std::size_t i = 0; i < mk.size(); ++i) {
    vk.commits_t.push_back(commit(Payload::trigger_input(mk.backdoor.inputs[i]), mk.rand_t[i]));
    vk.commits_L.push_back(commit(label_payload(mk.backdoor.labels[i]), mk.rand_L[i]));
  }
  return vk;
}

struct KeyPair {
  MarkingKey mk;
  VerificationKey vk;
};

template <LabelOracle Oracle>
KeyPair keygen(std::size_t size, int dim, int num_labels, const Oracle& oracle, Rng& rng) {
  MarkingKey mk;
  mk.backdoor = sample_backdoor(size, dim, num_labels, oracle, rng);
  for (std::size_t i = 0; i < size; ++i) mk.rand_t.push_back(sample_randomness(rng));
  for (std::size_t i = 0; i < size; ++i) mk.rand_L.push_back(sample_randomness(rng));
  VerificationKey vk = commit_key(mk);
  return {std::move(mk), std::move(vk)};
}

enum class MarkStrategy { FromScratch, PreTrained };

inline const char* to_string(MarkStrategy s) { return s == MarkStrategy::FromScratch ? "from-scratch" : "pre-trained"; }

/// Embeds the backdoor of `mk`. FromScratch discards the weights of `model`
/// (keeping its architecture) and trains from a fresh seeded init;
/// PreTrained continues training `model`. Both append k trigger points per batch.
inline Model mark(const Model& model, const MarkingKey& mk, const LabeledSet& train_data, const TrainConfig& cfg,
                  MarkStrategy strategy) {
  mk.validate();
  if (!mk.backdoor.empty() && mk.backdoor.dim != model.input_dim()) {
    throw DimensionError("trigger dimension does not match the model input");
  }
  const LabeledSet trigger = mk.backdoor.as_labeled_set();
  Model start = strategy == MarkStrategy::FromScratch ? fresh_model(model.layer_dims(), cfg.seed) : model;
  return train(train_data, trigger, cfg, std::move(start));
}

inline double trigger_accuracy(const Model& m, const Backdoor& b) { return accuracy(m, b.as_labeled_set()); }

namespace detail {

inline VerifyResult reject(VerifyStep step, std::optional<std::size_t> index, std::string reason) {
  VerifyResult r;
  r.failed_step = step;
  r.index = index;
  r.reason = std::move(reason);
  return r;
}

inline std::string at_index(const char* step, std::size_t i) { return std::string(step) + " at index " + std::to_string(i); }

}  // namespace detail

/// Steps run in order and the first failure is reported:
///   1. every trigger label differs from the oracle's label (undefined counts as different);
///   2. every commitment opens;
///   3. the model reproduces all but at most epsilon * |T| trigger labels.
template <LabelOracle Oracle>
VerifyResult verify(const MarkingKey& mk, const VerificationKey& vk, const Model& m, const Oracle& oracle,
                    const VerifyPolicy& policy) {
  policy.validate();
  const std::size_t n = mk.size();
  if (mk.backdoor.labels.size() != n || mk.rand_t.size() != n || mk.rand_L.size() != n ||
      vk.commits_t.size() != n || vk.commits_L.size() != n) {
    return detail::reject(VerifyStep::KeyShape, std::nullopt, "marking and verification keys differ in length");
  }
  if (n > 0 && mk.backdoor.dim != m.input_dim()) {
    return detail::reject(VerifyStep::KeyShape, std::nullopt, "trigger dimension does not match the model input");
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto truth = oracle.label(Backdoor::features(mk.backdoor.inputs[i]));
    if (truth.has_value() && *truth == mk.backdoor.labels[i]) {
      return detail::reject(VerifyStep::BackdoorCheck, i, detail::at_index("step 1", i) +
                                                              ": trigger label equals the true label");
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!open(vk.commits_t[i], Payload::trigger_input(mk.backdoor.inputs[i]), mk.rand_t[i]) ||
        !open(vk.commits_L[i], label_payload(mk.backdoor.labels[i]), mk.rand_L[i])) {
      return detail::reject(VerifyStep::Open, i, detail::at_index("step 2", i) + ": commitment does not open");
    }
  }

  VerifyResult r;
  r.allowed_mismatches = policy.allowed_mismatches(n);
  if (n > 0) {
    const LabeledSet trig = mk.backdoor.as_labeled_set();
    const auto predicted = m.classify_all(trig.inputs);
    for (std::size_t i = 0; i < n; ++i) {
      if (predicted[i] != trig.labels[i]) {
        if (r.mismatches == 0) r.index = i;
        ++r.mismatches;
      }
    }
  }
  if (r.mismatches > r.allowed_mismatches) {
    r.failed_step = VerifyStep::Classify;
    r.reason = "step 3: " + std::to_string(r.mismatches) + " of " + std::to_string(n) +
               " trigger points misclassified, at most " + std::to_string(r.allowed_mismatches) + " allowed";
    return r;
  }
  r.index.reset();
  r.accepted = true;
  return r;
}

/// Schedule for PreTrained marking of a converged model: the same epoch
/// budget and batching as `base`, starting at one fifth of its initial rate
/// and dropping by ten for the last sixth of the budget.
inline TrainConfig pretrained_mark_config(const TrainConfig& base) {
  TrainConfig c = base;
  c.learning_rate = base.learning_rate * 0.2;
  c.lr_halving_period_epochs = std::max(1, base.epochs - base.epochs / 6);
  return c;
}

inline TrainConfig marking_config(const TrainConfig& base, MarkStrategy strategy) {
  return strategy == MarkStrategy::FromScratch ? base : pretrained_mark_config(base);
}

struct MModelParams {
  std::size_t trigger_size = 100;
  MarkStrategy strategy = MarkStrategy::FromScratch;
  TrainConfig train_cfg;
  std::uint64_t seed = 0;
};

struct MModelResult {
  Model unmarked;
  Model marked;
  MarkingKey mk;
  VerificationKey vk;
};

inline Model train_unmarked(const DatasetBundle& data, const MModelParams& p) {
  TrainConfig base = p.train_cfg;
  base.seed = derive_seed(p.seed, "mmodel/train");
  const auto dims = default_layer_dims(data.train.dim(), data.oracle.num_labels());
  return train(data.train, LabeledSet{}, base, fresh_model(dims, base.seed));
}

inline KeyPair mmodel_keys(const DatasetBundle& data, const MModelParams& p) {
  Rng key_rng(derive_seed(p.seed, "mmodel/keygen"));
  return keygen(p.trigger_size, data.train.dim(), data.oracle.num_labels(), data.oracle, key_rng);
}

inline Model mmodel_mark(const Model& unmarked, const MarkingKey& mk, const DatasetBundle& data,
                         const MModelParams& p, MarkStrategy strategy) {
  TrainConfig mark_cfg = marking_config(p.train_cfg, strategy);
  mark_cfg.seed = derive_seed(p.seed, "mmodel/mark");
  return mark(unmarked, mk, data.train, mark_cfg, strategy);
}

/// Trains an unmarked model, generates a key pair and marks a copy.
inline MModelResult mmodel(const DatasetBundle& data, const MModelParams& p) {
  Model unmarked = train_unmarked(data, p);
  KeyPair keys = mmodel_keys(data, p);
  Model marked = mmodel_mark(unmarked, keys.mk, data, p, p.strategy);
  return {std::move(unmarked), std::move(marked), std::move(keys.mk), std::move(keys.vk)};
}

struct MModelBoth {
  Model unmarked;
  Model from_scratch;
  Model pre_trained;
  MarkingKey mk;
  VerificationKey vk;
};

// One unmarked model and one key pair, marked with both strategies.
inline MModelBoth mmodel_both(const DatasetBundle& data, const MModelParams& p) {
  MModelBoth r{train_unmarked(data, p), {}, {}, {}, {}};
  KeyPair keys = mmodel_keys(data, p);
  r.from_scratch = mmodel_mark(r.unmarked, keys.mk, data, p, MarkStrategy::FromScratch);
  r.pre_trained = mmodel_mark(r.unmarked, keys.mk, data, p, MarkStrategy::PreTrained);
  r.mk = std::move(keys.mk);
  r.vk = std::move(keys.vk);
  return r;
}

}  // namespace wmark
