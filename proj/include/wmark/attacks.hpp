#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wmark/data.hpp"
#include "wmark/nn.hpp"
#include "wmark/watermark.hpp"

namespace wmark {

enum class AttackVariant {
  FTLL,  // fine-tune last layer
  FTAL,  // fine-tune all layers
  RTLL,  // re-initialize last layer, train it
  RTAL,  // re-initialize last layer, train all layers
};

inline const char* to_string(AttackVariant v) {
  switch (v) {
    case AttackVariant::FTLL: return "ftll";
    case AttackVariant::FTAL: return "ftal";
    case AttackVariant::RTLL: return "rtll";
    case AttackVariant::RTAL: return "rtal";
  }
  return "unknown";
}

inline std::optional<AttackVariant> parse_attack_variant(std::string_view s) {
  if (s == "ftll") return AttackVariant::FTLL;
  if (s == "ftal") return AttackVariant::FTAL;
  if (s == "rtll") return AttackVariant::RTLL;
  if (s == "rtal") return AttackVariant::RTAL;
  return std::nullopt;
}

inline constexpr AttackVariant kAllAttackVariants[] = {AttackVariant::FTLL, AttackVariant::FTAL, AttackVariant::RTLL,
                                                       AttackVariant::RTAL};

struct AttackConfig {
  AttackVariant variant = AttackVariant::FTAL;
  // Same budget as the original training run unless overridden.
  int epochs = 60;
  int batch_size = 20;
  std::uint64_t seed = 0;
};

struct TriggerAccuracy {
  std::string name;
  double before = 0.0;
  double after = 0.0;
};

struct AttackReport {
  std::string variant;
  double test_accuracy_before = 0.0;
  double test_accuracy_after = 0.0;
  std::vector<TriggerAccuracy> triggers;
};

struct NamedBackdoor {
  std::string name;
  const Backdoor* backdoor;
};

// The fine-tuning schedule: constant rate equal to the last rate of the
// model's own training run, no trigger points in batches.
inline TrainConfig fine_tune_config(const Model& m, const AttackConfig& cfg) {
  TrainConfig tc;
  tc.learning_rate = m.final_learning_rate();
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.k_trigger_per_batch = 0;
  tc.lr_halving_period_epochs = std::max(1, cfg.epochs);
  tc.seed = derive_seed(cfg.seed, "attack/train");
  return tc;
}

/// Runs one fine-tuning attack on a private copy of `m` using the clean
/// training data, and reports test/trigger accuracy before and after.
inline std::pair<Model, AttackReport> fine_tune(const Model& m, const DatasetBundle& data, const AttackConfig& cfg,
                                                std::span<const NamedBackdoor> watched = {}) {
  if (data.train.dim() != m.input_dim()) throw DimensionError("attack data does not match the model input");
  AttackReport report;
  report.variant = to_string(cfg.variant);
  report.test_accuracy_before = accuracy(m, data.test);
  for (const auto& w : watched) report.triggers.push_back({w.name, trigger_accuracy(m, *w.backdoor), 0.0});

  Model attacked = m;
  const bool reinit = cfg.variant == AttackVariant::RTLL || cfg.variant == AttackVariant::RTAL;
  if (reinit && cfg.epochs > 0) {
    Rng rng(derive_seed(cfg.seed, "attack/head"));
    attacked = replace_output_layer(m, m.num_classes(), rng).first;
  }
  const LayerScope scope = cfg.variant == AttackVariant::FTLL || cfg.variant == AttackVariant::RTLL
                               ? LayerScope::OutputLayerOnly
                               : LayerScope::AllLayers;
  attacked = train(data.train, LabeledSet{}, fine_tune_config(m, cfg), std::move(attacked), scope);
  attacked.set_final_learning_rate(m.final_learning_rate());

  report.test_accuracy_after = accuracy(attacked, data.test);
  for (std::size_t i = 0; i < watched.size(); ++i) report.triggers[i].after = trigger_accuracy(attacked, *watched[i].backdoor);
  return {std::move(attacked), std::move(report)};
}

// Piracy budget: same epochs and batching as the original embedding, at the
// marked model's fine-tuning rate.
inline TrainConfig piracy_config(const Model& marked, const TrainConfig& original, std::uint64_t seed) {
  TrainConfig c = original;
  c.learning_rate = marked.final_learning_rate();
  c.lr_halving_period_epochs = std::max(1, original.epochs);
  c.seed = seed;
  return c;
}

/// An adversary embedding its own trigger set into an already marked model,
/// PreTrained-style, with the given budget.
inline Model piracy_embed(const Model& marked, const MarkingKey& new_mk, const LabeledSet& train_data,
                          const TrainConfig& cfg) {
  return mark(marked, new_mk, train_data, cfg, MarkStrategy::PreTrained);
}

/// Adapts a model to a new task: the output layer is replaced for the new
/// class count, then all layers are trained on the new data. The original
/// head is returned so ownership can later be checked through it.
inline std::pair<Model, OutputHead> transfer(const Model& m, const DatasetBundle& new_data, const AttackConfig& cfg) {
  if (new_data.train.dim() != m.input_dim()) throw DimensionError("transfer data does not match the model input");
  Rng rng(derive_seed(cfg.seed, "transfer/head"));
  auto [adapted, saved] = replace_output_layer(m, new_data.oracle.num_labels(), rng);
  adapted = train(new_data.train, LabeledSet{}, fine_tune_config(m, cfg), std::move(adapted));
  adapted.set_final_learning_rate(m.final_learning_rate());
  return {std::move(adapted), std::move(saved)};
}

template <LabelOracle Oracle>
VerifyResult verify_with_head(const Model& body, const OutputHead& saved_head, const MarkingKey& mk,
                              const VerificationKey& vk, const Oracle& oracle, const VerifyPolicy& policy) {
  return verify(mk, vk, attach_head(body, saved_head), oracle, policy);
}

}  // namespace wmark
