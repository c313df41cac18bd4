#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wmark/attacks.hpp"
#include "wmark/bytes.hpp"
#include "wmark/data.hpp"
#include "wmark/error.hpp"
#include "wmark/nn.hpp"
#include "wmark/public_verify.hpp"
#include "wmark/watermark.hpp"

namespace wmark::io {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

inline constexpr std::string_view kMarkingKeyFormat = "wmark.mk";
inline constexpr std::string_view kVerificationKeyFormat = "wmark.vk";
inline constexpr std::string_view kPublicMarkingKeyFormat = "wmark.mk_p";
inline constexpr std::string_view kPublicVerificationKeyFormat = "wmark.vk_p";
inline constexpr std::string_view kModelFormat = "wmark.model";
inline constexpr std::string_view kHeadFormat = "wmark.head";
inline constexpr std::string_view kAttackReportFormat = "wmark.attack";
inline constexpr std::string_view kModelRowFormat = "wmark.row";
inline constexpr std::string_view kTableFormat = "wmark.table";

// Common header of every artifact: format name, version and producing seed.
inline Json envelope(std::string_view format, std::uint64_t seed) {
  Json j;
  j["format"] = format;
  j["version"] = kFormatVersion;
  j["seed"] = seed;
  return j;
}

template <typename T>
T field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("missing field \"") + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(std::string("field \"") + key + "\" has the wrong type");
  }
}

inline const Json& child(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("missing field \"") + key + "\"");
  return j.at(key);
}

inline void check_envelope(const Json& j, std::string_view format) {
  const auto got = field<std::string>(j, "format");
  if (got != format) throw ParseError("expected a " + std::string(format) + " artifact, found " + got);
  const auto version = field<int>(j, "version");
  if (version != kFormatVersion) {
    throw VersionError(std::string(format) + " artifact has format version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(kFormatVersion));
  }
  (void)field<std::uint64_t>(j, "seed");
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline Json parse(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann counts bytes from 1; offsets here are 0-based.
    throw ParseError("malformed JSON", e.byte > 0 ? e.byte - 1 : 0);
  }
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("failed writing " + path.string());
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, dump(j)); }

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": malformed JSON", e.offset());
  }
}

// ---- dataset parameters ----

inline Json to_json(const SyntheticParams& p) {
  Json j;
  j["kind"] = "synthetic";
  j["num_labels"] = p.num_labels;
  j["dim"] = p.dim;
  j["train_n"] = p.train_n;
  j["test_n"] = p.test_n;
  j["noise_sigma"] = p.noise_sigma;
  j["radius"] = p.radius;
  j["seed"] = p.seed;
  return j;
}

inline SyntheticParams synthetic_params_from_json(const Json& j) {
  if (field<std::string>(j, "kind") != "synthetic") throw ParseError("unsupported dataset kind");
  SyntheticParams p;
  p.num_labels = field<int>(j, "num_labels");
  p.dim = field<int>(j, "dim");
  p.train_n = field<int>(j, "train_n");
  p.test_n = field<int>(j, "test_n");
  p.noise_sigma = field<double>(j, "noise_sigma");
  p.radius = field<double>(j, "radius");
  p.seed = field<std::uint64_t>(j, "seed");
  return p;
}

inline Json to_json(const TrainConfig& c) {
  Json j;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["k_trigger_per_batch"] = c.k_trigger_per_batch;
  j["lr_halving_period_epochs"] = c.lr_halving_period_epochs;
  j["seed"] = c.seed;
  return j;
}

// ---- keys ----

inline Json entry_to_json(const MarkingEntry& e) {
  Json j;
  j["input"] = to_hex(e.input);
  j["label"] = e.label;
  j["rand_t"] = to_hex(e.rand_t.bytes);
  j["rand_L"] = to_hex(e.rand_L.bytes);
  return j;
}

inline MarkingEntry entry_from_json(const Json& j) {
  MarkingEntry e;
  e.input = from_hex(field<std::string>(j, "input"));
  e.label = field<int>(j, "label");
  e.rand_t.bytes = fixed_from_hex<kRandomnessBytes>(field<std::string>(j, "rand_t"));
  e.rand_L.bytes = fixed_from_hex<kRandomnessBytes>(field<std::string>(j, "rand_L"));
  return e;
}

// Key files record the dataset so a verifier can rebuild the same oracle.
struct KeyContext {
  std::uint64_t seed = 0;
  SyntheticParams dataset;
  std::int64_t created_unix = 0;
};

inline Json marking_key_body(const MarkingKey& mk) {
  mk.validate();
  Json j;
  j["dim"] = mk.backdoor.dim;
  Json entries = Json::array();
  for (const auto& e : entries_of(mk)) entries.push_back(entry_to_json(e));
  j["entries"] = std::move(entries);
  return j;
}

inline MarkingKey marking_key_from_body(const Json& j) {
  MarkingKey mk;
  mk.backdoor.dim = field<int>(j, "dim");
  for (const auto& ej : child(j, "entries")) {
    MarkingEntry e = entry_from_json(ej);
    if (static_cast<int>(e.input.size()) != mk.backdoor.dim) throw ParseError("trigger input length differs from dim");
    mk.backdoor.inputs.push_back(std::move(e.input));
    mk.backdoor.labels.push_back(e.label);
    mk.rand_t.push_back(e.rand_t);
    mk.rand_L.push_back(e.rand_L);
  }
  return mk;
}

inline Json commitments_to_json(const VerificationKey& vk) {
  Json arr = Json::array();
  for (std::size_t i = 0; i < vk.size(); ++i) {
    arr.push_back({{"t", to_hex(vk.commits_t[i].digest)}, {"L", to_hex(vk.commits_L[i].digest)}});
  }
  return arr;
}

inline VerificationKey commitments_from_json(const Json& arr) {
  if (!arr.is_array()) throw ParseError("commitments must be an array");
  VerificationKey vk;
  for (const auto& c : arr) {
    vk.commits_t.push_back({fixed_from_hex<32>(field<std::string>(c, "t"))});
    vk.commits_L.push_back({fixed_from_hex<32>(field<std::string>(c, "L"))});
  }
  return vk;
}

inline void put_context(Json& j, const KeyContext& ctx, bool timestamped) {
  if (timestamped) j["created_unix"] = ctx.created_unix;
  j["dataset"] = to_json(ctx.dataset);
}

inline KeyContext context_from_json(const Json& j, bool timestamped) {
  KeyContext ctx;
  ctx.seed = field<std::uint64_t>(j, "seed");
  ctx.dataset = synthetic_params_from_json(child(j, "dataset"));
  if (timestamped) ctx.created_unix = field<std::int64_t>(j, "created_unix");
  return ctx;
}

inline Json marking_key_to_json(const MarkingKey& mk, const KeyContext& ctx) {
  Json j = envelope(kMarkingKeyFormat, ctx.seed);
  put_context(j, ctx, false);
  j.update(marking_key_body(mk));
  return j;
}

inline std::pair<MarkingKey, KeyContext> marking_key_from_json(const Json& j) {
  check_envelope(j, kMarkingKeyFormat);
  return {marking_key_from_body(j), context_from_json(j, false)};
}

inline Json verification_key_to_json(const VerificationKey& vk, const KeyContext& ctx) {
  Json j = envelope(kVerificationKeyFormat, ctx.seed);
  put_context(j, ctx, true);
  j["commitments"] = commitments_to_json(vk);
  return j;
}

inline std::pair<VerificationKey, KeyContext> verification_key_from_json(const Json& j) {
  check_envelope(j, kVerificationKeyFormat);
  return {commitments_from_json(child(j, "commitments")), context_from_json(j, true)};
}

inline std::string challenge_to_string(const Challenge& e) {
  std::string s;
  for (auto b : e.bits) s.push_back(b ? '1' : '0');
  return s;
}

inline Challenge challenge_from_string(std::string_view s) {
  Challenge e;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '0' && s[i] != '1') throw ParseError("challenge must be a string of 0/1 characters", i);
    e.bits.push_back(s[i] == '1' ? 1 : 0);
  }
  return e;
}

inline Json public_marking_key_to_json(const PublicMarkingKey& mk_p, const KeyContext& ctx) {
  Json j = envelope(kPublicMarkingKeyFormat, ctx.seed);
  put_context(j, ctx, false);
  j["challenge"] = challenge_to_string(mk_p.e);
  j.update(marking_key_body(mk_p.mk));
  return j;
}

inline std::pair<PublicMarkingKey, KeyContext> public_marking_key_from_json(const Json& j) {
  check_envelope(j, kPublicMarkingKeyFormat);
  PublicMarkingKey mk_p{marking_key_from_body(j), challenge_from_string(field<std::string>(j, "challenge"))};
  if (mk_p.e.size() != mk_p.mk.size()) throw ParseError("challenge length differs from the key length");
  return {std::move(mk_p), context_from_json(j, false)};
}

// Reads either a marking key or a public marking key (dropping the challenge).
inline std::pair<MarkingKey, KeyContext> any_marking_key_from_json(const Json& j) {
  if (j.is_object() && j.contains("format") && j["format"] == kPublicMarkingKeyFormat) {
    auto [mk_p, ctx] = public_marking_key_from_json(j);
    return {std::move(mk_p.mk), ctx};
  }
  return marking_key_from_json(j);
}

inline Json public_verification_key_to_json(const PublicVerificationKey& vk_p, const KeyContext& ctx) {
  Json j = envelope(kPublicVerificationKeyFormat, ctx.seed);
  put_context(j, ctx, true);
  j["commitments"] = commitments_to_json(vk_p.vk);
  Json opened = Json::array();
  for (std::size_t k = 0; k < vk_p.opened.size(); ++k) {
    Json e = entry_to_json(vk_p.opened.entries[k]);
    Json row;
    row["index"] = vk_p.opened.indices[k];
    row.update(e);
    opened.push_back(std::move(row));
  }
  j["opened"] = std::move(opened);
  return j;
}

inline std::pair<PublicVerificationKey, KeyContext> public_verification_key_from_json(const Json& j) {
  check_envelope(j, kPublicVerificationKeyFormat);
  PublicVerificationKey vk_p;
  vk_p.vk = commitments_from_json(child(j, "commitments"));
  for (const auto& row : child(j, "opened")) {
    vk_p.opened.indices.push_back(field<std::size_t>(row, "index"));
    vk_p.opened.entries.push_back(entry_from_json(row));
  }
  return {std::move(vk_p), context_from_json(j, true)};
}

// ---- models ----

struct ModelFile {
  Model model;
  std::uint64_t seed = 0;
  std::int64_t created_unix = 0;
  // What produced the model: kind, strategy, epoch budget, dataset, configs.
  Json provenance = Json::object();
};

inline Json model_to_json(const ModelFile& f) {
  Json j = envelope(kModelFormat, f.seed);
  j["created_unix"] = f.created_unix;
  j["architecture"] = kArchitectureId;
  j["layer_dims"] = f.model.layer_dims();
  j["final_learning_rate"] = f.model.final_learning_rate();
  j["weights_f32le"] = to_hex(weights_to_le_bytes(f.model));
  j["provenance"] = f.provenance;
  return j;
}

inline ModelFile model_from_json(const Json& j) {
  check_envelope(j, kModelFormat);
  const auto arch = field<std::string>(j, "architecture");
  if (arch != kArchitectureId) throw ParseError("unsupported architecture " + arch);
  ModelFile f;
  f.seed = field<std::uint64_t>(j, "seed");
  f.created_unix = field<std::int64_t>(j, "created_unix");
  const auto dims = field<std::vector<int>>(j, "layer_dims");
  const Bytes weights = from_hex(field<std::string>(j, "weights_f32le"));
  f.model = model_from_le_bytes(dims, weights, field<double>(j, "final_learning_rate"));
  if (j.contains("provenance")) f.provenance = j.at("provenance");
  return f;
}

inline Json head_to_json(const OutputHead& head, std::uint64_t seed) {
  Json j = envelope(kHeadFormat, seed);
  j["inputs"] = head.inputs();
  j["outputs"] = head.outputs();
  Bytes raw;
  for (Eigen::Index r = 0; r < head.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < head.weights.cols(); ++c) append_f32_le(raw, head.weights(r, c));
  }
  for (Eigen::Index r = 0; r < head.bias.size(); ++r) append_f32_le(raw, head.bias(r));
  j["weights_f32le"] = to_hex(raw);
  return j;
}

inline OutputHead head_from_json(const Json& j) {
  check_envelope(j, kHeadFormat);
  const int in = field<int>(j, "inputs");
  const int out = field<int>(j, "outputs");
  if (in < 1 || out < 2) throw ParseError("head dimensions out of range");
  const Bytes raw = from_hex(field<std::string>(j, "weights_f32le"));
  const std::size_t expected = 4 * (static_cast<std::size_t>(in) * out + out);
  if (raw.size() != expected) throw ParseError("head weight blob has the wrong length");
  OutputHead h{Eigen::MatrixXf(out, in), Eigen::VectorXf(out)};
  std::size_t off = 0;
  for (int r = 0; r < out; ++r) {
    for (int c = 0; c < in; ++c, off += 4) h.weights(r, c) = read_f32_le(raw, off);
  }
  for (int r = 0; r < out; ++r, off += 4) h.bias(r) = read_f32_le(raw, off);
  return h;
}

// ---- reports ----

inline Json attack_report_to_json(const AttackReport& r, std::uint64_t seed, const std::string& model_variant,
                                  const std::string& artifact) {
  Json j = envelope(kAttackReportFormat, seed);
  j["variant"] = r.variant;
  j["model_variant"] = model_variant;
  j["artifact"] = artifact;
  j["test_accuracy_before"] = r.test_accuracy_before;
  j["test_accuracy_after"] = r.test_accuracy_after;
  Json triggers = Json::array();
  for (const auto& t : r.triggers) {
    triggers.push_back({{"name", t.name}, {"before", t.before}, {"after", t.after}});
  }
  j["triggers"] = std::move(triggers);
  return j;
}

struct AttackRecord {
  AttackReport report;
  std::string model_variant;
  std::string artifact;
  std::uint64_t seed = 0;
};

inline AttackRecord attack_report_from_json(const Json& j) {
  check_envelope(j, kAttackReportFormat);
  AttackRecord rec;
  rec.seed = field<std::uint64_t>(j, "seed");
  rec.model_variant = field<std::string>(j, "model_variant");
  rec.artifact = field<std::string>(j, "artifact");
  rec.report.variant = field<std::string>(j, "variant");
  rec.report.test_accuracy_before = field<double>(j, "test_accuracy_before");
  rec.report.test_accuracy_after = field<double>(j, "test_accuracy_after");
  for (const auto& t : child(j, "triggers")) {
    rec.report.triggers.push_back({field<std::string>(t, "name"), field<double>(t, "before"), field<double>(t, "after")});
  }
  return rec;
}

}  // namespace wmark::io
