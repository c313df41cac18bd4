#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wmark/attacks.hpp"
#include "wmark/io.hpp"

namespace wmark {

inline constexpr std::array<const char*, 3> kModelVariants = {"No-WM", "FromScratch", "PreTrained"};

// Table label for a marking strategy.
inline const char* model_variant_label(MarkStrategy s) {
  return s == MarkStrategy::FromScratch ? "FromScratch" : "PreTrained";
}

struct ModelRow {
  std::string variant;
  double test_accuracy = 0.0;
  double trigger_accuracy = 0.0;
  std::string artifact;
  std::uint64_t seed = 0;
};

struct AttackCell {
  double test_accuracy = 0.0;
  double trigger_accuracy = 0.0;
  std::string artifact;
};

/// Results arranged as a model table (No-WM / FromScratch / PreTrained with
/// test and trigger accuracy) and an attack matrix (marked model x variant,
/// each with test and trigger accuracy after the attack).
struct ResultTable {
  std::vector<ModelRow> models;
  std::map<std::string, std::map<std::string, AttackCell>> attacks;  // model variant -> attack variant

  std::vector<std::string> attack_rows() const {
    std::vector<std::string> rows;
    for (const char* v : kModelVariants) {
      if (attacks.contains(v)) rows.emplace_back(v);
    }
    return rows;
  }
};

inline std::string format_accuracy(double a) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.4f", a);
  return buf;
}

inline io::Json model_row_to_json(const ModelRow& r) {
  io::Json j = io::envelope(io::kModelRowFormat, r.seed);
  j["variant"] = r.variant;
  j["test_accuracy"] = r.test_accuracy;
  j["trigger_accuracy"] = r.trigger_accuracy;
  j["artifact"] = r.artifact;
  return j;
}

inline ModelRow model_row_from_json(const io::Json& j) {
  io::check_envelope(j, io::kModelRowFormat);
  ModelRow r;
  r.seed = io::field<std::uint64_t>(j, "seed");
  r.variant = io::field<std::string>(j, "variant");
  r.test_accuracy = io::field<double>(j, "test_accuracy");
  r.trigger_accuracy = io::field<double>(j, "trigger_accuracy");
  r.artifact = io::field<std::string>(j, "artifact");
  return r;
}

inline void check_accuracy(double a, const std::string& what) {
  if (!(a >= 0.0 && a <= 1.0)) throw ParseError(what + " accuracy outside [0, 1]");
}

/// Builds the table from every row and attack report found in `run_dir`.
/// Attack cells use the first watched trigger set (the owner's).
inline ResultTable collect_results(const std::filesystem::path& run_dir) {
  if (!std::filesystem::is_directory(run_dir)) throw Error(run_dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  ResultTable t;
  for (const auto& path : files) {
    const io::Json j = io::read_json(path);
    const std::string format = j.is_object() && j.contains("format") && j["format"].is_string()
                                   ? j["format"].get<std::string>()
                                   : std::string();
    if (format == io::kModelRowFormat) {
      ModelRow r = model_row_from_json(j);
      check_accuracy(r.test_accuracy, r.variant + " test");
      check_accuracy(r.trigger_accuracy, r.variant + " trigger");
      t.models.push_back(std::move(r));
    } else if (format == io::kAttackReportFormat) {
      const io::AttackRecord rec = io::attack_report_from_json(j);
      if (rec.report.triggers.empty()) throw ParseError(path.string() + ": attack report without trigger accuracy");
      AttackCell cell{rec.report.test_accuracy_after, rec.report.triggers.front().after, rec.artifact};
      check_accuracy(cell.test_accuracy, rec.report.variant + " test");
      check_accuracy(cell.trigger_accuracy, rec.report.variant + " trigger");
      t.attacks[rec.model_variant][rec.report.variant] = cell;
    }
  }
  if (t.models.empty() && t.attacks.empty()) throw Error("no result rows found in " + run_dir.string());
  auto rank = [](const std::string& v) {
    const auto it = std::find(kModelVariants.begin(), kModelVariants.end(), v);
    return static_cast<std::size_t>(it - kModelVariants.begin());
  };
  std::stable_sort(t.models.begin(), t.models.end(),
                   [&](const ModelRow& a, const ModelRow& b) { return rank(a.variant) < rank(b.variant); });
  return t;
}

inline io::Json to_json(const ResultTable& t) {
  io::Json j;
  j["format"] = io::kTableFormat;
  j["version"] = io::kFormatVersion;
  io::Json models = io::Json::array();
  for (const auto& r : t.models) {
    models.push_back({{"variant", r.variant},
                      {"test_accuracy", format_accuracy(r.test_accuracy)},
                      {"trigger_accuracy", format_accuracy(r.trigger_accuracy)},
                      {"artifact", r.artifact}});
  }
  j["models"] = std::move(models);
  io::Json attacks = io::Json::array();
  for (const auto& row : t.attack_rows()) {
    io::Json cells = io::Json::object();
    for (AttackVariant v : kAllAttackVariants) {
      const auto& m = t.attacks.at(row);
      const auto it = m.find(to_string(v));
      if (it == m.end()) continue;
      cells[to_string(v)] = {{"test_accuracy", format_accuracy(it->second.test_accuracy)},
                             {"trigger_accuracy", format_accuracy(it->second.trigger_accuracy)},
                             {"artifact", it->second.artifact}};
    }
    attacks.push_back({{"model", row}, {"after_attack", std::move(cells)}});
  }
  j["attacks"] = std::move(attacks);
  return j;
}

/// Text rendering of the same JSON document, so both outputs carry
/// identical numbers.
inline std::string to_text(const ResultTable& t) {
  const io::Json j = to_json(t);
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s  %-9s  %-12s\n", "Model", "Test acc.", "Trigger acc.");
  out += line;
  for (const auto& r : j["models"]) {
    std::snprintf(line, sizeof line, "%-12s  %-9s  %-12s\n", r["variant"].get<std::string>().c_str(),
                  r["test_accuracy"].get<std::string>().c_str(), r["trigger_accuracy"].get<std::string>().c_str());
    out += line;
  }
  if (j["attacks"].empty()) return out;
  out += "\nAfter attack (test / trigger)\n";
  std::snprintf(line, sizeof line, "%-12s", "Model");
  out += line;
  for (AttackVariant v : kAllAttackVariants) {
    std::string name = to_string(v);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
    std::snprintf(line, sizeof line, "  %-15s", name.c_str());
    out += line;
  }
  out += "\n";
  for (const auto& row : j["attacks"]) {
    std::snprintf(line, sizeof line, "%-12s", row["model"].get<std::string>().c_str());
    out += line;
    for (AttackVariant v : kAllAttackVariants) {
      const auto& cells = row["after_attack"];
      std::string cell = "-";
      if (cells.contains(to_string(v))) {
        const auto& c = cells[to_string(v)];
        cell = c["test_accuracy"].get<std::string>() + " " + c["trigger_accuracy"].get<std::string>();
      }
      std::snprintf(line, sizeof line, "  %-15s", cell.c_str());
      out += line;
    }
    out += "\n";
  }
  return out;
}

}  // namespace wmark
