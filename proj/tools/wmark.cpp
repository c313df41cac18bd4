#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "wmark/wmark.hpp"

namespace fs = std::filesystem;
using namespace wmark;
using io::Json;

namespace {

constexpr int kExitAccepted = 0;
constexpr int kExitRejected = 1;
constexpr int kExitError = 2;

struct Globals {
  std::uint64_t seed = 0;
  std::optional<std::int64_t> timestamp;
  SyntheticParams dataset;
  std::optional<std::uint64_t> data_seed;

  std::int64_t now() const { return timestamp ? *timestamp : static_cast<std::int64_t>(std::time(nullptr)); }

  SyntheticParams dataset_params() const {
    SyntheticParams p = dataset;
    p.seed = data_seed ? *data_seed : seed;
    return p;
  }
};

struct TrainFlags {
  int epochs = 60;
  int batch_size = 20;
  double lr = 0.1;
  int period = 20;
  int k = 2;

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.lr_halving_period_epochs = period;
    c.k_trigger_per_batch = k;
    c.seed = seed;
    c.validate();
    return c;
  }

  void add_to(CLI::App* app) {
    app->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
    app->add_option("--batch", batch_size, "batch size")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "initial learning rate")->check(CLI::PositiveNumber);
    app->add_option("--period", period, "epochs between tenfold learning-rate drops")->check(CLI::PositiveNumber);
    app->add_option("--k", k, "trigger samples appended per batch")->check(CLI::NonNegativeNumber);
  }
};

MarkStrategy parse_strategy(const std::string& s) {
  if (s == "from-scratch") return MarkStrategy::FromScratch;
  if (s == "pre-trained") return MarkStrategy::PreTrained;
  throw Error("unknown strategy " + s);
}

std::string variant_label_of(const io::ModelFile& f) {
  const auto& p = f.provenance;
  if (p.contains("strategy") && p["strategy"].is_string()) {
    const auto s = p["strategy"].get<std::string>();
    if (s == "from-scratch") return "FromScratch";
    if (s == "pre-trained") return "PreTrained";
  }
  return "No-WM";
}

DatasetBundle dataset_of(const io::ModelFile& f) {
  if (!f.provenance.contains("dataset")) throw Error("model artifact does not record its dataset");
  return generate_synthetic(io::synthetic_params_from_json(f.provenance["dataset"]));
}

int budget_of(const io::ModelFile& f, const char* key, int fallback) {
  const auto& p = f.provenance;
  if (p.contains("train_config") && p["train_config"].contains(key)) return p["train_config"][key].get<int>();
  return fallback;
}

io::ModelFile load_model(const std::string& path) { return io::model_from_json(io::read_json(path)); }

void save_model(const std::string& path, const Model& m, std::uint64_t seed, std::int64_t ts, Json provenance) {
  io::write_json(path, io::model_to_json({m, seed, ts, std::move(provenance)}));
}

Json train_provenance(const char* kind, const SyntheticParams& data, const TrainConfig& cfg) {
  Json p;
  p["kind"] = kind;
  p["dataset"] = io::to_json(data);
  p["train_config"] = io::to_json(cfg);
  p["epoch_budget"] = cfg.epochs;
  return p;
}

// Refuses to verify against a model older than the published key.
void check_order(std::int64_t vk_time, std::int64_t model_time, bool allow_unordered) {
  if (vk_time > model_time && !allow_unordered) {
    throw Error("verification key timestamp " + std::to_string(vk_time) + " is later than the model timestamp " +
                std::to_string(model_time) + "; pass --allow-unordered to verify anyway");
  }
}

void emit(const Json& j, const std::string& out) {
  std::cout << io::dump(j);
  if (!out.empty()) io::write_json(out, j);
}

Json verdict_json(const VerifyResult& r) {
  Json j;
  j["verdict"] = r.accepted ? 1 : 0;
  j["failed_step"] = to_string(r.failed_step);
  j["index"] = r.index ? Json(*r.index) : Json(nullptr);
  j["mismatches"] = r.mismatches;
  j["allowed_mismatches"] = r.allowed_mismatches;
  j["reason"] = r.reason;
  return j;
}

Json verdict_json(const PVerifyResult& r) {
  Json j;
  j["verdict"] = r.accepted ? 1 : 0;
  j["failed_step"] = to_string(r.failed_step);
  j["index"] = r.index ? Json(*r.index) : Json(nullptr);
  j["reason"] = r.reason;
  return j;
}

ModelRow model_row(const std::string& variant, const Model& m, const DatasetBundle& data, const Backdoor& b,
                   const std::string& artifact, std::uint64_t seed) {
  return {variant, accuracy(m, data.test), trigger_accuracy(m, b), artifact, seed};
}

// One full table run: unmarked model, both marking strategies, four attacks each.
void run_experiment(const fs::path& dir, std::uint64_t seed, const SyntheticParams& dp, const TrainConfig& cfg,
                    std::size_t trigger_size, std::int64_t ts) {
  fs::create_directories(dir);
  const DatasetBundle data = generate_synthetic(dp);
  MModelParams mp;
  mp.trigger_size = trigger_size;
  mp.train_cfg = cfg;
  mp.seed = seed;
  const MModelBoth r = mmodel_both(data, mp);

  const io::KeyContext ctx{seed, dp, ts};
  io::write_json(dir / "mk.json", io::marking_key_to_json(r.mk, ctx));
  io::write_json(dir / "vk.json", io::verification_key_to_json(r.vk, ctx));

  struct Entry {
    const char* variant;
    const char* file;
    const Model* model;
    Json provenance;
  };
  Json p_unmarked = train_provenance("train", dp, cfg);
  Json p_fs = train_provenance("mark", dp, marking_config(cfg, MarkStrategy::FromScratch));
  p_fs["strategy"] = "from-scratch";
  Json p_pt = train_provenance("mark", dp, marking_config(cfg, MarkStrategy::PreTrained));
  p_pt["strategy"] = "pre-trained";
  const std::vector<Entry> entries = {{"No-WM", "model-no-wm.json", &r.unmarked, p_unmarked},
                                      {"FromScratch", "model-from-scratch.json", &r.from_scratch, p_fs},
                                      {"PreTrained", "model-pre-trained.json", &r.pre_trained, p_pt}};
  const std::vector<NamedBackdoor> watched = {{"ts-orig", &r.mk.backdoor}};
  for (const auto& e : entries) {
    save_model((dir / e.file).string(), *e.model, seed, ts, e.provenance);
    const ModelRow row = model_row(e.variant, *e.model, data, r.mk.backdoor, e.file, seed);
    io::write_json(dir / (std::string("row-") + e.file), model_row_to_json(row));
    if (e.model == &r.unmarked) continue;
    for (AttackVariant v : kAllAttackVariants) {
      AttackConfig ac;
      ac.variant = v;
      ac.epochs = cfg.epochs;
      ac.batch_size = cfg.batch_size;
      ac.seed = derive_seed(seed, "experiment/attack", static_cast<std::uint64_t>(v));
      auto [attacked, report] = fine_tune(*e.model, data, ac, watched);
      const std::string stem = std::string(to_string(v)) + "-" + (e.model == &r.from_scratch ? "from-scratch" : "pre-trained");
      Json prov = e.provenance;
      prov["kind"] = "attack";
      prov["attack"] = to_string(v);
      save_model((dir / ("model-" + stem + ".json")).string(), attacked, seed, ts, prov);
      io::write_json(dir / ("attack-" + stem + ".json"),
                     io::attack_report_to_json(report, seed, e.variant, "model-" + stem + ".json"));
    }
  }
  const ResultTable table = collect_results(dir);
  io::write_text(dir / "table.txt", to_text(table));
  io::write_json(dir / "table.json", to_json(table));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor-based watermarking of neural networks"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "master seed; every random choice derives from it");
  app.add_option("--timestamp", g.timestamp, "Unix time written into timestamped artifacts (default: now)");
  app.add_option("--labels", g.dataset.num_labels, "synthetic dataset: number of classes")->check(CLI::Range(2, 255));
  app.add_option("--dim", g.dataset.dim, "synthetic dataset: feature dimension")->check(CLI::Range(8, 1 << 20));
  app.add_option("--train-n", g.dataset.train_n, "synthetic dataset: training points")->check(CLI::NonNegativeNumber);
  app.add_option("--test-n", g.dataset.test_n, "synthetic dataset: test points")->check(CLI::NonNegativeNumber);
  app.add_option("--noise", g.dataset.noise_sigma, "synthetic dataset: noise sigma")->check(CLI::NonNegativeNumber);
  app.add_option("--data-seed", g.data_seed, "synthetic dataset seed (default: --seed)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train an unmarked model");
  TrainFlags train_flags;
  train_flags.add_to(train_cmd);
  std::string train_out;
  train_cmd->add_option("--out", train_out, "model file")->required();

  // keygen / pkeygen
  auto* keygen_cmd = app.add_subcommand("keygen", "generate a marking key and a verification key");
  std::size_t trigger_size = 100;
  std::string mk_path, vk_path;
  keygen_cmd->add_option("--trigger-size", trigger_size, "trigger set size")->check(CLI::PositiveNumber);
  keygen_cmd->add_option("--mk", mk_path, "marking key output")->required();
  keygen_cmd->add_option("--vk", vk_path, "verification key output")->required();

  auto* pkeygen_cmd = app.add_subcommand("pkeygen", "generate publicly verifiable keys (cut-and-choose)");
  std::size_t ptrigger_size = 120;
  std::string mkp_path, vkp_path;
  pkeygen_cmd->add_option("--trigger-size", ptrigger_size, "trigger set size, a multiple of 4");
  pkeygen_cmd->add_option("--mk-p", mkp_path, "public marking key output")->required();
  pkeygen_cmd->add_option("--vk-p", vkp_path, "public verification key output")->required();

  auto* verify_keys_cmd = app.add_subcommand("verify-keys", "check that every commitment opens");
  std::string vk_mk, vk_vk;
  verify_keys_cmd->add_option("--mk", vk_mk, "marking key")->required();
  verify_keys_cmd->add_option("--vk", vk_vk, "verification key")->required();

  // mark
  auto* mark_cmd = app.add_subcommand("mark", "embed a watermark");
  TrainFlags mark_flags;
  mark_flags.add_to(mark_cmd);
  std::string mark_model, mark_mk, mark_out, strategy_name = "from-scratch";
  mark_cmd->add_option("--model", mark_model, "model to mark (architecture only for from-scratch)");
  mark_cmd->add_option("--mk", mark_mk, "marking key or public marking key")->required();
  mark_cmd->add_option("--strategy", strategy_name, "from-scratch or pre-trained")
      ->check(CLI::IsMember({"from-scratch", "pre-trained"}));
  mark_cmd->add_option("--out", mark_out, "marked model output")->required();

  // verify / pverify
  double epsilon = 0.25;
  bool allow_unordered = false;
  auto* verify_cmd = app.add_subcommand("verify", "verify ownership with (mk, vk)");
  std::string v_mk, v_vk, v_model, v_head, v_out;
  verify_cmd->add_option("--mk", v_mk, "marking key")->required();
  verify_cmd->add_option("--vk", v_vk, "verification key")->required();
  verify_cmd->add_option("--model", v_model, "model")->required();
  verify_cmd->add_option("--head", v_head, "saved output head to attach before verifying");
  verify_cmd->add_option("--epsilon", epsilon, "tolerated trigger error fraction")->check(CLI::Range(0.0, 0.5));
  verify_cmd->add_flag("--allow-unordered", allow_unordered, "skip the vk-before-model timestamp check");
  verify_cmd->add_option("--out", v_out, "write the verdict JSON here too");

  auto* pverify_cmd = app.add_subcommand("pverify", "public verification with a designated-verifier backend");
  std::string pv_vkp, pv_mkp, pv_model, pv_out;
  pverify_cmd->add_option("--vk-p", pv_vkp, "public verification key")->required();
  pverify_cmd->add_option("--mk-p", pv_mkp, "prover's public marking key (private channel)")->required();
  pverify_cmd->add_option("--model", pv_model, "model")->required();
  pverify_cmd->add_option("--epsilon", epsilon, "tolerated trigger error fraction")->check(CLI::Range(0.0, 0.5));
  pverify_cmd->add_flag("--allow-unordered", allow_unordered, "skip the vk-before-model timestamp check");
  pverify_cmd->add_option("--out", pv_out, "write the verdict JSON here too");

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "run an attack and report accuracies");
  std::string a_model, a_mk, a_new_mk, a_variant, a_out_model, a_report, a_head_out, a_label;
  int a_epochs = 0;
  std::optional<std::uint64_t> a_transfer_seed;
  attack_cmd->add_option("--model", a_model, "model to attack")->required();
  attack_cmd->add_option("--variant", a_variant, "ftll, ftal, rtll, rtal, piracy or transfer")
      ->required()
      ->check(CLI::IsMember({"ftll", "ftal", "rtll", "rtal", "piracy", "transfer"}));
  attack_cmd->add_option("--mk", a_mk, "owner's marking key (watched trigger set)")->required();
  attack_cmd->add_option("--new-mk", a_new_mk, "adversary's marking key (piracy)");
  attack_cmd->add_option("--epochs", a_epochs, "attack epochs (default: the model's training budget)");
  attack_cmd->add_option("--transfer-data-seed", a_transfer_seed, "seed of the transfer dataset");
  attack_cmd->add_option("--out-model", a_out_model, "attacked model output");
  attack_cmd->add_option("--head-out", a_head_out, "saved original head (transfer)");
  attack_cmd->add_option("--label", a_label, "model row label in the report (default from the model)");
  attack_cmd->add_option("--report", a_report, "attack report output");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "write a result-table row for a model");
  std::string e_model, e_mk, e_out, e_label;
  eval_cmd->add_option("--model", e_model, "model")->required();
  eval_cmd->add_option("--mk", e_mk, "marking key providing the trigger set")->required();
  eval_cmd->add_option("--label", e_label, "row label (default from the model)");
  eval_cmd->add_option("--out", e_out, "row output")->required();

  // size
  auto* size_cmd = app.add_subcommand("size", "trigger set size for a security level");
  SizingParams sp;
  bool size_json = false;
  size_cmd->add_option("--n-sec", sp.n_sec, "security parameter: cheat probability 2^-n")->check(CLI::NonNegativeNumber);
  size_cmd->add_option("--size-labels", sp.num_labels, "number of labels")->check(CLI::Range(2, 1 << 20));
  size_cmd->add_option("--epsilon", sp.epsilon, "tolerated trigger error fraction");
  size_cmd->add_flag("--json", size_json, "JSON output");

  // report
  auto* report_cmd = app.add_subcommand("report", "assemble the result table of a run directory");
  std::string r_dir, r_json;
  report_cmd->add_option("run_dir", r_dir, "directory with rows and attack reports")->required();
  report_cmd->add_option("--json", r_json, "also write the table as JSON");

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "train, mark with both strategies and attack");
  TrainFlags exp_flags;
  exp_flags.add_to(exp_cmd);
  std::string x_out;
  std::size_t x_trigger = 100;
  int sweep = 1;
  exp_cmd->add_option("--out", x_out, "output directory")->required();
  exp_cmd->add_option("--trigger-size", x_trigger, "trigger set size")->check(CLI::PositiveNumber);
  exp_cmd->add_option("--sweep", sweep, "independent trials with derived seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitError;
  }

  try {
    const std::int64_t ts = g.now();

    if (train_cmd->parsed()) {
      const SyntheticParams dp = g.dataset_params();
      const DatasetBundle data = generate_synthetic(dp);
      const TrainConfig cfg = train_flags.config(derive_seed(g.seed, "cli/train"));
      Model m = train(data.train, LabeledSet{}, cfg, fresh_model(default_layer_dims(dp.dim, dp.num_labels), cfg.seed));
      save_model(train_out, m, g.seed, ts, train_provenance("train", dp, cfg));
      std::cout << "test accuracy " << format_accuracy(accuracy(m, data.test)) << "\n";
      return kExitAccepted;
    }

    if (keygen_cmd->parsed()) {
      const SyntheticParams dp = g.dataset_params();
      const DatasetBundle data = generate_synthetic(dp);
      Rng rng(derive_seed(g.seed, "cli/keygen"));
      const KeyPair keys = keygen(trigger_size, dp.dim, dp.num_labels, data.oracle, rng);
      const io::KeyContext ctx{g.seed, dp, ts};
      io::write_json(mk_path, io::marking_key_to_json(keys.mk, ctx));
      io::write_json(vk_path, io::verification_key_to_json(keys.vk, ctx));
      return kExitAccepted;
    }

    if (pkeygen_cmd->parsed()) {
      if (ptrigger_size == 0 || ptrigger_size % 4 != 0) {
        std::cerr << "error: --trigger-size must be a positive multiple of 4 (got " << ptrigger_size << ")\n";
        return kExitError;
      }
      const SyntheticParams dp = g.dataset_params();
      const DatasetBundle data = generate_synthetic(dp);
      Rng rng(derive_seed(g.seed, "cli/pkeygen"));
      const PublicKeyPair keys = pkeygen(ptrigger_size, dp.dim, dp.num_labels, data.oracle, rng);
      const io::KeyContext ctx{g.seed, dp, ts};
      io::write_json(mkp_path, io::public_marking_key_to_json(keys.mk_p, ctx));
      io::write_json(vkp_path, io::public_verification_key_to_json(keys.vk_p, ctx));
      return kExitAccepted;
    }

    if (verify_keys_cmd->parsed()) {
      const auto [mk, mctx] = io::marking_key_from_json(io::read_json(vk_mk));
      const auto [vk, vctx] = io::verification_key_from_json(io::read_json(vk_vk));
      if (mk.size() != vk.size()) {
        std::cout << "keys differ in length\n";
        return kExitRejected;
      }
      for (std::size_t i = 0; i < mk.size(); ++i) {
        if (!open(vk.commits_t[i], Payload::trigger_input(mk.backdoor.inputs[i]), mk.rand_t[i]) ||
            !open(vk.commits_L[i], label_payload(mk.backdoor.labels[i]), mk.rand_L[i])) {
          std::cout << "commitment " << i << " does not open\n";
          return kExitRejected;
        }
      }
      std::cout << "all " << mk.size() << " commitment pairs open\n";
      return kExitAccepted;
    }

    if (mark_cmd->parsed()) {
      const MarkStrategy strategy = parse_strategy(strategy_name);
      const auto [mk, ctx] = io::any_marking_key_from_json(io::read_json(mark_mk));
      const DatasetBundle data = generate_synthetic(ctx.dataset);
      Model start;
      if (!mark_model.empty()) {
        start = load_model(mark_model).model;
      } else if (strategy == MarkStrategy::PreTrained) {
        throw Error("pre-trained marking needs --model");
      } else {
        start = Model::zeros(default_layer_dims(ctx.dataset.dim, ctx.dataset.num_labels));
      }
      const TrainConfig cfg = marking_config(mark_flags.config(derive_seed(g.seed, "cli/mark")), strategy);
      Model marked = mark(start, mk, data.train, cfg, strategy);
      Json prov = train_provenance("mark", ctx.dataset, cfg);
      prov["strategy"] = to_string(strategy);
      save_model(mark_out, marked, g.seed, ts, prov);
      std::cout << "test accuracy " << format_accuracy(accuracy(marked, data.test)) << ", trigger accuracy "
                << format_accuracy(trigger_accuracy(marked, mk.backdoor)) << "\n";
      return kExitAccepted;
    }

    if (verify_cmd->parsed()) {
      const auto [mk, mctx] = io::marking_key_from_json(io::read_json(v_mk));
      const auto [vk, vctx] = io::verification_key_from_json(io::read_json(v_vk));
      const io::ModelFile mf = load_model(v_model);
      check_order(vctx.created_unix, mf.created_unix, allow_unordered);
      Model m = mf.model;
      if (!v_head.empty()) m = attach_head(m, io::head_from_json(io::read_json(v_head)));
      const DatasetBundle data = generate_synthetic(vctx.dataset);
      const VerifyResult r = verify(mk, vk, m, data.oracle, VerifyPolicy{epsilon});
      emit(verdict_json(r), v_out);
      return r.accepted ? kExitAccepted : kExitRejected;
    }

    if (pverify_cmd->parsed()) {
      const auto [vk_p, vctx] = io::public_verification_key_from_json(io::read_json(pv_vkp));
      const auto [mk_p, mctx] = io::public_marking_key_from_json(io::read_json(pv_mkp));
      const io::ModelFile mf = load_model(pv_model);
      check_order(vctx.created_unix, mf.created_unix, allow_unordered);
      const DatasetBundle data = generate_synthetic(vctx.dataset);
      auto backend = DesignatedVerifierBackend::from_prover(mk_p);
      const PVerifyResult r = pverify(vk_p, mf.model, data.oracle, VerifyPolicy{epsilon}, backend);
      emit(verdict_json(r), pv_out);
      return r.accepted ? kExitAccepted : kExitRejected;
    }

    if (attack_cmd->parsed()) {
      const io::ModelFile mf = load_model(a_model);
      const auto [mk, mctx] = io::any_marking_key_from_json(io::read_json(a_mk));
      const DatasetBundle data = dataset_of(mf);
      const std::string label = a_label.empty() ? variant_label_of(mf) : a_label;
      AttackConfig ac;
      ac.epochs = a_epochs > 0 ? a_epochs : budget_of(mf, "epochs", 60);
      ac.batch_size = budget_of(mf, "batch_size", 20);
      ac.seed = derive_seed(g.seed, "cli/attack");
      AttackReport report;
      Model out;
      std::vector<NamedBackdoor> watched = {{"ts-orig", &mk.backdoor}};
      Json prov = mf.provenance;
      prov["kind"] = "attack";
      prov["attack"] = a_variant;

      if (auto v = parse_attack_variant(a_variant)) {
        ac.variant = *v;
        std::tie(out, report) = fine_tune(mf.model, data, ac, watched);
      } else if (a_variant == "piracy") {
        if (a_new_mk.empty()) throw Error("piracy needs --new-mk");
        const auto [new_mk, nctx] = io::any_marking_key_from_json(io::read_json(a_new_mk));
        TrainConfig base;
        base.epochs = ac.epochs;
        base.batch_size = ac.batch_size;
        const TrainConfig pc = piracy_config(mf.model, base, ac.seed);
        report.variant = "piracy";
        report.test_accuracy_before = accuracy(mf.model, data.test);
        out = piracy_embed(mf.model, new_mk, data.train, pc);
        report.test_accuracy_after = accuracy(out, data.test);
        report.triggers.push_back({"ts-orig", trigger_accuracy(mf.model, mk.backdoor), trigger_accuracy(out, mk.backdoor)});
        report.triggers.push_back(
            {"ts-new", trigger_accuracy(mf.model, new_mk.backdoor), trigger_accuracy(out, new_mk.backdoor)});
        prov["piracy_config"] = io::to_json(pc);
      } else {
        SyntheticParams tp = io::synthetic_params_from_json(mf.provenance["dataset"]);
        tp.seed = a_transfer_seed ? *a_transfer_seed : derive_seed(g.seed, "cli/transfer-data");
        const DatasetBundle target = generate_synthetic(tp);
        auto [adapted, head] = transfer(mf.model, target, ac);
        report.variant = "transfer";
        report.test_accuracy_before = accuracy(mf.model, data.test);
        report.test_accuracy_after = accuracy(adapted, target.test);
        report.triggers.push_back({"ts-orig", trigger_accuracy(mf.model, mk.backdoor),
                                   trigger_accuracy(attach_head(adapted, head), mk.backdoor)});
        if (!a_head_out.empty()) io::write_json(a_head_out, io::head_to_json(head, g.seed));
        prov["dataset"] = io::to_json(tp);
        out = std::move(adapted);
      }
      if (!a_out_model.empty()) save_model(a_out_model, out, g.seed, ts, prov);
      emit(io::attack_report_to_json(report, g.seed, label, a_out_model), a_report);
      return kExitAccepted;
    }

    if (eval_cmd->parsed()) {
      const io::ModelFile mf = load_model(e_model);
      const auto [mk, mctx] = io::any_marking_key_from_json(io::read_json(e_mk));
      const DatasetBundle data = dataset_of(mf);
      const std::string label = e_label.empty() ? variant_label_of(mf) : e_label;
      const ModelRow row = model_row(label, mf.model, data, mk.backdoor, e_model, g.seed);
      emit(model_row_to_json(row), e_out);
      return kExitAccepted;
    }

    if (size_cmd->parsed()) {
      const SizingResult r = size_trigger_set(sp);
      Json j;
      j["n_sec"] = sp.n_sec;
      j["num_labels"] = sp.num_labels;
      j["epsilon"] = sp.epsilon;
      j["paper"] = r.paper_formula_size;
      j["paper_note"] = "as-printed";
      j["hoeffding"] = r.hoeffding_size;
      j["exact"] = r.exact_minimum_size;
      j["first_passing"] = r.first_passing_size;
      j["cheat_at_paper"] = r.cheat_at_paper_formula;
      j["cheat_at_hoeffding"] = r.cheat_at_hoeffding;
      j["cheat_at_exact"] = r.cheat_at_exact_minimum;
      j["target"] = std::ldexp(1.0, -sp.n_sec);
      if (size_json) {
        std::cout << io::dump(j);
      } else {
        std::cout << "paper=" << r.paper_formula_size << " (as-printed)\n"
                  << "hoeffding=" << r.hoeffding_size << "\n"
                  << "exact=" << r.exact_minimum_size << "\n"
                  << "first-passing=" << r.first_passing_size << " (larger sizes may fail)\n"
                  << "cheat probability: paper " << r.cheat_at_paper_formula << ", hoeffding " << r.cheat_at_hoeffding
                  << ", exact " << r.cheat_at_exact_minimum << " (target " << std::ldexp(1.0, -sp.n_sec) << ")\n";
      }
      return kExitAccepted;
    }

    if (report_cmd->parsed()) {
      const ResultTable t = collect_results(r_dir);
      std::cout << to_text(t);
      if (!r_json.empty()) io::write_json(r_json, to_json(t));
      return kExitAccepted;
    }

    if (exp_cmd->parsed()) {
      const TrainConfig cfg = exp_flags.config(0);
      if (sweep == 1) {
        run_experiment(x_out, g.seed, g.dataset_params(), cfg, x_trigger, ts);
        std::cout << to_text(collect_results(x_out));
        return kExitAccepted;
      }
      // Trials share nothing mutable; each gets its own derived seed and directory.
      const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), sweep));
      std::vector<std::string> errors(sweep);
      std::vector<std::thread> pool;
      for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (int i = static_cast<int>(w); i < sweep; i += static_cast<int>(workers)) {
            const std::uint64_t s = derive_seed(g.seed, "sweep", static_cast<std::uint64_t>(i));
            SyntheticParams dp = g.dataset_params();
            dp.seed = s;
            try {
              run_experiment(fs::path(x_out) / ("trial-" + std::to_string(i)), s, dp, cfg, x_trigger, ts);
            } catch (const std::exception& e) {
              errors[i] = e.what();
            }
          }
        });
      }
      for (auto& t : pool) t.join();
      int failed = 0;
      for (int i = 0; i < sweep; ++i) {
        if (!errors[i].empty()) {
          std::cerr << "trial " << i << ": " << errors[i] << "\n";
          ++failed;
        }
      }
      std::cout << sweep - failed << " of " << sweep << " trials written under " << x_out << "\n";
      return failed == 0 ? kExitAccepted : kExitError;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
