// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "wmark/wmark.hpp"

using namespace wmark;

namespace {

struct Outcome {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void record(int id, const std::string& name, bool pass, const std::string& detail) {
  outcomes.push_back({id, name, pass, detail});
  std::printf("[%s] C%-2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "  .. %s\n", msg.c_str());
  std::fflush(stderr);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SyntheticParams desk_data(std::uint64_t seed) {
  SyntheticParams p;
  p.seed = seed;
  return p;
}

// P[Bin(n, p) = k] for all k, by direct products in long double.
std::vector<long double> binomial_pmf(int n, long double p) {
  std::vector<long double> pmf(static_cast<std::size_t>(n) + 1);
  long double choose = 1.0L;
  for (int k = 0; k <= n; ++k) {
    if (k > 0) choose = choose * (n - k + 1) / k;
    pmf[static_cast<std::size_t>(k)] = choose * std::pow(p, static_cast<long double>(k)) * std::pow(1.0L - p, static_cast<long double>(n - k));
  }
  return pmf;
}

Bytes in_domain_point(const GroundTruthOracle& o, int c) {
  const auto proto = o.prototypes().col(c);
  Bytes x(static_cast<std::size_t>(proto.size()));
  for (Eigen::Index r = 0; r < proto.size(); ++r) {
    x[static_cast<std::size_t>(r)] = static_cast<std::uint8_t>(std::lround(proto(r) * 255.0));
  }
  return x;
}

// Plain-loop mean NLL, independent of the library's forward pass.
double reference_loss(const Mlp<double>& m, const Eigen::MatrixXd& inputs, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < inputs.cols(); ++c) {
    std::vector<double> a(static_cast<std::size_t>(inputs.rows()));
    for (Eigen::Index r = 0; r < inputs.rows(); ++r) a[static_cast<std::size_t>(r)] = inputs(r, c) - 0.5;
    for (std::size_t li = 0; li < m.num_layers(); ++li) {
      const auto& l = m.layers()[li];
      std::vector<double> z(static_cast<std::size_t>(l.weights.rows()));
      for (Eigen::Index o = 0; o < l.weights.rows(); ++o) {
        double s = l.bias(o);
        for (Eigen::Index i = 0; i < l.weights.cols(); ++i) s += l.weights(o, i) * a[static_cast<std::size_t>(i)];
        z[static_cast<std::size_t>(o)] = li + 1 < m.num_layers() ? std::max(0.0, s) : s;
      }
      a = std::move(z);
    }
    double mx = a[0];
    for (double v : a) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : a) sum += std::exp(v - mx);
    total += -(a[static_cast<std::size_t>(labels[static_cast<std::size_t>(c)])] - mx - std::log(sum));
  }
  return total / static_cast<double>(inputs.cols());
}

struct SeedRun {
  std::uint64_t seed = 0;
  double test_unmarked = 0, test_fs = 0, test_pt = 0;
  double trig_unmarked = 0, trig_fs = 0, trig_pt = 0;
  bool verify_fs = false, verify_pt = false;
  double fs_after[4] = {}, pt_after[4] = {};
  double piracy_orig = 0, piracy_new = 0, piracy_new_embedded = 0;
  double transfer_trigger = 0;
};

}  // namespace

int main() {
  const auto t_start = std::chrono::steady_clock::now();
  std::printf("Desk configuration: synthetic |L|=10, d=64, 5000/1000, MLP 64-128-128-10, 60 epochs, batch 20,\n"
              "lr 0.1 divided by 10 every 20 epochs, |T|=100, k=2, eps=0.25.\n\n");

  // ---- pipelines shared by criteria 1, 2, 3, 5, 6, 7 ----
  std::vector<SeedRun> runs;
  std::vector<DatasetBundle> bundles;
  std::vector<MModelBoth> pipelines;
  double pipeline_seconds = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    DatasetBundle data = generate_synthetic(desk_data(s));
    MModelParams p;
    p.seed = s;
    MModelBoth both = mmodel_both(data, p);
    SeedRun r;
    r.seed = s;
    r.verify_fs = verify(both.mk, both.vk, both.from_scratch, data.oracle, VerifyPolicy{}).accepted;
    r.verify_pt = verify(both.mk, both.vk, both.pre_trained, data.oracle, VerifyPolicy{}).accepted;
    pipeline_seconds += seconds_since(t0);
    r.test_unmarked = accuracy(both.unmarked, data.test);
    r.test_fs = accuracy(both.from_scratch, data.test);
    r.test_pt = accuracy(both.pre_trained, data.test);
    r.trig_unmarked = trigger_accuracy(both.unmarked, both.mk.backdoor);
    r.trig_fs = trigger_accuracy(both.from_scratch, both.mk.backdoor);
    r.trig_pt = trigger_accuracy(both.pre_trained, both.mk.backdoor);
    progress(fmt("pipeline seed %llu: test %.4f/%.4f/%.4f trigger %.2f/%.2f/%.2f", static_cast<unsigned long long>(s),
                 r.test_unmarked, r.test_fs, r.test_pt, r.trig_unmarked, r.trig_fs, r.trig_pt));
    runs.push_back(r);
    if (s < 10) {
      bundles.push_back(std::move(data));
      pipelines.push_back(std::move(both));
    }
  }

  {
    int accepted = 0, perfect = 0;
    for (const auto& r : runs) {
      accepted += (r.verify_fs && r.verify_pt) ? 1 : 0;
      perfect += (r.trig_fs == 1.0 && r.trig_pt == 1.0) ? 1 : 0;
    }
    const bool pass = accepted == 20 && perfect == 20 && pipeline_seconds <= 300.0;
    record(1, "correctness", pass,
           fmt("verify accepted both strategies in %d/20, trigger accuracy 100%% in %d/20, pipelines took %.1f s "
               "(need 20/20, 20/20, <= 300 s)",
               accepted, perfect, pipeline_seconds));
  }

  {
    double worst = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
      worst = std::max({worst, std::abs(runs[i].test_fs - runs[i].test_unmarked),
                        std::abs(runs[i].test_pt - runs[i].test_unmarked)});
    }
    record(2, "functionality preserving", worst <= 0.02,
           fmt("max |test_acc(marked) - test_acc(unmarked)| over 10 seeds x 2 strategies = %.4f (need <= 0.02)", worst));
  }

  {
    const auto pmf = binomial_pmf(100, 0.1L);
    int lo = 0;
    long double below = 0.0L;
    while (below + pmf[static_cast<std::size_t>(lo)] <= 0.0005L) below += pmf[static_cast<std::size_t>(lo++)];
    int hi = 100;
    long double above = 0.0L;
    while (above + pmf[static_cast<std::size_t>(hi)] <= 0.0005L) above += pmf[static_cast<std::size_t>(hi--)];
    int inside = 0;
    std::string values;
    for (std::size_t i = 0; i < 10; ++i) {
      const int hits = static_cast<int>(std::lround(runs[i].trig_unmarked * 100));
      inside += (hits >= lo && hits <= hi) ? 1 : 0;
      values += (values.empty() ? "" : ",") + std::to_string(hits);
    }
    record(3, "chance baseline", inside == 10,
           fmt("unmarked trigger hits per 100 = [%s]; exact Bin(100, 0.1) 99.9%% band [%d, %d]; %d/10 inside (need 10/10)",
               values.c_str(), lo, hi, inside));
  }

  {
    const MModelBoth& b = pipelines[0];
    int accepted = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
      Rng rng(derive_seed(0, "acceptance/adversary", t));
      const KeyPair adv = keygen(100, 64, 10, bundles[0].oracle, rng);
      accepted += verify(adv.mk, adv.vk, b.from_scratch, bundles[0].oracle, VerifyPolicy{}).accepted ? 1 : 0;
    }
    record(4, "non-trivial ownership", accepted == 0,
           fmt("%d of 100 independent adversarial key pairs verified against a fixed marked model (need 0)", accepted));
  }

  // ---- attacks, piracy and transfer on seeds 0..9 ----
  for (std::size_t i = 0; i < 10; ++i) {
    const std::uint64_t s = runs[i].seed;
    const DatasetBundle& data = bundles[i];
    const MModelBoth& b = pipelines[i];
    SeedRun& r = runs[i];
    for (AttackVariant v : kAllAttackVariants) {
      AttackConfig ac;
      ac.variant = v;
      ac.seed = derive_seed(s, "acceptance/attack", static_cast<std::uint64_t>(v));
      const NamedBackdoor w[] = {{"TS", &b.mk.backdoor}};
      r.fs_after[static_cast<int>(v)] = fine_tune(b.from_scratch, data, ac, w).second.triggers[0].after;
      r.pt_after[static_cast<int>(v)] = fine_tune(b.pre_trained, data, ac, w).second.triggers[0].after;
    }

    Rng pirate_rng(derive_seed(s, "acceptance/pirate-keys"));
    const KeyPair pirate = keygen(100, 64, 10, data.oracle, pirate_rng);
    const Model doubly =
        piracy_embed(b.from_scratch, pirate.mk, data.train, piracy_config(b.from_scratch, TrainConfig{}, derive_seed(s, "acceptance/piracy")));
    r.piracy_new_embedded = trigger_accuracy(doubly, pirate.mk.backdoor);
    AttackConfig rtal;
    rtal.variant = AttackVariant::RTAL;
    rtal.seed = derive_seed(s, "acceptance/piracy-rtal");
    const NamedBackdoor both_sets[] = {{"TS-Orig", &b.mk.backdoor}, {"TS-New", &pirate.mk.backdoor}};
    const AttackReport pr = fine_tune(doubly, data, rtal, both_sets).second;
    r.piracy_orig = pr.triggers[0].after;
    r.piracy_new = pr.triggers[1].after;

    SyntheticParams tp = desk_data(derive_seed(s, "acceptance/transfer-data"));
    const DatasetBundle target = generate_synthetic(tp);
    AttackConfig tc;
    tc.variant = AttackVariant::FTAL;
    tc.seed = derive_seed(s, "acceptance/transfer");
    const auto [adapted, head] = transfer(b.from_scratch, target, tc);
    const VerifyResult vr = verify_with_head(adapted, head, b.mk, b.vk, data.oracle, VerifyPolicy{});
    r.transfer_trigger = 1.0 - static_cast<double>(vr.mismatches) / static_cast<double>(b.mk.size());
    progress(fmt("attacks seed %llu: FS %.2f/%.2f/%.2f/%.2f PT %.2f/%.2f/%.2f/%.2f piracy orig %.2f new %.2f "
                 "(new after embedding %.2f) transfer %.2f",
                 static_cast<unsigned long long>(s), r.fs_after[0], r.fs_after[1], r.fs_after[2], r.fs_after[3],
                 r.pt_after[0], r.pt_after[1], r.pt_after[2], r.pt_after[3], r.piracy_orig, r.piracy_new,
                 r.piracy_new_embedded, r.transfer_trigger));
  }

  {
    double worst_ft = 1.0;
    int ordered = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      const auto& r = runs[i];
      worst_ft = std::min({worst_ft, r.fs_after[0], r.fs_after[1]});
      bool all = true;
      for (int v = 0; v < 4; ++v) all = all && r.fs_after[v] >= r.pt_after[v];
      ordered += all ? 1 : 0;
    }
    double mean_fs[4] = {}, mean_pt[4] = {};
    for (std::size_t i = 0; i < 10; ++i) {
      for (int v = 0; v < 4; ++v) {
        mean_fs[v] += runs[i].fs_after[v] / 10;
        mean_pt[v] += runs[i].pt_after[v] / 10;
      }
    }
    record(5, "unremovability orderings", worst_ft >= 0.90 && ordered >= 9,
           fmt("min FromScratch trigger acc after FTLL/FTAL = %.2f (need >= 0.90); FromScratch >= PreTrained under all "
               "four variants in %d/10 seeds (need >= 9); mean FS/PT ftll %.2f/%.2f ftal %.2f/%.2f rtll %.2f/%.2f "
               "rtal %.2f/%.2f",
               worst_ft, ordered, mean_fs[0], mean_pt[0], mean_fs[1], mean_pt[1], mean_fs[2], mean_pt[2], mean_fs[3],
               mean_pt[3]));
  }

  {
    int wins = 0;
    double min_orig = 1.0;
    for (std::size_t i = 0; i < 10; ++i) {
      wins += runs[i].piracy_orig > runs[i].piracy_new ? 1 : 0;
      min_orig = std::min(min_orig, runs[i].piracy_orig);
    }
    record(6, "ownership piracy", wins >= 9 && min_orig >= 0.60,
           fmt("after RTAL on the doubly marked model TS-Orig > TS-New in %d/10 seeds (need >= 9); min TS-Orig %.2f "
               "(need >= 0.60)",
               wins, min_orig));
  }

  {
    int good = 0;
    double lowest = 1.0;
    for (std::size_t i = 0; i < 10; ++i) {
      good += runs[i].transfer_trigger >= 0.30 ? 1 : 0;
      lowest = std::min(lowest, runs[i].transfer_trigger);
    }
    record(7, "transfer", good >= 8,
           fmt("trigger accuracy through the saved head >= 0.30 in %d/10 seeds (need >= 8); min %.2f", good, lowest));
  }

  // ---- public verifiability ----
  {
    const DatasetBundle& data = bundles[0];
    std::string detail;
    bool pass = true;
    for (int m : {4, 8, 10}) {
      int rejected = 0;
      const int trials = 500;
      for (int t = 0; t < trials; ++t) {
        Rng rng(derive_seed(8, "acceptance/soundness/" + std::to_string(m), static_cast<std::uint64_t>(t)));
        KeyPair keys = keygen(120, 64, 10, data.oracle, rng);
        std::vector<std::size_t> slots(120);
        std::iota(slots.begin(), slots.end(), 0);
        for (int j = 0; j < m; ++j) {
          const auto jj = static_cast<std::size_t>(j);
          std::swap(slots[jj], slots[jj + rng.below(120 - jj)]);
          const int c = static_cast<int>(rng.below(10));
          keys.mk.backdoor.inputs[slots[jj]] = in_domain_point(data.oracle, c);
          keys.mk.backdoor.inputs[slots[jj]][rng.below(64)] ^= 1;
          keys.mk.backdoor.labels[slots[jj]] = c;
        }
        keys.vk = commit_key(keys.mk);
        rejected += check_opened(make_public_keys(std::move(keys)).vk_p, data.oracle).ok ? 0 : 1;
      }
      const double rate = static_cast<double>(rejected) / trials;
      const double need = 1.0 - std::ldexp(1.0, -m) - 0.02;
      pass = pass && rate >= need;
      detail += fmt("%sm=%d rejected %.3f (need >= %.3f)", detail.empty() ? "" : "; ", m, rate, need);
    }
    record(8, "cut-and-choose soundness", pass, detail + " over 500 trials each, l=120");
  }

  {
    const DatasetBundle& data = bundles[0];
    MModelParams p;
    p.seed = 0;
    Rng rng(derive_seed(0, "acceptance/pkeygen"));
    const PublicKeyPair honest = pkeygen(120, 64, 10, data.oracle, rng);
    const Model& unmarked = pipelines[0].unmarked;
    const Model marked = mmodel_mark(unmarked, honest.mk_p.mk, data, p, MarkStrategy::FromScratch);
    Rng crng(9);
    int agree = 0, accepted = 0;
    for (int t = 0; t < 50; ++t) {
      KeyPair base{honest.mk_p.mk, honest.vk_p.vk};
      const Model* model = &marked;
      const double eps = std::array{0.1, 0.25, 0.4}[crng.below(3)];
      switch (crng.below(4)) {
        case 0:
          break;
        case 1:
          model = &unmarked;
          break;
        case 2: {
          const std::size_t n = crng.below(41);
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t i = crng.below(base.mk.size());
            base.mk.backdoor.labels[i] = (base.mk.backdoor.labels[i] + 1 + static_cast<int>(crng.below(9))) % 10;
          }
          base.vk = commit_key(base.mk);
          break;
        }
        default:
          base.mk.rand_t[crng.below(base.mk.size())].bytes[crng.below(32)] ^= 0x01;
          break;
      }
      const PublicKeyPair pk = make_public_keys(base);
      auto backend = DesignatedVerifierBackend::from_prover(pk.mk_p);
      const bool pv = pverify(pk.vk_p, *model, data.oracle, VerifyPolicy{eps}, backend).accepted;

      const Challenge e = derive_challenge(pk.vk_p.vk);
      const auto hidden = select(pk.mk_p.mk, e, 0);
      const auto hidden_c = select(pk.vk_p.vk, e, 0);
      MarkingKey mk0;
      mk0.backdoor.dim = 64;
      VerificationKey vk0;
      for (std::size_t j = 0; j < hidden.size(); ++j) {
        mk0.backdoor.inputs.push_back(hidden.entries[j].input);
        mk0.backdoor.labels.push_back(hidden.entries[j].label);
        mk0.rand_t.push_back(hidden.entries[j].rand_t);
        mk0.rand_L.push_back(hidden.entries[j].rand_L);
        vk0.commits_t.push_back(hidden_c.entries[j].commit_t);
        vk0.commits_L.push_back(hidden_c.entries[j].commit_L);
      }
      const bool composed = check_opened(pk.vk_p, data.oracle).ok &&
                            verify(mk0, vk0, *model, data.oracle, VerifyPolicy{eps}).accepted;
      agree += pv == composed ? 1 : 0;
      accepted += pv ? 1 : 0;
    }
    record(9, "pverify equivalence", agree == 50,
           fmt("designated-verifier pverify agreed with check_opened and restricted verify on %d/50 cases "
               "(%d accepted; need 50/50)",
               agree, accepted));
  }

  // ---- sizing ----
  {
    const SizingParams sp{30, 10, 0.25};
    const SizingResult r = size_trigger_set(sp);
    const auto pmf = binomial_pmf(25, 0.1L);
    long double tail = 0.0L;
    for (int k = static_cast<int>(pass_threshold(25, 0.25)); k <= 25; ++k) tail += pmf[static_cast<std::size_t>(k)];
    const long double target = std::ldexp(1.0L, -30);
    const bool pass = r.hoeffding_size == 25 && tail <= target && r.exact_minimum_size <= 25 &&
                      r.paper_formula_size == 32 && std::abs(static_cast<long double>(cheat_probability(25, sp)) - tail) <= 1e-9L * tail;
    record(10, "sizing cross-check", pass,
           fmt("hoeffding=%llu (need 25); exact tail at 25 = %.3Le (need <= 2^-30 = %.3Le); exact minimum=%llu "
               "(need <= 25; first passing size %llu); paper=%llu as-printed",
               static_cast<unsigned long long>(r.hoeffding_size), tail, target,
               static_cast<unsigned long long>(r.exact_minimum_size), static_cast<unsigned long long>(r.first_passing_size),
               static_cast<unsigned long long>(r.paper_formula_size)));
  }

  // ---- commitments ----
  {
    Rng rng(11);
    int opened = 0;
    for (int i = 0; i < 10000; ++i) {
      Bytes body(1 + rng.below(80));
      for (auto& b : body) b = rng.next_byte();
      const Payload p(rng.below(2) ? PayloadTag::TriggerInput : PayloadTag::Label, body);
      const Randomness r = sample_randomness(rng);
      opened += open(commit(p, r), p, r) ? 1 : 0;
    }
    Bytes body(64);
    for (auto& b : body) b = rng.next_byte();
    const Randomness r = sample_randomness(rng);
    const Commitment c = commit(Payload::trigger_input(body), r);
    int rejected = 0;
    for (std::size_t i = 0; i < body.size(); ++i) {
      for (int bit = 0; bit < 8; ++bit) {
        Bytes f = body;
        f[i] ^= static_cast<std::uint8_t>(1u << bit);
        rejected += open(c, Payload::trigger_input(f), r) ? 0 : 1;
      }
    }
    int vectors = 0, matched = 0;
    std::ifstream in(std::string(WMARK_FIXTURE_DIR) + "/sha256_vectors.txt");
    for (std::string line; std::getline(in, line);) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string name, hex, digest;
      ss >> name >> hex >> digest;
      Bytes input;
      if (name == "million-a") {
        input.assign(1000000, 'a');
      } else if (hex != "-") {
        input = from_hex(hex);
      }
      ++vectors;
      matched += to_hex(sha256(input)) == digest ? 1 : 0;
    }
    record(11, "commitment suite", opened == 10000 && rejected == 512 && vectors == 4 && matched == vectors,
           fmt("%d/10000 random payloads open; %d/512 single-bit tampers of a 64-byte payload rejected; "
               "%d/%d pinned SHA-256 vectors match",
               opened, rejected, matched, vectors));
  }

  // ---- numerics ----
  {
    Rng rng(12);
    Mlp<double> m = Mlp<double>::random({6, 5, 4, 3}, rng);
    for (auto& l : m.layers()) {
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.2, 0.2);
    }
    Eigen::MatrixXd x(6, 7);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
    const std::vector<int> y = {0, 1, 2, 1, 0, 2, 2};
    const auto g = nll_loss_gradient(m, x, y);
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t li = 0; li < m.num_layers(); ++li) {
      auto check = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = reference_loss(m, x, y);
        param = saved - h;
        const double down = reference_loss(m, x, y);
        param = saved;
        const double numeric = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(numeric - analytic) / std::max(1e-8, std::abs(numeric) + std::abs(analytic)));
      };
      auto& l = m.layers()[li];
      for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weights.cols(); ++c) check(l.weights(r, c), g.grads[li].weights(r, c));
      }
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) check(l.bias(r), g.grads[li].bias(r));
    }
    Model f = Model::random({64, 128, 128, 10}, rng);
    Eigen::MatrixXf xs(64, 10000);
    for (Eigen::Index i = 0; i < xs.size(); ++i) xs.data()[i] = static_cast<float>(rng.uniform());
    const Eigen::MatrixXf p = f.probabilities(xs);
    double dev = 0.0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) dev = std::max(dev, std::abs(static_cast<double>(p.col(c).sum()) - 1.0));
    record(12, "numerical integrity", worst <= 1e-4 && dev <= 1e-6,
           fmt("max relative gradient error %.2e (need <= 1e-4); max |sum softmax - 1| over 10^4 passes %.2e "
               "(need <= 1e-6)",
               worst, dev));
  }

  int failed = 0;
  for (const auto& o : outcomes) failed += o.pass ? 0 : 1;
  std::printf("\n%d/%zu criteria passed in %.1f s\n", static_cast<int>(outcomes.size()) - failed, outcomes.size(),
              seconds_since(t_start));
  return failed == 0 ? 0 : 1;
}
