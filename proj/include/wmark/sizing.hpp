#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

#include "wmark/error.hpp"

namespace wmark {

/// Trigger-set sizing against an adversary whose model matches each trigger
/// label with probability 1/|L| independently (chance level).
struct SizingParams {
  int n_sec = 30;  // target cheat probability 2^-n_sec
  int num_labels = 10;
  double epsilon = 0.25;

  double gap() const { return 1.0 - epsilon - 1.0 / static_cast<double>(num_labels); }

  void validate() const {
    if (n_sec < 0) throw Error("n_sec must be non-negative");
    if (num_labels < 2) throw Error("need at least two labels");
    if (!(epsilon > 0.0)) throw Error("epsilon must be positive");
    if (!(gap() > 0.0)) throw Error("1 - epsilon - 1/|L| must be positive; chance-level guessing already passes");
  }
};

/// |T| > n ln 2 / (1/|L| + eps - 1), evaluated exactly as written. The
/// denominator is negative for every usable epsilon, so the magnitude is
/// returned (rounded up).
inline std::uint64_t paper_formula(const SizingParams& p) {
  const double denom = 1.0 / static_cast<double>(p.num_labels) + p.epsilon - 1.0;
  if (denom == 0.0) throw Error("as-printed sizing formula has a zero denominator");
  const double value = std::abs(static_cast<double>(p.n_sec) * std::numbers::ln2 / denom);
  return static_cast<std::uint64_t>(std::ceil(value - 1e-12));
}

// Unrounded as-printed value; exposed for the linearity property.
inline double paper_formula_raw(const SizingParams& p) {
  const double denom = 1.0 / static_cast<double>(p.num_labels) + p.epsilon - 1.0;
  if (denom == 0.0) throw Error("as-printed sizing formula has a zero denominator");
  return std::abs(static_cast<double>(p.n_sec) * std::numbers::ln2 / denom);
}

/// Smallest |T| with exp(-2 |T| gap^2) <= 2^-n_sec, gap = 1 - eps - 1/|L|.
inline std::uint64_t hoeffding_size(const SizingParams& p) {
  p.validate();
  const double g = p.gap();
  const double value = static_cast<double>(p.n_sec) * std::numbers::ln2 / (2.0 * g * g);
  return static_cast<std::uint64_t>(std::ceil(value - 1e-12));
}

// Matches needed to pass verification with |T| points: ceil((1 - eps)|T|).
inline std::uint64_t pass_threshold(std::uint64_t trigger_size, double epsilon) {
  const double v = (1.0 - epsilon) * static_cast<double>(trigger_size);
  return static_cast<std::uint64_t>(std::ceil(v - 1e-9));
}

inline double log_binomial_pmf(std::uint64_t n, std::uint64_t k, double p) {
  const double nn = static_cast<double>(n);
  const double kk = static_cast<double>(k);
  const double log_choose = std::lgamma(nn + 1.0) - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0);
  const double a = k == 0 ? 0.0 : kk * std::log(p);
  const double b = k == n ? 0.0 : (nn - kk) * std::log1p(-p);
  return log_choose + a + b;
}

/// Natural log of P[Bin(n, p) >= threshold], by log-sum-exp over the tail.
inline double log_exact_tail(std::uint64_t n, double p, std::uint64_t threshold) {
  if (threshold > n) throw Error("tail threshold exceeds the number of trials");
  if (!(p >= 0.0 && p <= 1.0)) throw Error("probability must lie in [0, 1]");
  if (threshold == 0) return 0.0;
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return 0.0;
  double peak = -std::numeric_limits<double>::infinity();
  for (std::uint64_t k = threshold; k <= n; ++k) peak = std::max(peak, log_binomial_pmf(n, k, p));
  double sum = 0.0;
  for (std::uint64_t k = threshold; k <= n; ++k) sum += std::exp(log_binomial_pmf(n, k, p) - peak);
  return std::min(0.0, peak + std::log(sum));
}

inline double exact_tail(std::uint64_t n, double p, std::uint64_t threshold) {
  return std::exp(log_exact_tail(n, p, threshold));
}

inline double cheat_probability(std::uint64_t trigger_size, const SizingParams& p) {
  return exact_tail(trigger_size, 1.0 / static_cast<double>(p.num_labels), pass_threshold(trigger_size, p.epsilon));
}

/// Smallest |T| from which every larger trigger set meets 2^-n_sec at chance
/// level. The ceiling in the threshold makes the tail non-monotone (at
/// n_sec=30, |L|=10, eps=0.25 size 15 passes, 16 fails, 17 onward pass), so
/// this scans down from the Hoeffding size, above which the bound holds for
/// every size.
inline std::uint64_t exact_minimum_size(const SizingParams& p) {
  p.validate();
  const double log_target = -static_cast<double>(p.n_sec) * std::numbers::ln2;
  const double q = 1.0 / static_cast<double>(p.num_labels);
  auto ok = [&](std::uint64_t t) {
    return log_exact_tail(t, q, pass_threshold(t, p.epsilon)) <= log_target + 1e-12;
  };
  std::uint64_t t = hoeffding_size(p);
  while (t > 0 && ok(t - 1)) --t;
  return t;
}

// Smallest |T| that meets 2^-n_sec on its own, ignoring larger sizes.
inline std::uint64_t first_passing_size(const SizingParams& p) {
  p.validate();
  const double log_target = -static_cast<double>(p.n_sec) * std::numbers::ln2;
  const double q = 1.0 / static_cast<double>(p.num_labels);
  for (std::uint64_t t = 0;; ++t) {
    if (log_exact_tail(t, q, pass_threshold(t, p.epsilon)) <= log_target + 1e-12) return t;
  }
}

struct SizingResult {
  std::uint64_t paper_formula_size = 0;
  std::uint64_t hoeffding_size = 0;
  std::uint64_t exact_minimum_size = 0;
  std::uint64_t first_passing_size = 0;
  double cheat_at_paper_formula = 0.0;
  double cheat_at_hoeffding = 0.0;
  double cheat_at_exact_minimum = 0.0;
};

inline SizingResult size_trigger_set(const SizingParams& p) {
  p.validate();
  SizingResult r;
  r.paper_formula_size = paper_formula(p);
  r.hoeffding_size = wmark::hoeffding_size(p);
  r.exact_minimum_size = wmark::exact_minimum_size(p);
  r.first_passing_size = wmark::first_passing_size(p);
  r.cheat_at_paper_formula = cheat_probability(r.paper_formula_size, p);
  r.cheat_at_hoeffding = cheat_probability(r.hoeffding_size, p);
  r.cheat_at_exact_minimum = cheat_probability(r.exact_minimum_size, p);
  return r;
}

}  // namespace wmark
