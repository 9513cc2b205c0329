#include "dualfilter/dual_death.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dualfilter/errors.hpp"

namespace dualfilter {

namespace {

using Real = long double;

constexpr Real kLongEps = std::numeric_limits<Real>::epsilon();
// Estimated relative error above which an alternating-sum entry is recomputed.
constexpr Real kFallbackRelTol = 1e-12L;
// Rounding slack tolerated before a probability outside [0,1] becomes an error.
constexpr double kClampSlack = 1e-10;
// Relative gap below which two rates count as coincident.
constexpr double kCoincidentRelTol = 1e-12;

// Rates out of the levels total, total-1, ..., 0 in that order.
std::vector<Real> level_rates(int total, const DeathKernelSpec& spec) {
  std::vector<Real> rates(static_cast<std::size_t>(total) + 1);
  for (int k = 0; k <= total; ++k) {
    const double r = spec.total_rate(total - k);
    if (!(r >= 0.0) || !std::isfinite(r)) {
      throw InputError("death rate lambda_" + std::to_string(total - k) + " is not finite and non-negative");
    }
    rates[static_cast<std::size_t>(k)] = r;
  }
  return rates;
}

void require_distinct(const std::vector<Real>& rates, std::size_t count) {
  std::vector<Real> sorted(rates.begin(), rates.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const Real scale = std::max(std::fabs(sorted[i]), std::fabs(sorted[i - 1]));
    if (sorted[i] - sorted[i - 1] <= kCoincidentRelTol * scale) {
      throw NumericalError("degenerate death rates: two values of |m| lambda(|m|) coincide at " +
                           std::to_string(static_cast<double>(sorted[i])));
    }
  }
}

// Occupation probabilities of levels 0..total (level k = magnitude total-k)
// at rho-time tau, by uniformization of the magnitude chain. All terms are
// non-negative, so there is no cancellation.
std::vector<Real> uniformized_levels(const std::vector<Real>& rates, Real tau) {
  const std::size_t n = rates.size();
  std::vector<Real> out(n, 0.0L);
  const Real unif = *std::max_element(rates.begin(), rates.end());
  if (unif == 0.0L || tau == 0.0L) {
    out[0] = 1.0L;
    return out;
  }
  const Real mean = unif * tau;
  const Real jmax_real = mean + 12.0L * std::sqrt(mean) + 40.0L;
  if (jmax_real > 5e6L) {
    throw NumericalError("uniformization needs too many terms (rate*time = " +
                         std::to_string(static_cast<double>(mean)) + ")");
  }
  const auto jmax = static_cast<std::size_t>(jmax_real);
  std::vector<Real> v(n, 0.0L), next(n);
  v[0] = 1.0L;
  const Real log_mean = std::log(mean);
  for (std::size_t j = 0; j <= jmax; ++j) {
    const Real log_w = -mean + static_cast<Real>(j) * log_mean - std::lgamma(static_cast<Real>(j) + 1.0L);
    const Real w = std::exp(log_w);
    for (std::size_t k = 0; k < n; ++k) out[k] += w * v[k];
    next[0] = v[0] * (1.0L - rates[0] / unif);
    for (std::size_t k = 1; k < n; ++k) {
      next[k] = v[k] * (1.0L - rates[k] / unif) + v[k - 1] * (rates[k - 1] / unif);
    }
    std::swap(v, next);
  }
  return out;
}

// Neumaier-compensated accumulator.
struct CompensatedSum {
  Real sum = 0.0L;
  Real comp = 0.0L;
  void add(Real x) {
    const Real t = sum + x;
    if (std::fabs(sum) >= std::fabs(x)) {
      comp += (sum - t) + x;
    } else {
      comp += (x - t) + sum;
    }
    sum = t;
  }
  Real value() const { return sum + comp; }
};

double checked_probability(Real p, const char* what) {
  if (p < -kClampSlack || p > 1.0L + kClampSlack || std::isnan(static_cast<double>(p))) {
    throw NumericalError(std::string(what) + " probability " + std::to_string(static_cast<double>(p)) +
                         " outside [0,1]");
  }
  return static_cast<double>(std::clamp(p, 0.0L, 1.0L));
}

}  // namespace

double death_rate(const MultiIndex& m, std::size_t j, const DualParameter& theta,
                  const DeathKernelSpec& spec) {
  if (j >= m.dim()) throw InputError("death_rate: coordinate index out of range");
  if (m[j] == 0) return 0.0;
  const double rho = spec.rho ? spec.rho(theta) : 1.0;
  return spec.lambda(m.magnitude()) * rho * m[j];
}

double c_coeff(int total, int drop, double tau, const DeathKernelSpec& spec) {
  if (drop < 0 || drop > total) throw InputError("c_coeff: drop must lie in [0, total]");
  if (tau < 0.0) throw InputError("c_coeff: negative rho-time");
  const auto rates = level_rates(total, spec);
  const auto d = static_cast<std::size_t>(drop);
  require_distinct(rates, d + 1);
  CompensatedSum sum;
  for (std::size_t k = 0; k <= d; ++k) {
    Real log_den = 0.0L;
    for (std::size_t h = 0; h <= d; ++h) {
      if (h != k) log_den += std::log(std::fabs(rates[k] - rates[h]));
    }
    const Real sign = ((d + k) % 2 == 0) ? 1.0L : -1.0L;
    sum.add(sign * std::exp(-rates[k] * static_cast<Real>(tau) - log_den));
  }
  return static_cast<double>(sum.value());
}

double log_mv_hypergeom(const MultiIndex& i, const MultiIndex& m) {
  if (!leq(i, m)) throw InputError("mv_hypergeom: draw " + i.to_string() + " exceeds urn " + m.to_string());
  auto log_choose = [](double a, double b) {
    return std::lgamma(a + 1.0) - std::lgamma(b + 1.0) - std::lgamma(a - b + 1.0);
  };
  double out = -log_choose(m.magnitude(), i.magnitude());
  for (std::size_t k = 0; k < m.dim(); ++k) out += log_choose(m[k], i[k]);
  return out;
}

double mv_hypergeom(const MultiIndex& i, const MultiIndex& m) {
  const double p = std::exp(log_mv_hypergeom(i, m));
  return std::min(p, 1.0);
}

MagnitudeKernel::MagnitudeKernel(int total, double tau, const DeathKernelSpec& spec)
    : total_(total), tau_(tau) {
  if (total < 0) throw InputError("MagnitudeKernel: negative magnitude");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw InputError("MagnitudeKernel: rho-time must be finite and >= 0");
  const auto n = static_cast<std::size_t>(total);
  const auto rates = level_rates(total, spec);
  require_distinct(rates, n + 1);

  std::vector<Real> values(n + 1, 0.0L);
  std::vector<Real> log_values(n + 1, -std::numeric_limits<Real>::infinity());
  const Real t = tau;
  if (tau == 0.0) {
    values[0] = 1.0L;
    log_values[0] = 0.0L;
  } else {
    values[0] = std::exp(-rates[0] * t);
    log_values[0] = -rates[0] * t;

    // log_gap[k] accumulates sum_{h <= d, h != k} log|r_k - r_h| as d grows.
    std::vector<Real> log_gap(n + 1, 0.0L);
    Real log_prefactor = 0.0L;
    Real abs_prefactor = 0.0L;
    std::vector<std::size_t> redo;
    std::vector<Real> exps(n + 1);
    for (std::size_t d = 1; d <= n; ++d) {
      log_prefactor += std::log(rates[d - 1]);
      abs_prefactor += std::fabs(std::log(rates[d - 1]));
      Real gap_d = 0.0L;
      for (std::size_t k = 0; k < d; ++k) {
        const Real l = std::log(rates[k] - rates[d]);
        log_gap[k] += l;
        gap_d += l;
      }
      log_gap[d] = gap_d;

      // Shift by the largest exponent so the sum is formed near unit scale.
      Real top = -std::numeric_limits<Real>::infinity();
      for (std::size_t k = 0; k <= d; ++k) {
        exps[k] = log_prefactor - rates[k] * t - log_gap[k];
        top = std::max(top, exps[k]);
      }
      CompensatedSum sum;
      Real abs_sum = 0.0L;
      Real err = 0.0L;
      for (std::size_t k = 0; k <= d; ++k) {
        const Real mag = std::exp(exps[k] - top);
        const Real sign = ((d + k) % 2 == 0) ? 1.0L : -1.0L;
        sum.add(sign * mag);
        abs_sum += mag;
        const Real cond = abs_prefactor + rates[k] * t + std::fabs(log_gap[k]) + static_cast<Real>(d) + 4.0L;
        err += mag * cond * kLongEps;
      }
      const Real shifted = sum.value();
      if (shifted <= 0.0L || err > kFallbackRelTol * shifted) {
        redo.push_back(d);
        continue;
      }
      log_values[d] = std::log(shifted) + top;
      values[d] = std::exp(log_values[d]);
    }
    if (!redo.empty()) {
      const auto exact = uniformized_levels(rates, t);
      for (std::size_t d : redo) {
        values[d] = exact[d];
        log_values[d] = exact[d] > 0.0L ? std::log(exact[d]) : -std::numeric_limits<Real>::infinity();
      }
      fallbacks_ = static_cast<int>(redo.size());
      spdlog::debug("magnitude kernel |m|={} tau={}: {} entries recomputed by uniformization", total, tau,
                    redo.size());
    }
  }

  Real mass = 0.0L;
  for (auto& v : values) {
    v = checked_probability(v, "magnitude transition");
    mass += v;
  }
  if (std::fabs(mass - 1.0L) > kClampSlack) {
    throw NumericalError("magnitude transition probabilities sum to " + std::to_string(static_cast<double>(mass)));
  }
  probs_.resize(n + 1);
  log_probs_.resize(n + 1);
  const Real log_mass = std::log(mass);
  for (std::size_t d = 0; d <= n; ++d) {
    probs_[d] = static_cast<double>(values[d] / mass);
    log_probs_[d] = static_cast<double>(log_values[d] - log_mass);
  }
}

double transition_prob(const MultiIndex& m, const MultiIndex& n, double t, const DualParameter& theta0,
                       const DeathKernelSpec& spec) {
  if (!leq(n, m)) throw InputError("transition_prob: target " + n.to_string() + " is not below " + m.to_string());
  if (!(t >= 0.0)) throw InputError("transition_prob: negative elapsed time");
  const MagnitudeKernel kernel(m.magnitude(), spec.rho_integral(theta0, t), spec);
  const MultiIndex drop = m - n;
  const double p = kernel.prob(drop.magnitude());
  if (p == 0.0) return 0.0;
  return checked_probability(static_cast<Real>(p) * std::exp(static_cast<Real>(log_mv_hypergeom(drop, m))),
                             "death-process transition");
}

double TransitionTable::prob(const MultiIndex& n) const {
  const std::size_t pos = targets.find(n);
  return pos == targets.size() ? 0.0 : probs[pos];
}

TransitionTable transition_table(const MultiIndex& m, double t, const DualParameter& theta0,
                                 const DeathKernelSpec& spec) {
  if (!(t >= 0.0)) throw InputError("transition_table: negative elapsed time");
  TransitionTable table{m, t, theta0, lower_set(m), {}};
  const MagnitudeKernel kernel(m.magnitude(), spec.rho_integral(theta0, t), spec);
  table.probs.reserve(table.targets.size());
  Real mass = 0.0L;
  for (const auto& n : table.targets) {
    const MultiIndex drop = m - n;
    const Real p = std::exp(static_cast<Real>(kernel.log_prob(drop.magnitude())) +
                            static_cast<Real>(log_mv_hypergeom(drop, m)));
    const double clamped = checked_probability(p, "death-process transition");
    table.probs.push_back(clamped);
    mass += clamped;
  }
  if (std::fabs(mass - 1.0L) > kClampSlack) {
    throw NumericalError("transition table mass " + std::to_string(static_cast<double>(mass)));
  }
  for (auto& p : table.probs) p = static_cast<double>(p / mass);
  return table;
}

}  // namespace dualfilter
