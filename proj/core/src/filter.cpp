#include "dualfilter/filter.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <map>
#include <unordered_map>
#include <utility>

#include "dualfilter/dual_death.hpp"
#include "dualfilter/errors.hpp"

namespace dualfilter {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kWeightTol = 1e-12;

double log_sum_exp(const std::vector<double>& v) {
  double top = kNegInf;
  for (double x : v) top = std::max(top, x);
  if (top == kNegInf) return kNegInf;
  long double s = 0.0L;
  for (double x : v) s += std::exp(static_cast<long double>(x - top));
  return top + static_cast<double>(std::log(s));
}

// log n! for n up to the largest magnitude seen.
class LogFactorials {
 public:
  double operator()(int n) {
    while (static_cast<int>(table_.size()) <= n) table_.push_back(std::lgamma(static_cast<double>(table_.size()) + 1.0));
    return table_[static_cast<std::size_t>(n)];
  }

 private:
  std::vector<double> table_{0.0};
};

double log_binomial_pmf(int n, int k, double log_p, double log_q, LogFactorials& lf) {
  auto term = [](int count, double lp) { return count == 0 ? 0.0 : count * lp; };
  return lf(n) - lf(k) - lf(n - k) + term(k, log_p) + term(n - k, log_q);
}

// Mixed-radix numbering of the box [0, max_1] x ... x [0, max_K], last
// coordinate fastest, so increasing index is lexicographic order.
struct Box {
  std::vector<std::uint64_t> stride;
  std::uint64_t size = 1;

  explicit Box(const IndexSet& support, std::size_t k) : stride(k, 1) {
    std::vector<std::uint64_t> extent(k, 1);
    for (const auto& m : support) {
      for (std::size_t j = 0; j < k; ++j) extent[j] = std::max<std::uint64_t>(extent[j], static_cast<std::uint64_t>(m[j]) + 1);
    }
    for (std::size_t j = k; j-- > 0;) {
      stride[j] = size;
      if (size > std::numeric_limits<std::uint64_t>::max() / extent[j]) {
        throw NumericalError("predict: support too large to index");
      }
      size *= extent[j];
    }
  }

  std::uint64_t index(const MultiIndex& m) const {
    std::uint64_t out = 0;
    for (std::size_t j = 0; j < stride.size(); ++j) out += stride[j] * static_cast<std::uint64_t>(m[j]);
    return out;
  }

  void decode(std::uint64_t index, std::vector<int>& coords) const {
    for (std::size_t j = 0; j < stride.size(); ++j) {
      coords[j] = static_cast<int>(index / stride[j]);
      index %= stride[j];
    }
  }
};

// Sums positive values keyed by box index; dense below kDenseLimit entries.
class Accumulator {
 public:
  static constexpr std::uint64_t kDenseLimit = std::uint64_t{1} << 22;
  using Entries = std::vector<std::pair<std::uint64_t, long double>>;

  explicit Accumulator(std::uint64_t size) : dense_(size <= kDenseLimit) {
    if (dense_) values_.assign(size, 0.0L);
  }

  void add(std::uint64_t index, long double v) {
    if (!(v > 0.0L)) return;
    if (!dense_) {
      sparse_[index] += v;
      return;
    }
    long double& slot = values_[index];
    if (slot == 0.0L) touched_.push_back(index);
    slot += v;
  }

  /// Entries in increasing index order; leaves the accumulator empty.
  Entries drain() {
    Entries out;
    if (dense_) {
      std::sort(touched_.begin(), touched_.end());
      out.reserve(touched_.size());
      for (auto i : touched_) {
        out.emplace_back(i, values_[i]);
        values_[i] = 0.0L;
      }
      touched_.clear();
    } else {
      out.assign(sparse_.begin(), sparse_.end());
      std::sort(out.begin(), out.end());
      sparse_.clear();
    }
    return out;
  }

 private:
  bool dense_;
  std::vector<long double> values_;
  std::vector<std::uint64_t> touched_;
  std::unordered_map<std::uint64_t, long double> sparse_;
};

}  // namespace

MixtureState::MixtureState(ModelSpec model, IndexSet support, std::vector<double> log_weights, DualParameter theta,
                           double timestamp)
    : model_(std::move(model)),
      support_(std::move(support)),
      log_weights_(std::move(log_weights)),
      theta_(std::move(theta)),
      timestamp_(timestamp) {
  validate_parameter(model_, theta_);
  if (support_.size() != log_weights_.size()) throw InputError("mixture support and weights differ in size");
  if (model_.dual_dim() == 0) {
    if (!support_.empty()) throw InputError("OU filter state carries no mixture");
  } else {
    if (support_.empty()) throw InputError("mixture state needs a non-empty support");
    if (support_.dim() != model_.dual_dim()) throw InputError("mixture support has the wrong dimension");
  }
}

std::vector<double> MixtureState::weights() const {
  std::vector<double> out(log_weights_.size());
  std::transform(log_weights_.begin(), log_weights_.end(), out.begin(), [](double lw) { return std::exp(lw); });
  return out;
}

double MixtureState::weight(const MultiIndex& m) const {
  const std::size_t pos = support_.find(m);
  return pos == support_.size() ? 0.0 : std::exp(log_weights_[pos]);
}

double weight_sum_error(const MixtureState& state) {
  if (!state.has_mixture()) return 0.0;
  long double s = 0.0L;
  for (double w : state.weights()) s += w;
  return static_cast<double>(std::fabs(s - 1.0L));
}

MixtureState init(const ModelSpec& model, std::optional<MultiIndex> m0, std::optional<DualParameter> theta0,
                  double timestamp) {
  const DualParameter theta = theta0.value_or(stationary_parameter(model));
  if (model.dual_dim() == 0) {
    if (m0 && m0->dim() != 0) throw InputError("OU model takes no initial multi-index");
    return MixtureState(model, IndexSet{}, {}, theta, timestamp);
  }
  const MultiIndex start = m0.value_or(MultiIndex::zero(model.dual_dim()));
  return MixtureState(model, IndexSet{start}, {0.0}, theta, timestamp);
}

UpdateResult update(const MixtureState& state, const Observation& y) {
  const auto& model = state.model();
  validate_observation(model, y);
  if (y.time != state.timestamp()) {
    throw InputError("update: observation time " + std::to_string(y.time) + " differs from filter time " +
                     std::to_string(state.timestamp()));
  }
  if (!state.has_mixture()) {
    const double log_c = log_predictive_const(model, MultiIndex{}, state.theta(), y.value);
    auto [m, theta] = conjugate_update(model, y.value, MultiIndex{}, state.theta());
    return {MixtureState(model, IndexSet{}, {}, theta, state.timestamp()), log_c};
  }

  const auto& support = state.support();
  std::vector<double> log_w(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    log_w[i] = state.log_weights()[i] + log_predictive_const(model, support[i], state.theta(), y.value);
  }
  const double log_density = log_sum_exp(log_w);
  if (!std::isfinite(log_density)) {
    throw NumericalError("observation has zero predictive density under every mixture component");
  }
  for (double& lw : log_w) lw -= log_density;
  // t(y, m) = m + N(y) preserves the lexicographic order, so weights stay aligned.
  const MultiIndex shift = emission_shift(model, y.value);
  DualParameter theta = conjugate_update(model, y.value, support[0], state.theta()).second;
  return {MixtureState(model, translate(support, shift), std::move(log_w), std::move(theta), state.timestamp()),
          log_density};
}

MixtureState predict(const MixtureState& state, double dt, const PredictOptions& options) {
  if (!(dt >= 0.0) || !std::isfinite(dt)) throw InputError("predict: elapsed time must be finite and >= 0");
  const auto& model = state.model();
  if (dt == 0.0) return state;

  const DualParameter theta_next = theta_flow(model, state.theta(), dt * options.flow_time_scale);
  if (!state.has_mixture()) {
    return MixtureState(model, IndexSet{}, {}, theta_next, state.timestamp() + dt);
  }

  const auto& support = state.support();
  const auto& log_w = state.log_weights();
  const double top = *std::max_element(log_w.begin(), log_w.end());
  LogFactorials lf;
  const std::size_t k = model.dual_dim();
  const Box box(support, k);
  Accumulator acc(box.size);

  if (model.kind() == ModelKind::Cir && options.cir_binomial) {
    const double theta = std::get<GammaRate>(state.theta()).value;
    const double p = cir_survival_probability(model.cir(), dt, theta);
    const double log_p = std::log(p);
    const double log_q = std::log1p(-p);
    for (std::size_t s = 0; s < support.size(); ++s) {
      const int m = support[s][0];
      const double lw = log_w[s] - top;
      for (int n = 0; n <= m; ++n) {
        acc.add(static_cast<std::uint64_t>(n),
                std::exp(static_cast<long double>(lw + log_binomial_pmf(m, n, log_p, log_q, lf))));
      }
    }
  } else {
    // Removing d balls without replacement from the urn m is d successive
    // uniform single-ball removals, so sources of equal magnitude share one
    // thinning sweep down the magnitude levels.
    const DeathKernelSpec kernel_spec = death_kernel_spec(model);
    const double tau = kernel_spec.rho_integral(state.theta(), dt);
    const double log_cut = options.negligible > 0.0 ? std::log(options.negligible) : kNegInf;
    std::map<int, std::vector<std::size_t>> by_magnitude;
    for (std::size_t s = 0; s < support.size(); ++s) by_magnitude[support[s].magnitude()].push_back(s);
    Accumulator level(box.size);
    std::vector<int> coords(k);
    for (const auto& [total, members] : by_magnitude) {
      const MagnitudeKernel kernel(total, tau, kernel_spec);
      double lead = kNegInf;
      for (auto s : members) lead = std::max(lead, log_w[s] - top);
      auto kept = [&](int drop) {
        const double lp = kernel.log_prob(drop);
        return lp != kNegInf && lead + lp >= log_cut;
      };
      int last_drop = -1;
      for (int d = 0; d <= total; ++d) {
        if (kept(d)) last_drop = d;
      }
      Accumulator::Entries frontier;
      for (auto s : members) frontier.emplace_back(box.index(support[s]), std::exp(static_cast<long double>(log_w[s] - top)));
      for (int d = 0; d <= last_drop; ++d) {
        if (kept(d)) {
          const long double p = std::exp(static_cast<long double>(kernel.log_prob(d)));
          for (const auto& [index, v] : frontier) acc.add(index, v * p);
        }
        if (d == last_drop) break;
        const long double magnitude = total - d;
        for (const auto& [index, v] : frontier) {
          box.decode(index, coords);
          for (std::size_t j = 0; j < k; ++j) {
            if (coords[j] > 0) level.add(index - box.stride[j], v * coords[j] / magnitude);
          }
        }
        frontier = level.drain();
      }
    }
  }

  const auto entries = acc.drain();
  long double mass = 0.0L;
  for (const auto& [index, v] : entries) mass += v;
  std::vector<MultiIndex> next_support;
  std::vector<double> next_log_w;
  next_support.reserve(entries.size());
  next_log_w.reserve(entries.size());
  std::vector<int> coords(k);
  for (const auto& [index, v] : entries) {
    box.decode(index, coords);
    next_support.emplace_back(coords);
    next_log_w.push_back(static_cast<double>(std::log(v / mass)));
  }
  return MixtureState(model, IndexSet(std::move(next_support)), std::move(next_log_w), theta_next,
                      state.timestamp() + dt);
}

PruneResult prune(const MixtureState& state, double eps) {
  if (!(eps >= 0.0) || !(eps < 1.0)) throw InputError("prune threshold must lie in [0, 1)");
  if (eps == 0.0 || !state.has_mixture()) return {state, 0.0};
  const double log_eps = std::log(eps);
  std::vector<MultiIndex> kept;
  std::vector<double> kept_log_w;
  long double discarded = 0.0L;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const double lw = state.log_weights()[i];
    if (lw < log_eps) {
      discarded += std::exp(static_cast<long double>(lw));
    } else {
      kept.push_back(state.support()[i]);
      kept_log_w.push_back(lw);
    }
  }
  if (kept.empty()) throw NumericalError("pruning at " + std::to_string(eps) + " removed every component");
  if (kept.size() == state.size()) return {state, 0.0};
  const double log_mass = log_sum_exp(kept_log_w);
  for (double& lw : kept_log_w) lw -= log_mass;
  spdlog::debug("pruned {} of {} components, mass {}", state.size() - kept.size(), state.size(),
                static_cast<double>(discarded));
  return {MixtureState(state.model(), IndexSet(std::move(kept)), std::move(kept_log_w), state.theta(),
                       state.timestamp()),
          static_cast<double>(discarded)};
}

Moments moments(const MixtureState& state) {
  const auto& model = state.model();
  if (!state.has_mixture()) {
    const auto& g = std::get<GaussianMoments>(state.theta());
    return {{g.mean}, {g.variance}};
  }
  const std::size_t dim = model.signal_dim();
  std::vector<long double> first(dim, 0.0L), second(dim, 0.0L);
  const auto w = state.weights();
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto c = component_moments(model, state.support()[i], state.theta());
    for (std::size_t j = 0; j < dim; ++j) {
      first[j] += w[i] * c.mean[j];
      second[j] += w[i] * c.second[j];
    }
  }
  Moments out;
  for (std::size_t j = 0; j < dim; ++j) {
    out.mean.push_back(static_cast<double>(first[j]));
    out.variance.push_back(static_cast<double>(std::max(second[j] - first[j] * first[j], 0.0L)));
  }
  return out;
}

StepResult step(const MixtureState& state, const Observation& y, const FilterOptions& options) {
  if (y.time < state.timestamp()) {
    throw InputError("step: observation at " + std::to_string(y.time) + " precedes filter time " +
                     std::to_string(state.timestamp()));
  }
  PredictOptions predict_options = options.predict;
  if (options.prune_eps > 0.0) {
    predict_options.negligible = std::max(predict_options.negligible, options.prune_eps * kNegligibleFactor);
  }
  const MixtureState predicted = predict(state, y.time - state.timestamp(), predict_options);
  auto [updated, log_density] = update(predicted, y);
  auto [pruned, discarded] = prune(updated, options.prune_eps);
  const bool outside = !within_proof_range(pruned.model(), pruned.theta());
  return {std::move(pruned), log_density, discarded, outside};
}

FilterTrace run_filter(const MixtureState& initial, const std::vector<Observation>& observations,
                       const FilterOptions& options) {
  FilterTrace trace;
  trace.steps.reserve(observations.size());
  MixtureState current = initial;
  for (const auto& y : observations) {
    auto result = step(current, y, options);
    trace.log_likelihood += result.log_density;
    trace.steps.push_back({y, result.state, result.log_density, result.pruned_mass, result.outside_proof_range});
    current = std::move(result.state);
  }
  return trace;
}

}  // namespace dualfilter
