#pragma once

#include <optional>
#include <vector>

#include "dualfilter/dual_parameter.hpp"
#include "dualfilter/models.hpp"
#include "dualfilter/multi_index.hpp"

namespace dualfilter {

/// Filtering distribution sum_m w_m h(x, m, theta) pi(dx): a finite mixture
/// of conjugate components sharing one dual parameter. For OU the support is
/// empty and the state is (theta, timestamp) alone.
class MixtureState {
 public:
  MixtureState(ModelSpec model, IndexSet support, std::vector<double> log_weights, DualParameter theta,
               double timestamp);

  const ModelSpec& model() const { return model_; }
  const IndexSet& support() const { return support_; }
  const DualParameter& theta() const { return theta_; }
  double timestamp() const { return timestamp_; }

  /// Aligned with support().
  const std::vector<double>& log_weights() const { return log_weights_; }
  std::vector<double> weights() const;
  /// 0 for points outside the support.
  double weight(const MultiIndex& m) const;
  std::size_t size() const { return support_.size(); }
  bool has_mixture() const { return model_.dual_dim() > 0; }

 private:
  ModelSpec model_;
  IndexSet support_;
  std::vector<double> log_weights_;
  DualParameter theta_;
  double timestamp_;
};

/// Single component at (m0, theta0). Defaults give the stationary law.
MixtureState init(const ModelSpec& model, std::optional<MultiIndex> m0 = std::nullopt,
                  std::optional<DualParameter> theta0 = std::nullopt, double timestamp = 0.0);

struct UpdateResult {
  MixtureState state;
  /// log p(y) under the pre-update filter.
  double log_density;
};

/// Conditions on y. Requires y.time == state.timestamp().
UpdateResult update(const MixtureState& state, const Observation& y);

struct PredictOptions {
  /// Evaluate CIR transitions with the binomial closed form instead of the
  /// generic death-process kernel.
  bool cir_binomial = true;
  /// Test hook: the deterministic flow is advanced by dt * scale while the
  /// death process uses the true dt. 1 is the correct filter.
  double flow_time_scale = 1.0;
  /// Contributions whose source weight times death probability falls below
  /// this fraction of the largest source weight are not enumerated. 0 keeps
  /// the prediction exact.
  double negligible = 0.0;
};

/// Propagates the filter forward by dt through the dual process.
MixtureState predict(const MixtureState& state, double dt, const PredictOptions& options = {});

struct PruneResult {
  MixtureState state;
  double discarded_mass;
};

/// Drops components with weight < eps and renormalizes.
PruneResult prune(const MixtureState& state, double eps);

struct Moments {
  std::vector<double> mean;
  std::vector<double> variance;
};

/// Per-coordinate mean and variance of the filtering distribution.
Moments moments(const MixtureState& state);

/// With prune_eps > 0, step() also predicts with
/// negligible = max(predict.negligible, prune_eps * kNegligibleFactor).
inline constexpr double kNegligibleFactor = 1e-20;

struct FilterOptions {
  double prune_eps = 1e-10;
  PredictOptions predict;
};

struct StepResult {
  MixtureState state;
  double log_density;
  double pruned_mass;
  bool outside_proof_range;
};

/// Predict up to y.time, update with y, then prune.
StepResult step(const MixtureState& state, const Observation& y, const FilterOptions& options = {});

struct StepRecord {
  Observation observation;
  MixtureState state;
  double log_density;
  double pruned_mass;
  bool outside_proof_range;
};

struct FilterTrace {
  std::vector<StepRecord> steps;
  double log_likelihood = 0.0;
};

/// Runs the recursion over observations; the first one may share the initial
/// state's timestamp.
FilterTrace run_filter(const MixtureState& initial, const std::vector<Observation>& observations,
                       const FilterOptions& options = {});

/// Largest deviation of sum(weights) from 1.
double weight_sum_error(const MixtureState& state);

}  // namespace dualfilter
