#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dualfilter/dual_parameter.hpp"
#include "dualfilter/multi_index.hpp"

namespace dualfilter {

/// Rate structure of a K-dimensional pure death process whose jumps
/// m -> m - e_j occur at rate lambda(|m|) * rho(theta_t) * m_j, with theta_t
/// following a deterministic flow.
struct DeathKernelSpec {
  /// lambda(|m|): increasing, positive.
  std::function<double(int)> lambda;
  /// (theta_0, t) -> integral of rho(Theta_s) over [0, t].
  std::function<double(const DualParameter&, double)> rho_integral;
  /// rho(theta); only needed for instantaneous rates.
  std::function<double(const DualParameter&)> rho;
  std::size_t dim = 1;

  /// lambda_{|m|} = |m| lambda(|m|), the total jump rate out of magnitude |m|
  /// per unit of rho-time.
  double total_rate(int magnitude) const {
    return magnitude == 0 ? 0.0 : magnitude * lambda(magnitude);
  }
};

/// Instantaneous rate of the jump m -> m - e_j at dual parameter theta.
double death_rate(const MultiIndex& m, std::size_t j, const DualParameter& theta,
                  const DeathKernelSpec& spec);

/// Alternating-sum coefficient C_{total, total-drop} at accumulated rho-time tau.
/// Throws NumericalError when two of the rates lambda_{total-k}, k <= drop,
/// coincide.
double c_coeff(int total, int drop, double tau, const DeathKernelSpec& spec);

/// Multivariate hypergeometric pmf: prod_k C(m_k, i_k) / C(|m|, |i|).
double mv_hypergeom(const MultiIndex& i, const MultiIndex& m);
double log_mv_hypergeom(const MultiIndex& i, const MultiIndex& m);

/// Probabilities that the magnitude |M_t| falls from `total` to
/// `total - drop`, for drop = 0..total, after accumulated rho-time tau.
/// Entry `drop` equals (prod_{h<drop} lambda_{total-h}) C_{total,total-drop}.
class MagnitudeKernel {
 public:
  MagnitudeKernel(int total, double tau, const DeathKernelSpec& spec);

  int total() const { return total_; }
  double tau() const { return tau_; }
  double prob(int drop) const { return probs_.at(static_cast<std::size_t>(drop)); }
  /// Natural log of prob(drop); -inf for an exact zero.
  double log_prob(int drop) const { return log_probs_.at(static_cast<std::size_t>(drop)); }
  /// Number of entries recomputed by uniformization because the alternating
  /// sum lost too much precision.
  int fallback_count() const { return fallbacks_; }

 private:
  int total_;
  double tau_;
  std::vector<double> probs_;
  std::vector<double> log_probs_;
  int fallbacks_ = 0;
};

/// p_{m,n}(t; theta0) = Pr[M_t = n | M_0 = m, Theta_0 = theta0].
double transition_prob(const MultiIndex& m, const MultiIndex& n, double t,
                       const DualParameter& theta0, const DeathKernelSpec& spec);

/// Transition probabilities from one origin to every point of its lower set.
struct TransitionTable {
  MultiIndex origin;
  double elapsed = 0.0;
  DualParameter theta0;
  /// Support is exactly lower_set(origin); zeros are stored.
  IndexSet targets;
  std::vector<double> probs;

  double prob(const MultiIndex& n) const;
};

TransitionTable transition_table(const MultiIndex& m, double t, const DualParameter& theta0,
                                 const DeathKernelSpec& spec);

}  // namespace dualfilter
