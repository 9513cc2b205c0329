#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dualfilter/dual_death.hpp"
#include "dualfilter/dual_parameter.hpp"
#include "dualfilter/multi_index.hpp"

namespace dualfilter {

/// CIR signal dX = (delta sigma2 - 2 gamma X) dt + 2 sqrt(sigma2 X) dB observed
/// through Poisson(lambda_em X) counts. Stationary law Ga(delta/2, gamma/sigma2).
struct CirParams {
  double delta = 2.0;
  double gamma = 1.0;
  double sigma2 = 1.0;
  double lambda_em = 1.0;

  /// gamma / sigma2, the rate of the stationary gamma law.
  double stationary_rate() const { return gamma / sigma2; }
};

/// OU signal dX = -(sigma2/alpha)(X - gamma) dt + sqrt(2 sigma2) dB observed
/// with additive Gaussian noise of variance lambda_em. Stationary law
/// Normal(gamma, alpha).
struct OuParams {
  double gamma = 0.0;
  double alpha = 1.0;
  double sigma2 = 1.0;
  double lambda_em = 1.0;
};

/// K-type Wright-Fisher diffusion with parent-independent mutation, observed
/// through multinomial samples. Stationary law Dirichlet(alpha).
struct WfParams {
  std::vector<double> alpha;

  double total() const;
};

enum class ModelKind { Cir, Ou, Wf };

std::string to_string(ModelKind kind);

class ModelSpec {
 public:
  using Params = std::variant<CirParams, OuParams, WfParams>;

  /// Validates parameter positivity and dimensions; throws InputError.
  explicit ModelSpec(Params params);

  static ModelSpec cir(double delta, double gamma, double sigma2, double lambda_em);
  static ModelSpec ou(double gamma, double alpha, double sigma2, double lambda_em);
  static ModelSpec wf(std::vector<double> alpha);

  ModelKind kind() const;
  const Params& params() const { return params_; }
  const CirParams& cir() const { return std::get<CirParams>(params_); }
  const OuParams& ou() const { return std::get<OuParams>(params_); }
  const WfParams& wf() const { return std::get<WfParams>(params_); }

  /// Dimension of the signal state.
  std::size_t signal_dim() const;
  /// Dimension K of the death-process component; 0 for OU.
  std::size_t dual_dim() const;

 private:
  Params params_;
};

struct PoissonCount {
  int value = 0;
  friend bool operator==(const PoissonCount&, const PoissonCount&) = default;
};

struct GaussianReading {
  double value = 0.0;
  friend bool operator==(const GaussianReading&, const GaussianReading&) = default;
};

struct MultinomialCounts {
  std::vector<int> values;

  int total() const;
  friend bool operator==(const MultinomialCounts&, const MultinomialCounts&) = default;
};

using Emission = std::variant<PoissonCount, GaussianReading, MultinomialCounts>;

struct Observation {
  double time = 0.0;
  Emission value;
};

/// Throws InputError unless the emission type and dimension fit the model.
void validate_observation(const ModelSpec& spec, const Observation& y);
/// Throws InputError unless theta has the model's parameter type and domain.
void validate_parameter(const ModelSpec& spec, const DualParameter& theta);
/// Throws InputError unless x lies in the state space. WF points within 1e-9
/// of the simplex are accepted; `canonical_state` renormalizes them.
void validate_state(const ModelSpec& spec, std::span<const double> x);
std::vector<double> canonical_state(const ModelSpec& spec, std::span<const double> x);

/// The parameter of the stationary component: gamma/sigma2 (CIR),
/// (gamma, alpha) (OU), none (WF).
DualParameter stationary_parameter(const ModelSpec& spec);

/// Whether theta lies where the generator-based duality argument applies
/// (CIR: theta >= gamma/sigma2; OU: tau < alpha). Outside it the formulas
/// are still used; callers may surface a diagnostic.
bool within_proof_range(const ModelSpec& spec, const DualParameter& theta);

/// Radon-Nikodym derivative of the conjugate component (m, theta) with
/// respect to the stationary law, evaluated at x.
double h_eval(const ModelSpec& spec, std::span<const double> x, const MultiIndex& m, const DualParameter& theta);
double log_h(const ModelSpec& spec, std::span<const double> x, const MultiIndex& m, const DualParameter& theta);

/// Emission density f_x(y).
double emission_log_density(const ModelSpec& spec, std::span<const double> x, const Emission& y);

/// N(y): the multi-index shift the observation applies to every component.
MultiIndex emission_shift(const ModelSpec& spec, const Emission& y);

/// (t(y, m), T(y, theta)).
std::pair<MultiIndex, DualParameter> conjugate_update(const ModelSpec& spec, const Emission& y, const MultiIndex& m,
                                                      const DualParameter& theta);

/// c(m, theta, y) = integral of f_x(y) h(x, m, theta) over the stationary law.
double predictive_const(const ModelSpec& spec, const MultiIndex& m, const DualParameter& theta, const Emission& y);
double log_predictive_const(const ModelSpec& spec, const MultiIndex& m, const DualParameter& theta, const Emission& y);

/// Deterministic dual flow Theta_t started at theta0.
DualParameter theta_flow(const ModelSpec& spec, const DualParameter& theta0, double t);

/// Integral of rho(Theta_s) over [0, t] along the flow.
double rho_integral(const ModelSpec& spec, const DualParameter& theta0, double t);

/// CIR closed form p_{m, m-i}(t; theta) = Bin(m - i; m, p(t, theta)).
double cir_binomial_transition(const ModelSpec& spec, int m, int i, double t, double theta);
/// Survival probability p(t, theta) of the CIR binomial transition.
double cir_survival_probability(const CirParams& p, double t, double theta);

/// Death kernel for CIR and WF; throws InputError for OU.
DeathKernelSpec death_kernel_spec(const ModelSpec& spec);

/// Per-coordinate first and second moments of one conjugate component.
struct ComponentMoments {
  std::vector<double> mean;
  std::vector<double> second;
};

ComponentMoments component_moments(const ModelSpec& spec, const MultiIndex& m, const DualParameter& theta);

}  // namespace dualfilter
