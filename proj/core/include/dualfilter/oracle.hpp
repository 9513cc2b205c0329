#pragma once

#include <boost/random/normal_distribution.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "dualfilter/dual_death.hpp"
#include "dualfilter/filter.hpp"
#include "dualfilter/models.hpp"

// Ground-truth generators and validators. Nothing here calls the dual
// transition formulas; the checks in tests pair these routes against them.
namespace dualfilter::oracle {

/// Deterministic generator for one named sub-stream of a seed.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream);

  std::mt19937_64& engine() { return engine_; }
  double uniform();
  double normal();
  double gamma(double shape, double rate);
  int poisson(double mean);

 private:
  std::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_;
};

struct EulerOptions {
  /// Step of the Euler-Maruyama scheme used for the WF diffusion.
  double step = 1e-4;
  /// Floor applied to simplex coordinates after each step.
  double floor = 1e-12;
};

/// One draw from the signal transition over dt. CIR and OU are exact; WF is
/// Euler-Maruyama projected back onto the simplex.
std::vector<double> simulate_signal(const ModelSpec& model, std::span<const double> x0, double dt, RandomStream& rng,
                                    const EulerOptions& euler = {});

/// Draw from the stationary law.
std::vector<double> sample_stationary(const ModelSpec& model, RandomStream& rng);

/// Draw one emission at state x; `sample_size` is the multinomial total (WF).
Emission sample_emission(const ModelSpec& model, std::span<const double> x, RandomStream& rng, int sample_size = 1);

struct SimulationConfig {
  ModelSpec model;
  int horizon = 1;
  double gap = 1.0;
  std::uint64_t seed = 0;
  int particles = 1000;
  double euler_step = 1e-4;
  /// Multinomial sample size per WF observation.
  int sample_size = 10;
  double start_time = 0.0;

  void validate() const;
};

struct SimulatedPath {
  std::vector<double> times;
  std::vector<std::vector<double>> signal;
  std::vector<Observation> observations;
};

/// Stationary start, then alternating emissions and signal transitions.
SimulatedPath simulate_hmm(const SimulationConfig& config);

struct ParticleStep {
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<double> mean_se;
  std::vector<double> variance_se;
  /// Cumulative log-likelihood estimate up to this step and its standard error.
  double log_likelihood = 0.0;
  double log_likelihood_se = 0.0;
};

struct ParticleFilterOptions {
  int particles = 100000;
  int replicates = 20;
  std::uint64_t seed = 0;
  EulerOptions euler;
};

/// Bootstrap filter with multinomial resampling at every step, averaged over
/// independent replicates. Starts from the stationary law at the first
/// observation time.
std::vector<ParticleStep> particle_filter(const ModelSpec& model, const std::vector<Observation>& observations,
                                          const ParticleFilterOptions& options);

/// Row `m` of exp(tau Q) for the explicit death-process generator Q on the
/// lower set of m, with tau the accumulated rho-time over [0, t].
TransitionTable generator_expm(const MultiIndex& m, double t, const DualParameter& theta0,
                               const DeathKernelSpec& spec);

/// Adaptive Gauss-Kronrod quadrature; b may be +infinity.
double integrate(const std::function<double(double)>& f, double a, double b, double rel_tol = 1e-12);

/// Density tabulated on an increasing grid (x is the first coordinate for
/// WF with two types). `weight` holds the trapezoid weights of the node map,
/// so integrals are sums of weight * integrand.
struct GridDensity {
  std::vector<double> x;
  std::vector<double> density;
  std::vector<double> weight;

  double trapezoid(const std::function<double(double, double)>& integrand) const;
  double mass() const;
  double mean() const;
  double variance() const;
};

/// Tabulates the density of a filtering mixture on `nodes` points spanning
/// its support up to tail mass 1e-12. Bounded supports use a tanh-sinh node
/// map, which keeps the trapezoid rule accurate at integrable endpoint
/// singularities. Uses its own gamma/normal/beta densities rather than the
/// duality function.
GridDensity tabulate(const MixtureState& state, int nodes = 20001);

struct GridPosterior {
  GridDensity posterior;
  double predictive_density;
};

/// Bayes update of a tabulated prior by the emission density at y.
/// Throws NumericalError when the prior grid holds less than 1 - 1e-6 mass.
GridPosterior quadrature_bayes(const ModelSpec& model, const GridDensity& prior, const Emission& y);

/// Kolmogorov-Smirnov statistic of a sample against a continuous CDF.
double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf);

}  // namespace dualfilter::oracle
