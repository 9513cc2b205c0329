#include "dualfilter/oracle.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "dualfilter/errors.hpp"

namespace dualfilter::oracle {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogTwoPi = std::log(2.0 * M_PI);

double log_gamma_pdf(double x, double shape, double rate) {
  if (x < 0.0) return kNegInf;
  if (x == 0.0) {
    if (shape < 1.0) return std::numeric_limits<double>::infinity();
    return shape == 1.0 ? std::log(rate) : kNegInf;
  }
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

// Beta density at x with the complement 1 - x supplied separately.
double log_beta_pdf(double x, double xc, double a, double b) {
  if (x < 0.0 || xc < 0.0) return kNegInf;
  auto edge = [](double v, double p) {
    if (v > 0.0) return (p - 1.0) * std::log(v);
    if (p < 1.0) return std::numeric_limits<double>::infinity();
    return p == 1.0 ? 0.0 : kNegInf;
  };
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + edge(x, a) + edge(xc, b);
}

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLogTwoPi + std::log(var) + d * d / var);
}

// Emission log-likelihoods written out independently of the models module.
double log_poisson(int n, double mean) {
  if (mean <= 0.0) return n == 0 ? 0.0 : kNegInf;
  return n * std::log(mean) - mean - std::lgamma(n + 1.0);
}

double log_multinomial(const std::vector<int>& counts, std::span<const double> x) {
  int total = 0;
  double out = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    total += counts[j];
    out -= std::lgamma(counts[j] + 1.0);
    if (counts[j] > 0) out += x[j] > 0.0 ? counts[j] * std::log(x[j]) : kNegInf;
  }
  return out + std::lgamma(total + 1.0);
}

void wf_euler(const std::vector<double>& alpha, double total_alpha, double* x, std::size_t k, double dt,
              RandomStream& rng, const EulerOptions& euler) {
  if (dt <= 0.0) return;
  const int steps = std::max(1, static_cast<int>(std::ceil(dt / euler.step - 1e-9)));
  const double h = dt / steps;
  const double sqrt_h = std::sqrt(h);
  constexpr std::size_t kInline = 8;
  std::array<double, 2 * kInline> inline_buf{};
  std::vector<double> heap_buf;
  double* root = inline_buf.data();
  if (k > kInline) {
    heap_buf.resize(2 * k);
    root = heap_buf.data();
  }
  double* z = root + std::max(k, kInline);
  for (int s = 0; s < steps; ++s) {
    // Diffusion matrix diag(x) - x x^T factors as B B^T with
    // B = diag(sqrt x) - x sqrt(x)^T on the simplex.
    double proj = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      root[i] = std::sqrt(x[i]);
      z[i] = sqrt_h * rng.normal();
      proj += root[i] * z[i];
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      x[i] += 0.5 * (alpha[i] - total_alpha * x[i]) * h + root[i] * z[i] - x[i] * proj;
      x[i] = std::max(x[i], euler.floor);
      sum += x[i];
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < k; ++i) x[i] *= inv;
  }
}

double cir_exact(const CirParams& p, double x, double dt, RandomStream& rng) {
  if (dt <= 0.0) return x;
  const double c = p.stationary_rate();
  const double em1 = std::expm1(2.0 * p.gamma * dt);
  const int k = rng.poisson(c * x / em1);
  return rng.gamma(k + 0.5 * p.delta, c * (em1 + 1.0) / em1);
}

double ou_exact(const OuParams& p, double x, double dt, RandomStream& rng) {
  if (dt <= 0.0) return x;
  const double rate = p.sigma2 / p.alpha;
  const double decay = std::exp(-rate * dt);
  const double var = -p.alpha * std::expm1(-2.0 * rate * dt);
  return p.gamma + (x - p.gamma) * decay + std::sqrt(var) * rng.normal();
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
  engine_.seed(seq);
}

double RandomStream::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double RandomStream::normal() { return normal_(engine_); }

double RandomStream::gamma(double shape, double rate) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
}

int RandomStream::poisson(double mean) {
  if (mean <= 0.0) return 0;
  return boost::random::poisson_distribution<int, double>(mean)(engine_);
}

std::vector<double> simulate_signal(const ModelSpec& model, std::span<const double> x0, double dt, RandomStream& rng,
                                    const EulerOptions& euler) {
  if (!(dt >= 0.0)) throw InputError("simulate_signal: negative elapsed time");
  std::vector<double> x = canonical_state(model, x0);
  switch (model.kind()) {
    case ModelKind::Cir:
      x[0] = cir_exact(model.cir(), x[0], dt, rng);
      break;
    case ModelKind::Ou:
      x[0] = ou_exact(model.ou(), x[0], dt, rng);
      break;
    case ModelKind::Wf:
      wf_euler(model.wf().alpha, model.wf().total(), x.data(), x.size(), dt, rng, euler);
      break;
  }
  return x;
}

std::vector<double> sample_stationary(const ModelSpec& model, RandomStream& rng) {
  switch (model.kind()) {
    case ModelKind::Cir:
      return {rng.gamma(0.5 * model.cir().delta, model.cir().stationary_rate())};
    case ModelKind::Ou:
      return {model.ou().gamma + std::sqrt(model.ou().alpha) * rng.normal()};
    case ModelKind::Wf: {
      std::vector<double> x;
      double sum = 0.0;
      for (double a : model.wf().alpha) {
        x.push_back(rng.gamma(a, 1.0));
        sum += x.back();
      }
      for (double& v : x) v /= sum;
      return x;
    }
  }
  return {};
}

Emission sample_emission(const ModelSpec& model, std::span<const double> x, RandomStream& rng, int sample_size) {
  switch (model.kind()) {
    case ModelKind::Cir:
      return PoissonCount{rng.poisson(model.cir().lambda_em * x[0])};
    case ModelKind::Ou:
      return GaussianReading{x[0] + std::sqrt(model.ou().lambda_em) * rng.normal()};
    case ModelKind::Wf: {
      if (sample_size < 0) throw InputError("multinomial sample size must be >= 0");
      std::vector<int> counts(x.size(), 0);
      int left = sample_size;
      double rest = 1.0;
      for (std::size_t j = 0; j + 1 < x.size() && left > 0; ++j) {
        const double p = rest > 0.0 ? std::clamp(x[j] / rest, 0.0, 1.0) : 0.0;
        counts[j] = std::binomial_distribution<int>(left, p)(rng.engine());
        left -= counts[j];
        rest -= x[j];
      }
      counts.back() += left;
      return MultinomialCounts{std::move(counts)};
    }
  }
  return PoissonCount{};
}

void SimulationConfig::validate() const {
  if (horizon < 1) throw InputError("simulation horizon must be >= 1");
  if (!(gap > 0.0)) throw InputError("observation gap must be positive");
  if (particles < 1) throw InputError("particle count must be >= 1");
  if (!(euler_step > 0.0)) throw InputError("Euler step must be positive");
  if (sample_size < 0) throw InputError("multinomial sample size must be >= 0");
}

SimulatedPath simulate_hmm(const SimulationConfig& config) {
  config.validate();
  RandomStream signal_rng(config.seed, 1);
  RandomStream emission_rng(config.seed, 2);
  const EulerOptions euler{config.euler_step};
  SimulatedPath path;
  std::vector<double> x = sample_stationary(config.model, signal_rng);
  for (int n = 0; n < config.horizon; ++n) {
    const double t = config.start_time + n * config.gap;
    if (n > 0) x = simulate_signal(config.model, x, config.gap, signal_rng, euler);
    path.times.push_back(t);
    path.signal.push_back(x);
    path.observations.push_back({t, sample_emission(config.model, x, emission_rng, config.sample_size)});
  }
  return path;
}

std::vector<ParticleStep> particle_filter(const ModelSpec& model, const std::vector<Observation>& observations,
                                          const ParticleFilterOptions& options) {
  if (options.particles < 100) throw InputError("particle filter needs at least 100 particles");
  if (options.replicates < 2) throw InputError("particle filter needs at least two replicates");
  for (const auto& y : observations) validate_observation(model, y);
  const std::size_t steps = observations.size();
  const std::size_t dim = model.signal_dim();
  const auto n_particles = static_cast<std::size_t>(options.particles);
  const auto reps = static_cast<std::size_t>(options.replicates);

  // [step][coordinate][replicate]
  std::vector<std::vector<std::vector<double>>> means(steps, std::vector<std::vector<double>>(dim)),
      vars(steps, std::vector<std::vector<double>>(dim));
  std::vector<std::vector<double>> logliks(steps);

  std::vector<double> particles(n_particles * dim), resampled(n_particles * dim), log_w(n_particles),
      cumulative(n_particles);
  for (std::size_t r = 0; r < reps; ++r) {
    RandomStream rng(options.seed, 1000 + r);
    for (std::size_t i = 0; i < n_particles; ++i) {
      const auto x = sample_stationary(model, rng);
      std::copy(x.begin(), x.end(), particles.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    double loglik = 0.0;
    double prev_time = observations.empty() ? 0.0 : observations.front().time;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto& y = observations[s];
      const double dt = y.time - prev_time;
      if (dt < 0.0) throw InputError("particle filter: observation times decrease");
      prev_time = y.time;
      // Log-likelihood of each particle up to an additive constant shared by all of them.
      double shared = 0.0;
      switch (model.kind()) {
        case ModelKind::Cir: {
          const int count = std::get<PoissonCount>(y.value).value;
          const double lam = model.cir().lambda_em;
          shared = count * std::log(lam) - std::lgamma(count + 1.0);
          for (std::size_t i = 0; i < n_particles; ++i) {
            double& x = particles[i];
            x = cir_exact(model.cir(), x, dt, rng);
            log_w[i] = (count > 0 ? count * std::log(x) : 0.0) - lam * x;
          }
          break;
        }
        case ModelKind::Ou: {
          const double obs = std::get<GaussianReading>(y.value).value;
          const double noise = model.ou().lambda_em;
          shared = -0.5 * (kLogTwoPi + std::log(noise));
          for (std::size_t i = 0; i < n_particles; ++i) {
            double& x = particles[i];
            x = ou_exact(model.ou(), x, dt, rng);
            log_w[i] = -0.5 * (obs - x) * (obs - x) / noise;
          }
          break;
        }
        case ModelKind::Wf: {
          const auto& counts = std::get<MultinomialCounts>(y.value).values;
          shared = log_multinomial(counts, std::vector<double>(dim, 1.0));
          for (std::size_t i = 0; i < n_particles; ++i) {
            double* x = particles.data() + i * dim;
            wf_euler(model.wf().alpha, model.wf().total(), x, dim, dt, rng, options.euler);
            double lw = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
              if (counts[j] > 0) lw += counts[j] * std::log(x[j]);
            }
            log_w[i] = lw;
          }
          break;
        }
      }
      const double top = *std::max_element(log_w.begin(), log_w.end());
      if (!std::isfinite(top)) throw NumericalError("particle filter degenerated: every weight is zero");
      double total = 0.0;
      for (std::size_t i = 0; i < n_particles; ++i) {
        log_w[i] = std::exp(log_w[i] - top);
        total += log_w[i];
        cumulative[i] = total;
      }
      loglik += shared + top + std::log(total / static_cast<double>(n_particles));
      logliks[s].push_back(loglik);
      for (std::size_t j = 0; j < dim; ++j) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < n_particles; ++i) {
          const double w = log_w[i] / total;
          const double v = particles[i * dim + j];
          m1 += w * v;
          m2 += w * v * v;
        }
        means[s][j].push_back(m1);
        vars[s][j].push_back(std::max(m2 - m1 * m1, 0.0));
      }
      // Multinomial resampling by a sweep over sorted uniforms built from
      // exponential spacings.
      std::vector<double> spacing(n_particles + 1);
      double acc = 0.0;
      for (auto& e : spacing) {
        acc += -std::log1p(-rng.uniform());
        e = acc;
      }
      std::size_t src = 0;
      for (std::size_t i = 0; i < n_particles; ++i) {
        const double u = spacing[i] / spacing[n_particles] * total;
        while (src + 1 < n_particles && cumulative[src] < u) ++src;
        std::copy_n(particles.begin() + static_cast<std::ptrdiff_t>(src * dim), dim,
                    resampled.begin() + static_cast<std::ptrdiff_t>(i * dim));
      }
      std::swap(particles, resampled);
    }
  }

  std::vector<ParticleStep> out(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t j = 0; j < dim; ++j) {
      out[s].mean.push_back(mean_of(means[s][j]));
      out[s].mean_se.push_back(standard_error(means[s][j]));
      out[s].variance.push_back(mean_of(vars[s][j]));
      out[s].variance_se.push_back(standard_error(vars[s][j]));
    }
    out[s].log_likelihood = mean_of(logliks[s]);
    out[s].log_likelihood_se = standard_error(logliks[s]);
  }
  return out;
}

TransitionTable generator_expm(const MultiIndex& m, double t, const DualParameter& theta0,
                               const DeathKernelSpec& spec) {
  if (!(t >= 0.0)) throw InputError("generator_expm: negative elapsed time");
  const std::size_t states = singleton_lower_size(m);
  if (states > 100000) throw InputError("generator_expm: state space too large");
  IndexSet targets = lower_set(m);
  const double tau = spec.rho_integral(theta0, t);
  const auto n = static_cast<Eigen::Index>(targets.size());
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const MultiIndex& from = targets[static_cast<std::size_t>(a)];
    const int total = from.magnitude();
    if (total == 0) continue;
    const double per_unit = spec.lambda(total);
    for (std::size_t j = 0; j < from.dim(); ++j) {
      if (from[j] == 0) continue;
      const double rate = per_unit * from[j];
      const auto b = static_cast<Eigen::Index>(targets.find(from - MultiIndex::unit(from.dim(), j)));
      q(a, b) += rate;
      q(a, a) -= rate;
    }
  }
  const Eigen::MatrixXd p = (tau * q).exp();
  const auto row = static_cast<Eigen::Index>(targets.find(m));
  TransitionTable table{m, t, theta0, std::move(targets), {}};
  table.probs.resize(static_cast<std::size_t>(n));
  for (Eigen::Index b = 0; b < n; ++b) table.probs[static_cast<std::size_t>(b)] = p(row, b);
  return table;
}

double integrate(const std::function<double(double)>& f, double a, double b, double rel_tol) {
  using boost::math::quadrature::gauss_kronrod;
  double error = 0.0;
  return gauss_kronrod<double, 61>::integrate(f, a, b, 15, rel_tol, &error);
}

double GridDensity::trapezoid(const std::function<double(double, double)>& integrand) const {
  long double s = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (weight[i] > 0.0) s += static_cast<long double>(weight[i]) * integrand(x[i], density[i]);
  }
  return static_cast<double>(s);
}

double GridDensity::mass() const {
  return trapezoid([](double, double d) { return d; });
}

double GridDensity::mean() const {
  return trapezoid([](double v, double d) { return v * d; }) / mass();
}

double GridDensity::variance() const {
  const double m = mean();
  return trapezoid([m](double v, double d) { return (v - m) * (v - m) * d; }) / mass();
}

GridDensity tabulate(const MixtureState& state, int nodes) {
  if (nodes < 3) throw InputError("tabulate: need at least three nodes");
  const auto& model = state.model();
  constexpr double kTail = 1e-13;
  const auto n = static_cast<std::size_t>(nodes);
  GridDensity out;
  out.x.resize(n);
  out.density.resize(n);
  out.weight.resize(n);

  if (model.kind() == ModelKind::Ou) {
    const auto g = std::get<GaussianMoments>(state.theta());
    const double sd = std::sqrt(g.variance);
    const double lo = g.mean - 9.0 * sd, h = 18.0 * sd / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      out.x[i] = lo + h * static_cast<double>(i);
      out.density[i] = std::exp(log_normal_pdf(out.x[i], g.mean, g.variance));
      out.weight[i] = (i == 0 || i + 1 == n) ? 0.5 * h : h;
    }
    return out;
  }

  // Tanh-sinh map of u in [-U, U] onto (0, scale): x = scale / (1 + e^{-2v}),
  // v = (pi/2) sinh u. The complement scale - x is formed directly.
  double scale = 1.0;
  std::function<double(double, double)> density;
  if (model.kind() == ModelKind::Cir) {
    const double half_delta = 0.5 * model.cir().delta;
    const double rate = std::get<GammaRate>(state.theta()).value;
    std::vector<double> shapes;
    const std::vector<double> log_w = state.log_weights();
    for (const auto& m : state.support()) {
      shapes.push_back(half_delta + m[0]);
      scale = std::max(scale, boost::math::quantile(boost::math::complement(
                                  boost::math::gamma_distribution<double>(shapes.back(), 1.0 / rate), kTail)));
    }
    density = [shapes, log_w, rate](double x, double) {
      double s = 0.0;
      for (std::size_t i = 0; i < shapes.size(); ++i) s += std::exp(log_w[i] + log_gamma_pdf(x, shapes[i], rate));
      return s;
    };
  } else {
    if (model.signal_dim() != 2) throw InputError("tabulate: WF grids need exactly two types");
    const auto& a = model.wf().alpha;
    std::vector<std::pair<double, double>> params;
    for (const auto& m : state.support()) params.emplace_back(a[0] + m[0], a[1] + m[1]);
    const std::vector<double> log_w = state.log_weights();
    density = [params, log_w](double x, double xc) {
      double s = 0.0;
      for (std::size_t i = 0; i < params.size(); ++i) {
        s += std::exp(log_w[i] + log_beta_pdf(x, xc, params[i].first, params[i].second));
      }
      return s;
    };
  }
  constexpr double kU = 4.5;
  const double h = 2.0 * kU / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = -kU + h * static_cast<double>(i);
    const double v = 0.5 * M_PI * std::sinh(u);
    const double x = scale / (1.0 + std::exp(-2.0 * v));
    const double xc = scale / (1.0 + std::exp(2.0 * v));
    const double dxdu = scale * 0.5 * M_PI * std::cosh(u) / (2.0 * std::cosh(v) * std::cosh(v));
    out.x[i] = x;
    out.weight[i] = std::isfinite(dxdu) ? h * dxdu : 0.0;
    const double d = (x > 0.0 && xc > 0.0) ? density(x, xc) : 0.0;
    out.density[i] = std::isfinite(d) ? d : 0.0;
  }
  return out;
}

GridPosterior quadrature_bayes(const ModelSpec& model, const GridDensity& prior, const Emission& y) {
  if (model.kind() == ModelKind::Wf && model.signal_dim() != 2) {
    throw InputError("quadrature_bayes: WF needs exactly two types");
  }
  const double prior_mass = prior.mass();
  if (prior_mass < 1.0 - 1e-6) {
    throw NumericalError("quadrature_bayes: grid holds only " + std::to_string(prior_mass) + " of the prior mass");
  }
  std::vector<double> lik(prior.x.size());
  for (std::size_t i = 0; i < prior.x.size(); ++i) {
    const double x = prior.x[i];
    switch (model.kind()) {
      case ModelKind::Cir:
        lik[i] = std::exp(log_poisson(std::get<PoissonCount>(y).value, model.cir().lambda_em * x));
        break;
      case ModelKind::Ou:
        lik[i] = std::exp(log_normal_pdf(std::get<GaussianReading>(y).value, x, model.ou().lambda_em));
        break;
      case ModelKind::Wf: {
        const double xs[2] = {x, 1.0 - x};
        lik[i] = std::exp(log_multinomial(std::get<MultinomialCounts>(y).values, xs));
        break;
      }
    }
  }
  GridDensity joint{prior.x, prior.density, prior.weight};
  for (std::size_t i = 0; i < lik.size(); ++i) joint.density[i] *= lik[i];
  const double predictive = joint.mass() / prior_mass;
  for (double& d : joint.density) d /= predictive * prior_mass;
  return {std::move(joint), predictive};
}

double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, f - i / n, (i + 1) / n - f});
  }
  return d;
}

}  // namespace dualfilter::oracle
