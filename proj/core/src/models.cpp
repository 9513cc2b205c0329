#include "dualfilter/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dualfilter/errors.hpp"

namespace dualfilter {

namespace {

constexpr double kSimplexTol = 1e-9;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogTwoPi = std::log(2.0 * M_PI);

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InputError(std::string("parameter ") + name + " must be positive and finite");
}

double log_normal_pdf(double y, double mean, double var) {
  const double d = y - mean;
  return -0.5 * (kLogTwoPi + std::log(var) + d * d / var);
}

// x^k in log space with 0^0 = 1.
double log_power(double x, double k) {
  if (k == 0.0) return 0.0;
  if (x <= 0.0) return kNegInf;
  return k * std::log(x);
}

double gamma_rate(const DualParameter& theta) {
  const auto* r = std::get_if<GammaRate>(&theta);
  if (!r) throw InputError("CIR model expects a gamma-rate dual parameter");
  return r->value;
}

const GaussianMoments& gaussian(const DualParameter& theta) {
  const auto* g = std::get_if<GaussianMoments>(&theta);
  if (!g) throw InputError("OU model expects a Gaussian dual parameter");
  return *g;
}

int count_of(const Emission& y) {
  const auto* c = std::get_if<PoissonCount>(&y);
  if (!c) throw InputError("CIR model expects a Poisson count observation");
  if (c->value < 0) throw InputError("Poisson count must be non-negative");
  return c->value;
}

double reading_of(const Emission& y) {
  const auto* r = std::get_if<GaussianReading>(&y);
  if (!r) throw InputError("OU model expects a real-valued observation");
  if (!std::isfinite(r->value)) throw InputError("OU observation must be finite");
  return r->value;
}

const std::vector<int>& counts_of(const WfParams& p, const Emission& y) {
  const auto* c = std::get_if<MultinomialCounts>(&y);
  if (!c) throw InputError("WF model expects multinomial count observations");
  if (c->values.size() != p.alpha.size()) {
    throw InputError("multinomial observation has " + std::to_string(c->values.size()) + " counts, model has " +
                     std::to_string(p.alpha.size()) + " types");
  }
  for (int v : c->values) {
    if (v < 0) throw InputError("multinomial counts must be non-negative");
  }
  return c->values;
}

void require_dim(const MultiIndex& m, std::size_t k) {
  if (m.dim() != k) {
    throw InputError("multi-index " + m.to_string() + " has dimension " + std::to_string(m.dim()) + ", model needs " +
                     std::to_string(k));
  }
}

}  // namespace

std::string to_string(const DualParameter& theta) {
  return std::visit(Overloaded{[](const NoParameter&) { return std::string("()"); },
                               [](const GammaRate& r) {
                                 std::ostringstream os;
                                 os.precision(17);
                                 os << r.value;
                                 return os.str();
                               },
                               [](const GaussianMoments& g) {
                                 std::ostringstream os;
                                 os.precision(17);
                                 os << '(' << g.mean << ',' << g.variance << ')';
                                 return os.str();
                               }},
                    theta);
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Cir:
      return "cir";
    case ModelKind::Ou:
      return "ou";
    case ModelKind::Wf:
      return "wf";
  }
  return "?";
}

double WfParams::total() const { return std::accumulate(alpha.begin(), alpha.end(), 0.0); }

int MultinomialCounts::total() const { return std::accumulate(values.begin(), values.end(), 0); }

ModelSpec::ModelSpec(Params params) : params_(std::move(params)) {
  std::visit(Overloaded{[](const CirParams& p) {
                          require_positive(p.delta, "delta");
                          require_positive(p.gamma, "gamma");
                          require_positive(p.sigma2, "sigma2");
                          require_positive(p.lambda_em, "lambda_em");
                        },
                        [](const OuParams& p) {
                          if (!std::isfinite(p.gamma)) throw InputError("parameter gamma must be finite");
                          require_positive(p.alpha, "alpha");
                          require_positive(p.sigma2, "sigma2");
                          require_positive(p.lambda_em, "lambda_em");
                        },
                        [](const WfParams& p) {
                          if (p.alpha.size() < 2) throw InputError("WF model needs at least two types");
                          for (double a : p.alpha) require_positive(a, "alpha");
                        }},
             params_);
}

ModelSpec ModelSpec::cir(double delta, double gamma, double sigma2, double lambda_em) {
  return ModelSpec(CirParams{delta, gamma, sigma2, lambda_em});
}

ModelSpec ModelSpec::ou(double gamma, double alpha, double sigma2, double lambda_em) {
  return ModelSpec(OuParams{gamma, alpha, sigma2, lambda_em});
}

ModelSpec ModelSpec::wf(std::vector<double> alpha) { return ModelSpec(WfParams{std::move(alpha)}); }

ModelKind ModelSpec::kind() const { return static_cast<ModelKind>(params_.index()); }

std::size_t ModelSpec::signal_dim() const { return kind() == ModelKind::Wf ? wf().alpha.size() : 1; }

std::size_t ModelSpec::dual_dim() const {
  switch (kind()) {
    case ModelKind::Cir:
      return 1;
    case ModelKind::Ou:
      return 0;
    case ModelKind::Wf:
      return wf().alpha.size();
  }
  return 0;
}

void validate_observation(const ModelSpec& spec, const Observation& y) {
  if (!(y.time >= 0.0) || !std::isfinite(y.time)) throw InputError("observation time must be finite and >= 0");
  switch (spec.kind()) {
    case ModelKind::Cir:
      count_of(y.value);
      break;
    case ModelKind::Ou:
      reading_of(y.value);
      break;
    case ModelKind::Wf:
      counts_of(spec.wf(), y.value);
      break;
  }
}

void validate_parameter(const ModelSpec& spec, const DualParameter& theta) {
  switch (spec.kind()) {
    case ModelKind::Cir: {
      const double r = gamma_rate(theta);
      if (!(r > 0.0) || !std::isfinite(r)) throw InputError("CIR dual parameter theta must be positive");
      break;
    }
    case ModelKind::Ou: {
      const auto& g = gaussian(theta);
      if (!std::isfinite(g.mean)) throw InputError("OU dual mean must be finite");
      if (!(g.variance > 0.0) || !std::isfinite(g.variance)) throw InputError("OU dual variance must be positive");
      break;
    }
    case ModelKind::Wf:
      if (!std::holds_alternative<NoParameter>(theta)) throw InputError("WF model has no dual parameter");
      break;
  }
}

void validate_state(const ModelSpec& spec, std::span<const double> x) {
  if (x.size() != spec.signal_dim()) throw InputError("signal state has the wrong dimension");
  switch (spec.kind()) {
    case ModelKind::Cir:
      if (!(x[0] >= 0.0) || !std::isfinite(x[0])) throw InputError("CIR state must be finite and >= 0");
      break;
    case ModelKind::Ou:
      if (!std::isfinite(x[0])) throw InputError("OU state must be finite");
      break;
    case ModelKind::Wf: {
      double sum = 0.0;
      for (double v : x) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("WF state coordinates must be >= 0");
        sum += v;
      }
      if (std::fabs(sum - 1.0) > kSimplexTol) throw InputError("WF state is not on the simplex");
      break;
    }
  }
}

std::vector<double> canonical_state(const ModelSpec& spec, std::span<const double> x) {
  validate_state(spec, x);
  std::vector<double> out(x.begin(), x.end());
  if (spec.kind() == ModelKind::Wf) {
    const double sum = std::accumulate(out.begin(), out.end(), 0.0);
    for (double& v : out) v /= sum;
  }
  return out;
}

DualParameter stationary_parameter(const ModelSpec& spec) {
  switch (spec.kind()) {
    case ModelKind::Cir:
      return GammaRate{spec.cir().stationary_rate()};
    case ModelKind::Ou:
      return GaussianMoments{spec.ou().gamma, spec.ou().alpha};
    case ModelKind::Wf:
      return NoParameter{};
  }
  return NoParameter{};
}

bool within_proof_range(const ModelSpec& spec, const DualParameter& theta) {
  switch (spec.kind()) {
    case ModelKind::Cir:
      return gamma_rate(theta) >= spec.cir().stationary_rate();
    case ModelKind::Ou:
      return gaussian(theta).variance < spec.ou().alpha;
    case ModelKind::Wf:
      return true;
  }
  return true;
}

double log_h(const ModelSpec& spec, std::span<const double> x_in, const MultiIndex& m, const DualParameter& theta) {
  validate_parameter(spec, theta);
  const auto x = canonical_state(spec, x_in);
  switch (spec.kind()) {
    case ModelKind::Cir: {
      require_dim(m, 1);
      const auto& p = spec.cir();
      const double shape0 = 0.5 * p.delta;
      const double shape = shape0 + m[0];
      const double rate0 = p.stationary_rate();
      const double th = gamma_rate(theta);
      return std::lgamma(shape0) - std::lgamma(shape) - shape0 * std::log(rate0) + shape * std::log(th) +
             log_power(x[0], m[0]) - (th - rate0) * x[0];
    }
    case ModelKind::Ou: {
      const auto& p = spec.ou();
      const auto& g = gaussian(theta);
      const double dm = x[0] - g.mean;
      const double d0 = x[0] - p.gamma;
      return 0.5 * std::log(p.alpha / g.variance) - dm * dm / (2.0 * g.variance) + d0 * d0 / (2.0 * p.alpha);
    }
    case ModelKind::Wf: {
      const auto& a = spec.wf().alpha;
      require_dim(m, a.size());
      const double total = spec.wf().total();
      double out = std::lgamma(total + m.magnitude()) - std::lgamma(total);
      for (std::size_t j = 0; j < a.size(); ++j) {
        out += std::lgamma(a[j]) - std::lgamma(a[j] + m[j]) + log_power(x[j], m[j]);
      }
      return out;
    }
  }
  return kNegInf;
}

double h_eval(const ModelSpec& spec, std::span<const double> x, const MultiIndex& m, const DualParameter& theta) {
  return std::exp(log_h(spec, x, m, theta));
}

double emission_log_density(const ModelSpec& spec, std::span<const double> x_in, const Emission& y) {
  const auto x = canonical_state(spec, x_in);
  switch (spec.kind()) {
    case ModelKind::Cir: {
      const int n = count_of(y);
      const double intensity = spec.cir().lambda_em * x[0];
      return log_power(intensity, n) - intensity - std::lgamma(n + 1.0);
    }
    case ModelKind::Ou:
      return log_normal_pdf(reading_of(y), x[0], spec.ou().lambda_em);
    case ModelKind::Wf: {
      const auto& counts = counts_of(spec.wf(), y);
      double out = std::lgamma(std::accumulate(counts.begin(), counts.end(), 0) + 1.0);
      for (std::size_t j = 0; j < counts.size(); ++j) out += log_power(x[j], counts[j]) - std::lgamma(counts[j] + 1.0);
      return out;
    }
  }
  return kNegInf;
}

MultiIndex emission_shift(const ModelSpec& spec, const Emission& y) {
  switch (spec.kind()) {
    case ModelKind::Cir:
      return MultiIndex{count_of(y)};
    case ModelKind::Ou:
      reading_of(y);
      return MultiIndex{};
    case ModelKind::Wf:
      return MultiIndex(counts_of(spec.wf(), y));
  }
  return MultiIndex{};
}

std::pair<MultiIndex, DualParameter> conjugate_update(const ModelSpec& spec, const Emission& y, const MultiIndex& m,
                                                      const DualParameter& theta) {
  validate_parameter(spec, theta);
  require_dim(m, spec.dual_dim());
  switch (spec.kind()) {
    case ModelKind::Cir:
      return {m + emission_shift(spec, y), GammaRate{gamma_rate(theta) + spec.cir().lambda_em}};
    case ModelKind::Ou: {
      const double lam = spec.ou().lambda_em;
      const auto& g = gaussian(theta);
      const double c = reading_of(y);
      return {m, GaussianMoments{(lam * g.mean + g.variance * c) / (lam + g.variance), lam * g.variance / (lam + g.variance)}};
    }
    case ModelKind::Wf:
      return {m + emission_shift(spec, y), NoParameter{}};
  }
  return {m, theta};
}

double log_predictive_const(const ModelSpec& spec, const MultiIndex& m, const DualParameter& theta, const Emission& y) {
  validate_parameter(spec, theta);
  require_dim(m, spec.dual_dim());
  switch (spec.kind()) {
    case ModelKind::Cir: {
      // Negative binomial: Poisson(lambda x) mixed over Ga(delta/2 + m, theta).
      const auto& p = spec.cir();
      const int n = count_of(y);
      const double shape = 0.5 * p.delta + m[0];
      const double th = gamma_rate(theta);
      return std::lgamma(shape + n) - std::lgamma(shape) - std::lgamma(n + 1.0) + shape * std::log(th) +
             n * std::log(p.lambda_em) - (shape + n) * std::log(th + p.lambda_em);
    }
    case ModelKind::Ou: {
      const auto& g = gaussian(theta);
      return log_normal_pdf(reading_of(y), g.mean, g.variance + spec.ou().lambda_em);
    }
    case ModelKind::Wf: {
      // Dirichlet-multinomial with parameters alpha + m.
      const auto& a = spec.wf().alpha;
      const auto& counts = counts_of(spec.wf(), y);
      const double concentration = spec.wf().total() + m.magnitude();
      const int n = std::accumulate(counts.begin(), counts.end(), 0);
      double out = std::lgamma(n + 1.0) + std::lgamma(concentration) - std::lgamma(concentration + n);
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double b = a[j] + m[j];
        out += std::lgamma(b + counts[j]) - std::lgamma(b) - std::lgamma(counts[j] + 1.0);
      }
      return out;
    }
  }
  return kNegInf;
}

double predictive_const(const ModelSpec& spec, const MultiIndex& m, const DualParameter& theta, const Emission& y) {
  return std::exp(log_predictive_const(spec, m, theta, y));
}

double cir_survival_probability(const CirParams& p, double t, double theta) {
  // c / (theta e^{2 gamma t} + c - theta), written to stay finite for large t.
  const double c = p.stationary_rate();
  const double decay = std::exp(-2.0 * p.gamma * t);
  return c * decay / (theta + (c - theta) * decay);
}

DualParameter theta_flow(const ModelSpec& spec, const DualParameter& theta0, double t) {
  if (!(t >= 0.0)) throw InputError("theta_flow: negative elapsed time");
  validate_parameter(spec, theta0);
  switch (spec.kind()) {
    case ModelKind::Cir: {
      const auto& p = spec.cir();
      const double th = gamma_rate(theta0);
      const double c = p.stationary_rate();
      const double decay = std::exp(-2.0 * p.gamma * t);
      return GammaRate{c * th / (th + (c - th) * decay)};
    }
    case ModelKind::Ou: {
      const auto& p = spec.ou();
      const auto& g = gaussian(theta0);
      const double k = p.sigma2 / p.alpha;
      return GaussianMoments{p.gamma + (g.mean - p.gamma) * std::exp(-k * t),
                             p.alpha + (g.variance - p.alpha) * std::exp(-2.0 * k * t)};
    }
    case ModelKind::Wf:
      return NoParameter{};
  }
  return theta0;
}

double rho_integral(const ModelSpec& spec, const DualParameter& theta0, double t) {
  if (!(t >= 0.0)) throw InputError("rho_integral: negative elapsed time");
  switch (spec.kind()) {
    case ModelKind::Cir: {
      // Theta_t = c D'(t) / (2 gamma D(t)) with D(t) = theta e^{2 gamma t} + c - theta,
      // so the integral is log(D(t)/c) / (2 sigma2).
      const auto& p = spec.cir();
      const double ratio = gamma_rate(theta0) / p.stationary_rate();
      const double g2t = 2.0 * p.gamma * t;
      double log_d = 0.0;
      if (g2t < 30.0) {
        log_d = std::log1p(ratio * std::expm1(g2t));
      } else {
        log_d = g2t + std::log(ratio + (1.0 - ratio) * std::exp(-g2t));
      }
      return log_d / (2.0 * p.sigma2);
    }
    case ModelKind::Wf:
      return t;
    case ModelKind::Ou:
      throw InputError("rho_integral: the OU dual has no death component");
  }
  return 0.0;
}

double cir_binomial_transition(const ModelSpec& spec, int m, int i, double t, double theta) {
  if (m < 0 || i < 0 || i > m) throw InputError("cir_binomial_transition: need 0 <= i <= m");
  if (!(t >= 0.0)) throw InputError("cir_binomial_transition: negative elapsed time");
  if (!(theta > 0.0)) throw InputError("cir_binomial_transition: theta must be positive");
  const double p = cir_survival_probability(spec.cir(), t, theta);
  const int k = m - i;
  if (p >= 1.0) return i == 0 ? 1.0 : 0.0;
  const double log_pmf = std::lgamma(m + 1.0) - std::lgamma(k + 1.0) - std::lgamma(i + 1.0) + log_power(p, k) +
                         log_power(1.0 - p, i);
  return std::exp(log_pmf);
}

DeathKernelSpec death_kernel_spec(const ModelSpec& spec) {
  DeathKernelSpec out;
  switch (spec.kind()) {
    case ModelKind::Cir: {
      const double rate = 2.0 * spec.cir().sigma2;
      out.lambda = [rate](int) { return rate; };
      out.rho = [](const DualParameter& theta) { return gamma_rate(theta); };
      out.rho_integral = [spec](const DualParameter& theta0, double t) { return rho_integral(spec, theta0, t); };
      out.dim = 1;
      return out;
    }
    case ModelKind::Wf: {
      const double total = spec.wf().total();
      out.lambda = [total](int magnitude) { return (total + magnitude - 1.0) / 2.0; };
      out.rho = [](const DualParameter&) { return 1.0; };
      out.rho_integral = [](const DualParameter&, double t) { return t; };
      out.dim = spec.wf().alpha.size();
      return out;
    }
    case ModelKind::Ou:
      throw InputError("the OU dual is purely deterministic and has no death kernel");
  }
  return out;
}

ComponentMoments component_moments(const ModelSpec& spec, const MultiIndex& m, const DualParameter& theta) {
  validate_parameter(spec, theta);
  require_dim(m, spec.dual_dim());
  switch (spec.kind()) {
    case ModelKind::Cir: {
      const double shape = 0.5 * spec.cir().delta + m[0];
      const double rate = gamma_rate(theta);
      return {{shape / rate}, {shape * (shape + 1.0) / (rate * rate)}};
    }
    case ModelKind::Ou: {
      const auto& g = gaussian(theta);
      return {{g.mean}, {g.variance + g.mean * g.mean}};
    }
    case ModelKind::Wf: {
      const auto& a = spec.wf().alpha;
      const double conc = spec.wf().total() + m.magnitude();
      ComponentMoments out;
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double b = a[j] + m[j];
        out.mean.push_back(b / conc);
        out.second.push_back(b * (b + 1.0) / (conc * (conc + 1.0)));
      }
      return out;
    }
  }
  return {};
}

}  // namespace dualfilter
