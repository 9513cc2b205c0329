#include "dualfilter/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "dualfilter/errors.hpp"
#include "dualfilter/filter.hpp"
#include "dualfilter/oracle.hpp"

namespace dualfilter::cli {
namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string num_list(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + num(v[i]);
  return out + "]";
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(text);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto keep = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), keep));
  s.erase(std::find_if(s.rbegin(), s.rend(), keep).base(), s.end());
  return s;
}

template <typename T>
bool parse_number(const std::string& text, T& value) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), value);
  return ec == std::errc() && ptr == t.data() + t.size();
}

double parse_real(const std::string& text, const std::string& what) {
  double v = 0.0;
  if (!parse_number(text, v) || !std::isfinite(v)) throw InputError(what + ": '" + text + "' is not a finite number");
  return v;
}

std::vector<double> parse_real_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& field : split(text, ',')) out.push_back(parse_real(field, what));
  return out;
}

ModelSpec build_model(const std::string& name, CLI::App& app, const std::map<std::string, double>& reals,
                      const std::string& alpha) {
  auto given = [&](const std::string& flag) { return app.get_option("--" + flag)->count() > 0; };
  auto need = [&](const std::string& flag) {
    if (!given(flag)) throw InputError("model " + name + " requires --" + flag);
    return flag == "alpha" ? 0.0 : reals.at(flag);
  };
  auto forbid = [&](const std::string& flag) {
    if (given(flag)) throw InputError("--" + flag + " does not apply to model " + name);
  };
  if (name.empty()) throw InputError("--model is required (cir, ou or wf)");
  if (name == "cir") {
    forbid("alpha");
    const double delta = need("delta"), gamma = need("gamma"), sigma2 = need("sigma2");
    return ModelSpec::cir(delta, gamma, sigma2, need("lambda-em"));
  }
  if (name == "ou") {
    forbid("delta");
    const double gamma = need("gamma");
    need("alpha");
    const auto a = parse_real_list(alpha, "--alpha");
    if (a.size() != 1) throw InputError("model ou takes a single --alpha value");
    const double sigma2 = need("sigma2");
    return ModelSpec::ou(gamma, a[0], sigma2, need("lambda-em"));
  }
  for (const char* flag : {"delta", "gamma", "sigma2", "lambda-em"}) forbid(flag);
  need("alpha");
  return ModelSpec::wf(parse_real_list(alpha, "--alpha"));
}

std::ostream& open_output(const std::string& path, std::ofstream& file, std::ostream& fallback) {
  if (path.empty()) return fallback;
  file.open(path);
  if (!file) throw InputError("cannot open output file " + path);
  return file;
}

std::string theta_json(const DualParameter& theta) {
  if (const auto* g = std::get_if<GammaRate>(&theta)) return "{\"rate\":" + num(g->value) + "}";
  if (const auto* g = std::get_if<GaussianMoments>(&theta)) {
    return "{\"mean\":" + num(g->mean) + ",\"variance\":" + num(g->variance) + "}";
  }
  return "null";
}

std::string mixture_json(const MixtureState& state) {
  std::string out = "[";
  const auto w = state.weights();
  for (std::size_t i = 0; i < state.size(); ++i) {
    out += i ? "," : "";
    out += "{\"m\":[";
    const auto& m = state.support()[i];
    for (std::size_t j = 0; j < m.dim(); ++j) out += (j ? "," : "") + std::to_string(m[j]);
    out += "],\"w\":" + num(w[i]) + "}";
  }
  return out + "]";
}

}  // namespace

RunConfig parse_config(const std::vector<std::string>& args) {
  CLI::App app{"Exact optimal filtering for CIR, OU and Wright-Fisher hidden Markov models", "dualfilter"};
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "Flat key = value file mirroring the long flags");

  RunConfig config;
  std::string command, model_name, alpha, m0;
  std::map<std::string, double> reals{{"delta", 0.0}, {"gamma", 0.0}, {"sigma2", 0.0}, {"lambda-em", 0.0}};
  app.add_option("command", command, "simulate | filter | validate")
      ->required()
      ->check(CLI::IsMember({"simulate", "filter", "validate"}));
  app.add_option("--model", model_name, "cir | ou | wf")->check(CLI::IsMember({"cir", "ou", "wf"}));
  app.add_option("--delta", reals["delta"], "CIR dimension parameter");
  app.add_option("--gamma", reals["gamma"], "CIR mean reversion or OU mean");
  app.add_option("--sigma2", reals["sigma2"], "Diffusion scale");
  app.add_option("--lambda-em", reals["lambda-em"], "Emission rate (CIR) or noise variance (OU)");
  app.add_option("--alpha", alpha, "OU stationary variance, or comma-separated WF mutation weights");
  app.add_option("--m0", m0, "Initial multi-index, comma-separated (default zero)");
  app.add_option("--obs", config.obs_path, "Observation CSV");
  app.add_option("--out", config.out_path, "Output path (default stdout)");
  app.add_option("--prune-eps", config.prune_eps, "Pruning threshold in [0, 1)");
  app.add_option("--seed", config.seed, "Random seed");
  app.add_option("--particles", config.particles, "Particle count (validate)");
  app.add_option("--replicates", config.replicates, "Independent particle-filter replicates (validate)");
  app.add_flag("--full-mixture", config.full_mixture, "Also print every (multi-index, weight) pair");
  app.add_option("--euler-step", config.euler_step, "Euler step of the WF simulator");
  app.add_option("--horizon", config.horizon, "Number of observations (simulate)");
  app.add_option("--gap", config.gap, "Time between observations (simulate)");
  app.add_option("--sample-size", config.sample_size, "Multinomial sample size per WF observation (simulate)");
  app.add_option("--signal-out", config.signal_out, "CSV for the hidden path (simulate)");
  app.add_option("--corrupt-flow", config.flow_scale)->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested(app.help());
  } catch (const CLI::ParseError& e) {
    throw InputError(e.what());
  }

  config.command = command == "simulate" ? Command::Simulate
                   : command == "filter" ? Command::Filter
                                         : Command::Validate;
  config.model = build_model(model_name, app, reals, alpha);
  if (!(config.prune_eps >= 0.0 && config.prune_eps < 1.0)) throw InputError("--prune-eps must lie in [0, 1)");
  if (!m0.empty()) {
    std::vector<int> coords;
    for (const auto& field : split(m0, ',')) {
      int v = 0;
      if (!parse_number(field, v)) throw InputError("--m0: '" + field + "' is not an integer");
      coords.push_back(v);
    }
    if (coords.size() != config.model.dual_dim()) throw InputError("--m0 has the wrong number of coordinates");
    config.m0 = MultiIndex(coords);
  }
  if (config.command != Command::Simulate && config.obs_path.empty()) throw InputError("--obs is required");
  if (config.command == Command::Validate) {
    if (config.particles < 100) throw InputError("--particles must be at least 100");
    if (config.replicates < 2) throw InputError("--replicates must be at least 2");
    if (config.m0) throw InputError("validate starts from the stationary law; --m0 is not accepted");
  }
  if (!(config.euler_step > 0.0)) throw InputError("--euler-step must be positive");
  if (!(config.flow_scale > 0.0)) throw InputError("--corrupt-flow must be positive");
  return config;
}

std::vector<Observation> read_observations(const std::string& path, const ModelSpec& model) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open observation file " + path);
  const bool wf = model.kind() == ModelKind::Wf;
  const std::size_t k = wf ? model.dual_dim() : 1;
  std::string expected = "time";
  if (wf) {
    for (std::size_t j = 1; j <= k; ++j) expected += ",y" + std::to_string(j);
  } else {
    expected += ",y";
  }

  std::string line;
  int line_no = 0;
  bool header = false;
  std::vector<Observation> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    if (!header) {
      if (trim(line) != expected) throw InputError(where + "expected header '" + expected + "'");
      header = true;
      continue;
    }
    const auto fields = split(line, ',');
    if (fields.size() != k + 1) {
      throw InputError(where + "expected " + std::to_string(k + 1) + " fields, found " +
                       std::to_string(fields.size()));
    }
    double time = 0.0;
    if (!parse_number(fields[0], time) || !std::isfinite(time)) throw InputError(where + "bad time '" + fields[0] + "'");
    if (!out.empty() && !(time > out.back().time)) throw InputError(where + "times must be strictly increasing");
    Emission value;
    if (model.kind() == ModelKind::Ou) {
      double y = 0.0;
      if (!parse_number(fields[1], y) || !std::isfinite(y)) throw InputError(where + "bad reading '" + fields[1] + "'");
      value = GaussianReading{y};
    } else {
      std::vector<int> counts;
      for (std::size_t j = 1; j <= k; ++j) {
        int c = 0;
        if (!parse_number(fields[j], c)) throw InputError(where + "count '" + fields[j] + "' is not an integer");
        if (c < 0) throw InputError(where + "negative count " + std::to_string(c));
        counts.push_back(c);
      }
      value = wf ? Emission{MultinomialCounts{counts}} : Emission{PoissonCount{counts[0]}};
    }
    try {
      validate_observation(model, {time, value});
    } catch (const InputError& e) {
      throw InputError(where + e.what());
    }
    out.push_back({time, std::move(value)});
  }
  if (!header) throw InputError(path + ": observation file is empty");
  if (out.empty()) throw InputError(path + ": no observations after the header");
  return out;
}

int run_filter(const RunConfig& config, std::ostream& out) {
  const auto observations = read_observations(config.obs_path, config.model);
  std::ofstream file;
  std::ostream& os = open_output(config.out_path, file, out);
  const FilterOptions options{config.prune_eps, PredictOptions{.cir_binomial = true, .flow_time_scale = config.flow_scale}};
  MixtureState state = init(config.model, config.m0, std::nullopt, observations.front().time);
  double log_likelihood = 0.0;
  for (std::size_t n = 0; n < observations.size(); ++n) {
    auto result = step(state, observations[n], options);
    state = std::move(result.state);
    log_likelihood += result.log_density;
    const auto mo = moments(state);
    os << "{\"step\":" << n + 1 << ",\"time\":" << num(state.timestamp()) << ",\"theta\":" << theta_json(state.theta())
       << ",\"support_size\":" << state.size() << ",\"pruned_mass\":" << num(result.pruned_mass)
       << ",\"mean\":" << num_list(mo.mean) << ",\"variance\":" << num_list(mo.variance)
       << ",\"log_density\":" << num(result.log_density) << ",\"log_likelihood\":" << num(log_likelihood)
       << ",\"outside_proof_range\":" << (result.outside_proof_range ? "true" : "false");
    if (config.full_mixture && state.has_mixture()) os << ",\"mixture\":" << mixture_json(state);
    os << "}\n";
  }
  os.flush();
  if (!os) throw std::runtime_error("failed writing filter output");
  return 0;
}

int run_validate(const RunConfig& config, std::ostream& out) {
  const auto observations = read_observations(config.obs_path, config.model);
  std::ofstream file;
  std::ostream& os = open_output(config.out_path, file, out);
  const FilterOptions options{config.prune_eps, PredictOptions{.cir_binomial = true, .flow_time_scale = config.flow_scale}};
  const auto exact = run_filter(init(config.model, std::nullopt, std::nullopt, observations.front().time),
                                observations, options);
  const auto pf = oracle::particle_filter(config.model, observations,
                                          {config.particles, config.replicates, config.seed,
                                           oracle::EulerOptions{.step = config.euler_step}});
  auto z_score = [](double exact_value, double estimate, double se) {
    const double diff = exact_value - estimate;
    if (se > 0.0) return diff / se;
    return diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
  };
  double worst = 0.0;
  for (std::size_t n = 0; n < observations.size(); ++n) {
    const auto mo = moments(exact.steps[n].state);
    std::vector<double> z_mean, z_var;
    for (std::size_t j = 0; j < mo.mean.size(); ++j) {
      z_mean.push_back(z_score(mo.mean[j], pf[n].mean[j], pf[n].mean_se[j]));
      z_var.push_back(z_score(mo.variance[j], pf[n].variance[j], pf[n].variance_se[j]));
      worst = std::max({worst, std::fabs(z_mean.back()), std::fabs(z_var.back())});
    }
    double cumulative = 0.0;
    for (std::size_t i = 0; i <= n; ++i) cumulative += exact.steps[i].log_density;
    os << "{\"step\":" << n + 1 << ",\"time\":" << num(observations[n].time) << ",\"exact_mean\":" << num_list(mo.mean)
       << ",\"particle_mean\":" << num_list(pf[n].mean) << ",\"exact_variance\":" << num_list(mo.variance)
       << ",\"particle_variance\":" << num_list(pf[n].variance) << ",\"z_mean\":" << num_list(z_mean)
       << ",\"z_variance\":" << num_list(z_var) << ",\"z_log_likelihood\":"
       << num(z_score(cumulative, pf[n].log_likelihood, pf[n].log_likelihood_se)) << "}\n";
  }
  const bool pass = worst < 3.0;
  os << "{\"verdict\":\"" << (pass ? "pass" : "fail") << "\",\"max_abs_z\":" << (std::isfinite(worst) ? num(worst) : "\"inf\"")
     << ",\"steps\":" << observations.size() << "}\n";
  os.flush();
  if (!os) throw std::runtime_error("failed writing validation output");
  return pass ? 0 : 4;
}

int run_simulate(const RunConfig& config, std::ostream& out) {
  oracle::SimulationConfig sim{.model = config.model,
                               .horizon = config.horizon,
                               .gap = config.gap,
                               .seed = config.seed,
                               .particles = config.particles,
                               .euler_step = config.euler_step,
                               .sample_size = config.sample_size};
  const auto path = oracle::simulate_hmm(sim);
  std::ofstream file;
  std::ostream& os = open_output(config.out_path, file, out);
  const std::size_t k = config.model.signal_dim();
  const bool wf = config.model.kind() == ModelKind::Wf;
  os << "time";
  if (wf) {
    for (std::size_t j = 1; j <= k; ++j) os << ",y" << j;
  } else {
    os << ",y";
  }
  os << "\n";
  for (const auto& y : path.observations) {
    os << num(y.time);
    if (const auto* c = std::get_if<PoissonCount>(&y.value)) os << "," << c->value;
    if (const auto* g = std::get_if<GaussianReading>(&y.value)) os << "," << num(g->value);
    if (const auto* m = std::get_if<MultinomialCounts>(&y.value)) {
      for (int v : m->values) os << "," << v;
    }
    os << "\n";
  }
  os.flush();
  if (!os) throw std::runtime_error("failed writing simulated observations");
  if (!config.signal_out.empty()) {
    std::ofstream signal(config.signal_out);
    if (!signal) throw InputError("cannot open signal output " + config.signal_out);
    signal << "time";
    if (k == 1) {
      signal << ",x";
    } else {
      for (std::size_t j = 1; j <= k; ++j) signal << ",x" << j;
    }
    signal << "\n";
    for (std::size_t n = 0; n < path.times.size(); ++n) {
      signal << num(path.times[n]);
      for (double v : path.signal[n]) signal << "," << num(v);
      signal << "\n";
    }
  }
  return 0;
}

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig config = parse_config(args);
    switch (config.command) {
      case Command::Simulate:
        return run_simulate(config, out);
      case Command::Filter:
        return run_filter(config, out);
      case Command::Validate:
        return run_validate(config, out);
    }
    return 3;
  } catch (const HelpRequested& help) {
    out << help.what();
    return 0;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace dualfilter::cli
