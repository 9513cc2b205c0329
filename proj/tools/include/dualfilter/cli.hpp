#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualfilter/models.hpp"
#include "dualfilter/multi_index.hpp"

namespace dualfilter::cli {

enum class Command { Simulate, Filter, Validate };

struct RunConfig {
  Command command = Command::Filter;
  ModelSpec model = ModelSpec::cir(2.0, 1.0, 1.0, 1.0);
  std::optional<MultiIndex> m0;
  std::string obs_path;
  std::string out_path;
  double prune_eps = 1e-10;
  std::uint64_t seed = 0;
  int particles = 100000;
  int replicates = 20;
  bool full_mixture = false;
  double euler_step = 1e-4;
  int horizon = 100;
  double gap = 1.0;
  int sample_size = 10;
  std::string signal_out;
  /// Test hook for the validate negative control; 1 is the correct filter.
  double flow_scale = 1.0;
};

/// Thrown by parse_config when --help was requested; what() is the usage text.
class HelpRequested : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a command line (without the program name). Flags override values
/// read from --config. Throws InputError on any invalid or missing value.
RunConfig parse_config(const std::vector<std::string>& args);

/// Reads `time,y` (CIR, OU) or `time,y1,...,yK` (WF) CSV. Errors cite the line.
std::vector<Observation> read_observations(const std::string& path, const ModelSpec& model);

/// Writes one JSON record per observation.
int run_filter(const RunConfig& config, std::ostream& out);
/// Exact filter against the particle filter; returns 0 on pass, 4 on fail.
int run_validate(const RunConfig& config, std::ostream& out);
/// Writes a simulated observation CSV (and optionally the hidden path).
int run_simulate(const RunConfig& config, std::ostream& out);

/// Full program: parse, dispatch, map errors to exit codes
/// (1 input, 2 numerical, 3 internal, 4 validation failed).
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dualfilter::cli
