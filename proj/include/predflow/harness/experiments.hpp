#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "predflow/harness/config.hpp"

namespace predflow {

enum class Command { Train, Infer, Whiten, CompareInference, EvalElbo, GenData };

std::string_view to_string(Command c);
std::optional<Command> command_from_string(std::string_view name);

struct RunRequest {
  Command command = Command::Train;
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;  // overrides the config's seed
  std::filesystem::path out;          // overrides the config's output_dir
};

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

// Runs one command. Outputs are staged next to the target directory and only
// moved into place when the run succeeds, so a failed run leaves nothing
// behind. Errors are reported on `err`; the return value is the exit code.
int run_experiment(const RunRequest& request, std::ostream& err);

// Shortest text that round-trips (printf %.17g).
std::string format_number(double v);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

// Fraction of interior tiles whose own (center) weight has the opposite sign
// to the mean of its eight neighbours. Row i of `filters` is the filter
// centred on pixel i of a tile_h x tile_w patch.
double center_surround_fraction(const Mat& filters, Index tile_h, Index tile_w);

// Freshly initialized linear model of the configured dims: weights drawn
// with std `init_scale`, zero bias, constant obs_std, unit prior.
LinearGaussianModel init_linear_model(const ModelSpec& spec, Rng& rng);

}  // namespace predflow
