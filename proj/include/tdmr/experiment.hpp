#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tdmr/channel.hpp"
#include "tdmr/equalizer.hpp"
#include "tdmr/metrics.hpp"
#include "tdmr/training.hpp"

namespace tdmr {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DatasetConfig {
    std::size_t sectors = 20;
    std::size_t bits_per_sector = 40000;
    double train_fraction = 0.8;
    /// Sector file to read instead of synthesizing; empty means synthesize.
    std::filesystem::path path;
    bool generate = true;
};

enum class Solver { ClosedForm, SGD };

struct ExperimentConfig {
    std::string label;
    ChannelConfig channel;
    DatasetConfig dataset;
    EqualizerSpec equalizer;
    TrainConfig training;
    /// Linear2D with MSE: closed-form least squares or SGD from a scaled delta.
    Solver solver = Solver::ClosedForm;
    /// Taps given in the config; rescaled to monic and held fixed when present.
    std::optional<PRTarget> fixed_target;
    std::filesystem::path output_dir = "out";
    std::vector<uint64_t> replication_seeds{1};
    bool emit_svg = false;
    bool dump_llr = false;

    ExperimentConfig();

    /// Throws ConfigError.
    void validate() const;
    std::string display_label() const;
    /// Every setting except output_dir as sorted `key = value` lines.
    std::string canonical() const;
    std::string hash() const;
};

/// Applies `key = value` lines on top of `base`. Blank lines and lines starting with '#' are skipped.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {}, std::string_view source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// All recognized keys, in documentation order.
std::vector<std::string> config_keys();

struct DataSplit {
    std::vector<ReadbackSector> train;
    std::vector<ReadbackSector> test;
};

/// Synthesized with the channel seed derived from the replication seed, or read from dataset.path.
DataSplit make_data(const ExperimentConfig& cfg, uint64_t replication_seed);

struct TrainedModel {
    EqualizerModel model;
    std::vector<double> loss_history;
};

TrainedModel train_model(const ExperimentConfig& cfg, std::span<const ReadbackSector> train, uint64_t replication_seed,
                         const TrainLog& log = {});

struct SeedResult {
    uint64_t seed = 0;
    MetricsReport metrics;
};

struct RunResult {
    std::string label;
    std::string K;
    std::size_t complexity = 0;
    std::vector<SeedResult> seeds;
    std::vector<ReportRow> rows;
};

std::string seed_row_label(const std::string& label, uint64_t seed);
std::string mean_row_label(const std::string& label);

void cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& out_path);
/// Writes <label>.csv, and per seed a model file and a training log, into cfg.output_dir.
RunResult cmd_run(const ExperimentConfig& cfg);
/// Writes sweep.csv and complexity_ber.csv (and complexity_ber.svg when any config asks for it) into `out_dir`.
std::vector<RunResult> cmd_sweep(const std::vector<ExperimentConfig>& configs, const std::filesystem::path& out_dir);
void cmd_complexity(std::ostream& out);
MiEstimate cmd_mi(const std::filesystem::path& llr_dump, std::ostream& out, int k = 3);
/// Returns false when any check exceeds its tolerance.
bool cmd_check(uint64_t seed, std::ostream& out, int points = 5);

void write_llr_dump(const std::filesystem::path& path, std::span<const double> llr, std::span<const int8_t> bits);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Percentile bootstrap interval of the mean.
Interval bootstrap_mean_interval(std::span<const double> values, double level, std::size_t resamples, uint64_t seed);

}  // namespace tdmr
