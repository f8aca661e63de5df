#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tdmr/channel.hpp"
#include "tdmr/equalizer.hpp"

namespace tdmr {

inline constexpr double kLn2 = 0.69314718055994530942;

double ber(const BitSequence& estimated, const BitSequence& truth);

struct MiEstimate {
    double raw_nats = 0.0;
    /// raw_nats clamped at zero
    double nats = 0.0;
    bool clamped = false;
    bool degenerate = false;
    std::string diagnostic;

    double bits() const { return nats / kLn2; }
    double raw_bits() const { return raw_nats / kLn2; }
};

/// Nearest-neighbor estimate of I(llr; u) for a continuous variable and a binary label.
/// Requires at least 10 * k samples.
MiEstimate mutual_information(std::span<const double> llr, const BitSequence& u, int k = 3,
                              uint64_t jitter_seed = 0x6d69u);

struct MetricsReport {
    std::string arch;
    double ber = 0.0;
    double mi_nats = 0.0;
    double mi_raw_nats = 0.0;
    double mi_bits = 0.0;
    std::size_t bit_count = 0;
    std::size_t bit_errors = 0;
    std::size_t param_count = 0;
    /// Mean cross-entropy of the LLRs over the evaluated bits.
    double loss = 0.0;
    /// Fraction of evaluated bits with u * llr <= 0.
    double sign_error_fraction = 0.0;
};

struct EvaluationOutput {
    MetricsReport report;
    /// Pooled LLRs and their written bits, in sector order.
    std::vector<double> llr;
    std::vector<int8_t> bits;
};

/// Equalizes and detects every sector, with the detector pinned to the true bits before the
/// target memory; bits within sector_guard of either edge are excluded from all statistics.
EvaluationOutput evaluate(const EqualizerModel& model, std::span<const ReadbackSector> dataset, bool parallel = true);

/// One row of the architecture comparison report.
struct ReportRow {
    std::string arch;
    std::string K;
    double ber = 0.0;
    std::size_t complexity = 0;
    double mi_bits = 0.0;
    double loss = 0.0;

    bool operator==(const ReportRow&) const = default;
};

inline constexpr const char* kReportHeader = "arch,K,ber,complexity,mi_bits,loss";

struct ReportFile {
    std::string config_hash;
    std::vector<ReportRow> rows;
};

void write_report_csv(const std::filesystem::path& path, const ReportFile& report);
ReportFile read_report_csv(const std::filesystem::path& path);

}  // namespace tdmr
