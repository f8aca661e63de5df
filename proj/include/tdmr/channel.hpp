#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdmr/format.hpp"

namespace tdmr {

/// Written bits, every element exactly -1 or +1.
class BitSequence {
public:
    BitSequence() = default;
    explicit BitSequence(std::vector<int8_t> bits);

    static BitSequence random(std::size_t length, std::mt19937_64& rng);

    std::size_t size() const { return bits_.size(); }
    bool empty() const { return bits_.empty(); }
    int operator[](std::size_t i) const { return bits_[i]; }
    std::span<const int8_t> values() const { return bits_; }

    BitSequence slice(std::size_t begin, std::size_t end) const;

    bool operator==(const BitSequence&) const = default;

private:
    std::vector<int8_t> bits_;
};

struct ChannelConfig {
    double symbol_interval_T = 1.0;
    double downtrack_pulse_width = 2.2;  // PW50 of the transition response derivative
    double crosstrack_pulse_width = 40.0;  // sigma of the Gaussian cross-track window
    double track_pitch = 85.0;
    double cts_fraction = 0.52;
    std::array<double, 2> reader_offsets{0.0, 0.52 * 85.0};
    double amplitude = 1.0;
    double jitter_sigma_t = 0.25;
    double jitter_sigma_w = 6.0;
    double awgn_sigma = 0.02;
    int pulse_support_halflength = 10;
    uint64_t rng_seed = 1;

    /// Reader 0 on the track center, reader 1 offset by cts_fraction * track_pitch.
    void place_readers();

    /// Throws std::invalid_argument when any invariant is violated.
    void validate() const;
};

enum class SectorOrigin { Synthetic, Ingested };

struct ReadbackSector {
    BitSequence bits;
    std::vector<double> adc[2];
    SectorOrigin origin = SectorOrigin::Synthetic;
    std::optional<uint64_t> seed;

    std::size_t size() const { return bits.size(); }
    void validate() const;
};

/// b_n = (u_n - u_{n-1}) / 2 with u_{-1} taken equal to u_0.
std::vector<int> transitions(const BitSequence& u);

/// Transition response h(t, w): erf down-track step times a Gaussian cross-track window.
double transition_response(double t, double w, const ChannelConfig& cfg);

/// p(t, w) = h(t, w) - h(t - T, w).
double bit_response(double t_offset, double w_offset, const ChannelConfig& cfg);

/// Per-bit sample taps seen by `reader`, indexed j = -H..H (stored at j + H).
/// Each tap is p(jT, w_reader) / 2 since a transition b_n is a half-difference of bits.
std::vector<double> discrete_bit_response(const ChannelConfig& cfg, int reader);

double sample_truncated_gaussian(double sigma, double bound, std::mt19937_64& rng);

ReadbackSector synthesize_sector(const BitSequence& u, const ChannelConfig& cfg);

/// Per-sector seed derived from a base seed and a sector index.
uint64_t derive_seed(uint64_t base, uint64_t stream);

class DatasetError : public IoError {
public:
    using IoError::IoError;
};

void save_dataset(const std::filesystem::path& path, std::span<const ReadbackSector> sectors);
std::vector<ReadbackSector> load_dataset(const std::filesystem::path& path);

/// Two-reader windows of equal length, centered on the sample being equalized.
struct AdcWindow {
    std::span<const double> r0;
    std::span<const double> r1;
};

}  // namespace tdmr
