#pragma once

// Data-parallel kernels. Every kernel has a straightforward serial version that the
// tests use as the reference, and an OpenMP version used by the harness.

#include <span>
#include <vector>

#include "tdmr/channel.hpp"
#include "tdmr/equalizer.hpp"
#include "tdmr/trellis.hpp"

namespace tdmr::kernels {

/// Samples per work item in the parallel gradient reduction. Partial sums are always
/// combined in block order, so results do not depend on the thread count.
inline constexpr std::size_t kGradientBlock = 128;
inline constexpr std::size_t kEqualizeChunk = 4096;

/// Sector i draws its bits and channel noise from derive_seed(cfg.rng_seed, i).
struct SectorBatch {
    ChannelConfig channel;
    std::size_t sectors = 1;
    std::size_t bits_per_sector = 1;
};

/// Detector input for one sector: soft decisions for bits [first, sector length).
struct SectorDetection {
    std::size_t first = 0;
    SoftDecision soft;
};

namespace serial {

std::vector<ReadbackSector> synthesize(const SectorBatch& batch);

/// Outputs [begin, end), one sliding window at a time.
std::vector<double> equalize(const EqualizerSpec& spec, const ParameterSet& params, const PaddedSector& padded,
                             std::size_t begin, std::size_t end);

/// grad += sum_n dJ_dy[n - begin] * dy_n/dtheta for n in [begin, begin + dJ_dy.size()).
void accumulate_gradient(const EqualizerSpec& spec, const ParameterSet& params, const PaddedSector& padded,
                         std::size_t begin, std::span<const double> dJ_dy, ParameterSet& grad);

std::vector<SectorDetection> detect(const EqualizerModel& model, std::span<const ReadbackSector> sectors);

}  // namespace serial

namespace parallel {

std::vector<ReadbackSector> synthesize(const SectorBatch& batch);

std::vector<double> equalize(const EqualizerSpec& spec, const ParameterSet& params, const PaddedSector& padded,
                             std::size_t begin, std::size_t end);

void accumulate_gradient(const EqualizerSpec& spec, const ParameterSet& params, const PaddedSector& padded,
                         std::size_t begin, std::span<const double> dJ_dy, ParameterSet& grad);

std::vector<SectorDetection> detect(const EqualizerModel& model, std::span<const ReadbackSector> sectors);

}  // namespace parallel

/// Sets the OpenMP thread count; 0 leaves the runtime default.
void set_threads(int threads);
int max_threads();

}  // namespace tdmr::kernels
