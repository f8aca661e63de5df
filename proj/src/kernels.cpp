#include "tdmr/kernels.hpp"

#include <algorithm>

#include <omp.h>

namespace tdmr::kernels {

namespace {

ReadbackSector make_sector(const SectorBatch& batch, std::size_t i) {
    ChannelConfig cfg = batch.channel;
    cfg.rng_seed = derive_seed(batch.channel.rng_seed, i);
    std::mt19937_64 rng(derive_seed(cfg.rng_seed, 100));
    BitSequence bits = BitSequence::random(batch.bits_per_sector, rng);
    return synthesize_sector(bits, cfg);
}

SectorDetection detect_one(const EqualizerModel& model, const Trellis& trellis, const ReadbackSector& sector,
                           std::vector<double> y) {
    SectorDetection d;
    d.first = std::min(trellis.memory(), sector.size());
    StartCondition start{trellis.state_before(sector.bits, d.first)};
    std::span<const double> tail(y.data() + d.first, y.size() - d.first);
    d.soft = sova(tail, trellis, model.noise_var, start);
    return d;
}

}  // namespace

namespace serial {

std::vector<ReadbackSector> synthesize(const SectorBatch& batch) {
    std::vector<ReadbackSector> out;
    out.reserve(batch.sectors);
    for (std::size_t i = 0; i < batch.sectors; ++i) out.push_back(make_sector(batch, i));
    return out;
}

std::vector<double> equalize(const EqualizerSpec& spec, const ParameterSet& params, const PaddedSector& padded,
                             std::size_t begin, std::size_t end) {
    std::vector<double> y;
    y.reserve(end - begin);
    for (std::size_t n = begin; n < end; ++n) y.push_back(forward(spec, params, padded.window(n)));
    return y;
}

void accumulate_gradient(const EqualizerSpec& spec, const ParameterSet& params, const PaddedSector& padded,
                         std::size_t begin, std::span<const double> dJ_dy, ParameterSet& grad) {
    for (std::size_t i = 0; i < dJ_dy.size(); ++i) {
        backward(spec, params, padded.window(begin + i), dJ_dy[i], grad);
    }
}

std::vector<SectorDetection> detect(const EqualizerModel& model, std::span<const ReadbackSector> sectors) {
    Trellis trellis(model.target);
    const int H = context_halfwidth(model.spec);
    std::vector<SectorDetection> out;
    for (const auto& s : sectors) {
        PaddedSector padded(s, H);
        out.push_back(detect_one(model, trellis, s, equalize(model.spec, model.params, padded, 0, s.size())));
    }
    return out;
}

}  // namespace serial

namespace parallel {

std::vector<ReadbackSector> synthesize(const SectorBatch& batch) {
    std::vector<ReadbackSector> out(batch.sectors);
    const auto count = static_cast<std::ptrdiff_t>(batch.sectors);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i) out[i] = make_sector(batch, static_cast<std::size_t>(i));
    return out;
}

std::vector<double> equalize(const EqualizerSpec& spec, const ParameterSet& params, const PaddedSector& padded,
                             std::size_t begin, std::size_t end) {
    std::vector<double> y(end - begin);
    const std::size_t chunks = (end - begin + kEqualizeChunk - 1) / kEqualizeChunk;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
        const std::size_t a = begin + static_cast<std::size_t>(c) * kEqualizeChunk;
        const std::size_t b = std::min(end, a + kEqualizeChunk);
        auto part = equalize_stream(spec, params, padded, a, b);
        std::copy(part.begin(), part.end(), y.begin() + static_cast<std::ptrdiff_t>(a - begin));
    }
    return y;
}

void accumulate_gradient(const EqualizerSpec& spec, const ParameterSet& params, const PaddedSector& padded,
                         std::size_t begin, std::span<const double> dJ_dy, ParameterSet& grad) {
    const std::size_t blocks = (dJ_dy.size() + kGradientBlock - 1) / kGradientBlock;
    std::vector<ParameterSet> partial(blocks, ParameterSet::zeros(spec));
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
        const std::size_t lo = static_cast<std::size_t>(b) * kGradientBlock;
        const std::size_t hi = std::min(dJ_dy.size(), lo + kGradientBlock);
        for (std::size_t i = lo; i < hi; ++i) backward(spec, params, padded.window(begin + i), dJ_dy[i], partial[b]);
    }
    for (const auto& p : partial) grad.axpy(1.0, p);
}

std::vector<SectorDetection> detect(const EqualizerModel& model, std::span<const ReadbackSector> sectors) {
    Trellis trellis(model.target);
    const int H = context_halfwidth(model.spec);
    std::vector<SectorDetection> out(sectors.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(sectors.size()); ++i) {
        const auto& s = sectors[i];
        PaddedSector padded(s, H);
        out[i] = detect_one(model, trellis, s, equalize_stream(model.spec, model.params, padded, 0, s.size()));
    }
    return out;
}

}  // namespace parallel

void set_threads(int threads) {
    if (threads > 0) omp_set_num_threads(threads);
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace tdmr::kernels
