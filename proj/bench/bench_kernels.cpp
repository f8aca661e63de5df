#include <benchmark/benchmark.h>

#include <random>

#include "tdmr/kernels.hpp"
#include "tdmr/training.hpp"

namespace {

using namespace tdmr;

kernels::SectorBatch make_batch(std::size_t sectors) {
    kernels::SectorBatch b;
    b.channel.place_readers();
    b.sectors = sectors;
    b.bits_per_sector = 40000;
    return b;
}

const std::vector<ReadbackSector>& data() {
    static const auto sectors = kernels::parallel::synthesize(make_batch(4));
    return sectors;
}

EqualizerSpec rcmlp3() { return {.arch = Arch::RCMLP3, .M = 5, .K = 9}; }

ParameterSet params(const EqualizerSpec& spec) {
    InitOptions init;
    init.seed = 1;
    init.data = data();
    return initialize(spec, init);
}

template <bool Parallel>
void BM_Synthesize(benchmark::State& state) {
    const auto batch = make_batch(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        auto out = Parallel ? kernels::parallel::synthesize(batch) : kernels::serial::synthesize(batch);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0) * 40000);
}

template <bool Parallel>
void BM_Equalize(benchmark::State& state) {
    const auto spec = rcmlp3();
    const auto p = params(spec);
    const PaddedSector padded(data()[0], context_halfwidth(spec));
    for (auto _ : state) {
        auto y = Parallel ? kernels::parallel::equalize(spec, p, padded, 0, padded.size())
                          : kernels::serial::equalize(spec, p, padded, 0, padded.size());
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(padded.size()));
}

template <bool Parallel>
void BM_Gradient(benchmark::State& state) {
    const auto spec = rcmlp3();
    const auto p = params(spec);
    const PaddedSector padded(data()[0], context_halfwidth(spec));
    std::vector<double> w(static_cast<std::size_t>(state.range(0)), 0.01);
    auto grad = ParameterSet::zeros(spec);
    for (auto _ : state) {
        grad.fill(0.0);
        if (Parallel) {
            kernels::parallel::accumulate_gradient(spec, p, padded, 100, w, grad);
        } else {
            kernels::serial::accumulate_gradient(spec, p, padded, 100, w, grad);
        }
        benchmark::DoNotOptimize(grad.values().data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_Detect(benchmark::State& state) {
    const auto sol = solve_lmmse(std::span(data()).first(1), 5, 3);
    const EqualizerModel m{EqualizerSpec{.arch = Arch::Linear2D, .M = 5}, sol.params, sol.target, sol.residual_mse};
    for (auto _ : state) {
        auto d = Parallel ? kernels::parallel::detect(m, data()) : kernels::serial::detect(m, data());
        benchmark::DoNotOptimize(d.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(data().size()) * 40000);
}

}  // namespace

BENCHMARK(BM_Synthesize<false>)->Name("synthesize/serial")->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Synthesize<true>)->Name("synthesize/parallel")->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Equalize<false>)->Name("equalize/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Equalize<true>)->Name("equalize/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gradient<false>)->Name("gradient/serial")->Arg(1024)->Arg(16384)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Gradient<true>)->Name("gradient/parallel")->Arg(1024)->Arg(16384)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Detect<false>)->Name("detect/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Detect<true>)->Name("detect/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
