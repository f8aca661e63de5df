#include "tdmr/channel.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "tdmr/format.hpp"

namespace tdmr {

BitSequence::BitSequence(std::vector<int8_t> bits) : bits_(std::move(bits)) {
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        if (bits_[i] != 1 && bits_[i] != -1) {
            throw std::invalid_argument("bit " + std::to_string(i) + " is not +/-1");
        }
    }
}

BitSequence BitSequence::random(std::size_t length, std::mt19937_64& rng) {
    std::vector<int8_t> bits(length);
    for (auto& b : bits) b = (rng() >> 63) ? int8_t{1} : int8_t{-1};
    return BitSequence(std::move(bits));
}

BitSequence BitSequence::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > bits_.size()) throw std::out_of_range("BitSequence::slice");
    return BitSequence(std::vector<int8_t>(bits_.begin() + begin, bits_.begin() + end));
}

void ChannelConfig::place_readers() {
    reader_offsets = {0.0, cts_fraction * track_pitch};
}

void ChannelConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("channel config: ") + what);
    };
    require(symbol_interval_T > 0, "symbol_interval_T must be > 0");
    require(downtrack_pulse_width >= 0 && crosstrack_pulse_width >= 0, "pulse widths must be >= 0");
    require(track_pitch >= 0, "track_pitch must be >= 0");
    require(cts_fraction >= 0 && cts_fraction <= 1, "cts_fraction must lie in [0,1]");
    require(jitter_sigma_t >= 0 && jitter_sigma_w >= 0 && awgn_sigma >= 0, "sigmas must be >= 0");
    require(pulse_support_halflength >= 1, "pulse_support_halflength must be >= 1");
    require(std::isfinite(amplitude), "amplitude must be finite");
}

void ReadbackSector::validate() const {
    if (bits.empty()) throw std::invalid_argument("sector has no bits");
    for (const auto& r : adc) {
        if (r.size() != bits.size()) throw std::invalid_argument("ADC length differs from bit length");
        for (double x : r) {
            if (!std::isfinite(x)) throw std::invalid_argument("non-finite ADC sample");
        }
    }
}

std::vector<int> transitions(const BitSequence& u) {
    if (u.empty()) throw std::invalid_argument("transitions: empty bit sequence");
    std::vector<int> b(u.size(), 0);
    for (std::size_t n = 1; n < u.size(); ++n) b[n] = (u[n] - u[n - 1]) / 2;
    return b;
}

namespace {

double downtrack_step(double t, const ChannelConfig& cfg) {
    if (cfg.downtrack_pulse_width == 0.0) return t > 0 ? 1.0 : (t < 0 ? 0.0 : 0.5);
    const double scale = 2.0 * std::sqrt(std::log(2.0)) / cfg.downtrack_pulse_width;
    return 0.5 * (1.0 + std::erf(t * scale));
}

double crosstrack_window(double w, const ChannelConfig& cfg) {
    const double s = cfg.crosstrack_pulse_width;
    if (s == 0.0) return w == 0.0 ? 1.0 : 0.0;
    return std::exp(-w * w / (2.0 * s * s));
}

}  // namespace

double transition_response(double t, double w, const ChannelConfig& cfg) {
    return cfg.amplitude * downtrack_step(t, cfg) * crosstrack_window(w, cfg);
}

double bit_response(double t_offset, double w_offset, const ChannelConfig& cfg) {
    return transition_response(t_offset, w_offset, cfg) -
           transition_response(t_offset - cfg.symbol_interval_T, w_offset, cfg);
}

std::vector<double> discrete_bit_response(const ChannelConfig& cfg, int reader) {
    const int H = cfg.pulse_support_halflength;
    const double w = cfg.reader_offsets.at(static_cast<std::size_t>(reader));
    std::vector<double> taps(static_cast<std::size_t>(2 * H + 1));
    for (int j = -H; j <= H; ++j) {
        taps[static_cast<std::size_t>(j + H)] = 0.5 * bit_response(j * cfg.symbol_interval_T, w, cfg);
    }
    return taps;
}

double sample_truncated_gaussian(double sigma, double bound, std::mt19937_64& rng) {
    if (!(bound > 0)) throw std::invalid_argument("truncated gaussian: bound must be > 0");
    if (sigma < 0) throw std::invalid_argument("truncated gaussian: sigma must be >= 0");
    if (sigma == 0) return 0.0;
    std::normal_distribution<double> normal(0.0, sigma);
    for (;;) {
        const double x = normal(rng);
        if (std::abs(x) < bound) return x;
    }
}

uint64_t derive_seed(uint64_t base, uint64_t stream) {
    // splitmix64 finalizer over the combined key
    uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

ReadbackSector synthesize_sector(const BitSequence& u, const ChannelConfig& cfg) {
    if (u.empty()) throw std::invalid_argument("synthesize_sector: empty bit sequence");
    cfg.validate();

    const int H = cfg.pulse_support_halflength;
    const std::size_t N = u.size();
    const std::size_t ext_len = N + 2 * static_cast<std::size_t>(H);
    const double T = cfg.symbol_interval_T;

    std::mt19937_64 warmup_rng(derive_seed(cfg.rng_seed, 0));
    std::mt19937_64 jitter_rng(derive_seed(cfg.rng_seed, 1));
    std::mt19937_64 noise_rng[2] = {std::mt19937_64(derive_seed(cfg.rng_seed, 2)),
                                    std::mt19937_64(derive_seed(cfg.rng_seed, 3))};

    // Extended bits: H random warm-up bits on each side, trimmed after synthesis.
    const BitSequence lead = BitSequence::random(static_cast<std::size_t>(H), warmup_rng);
    const BitSequence trail = BitSequence::random(static_cast<std::size_t>(H), warmup_rng);
    std::vector<int> ext(ext_len);
    for (int j = 0; j < H; ++j) {
        ext[static_cast<std::size_t>(j)] = lead[static_cast<std::size_t>(j)];
        ext[N + static_cast<std::size_t>(H + j)] = trail[static_cast<std::size_t>(j)];
    }
    for (std::size_t n = 0; n < N; ++n) ext[n + static_cast<std::size_t>(H)] = u[n];

    // Transition k sits between extended bits k-1 and k; jitter is media-borne and shared by both readers.
    std::vector<double> dt(ext_len + 1), dw(ext_len + 1);
    const double w_bound = cfg.track_pitch > 0 ? 0.5 * cfg.track_pitch : 1.0;
    for (std::size_t k = 0; k <= ext_len; ++k) {
        dt[k] = sample_truncated_gaussian(cfg.jitter_sigma_t, 0.5 * T, jitter_rng);
        dw[k] = sample_truncated_gaussian(cfg.jitter_sigma_w, w_bound, jitter_rng);
    }

    ReadbackSector sector;
    sector.bits = u;
    sector.origin = SectorOrigin::Synthetic;
    sector.seed = cfg.rng_seed;

    for (int l = 0; l < 2; ++l) {
        const double w = cfg.reader_offsets[static_cast<std::size_t>(l)];
        std::vector<double> window(ext_len + 1);
        for (std::size_t k = 0; k <= ext_len; ++k) window[k] = crosstrack_window(w + dw[k], cfg);

        auto h = [&](std::size_t i, std::size_t k) {
            const double t = (static_cast<double>(i) - static_cast<double>(k)) * T + dt[k];
            return cfg.amplitude * downtrack_step(t, cfg) * window[k];
        };

        std::normal_distribution<double> awgn(0.0, cfg.awgn_sigma > 0 ? cfg.awgn_sigma : 1.0);
        auto& r = sector.adc[l];
        r.resize(N);
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t i = n + static_cast<std::size_t>(H);
            const std::size_t lo = i - static_cast<std::size_t>(H);
            const std::size_t hi = i + static_cast<std::size_t>(H);
            // sum_j e_j (h_j - h_{j+1}) over the support, regrouped by transitions
            double acc = ext[lo] * h(i, lo) - ext[hi] * h(i, hi + 1);
            for (std::size_t k = lo + 1; k <= hi; ++k) {
                const int diff = ext[k] - ext[k - 1];
                if (diff != 0) acc += diff * h(i, k);
            }
            double sample = 0.5 * acc;
            if (cfg.awgn_sigma > 0) sample += awgn(noise_rng[l]);
            r[n] = sample;
        }
    }
    return sector;
}

void save_dataset(const std::filesystem::path& path, std::span<const ReadbackSector> sectors) {
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot open " + path.string() + " for writing");
    out << "tdmr-sectors v1\n";
    for (std::size_t s = 0; s < sectors.size(); ++s) {
        const auto& sec = sectors[s];
        sec.validate();
        out << "sector " << s << ' ' << sec.size() << '\n';
        for (std::size_t n = 0; n < sec.size(); ++n) {
            out << sec.bits[n] << ' ' << format_g9(sec.adc[0][n]) << ' ' << format_g9(sec.adc[1][n]) << '\n';
        }
    }
    if (!out) throw DatasetError("write failed for " + path.string());
}

std::vector<ReadbackSector> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open dataset " + path.string());

    std::string line;
    if (!std::getline(in, line) || line != "tdmr-sectors v1") {
        throw DatasetError(path.string() + ": malformed header (expected 'tdmr-sectors v1')");
    }

    std::vector<ReadbackSector> sectors;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream head(line);
        std::string tag;
        long long index = -1, length = -1;
        if (!(head >> tag >> index >> length) || tag != "sector" || length < 1) {
            throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": malformed sector header '" +
                               line + "'");
        }
        const auto sector_name = "sector " + std::to_string(index);
        std::vector<int8_t> bits;
        ReadbackSector sec;
        bits.reserve(static_cast<std::size_t>(length));
        for (long long row = 0; row < length; ++row) {
            if (!std::getline(in, line)) {
                throw DatasetError(path.string() + ": " + sector_name + ": length mismatch, expected " +
                                   std::to_string(length) + " rows but file ended after " + std::to_string(row));
            }
            ++line_no;
            std::istringstream fields(line);
            int u = 0;
            double r0 = 0, r1 = 0;
            if (line.rfind("sector", 0) == 0) {
                throw DatasetError(path.string() + ": " + sector_name + ": length mismatch, header says " +
                                   std::to_string(length) + " rows, found " + std::to_string(row));
            }
            if (!(fields >> u)) {
                throw DatasetError(path.string() + ": " + sector_name + ": row " + std::to_string(row) +
                                   ": missing bit column");
            }
            if (u != 1 && u != -1) {
                throw DatasetError(path.string() + ": " + sector_name + ": row " + std::to_string(row) +
                                   ": bit must be +1 or -1");
            }
            if (!(fields >> r0 >> r1)) {
                throw DatasetError(path.string() + ": " + sector_name + ": row " + std::to_string(row) +
                                   ": length mismatch between bit and ADC columns");
            }
            bits.push_back(static_cast<int8_t>(u));
            sec.adc[0].push_back(r0);
            sec.adc[1].push_back(r1);
        }
        sec.bits = BitSequence(std::move(bits));
        sec.origin = SectorOrigin::Ingested;
        try {
            sec.validate();
        } catch (const std::invalid_argument& e) {
            throw DatasetError(path.string() + ": " + sector_name + ": " + e.what());
        }
        sectors.push_back(std::move(sec));
    }
    return sectors;
}

}  // namespace tdmr
