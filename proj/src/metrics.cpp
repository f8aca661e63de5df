#include "tdmr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include <boost/math/special_functions/digamma.hpp>

#include "tdmr/format.hpp"
#include "tdmr/kernels.hpp"
#include "tdmr/training.hpp"

namespace tdmr {

double ber(const BitSequence& estimated, const BitSequence& truth) {
    if (estimated.size() != truth.size()) throw std::invalid_argument("ber: length mismatch");
    if (truth.empty()) throw std::invalid_argument("ber: empty input");
    std::size_t errors = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) errors += estimated[i] != truth[i];
    return static_cast<double>(errors) / static_cast<double>(truth.size());
}

namespace {

double psi(double x) { return boost::math::digamma(x); }

// Distance from sorted[p] to its k-th nearest neighbor in `sorted`.
double kth_neighbor_distance(const std::vector<double>& sorted, std::size_t p, int k) {
    std::size_t lo = p, hi = p;
    double d = 0.0;
    for (int step = 0; step < k; ++step) {
        const double left = lo > 0 ? sorted[p] - sorted[lo - 1] : std::numeric_limits<double>::infinity();
        const double right = hi + 1 < sorted.size() ? sorted[hi + 1] - sorted[p] : std::numeric_limits<double>::infinity();
        if (left <= right) {
            d = left;
            --lo;
        } else {
            d = right;
            ++hi;
        }
    }
    return d;
}

// Points of `sorted` within distance d of x, x itself included.
std::size_t count_within(const std::vector<double>& sorted, double x, double d) {
    auto first = std::partition_point(sorted.begin(), sorted.end(), [&](double v) { return v < x && x - v > d; });
    auto last = std::partition_point(first, sorted.end(), [&](double v) { return v <= x || v - x <= d; });
    return static_cast<std::size_t>(last - first);
}

}  // namespace

MiEstimate mutual_information(std::span<const double> llr, const BitSequence& u, int k, uint64_t jitter_seed) {
    if (llr.size() != u.size()) throw std::invalid_argument("mutual_information: length mismatch");
    if (k < 1) throw std::invalid_argument("mutual_information: k must be >= 1");
    if (llr.size() < 10 * static_cast<std::size_t>(k)) {
        throw std::invalid_argument("mutual_information: need at least 10*k samples");
    }
    MiEstimate est;
    const auto [mn, mx] = std::minmax_element(llr.begin(), llr.end());
    if (*mn == *mx) {
        est.degenerate = true;
        est.diagnostic = "all LLR values identical; mutual information defined as 0";
        return est;
    }
    for (double v : llr) {
        if (!std::isfinite(v)) throw std::invalid_argument("mutual_information: non-finite LLR");
    }

    const double scale = 1e-12 * std::max(1.0, std::max(std::abs(*mn), std::abs(*mx)));
    std::mt19937_64 rng(jitter_seed);
    std::uniform_real_distribution<double> jitter(-scale, scale);
    std::vector<double> x(llr.begin(), llr.end());
    for (double& v : x) v += jitter(rng);

    std::vector<double> cls[2];
    for (std::size_t i = 0; i < x.size(); ++i) cls[u[i] > 0 ? 0 : 1].push_back(x[i]);
    if (cls[0].size() < 2 || cls[1].size() < 2) {
        est.degenerate = true;
        est.diagnostic = "a label class has fewer than two samples; mutual information defined as 0";
        return est;
    }
    std::vector<double> all = x;
    std::sort(all.begin(), all.end());

    double sum_psi_nc = 0.0, sum_psi_k = 0.0, sum_psi_m = 0.0;
    for (auto& c : cls) {
        std::sort(c.begin(), c.end());
        const int kc = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(k), c.size() - 1));
        const double psi_nc = psi(static_cast<double>(c.size()));
        const double psi_k = psi(kc);
        for (std::size_t p = 0; p < c.size(); ++p) {
            const double d = kth_neighbor_distance(c, p, kc);
            const std::size_t m = count_within(all, c[p], d) - 1;
            sum_psi_m += psi(static_cast<double>(std::max<std::size_t>(m, 1)));
            sum_psi_nc += psi_nc;
            sum_psi_k += psi_k;
        }
    }
    const double N = static_cast<double>(x.size());
    est.raw_nats = psi(N) + (sum_psi_k - sum_psi_nc - sum_psi_m) / N;
    est.clamped = est.raw_nats < 0.0;
    est.nats = std::max(0.0, est.raw_nats);
    return est;
}

EvaluationOutput evaluate(const EqualizerModel& model, std::span<const ReadbackSector> dataset, bool parallel) {
    model.spec.validate();
    model.target.validate();
    check_dimensions(model.spec, model.params);
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");

    const auto detections =
        parallel ? kernels::parallel::detect(model, dataset) : kernels::serial::detect(model, dataset);
    const std::size_t guard = sector_guard(model.spec, model.target.length());

    EvaluationOutput out;
    MetricsReport& r = out.report;
    r.arch = std::string(to_string(model.spec.arch));
    r.param_count = count_params(model.spec);
    std::size_t sign_errors = 0;
    double ce = 0.0;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
        const auto& sector = dataset[s];
        const auto& det = detections[s];
        const std::size_t len = sector.size();
        if (len < 2 * guard + 1) continue;
        for (std::size_t n = guard; n < len - guard; ++n) {
            const int u = sector.bits[n];
            const double l = det.soft.llr[n - det.first];
            r.bit_errors += det.soft.hard[n - det.first] != u;
            sign_errors += u * l <= 0.0;
            ce += ce_pointwise(u, l);
            out.llr.push_back(l);
            out.bits.push_back(static_cast<int8_t>(u));
        }
    }
    r.bit_count = out.llr.size();
    if (r.bit_count == 0) throw std::invalid_argument("evaluate: sectors too short for the detector guard");
    const double n = static_cast<double>(r.bit_count);
    r.ber = static_cast<double>(r.bit_errors) / n;
    r.loss = ce / n;
    r.sign_error_fraction = static_cast<double>(sign_errors) / n;
    if (r.bit_count >= 30) {
        const MiEstimate mi = mutual_information(out.llr, BitSequence(out.bits));
        r.mi_nats = mi.nats;
        r.mi_raw_nats = mi.raw_nats;
        r.mi_bits = mi.bits();
    }
    return out;
}

void write_report_csv(const std::filesystem::path& path, const ReportFile& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path.string());
    if (!report.config_hash.empty()) out << "# config_hash=" << report.config_hash << "\n";
    out << kReportHeader << "\n";
    for (const auto& row : report.rows) {
        out << csv_escape(row.arch) << ',' << csv_escape(row.K) << ',' << format_g9(row.ber) << ',' << row.complexity
            << ',' << format_g9(row.mi_bits) << ',' << format_g9(row.loss) << "\n";
    }
    if (!out) throw IoError("error writing report: " + path.string());
}

ReportFile read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read report: " + path.string());
    ReportFile report;
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line.starts_with("#")) {
            const std::string key = "# config_hash=";
            if (line.starts_with(key)) report.config_hash = line.substr(key.size());
            continue;
        }
        if (!header) {
            if (line != kReportHeader) throw IoError(path.string() + ": unexpected header '" + line + "'");
            header = true;
            continue;
        }
        const auto f = csv_split(line);
        if (f.size() != 6) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 6 fields");
        try {
            report.rows.push_back({f[0], f[1], std::stod(f[2]), std::stoull(f[3]), std::stod(f[4]), std::stod(f[5])});
        } catch (const std::logic_error&) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
        }
    }
    if (!header) throw IoError(path.string() + ": missing header");
    return report;
}

}  // namespace tdmr
