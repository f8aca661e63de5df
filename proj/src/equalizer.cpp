#include "tdmr/equalizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "tdmr/format.hpp"

namespace tdmr {

namespace {

struct ArchName {
    Arch arch;
    std::string_view name;
};

constexpr ArchName kArchNames[] = {
    {Arch::Linear2D, "Linear2D"}, {Arch::MLP, "MLP"},       {Arch::RBFNN, "RBFNN"},   {Arch::FIRRBFNN, "FIRRBFNN"},
    {Arch::RCMLP1, "RCMLP1"},     {Arch::RCMLP2, "RCMLP2"}, {Arch::RCMLP3, "RCMLP3"}, {Arch::RCMLP4, "RCMLP4"},
};

bool split_hidden(Arch a) { return a == Arch::RCMLP1 || a == Arch::RCMLP4; }
bool is_rcmlp(Arch a) { return a == Arch::RCMLP1 || a == Arch::RCMLP2 || a == Arch::RCMLP3 || a == Arch::RCMLP4; }

std::size_t usize(int v) { return static_cast<std::size_t>(v); }

ParameterSet::Shape shape_of(const EqualizerSpec& spec) {
    return {spec.arch, spec.M, spec.arch == Arch::Linear2D ? 0 : spec.K,
            spec.arch == Arch::FIRRBFNN ? spec.M_prime : 0};
}

// Hidden delay line geometry for RC-MLP: q taps consume h_{n - offset + j}, j < length.
struct DelayLine {
    int length;
    int offset;
};

DelayLine delay_line(const EqualizerSpec& spec) {
    if (split_hidden(spec.arch)) return {spec.K / 2, spec.K / 4};
    return {spec.K, spec.K / 2};
}

double basis_value(Basis b, double a) {
    switch (b) {
        case Basis::Gaussian: return std::exp(-a * a);
        case Basis::Tanh: return std::tanh(a);
        case Basis::Linear: return a;
    }
    return 0.0;
}

double basis_slope(Basis b, double a, double value) {
    switch (b) {
        case Basis::Gaussian: return -2.0 * a * value;
        case Basis::Tanh: return 1.0 - value * value;
        case Basis::Linear: return 1.0;
    }
    return 0.0;
}

// (f * r)_m with the filter centered on index `center` of r.
double fir_at(std::span<const double> f, std::span<const double> r, std::size_t center) {
    const std::size_t half = f.size() / 2;
    const double* x = r.data() + center - half;
    double acc = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) acc += f[j] * x[j];
    return acc;
}

void fir_grad(std::span<double> gf, std::span<const double> r, std::size_t center, double scale) {
    const std::size_t half = gf.size() / 2;
    const double* x = r.data() + center - half;
    for (std::size_t j = 0; j < gf.size(); ++j) gf[j] += scale * x[j];
}

double distance(std::span<const double> x, std::span<const double> c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - c[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Sum over readers and centroids of v * phi(||x_l - c_k|| + b_k); used by RBFNN and FIR-RBFNN.
double rbf_layer(const EqualizerSpec& spec, const ParameterSet& p, const std::span<const double> x[2]) {
    const std::size_t K = usize(spec.K);
    double y = 0.0;
    for (int l = 0; l < 2; ++l) {
        const auto c = p.block(l == 0 ? "c0" : "c1");
        const auto bc = p.block(l == 0 ? "bc0" : "bc1");
        const auto v = p.block(l == 0 ? "v0" : "v1");
        const std::size_t dim = x[l].size();
        for (std::size_t k = 0; k < K; ++k) {
            const double a = distance(x[l], c.subspan(k * dim, dim)) + bc[k];
            y += v[k] * basis_value(spec.basis, a);
        }
    }
    return y + p.block("bias")[0];
}

// Backward through the RBF layer; writes dy/dx_l into dx[l] when non-empty.
void rbf_layer_backward(const EqualizerSpec& spec, const ParameterSet& p, const std::span<const double> x[2],
                        double dJ, ParameterSet& g, std::span<double> dx[2]) {
    const std::size_t K = usize(spec.K);
    for (int l = 0; l < 2; ++l) {
        const char* cn = l == 0 ? "c0" : "c1";
        const char* bn = l == 0 ? "bc0" : "bc1";
        const char* vn = l == 0 ? "v0" : "v1";
        const auto c = p.block(cn);
        const auto bc = p.block(bn);
        const auto v = p.block(vn);
        auto gc = g.block(cn);
        auto gbc = g.block(bn);
        auto gv = g.block(vn);
        const std::size_t dim = x[l].size();
        for (std::size_t k = 0; k < K; ++k) {
            const auto ck = c.subspan(k * dim, dim);
            const double d = distance(x[l], ck);
            const double a = d + bc[k];
            const double phi = basis_value(spec.basis, a);
            gv[k] += dJ * phi;
            const double da = dJ * v[k] * basis_slope(spec.basis, a, phi);
            gbc[k] += da;
            if (d == 0.0) continue;  // subgradient 0 at the centroid
            for (std::size_t i = 0; i < dim; ++i) {
                const double dd = (x[l][i] - ck[i]) / d;
                gc[k * dim + i] -= da * dd;
                if (!dx[l].empty()) dx[l][i] += da * dd;
            }
        }
    }
    g.block("bias")[0] += dJ;
}

// Views into the RC-MLP parameter blocks.
struct RcView {
    std::span<const double> f[2];
    std::span<const double> b0;
    std::span<const double> q[2];
    double c = 0.0;
    double b1 = 0.0;
};

RcView rc_view(const EqualizerSpec& spec, const ParameterSet& p) {
    RcView v;
    v.f[0] = p.block("f0");
    v.f[1] = p.block("f1");
    v.b0 = p.block("b0");
    if (split_hidden(spec.arch)) {
        v.q[0] = p.block("q0");
        v.q[1] = p.block("q1");
    } else {
        v.q[0] = p.block("q");
    }
    if (spec.arch == Arch::RCMLP3 || spec.arch == Arch::RCMLP4) v.c = p.block("c")[0];
    v.b1 = p.block("b1")[0];
    return v;
}

// Pre-activation of hidden path `l` at absolute stream index `center`.
// Split variants keep one path per reader; joint variants sum both readers into path 0.
double rc_preactivation(const EqualizerSpec& spec, const RcView& v, const std::span<const double> r[2],
                        std::size_t center, int l) {
    if (split_hidden(spec.arch)) return fir_at(v.f[l], r[l], center) + v.b0[usize(l)];
    return fir_at(v.f[0], r[0], center) + fir_at(v.f[1], r[1], center) + v.b0[0];
}

// y_n from the hidden pre-activation streams z[l] (index n + d at z[l][zc + d]).
double rc_output(const EqualizerSpec& spec, const RcView& v, const std::span<const double> z[2], std::size_t zc) {
    const DelayLine dl = delay_line(spec);
    const int paths = split_hidden(spec.arch) ? 2 : 1;
    double y = 0.0;
    for (int l = 0; l < paths; ++l) {
        const double* zp = z[l].data() + zc - usize(dl.offset);
        for (int j = 0; j < dl.length; ++j) y += v.q[l][usize(j)] * std::tanh(zp[j]);
    }
    if (spec.arch == Arch::RCMLP3) y += v.c * z[0][zc];
    if (spec.arch == Arch::RCMLP4) y += v.c * (z[0][zc] + z[1][zc]);
    return y + v.b1;
}

void require_window(const EqualizerSpec& spec, const AdcWindow& w) {
    const auto len = usize(2 * context_halfwidth(spec) + 1);
    if (w.r0.size() != len || w.r1.size() != len) {
        throw std::invalid_argument("equalizer window length " + std::to_string(w.r0.size()) + "/" +
                                    std::to_string(w.r1.size()) + " does not match expected " + std::to_string(len));
    }
}

}  // namespace

std::string_view to_string(Arch arch) {
    for (const auto& a : kArchNames) {
        if (a.arch == arch) return a.name;
    }
    return "?";
}

std::string_view to_string(Basis basis) {
    switch (basis) {
        case Basis::Gaussian: return "gaussian";
        case Basis::Tanh: return "tanh";
        case Basis::Linear: return "linear";
    }
    return "?";
}

Arch parse_arch(std::string_view text) {
    for (const auto& a : kArchNames) {
        if (a.name == text) return a.arch;
    }
    throw std::invalid_argument("unknown architecture '" + std::string(text) + "'");
}

Basis parse_basis(std::string_view text) {
    if (text == "gaussian") return Basis::Gaussian;
    if (text == "tanh") return Basis::Tanh;
    if (text == "linear") return Basis::Linear;
    throw std::invalid_argument("unknown basis '" + std::string(text) + "'");
}

void EqualizerSpec::validate() const {
    if (M < 1) throw std::invalid_argument("equalizer: M must be >= 1");
    if (arch != Arch::Linear2D && K < 1) throw std::invalid_argument("equalizer: K must be >= 1");
    if (arch == Arch::FIRRBFNN && (M_prime < 1 || M_prime >= M)) {
        throw std::invalid_argument("equalizer: FIRRBFNN needs 1 <= M_prime < M");
    }
    if (split_hidden(arch) && K % 2 != 0) throw std::invalid_argument("equalizer: RCMLP1/RCMLP4 need even K");
}

int context_halfwidth(const EqualizerSpec& spec) {
    if (spec.arch == Arch::FIRRBFNN) return spec.M + spec.M_prime;
    if (is_rcmlp(spec.arch)) {
        const DelayLine dl = delay_line(spec);
        return spec.M + std::max(dl.offset, dl.length - 1 - dl.offset);
    }
    return spec.M;
}

void ParameterSet::add_block(std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), rows, cols, values_.size()});
    values_.resize(values_.size() + rows * cols, 0.0);
}

ParameterSet ParameterSet::zeros(const EqualizerSpec& spec) {
    spec.validate();
    ParameterSet p;
    p.shape_ = shape_of(spec);
    const std::size_t taps = usize(2 * spec.M + 1);
    const std::size_t K = usize(spec.K);
    switch (spec.arch) {
        case Arch::Linear2D:
            p.add_block("f0", 1, taps);
            p.add_block("f1", 1, taps);
            break;
        case Arch::MLP:
            p.add_block("W", 2 * taps, K);
            p.add_block("b0", 1, K);
            p.add_block("v", 1, K);
            p.add_block("b1", 1, 1);
            break;
        case Arch::RBFNN:
        case Arch::FIRRBFNN: {
            std::size_t dim = taps;
            if (spec.arch == Arch::FIRRBFNN) {
                p.add_block("f0", 1, taps);
                p.add_block("f1", 1, taps);
                dim = usize(2 * spec.M_prime + 1);
            }
            p.add_block("c0", K, dim);
            p.add_block("c1", K, dim);
            p.add_block("bc0", 1, K);
            p.add_block("bc1", 1, K);
            p.add_block("v0", 1, K);
            p.add_block("v1", 1, K);
            p.add_block("bias", 1, 1);
            break;
        }
        case Arch::RCMLP1:
        case Arch::RCMLP2:
        case Arch::RCMLP3:
        case Arch::RCMLP4: {
            p.add_block("f0", 1, taps);
            p.add_block("f1", 1, taps);
            p.add_block("b0", 1, split_hidden(spec.arch) ? 2 : 1);
            if (split_hidden(spec.arch)) {
                p.add_block("q0", 1, K / 2);
                p.add_block("q1", 1, K / 2);
            } else {
                p.add_block("q", 1, K);
            }
            if (spec.arch == Arch::RCMLP3 || spec.arch == Arch::RCMLP4) p.add_block("c", 1, 1);
            p.add_block("b1", 1, 1);
            break;
        }
    }
    return p;
}

const ParameterSet::Block& ParameterSet::block_info(std::string_view name) const {
    for (const auto& b : blocks_) {
        if (b.name == name) return b;
    }
    throw std::invalid_argument("no parameter block '" + std::string(name) + "'");
}

std::span<double> ParameterSet::block(std::string_view name) {
    const auto& b = block_info(name);
    return std::span(values_).subspan(b.offset, b.size());
}

std::span<const double> ParameterSet::block(std::string_view name) const {
    const auto& b = block_info(name);
    return std::span(values_).subspan(b.offset, b.size());
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
    if (blocks_.size() != other.blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& a = blocks_[i];
        const auto& b = other.blocks_[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
}

void ParameterSet::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

void ParameterSet::axpy(double scale, const ParameterSet& other) {
    if (!same_layout(other)) throw std::invalid_argument("axpy: parameter layouts differ");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

std::size_t count_params(const EqualizerSpec& spec) {
    spec.validate();
    const std::size_t M = usize(spec.M);
    const std::size_t K = usize(spec.K);
    switch (spec.arch) {
        case Arch::Linear2D: return 2 * (2 * M + 1);
        case Arch::MLP: return 4 * M * K + 4 * K + 1;
        case Arch::RBFNN: return 2 * K * (2 * M + 1) + 4 * K + 1;
        case Arch::FIRRBFNN: return 2 * (2 * M + 1) + 2 * K * (2 * usize(spec.M_prime) + 1) + 4 * K + 1;
        case Arch::RCMLP1: return 4 * M + K + 5;
        case Arch::RCMLP2: return 4 * M + K + 4;
        case Arch::RCMLP3: return 4 * M + K + 5;
        case Arch::RCMLP4: return 4 * M + K + 6;
    }
    return 0;
}

void check_dimensions(const EqualizerSpec& spec, const ParameterSet& params) {
    if (!(params.shape() == shape_of(spec))) {
        throw std::invalid_argument("parameter set does not match the " + std::string(to_string(spec.arch)) +
                                    " layout");
    }
}

double forward(const EqualizerSpec& spec, const ParameterSet& p, const AdcWindow& window) {
    check_dimensions(spec, p);
    require_window(spec, window);
    const std::span<const double> r[2] = {window.r0, window.r1};
    const std::size_t H = usize(context_halfwidth(spec));
    const std::size_t M = usize(spec.M);

    switch (spec.arch) {
        case Arch::Linear2D: return fir_at(p.block("f0"), r[0], H) + fir_at(p.block("f1"), r[1], H);
        case Arch::MLP: {
            const std::size_t K = usize(spec.K);
            const auto W = p.block("W");
            const auto b0 = p.block("b0");
            const auto v = p.block("v");
            double y = 0.0;
            for (std::size_t j = 0; j < K; ++j) {
                double a = 0.0;
                std::size_t i = 0;
                for (int l = 0; l < 2; ++l) {
                    for (std::size_t t = 0; t < 2 * M + 1; ++t, ++i) a += W[i * K + j] * r[l][H - M + t];
                }
                y += v[j] * std::tanh(a + b0[j]);
            }
            return y + p.block("b1")[0];
        }
        case Arch::RBFNN: {
            const std::span<const double> x[2] = {r[0].subspan(H - M, 2 * M + 1), r[1].subspan(H - M, 2 * M + 1)};
            return rbf_layer(spec, p, x);
        }
        case Arch::FIRRBFNN: {
            const std::size_t Mp = usize(spec.M_prime);
            std::vector<double> z[2];
            for (int l = 0; l < 2; ++l) {
                z[l].resize(2 * Mp + 1);
                for (std::size_t m = 0; m < 2 * Mp + 1; ++m) {
                    z[l][m] = fir_at(p.block(l == 0 ? "f0" : "f1"), r[l], H - Mp + m);
                }
            }
            const std::span<const double> x[2] = {z[0], z[1]};
            return rbf_layer(spec, p, x);
        }
        default: {
            const RcView v = rc_view(spec, p);
            const DelayLine dl = delay_line(spec);
            const int paths = split_hidden(spec.arch) ? 2 : 1;
            std::vector<double> z[2];
            for (int l = 0; l < paths; ++l) {
                z[l].resize(usize(dl.length));
                for (int j = 0; j < dl.length; ++j) {
                    z[l][usize(j)] = rc_preactivation(spec, v, r, H - usize(dl.offset) + usize(j), l);
                }
            }
            const std::span<const double> zs[2] = {z[0], z[1]};
            return rc_output(spec, v, zs, usize(dl.offset));
        }
    }
}

void backward(const EqualizerSpec& spec, const ParameterSet& p, const AdcWindow& window, double dJ,
              ParameterSet& g) {
    check_dimensions(spec, p);
    check_dimensions(spec, g);
    require_window(spec, window);
    const std::span<const double> r[2] = {window.r0, window.r1};
    const std::size_t H = usize(context_halfwidth(spec));
    const std::size_t M = usize(spec.M);

    switch (spec.arch) {
        case Arch::Linear2D:
            fir_grad(g.block("f0"), r[0], H, dJ);
            fir_grad(g.block("f1"), r[1], H, dJ);
            return;
        case Arch::MLP: {
            const std::size_t K = usize(spec.K);
            const auto W = p.block("W");
            const auto b0 = p.block("b0");
            const auto v = p.block("v");
            auto gW = g.block("W");
            auto gb0 = g.block("b0");
            auto gv = g.block("v");
            for (std::size_t j = 0; j < K; ++j) {
                double a = 0.0;
                std::size_t i = 0;
                for (int l = 0; l < 2; ++l) {
                    for (std::size_t t = 0; t < 2 * M + 1; ++t, ++i) a += W[i * K + j] * r[l][H - M + t];
                }
                const double h = std::tanh(a + b0[j]);
                gv[j] += dJ * h;
                const double da = dJ * v[j] * (1.0 - h * h);
                gb0[j] += da;
                i = 0;
                for (int l = 0; l < 2; ++l) {
                    for (std::size_t t = 0; t < 2 * M + 1; ++t, ++i) gW[i * K + j] += da * r[l][H - M + t];
                }
            }
            g.block("b1")[0] += dJ;
            return;
        }
        case Arch::RBFNN: {
            const std::span<const double> x[2] = {r[0].subspan(H - M, 2 * M + 1), r[1].subspan(H - M, 2 * M + 1)};
            std::span<double> none[2];
            rbf_layer_backward(spec, p, x, dJ, g, none);
            return;
        }
        case Arch::FIRRBFNN: {
            const std::size_t Mp = usize(spec.M_prime);
            std::vector<double> z[2], dz[2];
            for (int l = 0; l < 2; ++l) {
                z[l].resize(2 * Mp + 1);
                dz[l].assign(2 * Mp + 1, 0.0);
                for (std::size_t m = 0; m < 2 * Mp + 1; ++m) {
                    z[l][m] = fir_at(p.block(l == 0 ? "f0" : "f1"), r[l], H - Mp + m);
                }
            }
            const std::span<const double> x[2] = {z[0], z[1]};
            std::span<double> dx[2] = {dz[0], dz[1]};
            rbf_layer_backward(spec, p, x, dJ, g, dx);
            for (int l = 0; l < 2; ++l) {
                auto gf = g.block(l == 0 ? "f0" : "f1");
                for (std::size_t m = 0; m < 2 * Mp + 1; ++m) fir_grad(gf, r[l], H - Mp + m, dz[l][m]);
            }
            return;
        }
        default: {
            const RcView v = rc_view(spec, p);
            const DelayLine dl = delay_line(spec);
            const bool split = split_hidden(spec.arch);
            const int paths = split ? 2 : 1;
            const bool linear_bypass = spec.arch == Arch::RCMLP3 || spec.arch == Arch::RCMLP4;
            auto gb0 = g.block("b0");
            for (int l = 0; l < paths; ++l) {
                auto gq = g.block(split ? (l == 0 ? "q0" : "q1") : "q");
                for (int j = 0; j < dl.length; ++j) {
                    const std::size_t center = H - usize(dl.offset) + usize(j);
                    const double z = rc_preactivation(spec, v, r, center, l);
                    const double h = std::tanh(z);
                    gq[usize(j)] += dJ * h;
                    double dz = dJ * v.q[l][usize(j)] * (1.0 - h * h);
                    if (linear_bypass && j == dl.offset) dz += dJ * v.c;
                    if (split) {
                        gb0[usize(l)] += dz;
                        fir_grad(g.block(l == 0 ? "f0" : "f1"), r[l], center, dz);
                    } else {
                        gb0[0] += dz;
                        fir_grad(g.block("f0"), r[0], center, dz);
                        fir_grad(g.block("f1"), r[1], center, dz);
                    }
                }
            }
            if (linear_bypass) {
                double lin = 0.0;
                for (int l = 0; l < paths; ++l) lin += rc_preactivation(spec, v, r, H, l);
                g.block("c")[0] += dJ * lin;
            }
            g.block("b1")[0] += dJ;
            return;
        }
    }
}

PaddedSector::PaddedSector(const ReadbackSector& sector, int halfwidth)
    : length_(sector.size()), halfwidth_(halfwidth) {
    if (halfwidth < 0) throw std::invalid_argument("PaddedSector: negative half-width");
    for (int l = 0; l < 2; ++l) {
        if (sector.adc[l].size() != length_) throw std::invalid_argument("PaddedSector: ADC length mismatch");
        streams_[l].assign(length_ + 2 * usize(halfwidth), 0.0);
        std::copy(sector.adc[l].begin(), sector.adc[l].end(), streams_[l].begin() + halfwidth);
    }
}

AdcWindow PaddedSector::window(std::size_t n) const {
    if (n >= length_) throw std::out_of_range("PaddedSector::window");
    const std::size_t len = 2 * usize(halfwidth_) + 1;
    return {std::span(streams_[0]).subspan(n, len), std::span(streams_[1]).subspan(n, len)};
}

std::vector<double> equalize_stream(const EqualizerSpec& spec, const ParameterSet& p, const PaddedSector& padded,
                                    std::size_t begin, std::size_t end) {
    check_dimensions(spec, p);
    const int H = context_halfwidth(spec);
    if (padded.halfwidth() < H) throw std::invalid_argument("equalize_stream: padding narrower than context");
    if (begin > end || end > padded.size()) throw std::out_of_range("equalize_stream: range");
    std::vector<double> y(end - begin);
    const std::size_t pad = usize(padded.halfwidth());
    const std::span<const double> r[2] = {padded.stream(0), padded.stream(1)};

    if (spec.arch == Arch::MLP || spec.arch == Arch::RBFNN || spec.arch == Arch::Linear2D) {
        // no intermediate stream to share; evaluate on sliding windows
        const std::size_t len = usize(2 * H + 1);
        const std::size_t shift = pad - usize(H);
        for (std::size_t n = begin; n < end; ++n) {
            const AdcWindow w{r[0].subspan(n + shift, len), r[1].subspan(n + shift, len)};
            y[n - begin] = forward(spec, p, w);
        }
        return y;
    }

    if (spec.arch == Arch::FIRRBFNN) {
        const std::size_t Mp = usize(spec.M_prime);
        // filtered streams over [begin - M', end + M')
        const std::size_t span_len = end - begin + 2 * Mp;
        std::vector<double> z[2];
        for (int l = 0; l < 2; ++l) {
            const auto f = p.block(l == 0 ? "f0" : "f1");
            z[l].resize(span_len);
            for (std::size_t m = 0; m < span_len; ++m) z[l][m] = fir_at(f, r[l], begin + pad - Mp + m);
        }
        for (std::size_t n = begin; n < end; ++n) {
            const std::span<const double> x[2] = {std::span(z[0]).subspan(n - begin, 2 * Mp + 1),
                                                  std::span(z[1]).subspan(n - begin, 2 * Mp + 1)};
            y[n - begin] = rbf_layer(spec, p, x);
        }
        return y;
    }

    const RcView v = rc_view(spec, p);
    const DelayLine dl = delay_line(spec);
    const int paths = split_hidden(spec.arch) ? 2 : 1;
    const std::size_t left = usize(dl.offset);
    const std::size_t right = usize(dl.length - 1 - dl.offset);
    const std::size_t span_len = end - begin + left + right;
    std::vector<double> z[2];
    for (int l = 0; l < paths; ++l) {
        z[l].resize(span_len);
        for (std::size_t m = 0; m < span_len; ++m) z[l][m] = rc_preactivation(spec, v, r, begin + pad - left + m, l);
    }
    const std::span<const double> zs[2] = {z[0], z[1]};
    for (std::size_t n = begin; n < end; ++n) y[n - begin] = rc_output(spec, v, zs, n - begin + left);
    return y;
}

namespace {

// Lloyd iterations from a random subset of the points.
std::vector<double> kmeans(const std::vector<double>& points, std::size_t dim, std::size_t k, int iterations,
                           std::mt19937_64& rng) {
    const std::size_t n = points.size() / dim;
    std::vector<double> centers(k * dim, 0.0);
    if (n == 0) return centers;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(order[c % n] * dim), dim,
                    centers.begin() + static_cast<std::ptrdiff_t>(c * dim));
    }
    std::vector<std::size_t> assign(n, 0);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                double d = 0.0;
                for (std::size_t t = 0; t < dim; ++t) {
                    const double e = points[i * dim + t] - centers[c * dim + t];
                    d += e * e;
                }
                if (d < best) {
                    best = d;
                    assign[i] = c;
                }
            }
        }
        std::vector<double> sum(k * dim, 0.0);
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++count[assign[i]];
            for (std::size_t t = 0; t < dim; ++t) sum[assign[i] * dim + t] += points[i * dim + t];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] == 0) continue;
            for (std::size_t t = 0; t < dim; ++t) centers[c * dim + t] = sum[c * dim + t] / static_cast<double>(count[c]);
        }
    }
    return centers;
}

void init_front(const EqualizerSpec& spec, const InitOptions& opt, ParameterSet& p, double scale) {
    for (int l = 0; l < 2; ++l) {
        auto f = p.block(l == 0 ? "f0" : "f1");
        if (opt.linear_taps[l].size() == f.size()) {
            for (std::size_t j = 0; j < f.size(); ++j) f[j] = scale * opt.linear_taps[l][j];
        } else {
            std::fill(f.begin(), f.end(), 0.0);
            f[usize(spec.M)] = 0.5 * scale;
        }
    }
}

bool has_linear_taps(const EqualizerSpec& spec, const InitOptions& opt) {
    const auto taps = usize(2 * spec.M + 1);
    return opt.linear_taps[0].size() == taps && opt.linear_taps[1].size() == taps;
}

}  // namespace

ParameterSet initialize(const EqualizerSpec& spec, const InitOptions& opt) {
    ParameterSet p = ParameterSet::zeros(spec);
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> small(-0.05, 0.05);
    const bool warm = has_linear_taps(spec, opt);
    // Scale for embedding a linear solution in a tanh unit operating near its linear region.
    constexpr double kEmbed = 0.3;

    switch (spec.arch) {
        case Arch::Linear2D: init_front(spec, opt, p, 1.0); break;
        case Arch::MLP: {
            const std::size_t K = usize(spec.K);
            const std::size_t fan_in = usize(4 * spec.M + 2);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> wdist(-bound, bound);
            auto W = p.block("W");
            for (auto& w : W) w = wdist(rng);
            auto v = p.block("v");
            for (auto& x : v) x = small(rng);
            if (warm) {
                // unit 0 carries the linear solution; the others see it shifted by -1, +1, -2, +2, ...
                const int taps = 2 * spec.M + 1;
                for (std::size_t k = 0; k < K; ++k) {
                    const int shift = k == 0 ? 0 : (k % 2 == 1 ? -1 : 1) * static_cast<int>((k + 1) / 2);
                    const double scale = k == 0 ? kEmbed : 1.0;
                    for (int l = 0; l < 2; ++l) {
                        for (int m = 0; m < taps; ++m) {
                            const int src = m - shift;
                            const double tap = src >= 0 && src < taps ? opt.linear_taps[l][usize(src)] : 0.0;
                            W[usize(l * taps + m) * K + k] = scale * tap;
                        }
                    }
                }
                v[0] = 1.0 / kEmbed;
            }
            break;
        }
        case Arch::RBFNN:
        case Arch::FIRRBFNN: {
            const bool fir = spec.arch == Arch::FIRRBFNN;
            if (fir) init_front(spec, opt, p, 1.0);
            const std::size_t dim = usize(fir ? 2 * spec.M_prime + 1 : 2 * spec.M + 1);
            for (int l = 0; l < 2; ++l) {
                std::vector<double> pts;
                for (const auto& sec : opt.data) {
                    const int H = context_halfwidth(spec);
                    PaddedSector padded(sec, H);
                    const std::size_t step = std::max<std::size_t>(1, sec.size() * opt.data.size() / opt.kmeans_samples);
                    for (std::size_t n = 0; n < sec.size(); n += step) {
                        const auto w = padded.window(n);
                        const auto r = l == 0 ? w.r0 : w.r1;
                        for (std::size_t m = 0; m < dim; ++m) {
                            if (fir) {
                                pts.push_back(fir_at(p.block(l == 0 ? "f0" : "f1"), r, usize(H) - usize(spec.M_prime) + m));
                            } else {
                                pts.push_back(r[usize(H) - usize(spec.M) + m]);
                            }
                        }
                    }
                }
                auto c = p.block(l == 0 ? "c0" : "c1");
                if (pts.empty()) {
                    std::normal_distribution<double> nd(0.0, 0.5);
                    for (auto& x : c) x = nd(rng);
                } else {
                    const auto centers = kmeans(pts, dim, usize(spec.K), opt.kmeans_iterations, rng);
                    std::copy(centers.begin(), centers.end(), c.begin());
                }
                for (auto& x : p.block(l == 0 ? "v0" : "v1")) x = small(rng);
            }
            break;
        }
        case Arch::RCMLP1:
        case Arch::RCMLP2: {
            // tanh path carries the linear solution at small scale and q undoes the scale
            init_front(spec, opt, p, warm ? kEmbed : 1.0);
            const DelayLine dl = delay_line(spec);
            for (const char* name : {"q0", "q1", "q"}) {
                bool present = false;
                for (const auto& b : p.blocks()) present = present || b.name == name;
                if (!present) continue;
                auto q = p.block(name);
                for (auto& x : q) x = small(rng);
                q[usize(dl.offset)] = warm ? 1.0 / kEmbed : 1.0;
            }
            break;
        }
        case Arch::RCMLP3:
        case Arch::RCMLP4: {
            init_front(spec, opt, p, 1.0);
            for (const char* name : {"q0", "q1", "q"}) {
                bool present = false;
                for (const auto& b : p.blocks()) present = present || b.name == name;
                if (!present) continue;
                for (auto& x : p.block(name)) x = small(rng);
            }
            p.block("c")[0] = 1.0;
            break;
        }
    }
    return p;
}

void save_model(const std::filesystem::path& path, const EqualizerModel& model, std::string_view config_hash) {
    check_dimensions(model.spec, model.params);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "tdmr-eq-model v1\n";
    if (!config_hash.empty()) out << "config_hash=" << config_hash << '\n';
    out << "arch=" << to_string(model.spec.arch) << '\n';
    out << "M=" << model.spec.M << '\n';
    out << "K=" << model.spec.K << '\n';
    out << "M_prime=" << model.spec.M_prime << '\n';
    out << "basis=" << to_string(model.spec.basis) << '\n';
    out << "activation=tanh\n";
    out << "noise_var=" << format_g9(model.noise_var) << '\n';
    for (const auto& b : model.params.blocks()) {
        out << "block " << b.name << ' ' << b.rows << ' ' << b.cols << '\n';
        const auto vals = model.params.block(b.name);
        for (std::size_t i = 0; i < b.rows; ++i) {
            for (std::size_t j = 0; j < b.cols; ++j) out << (j ? " " : "") << format_g9(vals[i * b.cols + j]);
            out << '\n';
        }
    }
    if (!model.target.taps.empty()) {
        out << "target " << model.target.taps.size() << ' ' << (model.target.monic ? 1 : 0) << '\n';
        for (std::size_t j = 0; j < model.target.taps.size(); ++j) {
            out << (j ? " " : "") << format_g9(model.target.taps[j]);
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

EqualizerModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "tdmr-eq-model v1") {
        throw IoError(path.string() + ": malformed model header");
    }
    EqualizerModel model;
    bool have_params = false;
    auto fail = [&](const std::string& what) { throw IoError(path.string() + ": " + what); };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("block ", 0) == 0 || line.rfind("target ", 0) == 0) {
            if (!have_params) {
                model.params = ParameterSet::zeros(model.spec);
                have_params = true;
            }
            std::istringstream head(line);
            std::string tag, name;
            std::size_t rows = 0, cols = 0;
            if (line.rfind("target ", 0) == 0) {
                int monic = 0;
                std::size_t len = 0;
                if (!(head >> tag >> len >> monic) || len == 0) fail("malformed target header");
                model.target.taps.resize(len);
                for (auto& g : model.target.taps) {
                    if (!(in >> g)) fail("truncated target block");
                }
                model.target.monic = monic != 0;
                model.target.validate();
                continue;
            }
            if (!(head >> tag >> name >> rows >> cols)) fail("malformed block header '" + line + "'");
            const auto& info = model.params.block_info(name);
            if (info.rows != rows || info.cols != cols) fail("block " + name + " has wrong dimensions");
            auto vals = model.params.block(name);
            for (auto& x : vals) {
                if (!(in >> x)) fail("truncated block " + name);
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("unexpected line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (have_params) fail("spec key after parameter blocks: " + key);
        if (key == "arch") model.spec.arch = parse_arch(value);
        else if (key == "M") model.spec.M = std::stoi(value);
        else if (key == "K") model.spec.K = std::stoi(value);
        else if (key == "M_prime") model.spec.M_prime = std::stoi(value);
        else if (key == "basis") model.spec.basis = parse_basis(value);
        else if (key == "activation") {
            if (value != "tanh") fail("unsupported activation " + value);
        } else if (key == "noise_var") model.noise_var = std::stod(value);
        else if (key == "config_hash") {
        } else fail("unknown key " + key);
    }
    if (!have_params) model.params = ParameterSet::zeros(model.spec);
    return model;
}

}  // namespace tdmr
