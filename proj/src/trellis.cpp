#include "tdmr/trellis.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tdmr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int input_bit(int input_index) { return input_index == 0 ? 1 : -1; }

// Branches usable at time 0. With a replicated history only the all-(+1) state
// may emit +1 and only the all-(-1) state may emit -1.
struct StartRule {
    bool replicated;
    std::size_t last_state;

    bool allowed(std::size_t t, std::size_t s, int input_index) const {
        if (!replicated || t != 0 || last_state == 0) return true;
        return input_index == 0 ? s == 0 : s == last_state;
    }
};

void init_alpha(std::span<double> alpha0, const Trellis& trellis, StartCondition start) {
    std::fill(alpha0.begin(), alpha0.end(), kInf);
    if (start.known_state) {
        if (*start.known_state >= trellis.num_states()) throw std::invalid_argument("start state out of range");
        alpha0[*start.known_state] = 0.0;
    } else {
        alpha0[0] = 0.0;
        alpha0[trellis.num_states() - 1] = 0.0;
    }
}

void normalize(std::span<double> metrics) {
    double lo = kInf;
    for (double m : metrics) lo = std::min(lo, m);
    if (!std::isfinite(lo)) return;
    for (double& m : metrics) m -= lo;
}

// Min-sum forward recursion shared by the hard and soft detectors.
void forward_pass(std::span<const double> y, const Trellis& trellis, StartCondition start, std::vector<double>& alpha,
                  std::vector<uint32_t>& pred, std::vector<int8_t>& input) {
    const std::size_t N = y.size();
    const std::size_t S = trellis.num_states();
    const StartRule rule{!start.known_state.has_value(), S - 1};
    alpha.assign((N + 1) * S, kInf);
    pred.assign((N + 1) * S, 0);
    input.assign((N + 1) * S, 0);
    init_alpha(std::span(alpha).subspan(0, S), trellis, start);

    for (std::size_t t = 0; t < N; ++t) {
        const double* a = &alpha[t * S];
        double* next = &alpha[(t + 1) * S];
        uint32_t* p_out = &pred[(t + 1) * S];
        int8_t* in_out = &input[(t + 1) * S];
        for (std::size_t s = 0; s < S; ++s) {
            // ordered candidates: +1 input first, then ascending predecessor
            double best = kInf;
            uint32_t best_pred = 0;
            int8_t best_in = 0;
            auto consider = [&](uint32_t p, int i) {
                if (!rule.allowed(t, p, i) || a[p] == kInf) return;
                const double e = y[t] - trellis.branch(p, i).label;
                const double m = a[p] + e * e;
                if (m < best) {
                    best = m;
                    best_pred = p;
                    best_in = static_cast<int8_t>(i);
                }
            };
            if (trellis.memory() == 0) {
                consider(0, 0);
                consider(0, 1);
            } else {
                const int i = trellis.entering_input(s);
                for (uint32_t p : trellis.predecessors(s)) consider(p, i);
            }
            next[s] = best;
            p_out[s] = best_pred;
            in_out[s] = best_in;
        }
        normalize(std::span(next, S));
    }
}

}  // namespace

void PRTarget::validate() const {
    if (taps.empty()) throw std::invalid_argument("PR target needs at least one tap");
    if (taps.size() > 16) throw std::invalid_argument("PR target longer than 16 taps");
    for (double g : taps) {
        if (!std::isfinite(g)) throw std::invalid_argument("PR target tap is not finite");
    }
    if (monic && taps[0] != 1.0) throw std::invalid_argument("monic PR target must have taps[0] == 1");
}

Trellis::Trellis(const PRTarget& target) : target_(target) {
    target_.validate();
    memory_ = target_.taps.size() - 1;
    num_states_ = std::size_t{1} << memory_;
    branches_.resize(2 * num_states_);
    for (std::size_t s = 0; s < num_states_; ++s) {
        for (int i = 0; i < 2; ++i) {
            double label = 0.0;
            for (std::size_t j = 0; j <= memory_; ++j) label += target_.taps[j] * window_bit(s, i, j);
            const auto next = memory_ == 0 ? 0u : static_cast<uint32_t>(((s << 1) | static_cast<std::size_t>(i)) & (num_states_ - 1));
            branches_[2 * s + static_cast<std::size_t>(i)] = {next, label};
        }
    }
}

int Trellis::window_bit(std::size_t state, int input_index, std::size_t j) const {
    if (j == 0) return input_bit(input_index);
    return ((state >> (j - 1)) & 1u) ? -1 : 1;
}

std::array<uint32_t, 2> Trellis::predecessors(std::size_t state) const {
    if (memory_ == 0) return {0, 0};
    const auto base = static_cast<uint32_t>(state >> 1);
    return {base, base | static_cast<uint32_t>(1u << (memory_ - 1))};
}

uint32_t Trellis::state_before(const BitSequence& bits, std::size_t end) const {
    if (bits.empty()) throw std::invalid_argument("state_before: empty bits");
    uint32_t s = 0;
    for (std::size_t k = 0; k < memory_; ++k) {
        const std::size_t idx = end >= k + 1 ? end - 1 - k : 0;
        if (bits[std::min(idx, bits.size() - 1)] == -1) s |= 1u << k;
    }
    return s;
}

Trellis build_trellis(const PRTarget& g) { return Trellis(g); }

std::vector<double> pr_reference(const BitSequence& u, const PRTarget& g) {
    return pr_reference_span(u, g, 0, u.size());
}

std::vector<double> pr_reference_span(const BitSequence& u, const PRTarget& g, std::size_t begin, std::size_t end) {
    if (u.empty()) throw std::invalid_argument("pr_reference: empty bit sequence");
    if (begin > end || end > u.size()) throw std::out_of_range("pr_reference_span");
    std::vector<double> out(end - begin);
    for (std::size_t n = begin; n < end; ++n) {
        double acc = 0.0;
        for (std::size_t j = 0; j < g.taps.size(); ++j) acc += g.taps[j] * u[n >= j ? n - j : 0];
        out[n - begin] = acc;
    }
    return out;
}

BitSequence viterbi(std::span<const double> y, const Trellis& trellis, StartCondition start) {
    if (y.empty()) throw std::invalid_argument("viterbi: empty input");
    std::vector<double> alpha;
    std::vector<uint32_t> pred;
    std::vector<int8_t> input;
    forward_pass(y, trellis, start, alpha, pred, input);

    const std::size_t N = y.size();
    const std::size_t S = trellis.num_states();
    std::size_t s = 0;
    for (std::size_t k = 1; k < S; ++k) {
        if (alpha[N * S + k] < alpha[N * S + s]) s = k;
    }
    std::vector<int8_t> bits(N);
    for (std::size_t t = N; t > 0; --t) {
        bits[t - 1] = static_cast<int8_t>(input_bit(input[t * S + s]));
        s = pred[t * S + s];
    }
    return BitSequence(std::move(bits));
}

SovaTrace sova_trace(std::span<const double> y, const Trellis& trellis, StartCondition start) {
    if (y.empty()) throw std::invalid_argument("sova: empty input");
    const std::size_t N = y.size();
    const std::size_t S = trellis.num_states();
    const StartRule rule{!start.known_state.has_value(), S - 1};

    SovaTrace tr;
    tr.length = N;
    tr.num_states = S;
    forward_pass(y, trellis, start, tr.alpha, tr.forward_pred, tr.forward_input);

    tr.beta.assign((N + 1) * S, 0.0);
    tr.backward_input.assign(N * S, 0);
    for (std::size_t t = N; t-- > 0;) {
        const double* b_next = &tr.beta[(t + 1) * S];
        double* b = &tr.beta[t * S];
        for (std::size_t s = 0; s < S; ++s) {
            double best = kInf;
            int8_t best_in = 0;
            for (int i = 0; i < 2; ++i) {
                if (!rule.allowed(t, s, i)) continue;
                const auto& br = trellis.branch(s, i);
                const double e = y[t] - br.label;
                const double m = e * e + b_next[br.next_state];
                if (m < best) {
                    best = m;
                    best_in = static_cast<int8_t>(i);
                }
            }
            b[s] = best;
            tr.backward_input[t * S + s] = best_in;
        }
        normalize(std::span(b, S));
    }

    for (int i = 0; i < 2; ++i) {
        tr.best_state[i].assign(N, 0);
        tr.metric[i].assign(N, kInf);
    }
    for (std::size_t t = 0; t < N; ++t) {
        const double* a = &tr.alpha[t * S];
        const double* b_next = &tr.beta[(t + 1) * S];
        for (int i = 0; i < 2; ++i) {
            double best = kInf;
            uint32_t best_s = 0;
            for (std::size_t s = 0; s < S; ++s) {
                if (a[s] == kInf || !rule.allowed(t, s, i)) continue;
                const auto& br = trellis.branch(s, i);
                const double e = y[t] - br.label;
                const double m = a[s] + e * e + b_next[br.next_state];
                if (m < best) {
                    best = m;
                    best_s = static_cast<uint32_t>(s);
                }
            }
            tr.metric[i][t] = best;
            tr.best_state[i][t] = best_s;
        }
        if (tr.metric[0][t] == tr.metric[1][t]) ++tr.ties;
    }
    return tr;
}

SoftDecision soft_decision_from_trace(const SovaTrace& trace, double noise_var) {
    if (!(noise_var > 0)) throw std::invalid_argument("sova: noise_var must be > 0");
    SoftDecision out;
    out.llr.resize(trace.length);
    out.hard.resize(trace.length);
    for (std::size_t t = 0; t < trace.length; ++t) {
        const double llr = (trace.metric[1][t] - trace.metric[0][t]) / noise_var;
        out.llr[t] = llr;
        out.hard[t] = llr >= 0 ? 1 : -1;
    }
    return out;
}

SoftDecision sova(std::span<const double> y, const Trellis& trellis, double noise_var, StartCondition start) {
    if (!(noise_var > 0)) throw std::invalid_argument("sova: noise_var must be > 0");
    return soft_decision_from_trace(sova_trace(y, trellis, start), noise_var);
}

double llr_to_p0(double llr) {
    if (llr > 0) {
        const double e = std::exp(-llr);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(llr));
}

SoftGradient soft_backward(std::span<const double> y, const Trellis& trellis, double noise_var,
                           std::span<const double> dJ_dllr, StartCondition start) {
    if (dJ_dllr.size() != y.size()) throw std::invalid_argument("soft_backward: length mismatch");
    return soft_backward(sova_trace(y, trellis, start), y, trellis, noise_var, dJ_dllr);
}

SoftGradient soft_backward(const SovaTrace& trace, std::span<const double> y, const Trellis& trellis,
                           double noise_var, std::span<const double> dJ_dllr) {
    const std::size_t N = trace.length;
    const std::size_t S = trace.num_states;
    if (y.size() != N || dJ_dllr.size() != N) throw std::invalid_argument("soft_backward: length mismatch");
    if (!(noise_var > 0)) throw std::invalid_argument("soft_backward: noise_var must be > 0");

    // Each llr_n is (M_n(-1) - M_n(+1)) / noise_var. Every selected path gets a signed
    // weight; the weights are pushed along forward survivors (towards t = 0) and
    // backward survivors (towards t = N) to give a total weight per branch.
    std::vector<double> branch_w(N * S * 2, 0.0);
    std::vector<double> fwd((N + 1) * S, 0.0);
    std::vector<double> bwd((N + 1) * S, 0.0);
    for (std::size_t t = 0; t < N; ++t) {
        if (dJ_dllr[t] == 0.0) continue;
        for (int i = 0; i < 2; ++i) {
            const double w = (i == 0 ? -dJ_dllr[t] : dJ_dllr[t]) / noise_var;
            const uint32_t s = trace.best_state[i][t];
            fwd[t * S + s] += w;
            branch_w[(t * S + s) * 2 + static_cast<std::size_t>(i)] += w;
            bwd[(t + 1) * S + trellis.branch(s, i).next_state] += w;
        }
    }
    for (std::size_t t = N; t >= 1; --t) {
        for (std::size_t s = 0; s < S; ++s) {
            const double w = fwd[t * S + s];
            if (w == 0.0) continue;
            const uint32_t p = trace.forward_pred[t * S + s];
            const int i = trace.forward_input[t * S + s];
            branch_w[((t - 1) * S + p) * 2 + static_cast<std::size_t>(i)] += w;
            fwd[(t - 1) * S + p] += w;
        }
    }
    for (std::size_t t = 0; t < N; ++t) {
        for (std::size_t s = 0; s < S; ++s) {
            const double w = bwd[t * S + s];
            if (w == 0.0) continue;
            const int i = trace.backward_input[t * S + s];
            branch_w[(t * S + s) * 2 + static_cast<std::size_t>(i)] += w;
            bwd[(t + 1) * S + trellis.branch(s, i).next_state] += w;
        }
    }

    SoftGradient grad;
    grad.dJ_dy.assign(N, 0.0);
    grad.dJ_dg.assign(trellis.memory() + 1, 0.0);
    grad.ties = trace.ties;
    for (std::size_t t = 0; t < N; ++t) {
        double dy = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            for (int i = 0; i < 2; ++i) {
                const double w = branch_w[(t * S + s) * 2 + static_cast<std::size_t>(i)];
                if (w == 0.0) continue;
                const double e = y[t] - trellis.branch(s, i).label;
                dy += 2.0 * w * e;
                for (std::size_t j = 0; j <= trellis.memory(); ++j) {
                    grad.dJ_dg[j] -= 2.0 * w * e * trellis.window_bit(s, i, j);
                }
            }
        }
        grad.dJ_dy[t] = dy;
    }
    return grad;
}

}  // namespace tdmr
