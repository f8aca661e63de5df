#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tdmr/channel.hpp"

namespace tdmr {

/// Partial-response target g. When monic, taps[0] == 1 exactly.
struct PRTarget {
    std::vector<double> taps;
    bool monic = false;

    std::size_t length() const { return taps.size(); }
    void validate() const;
};

/// Shift-register trellis for a PR target.
///
/// A state holds the previous L_g - 1 bits; bit k of the state index is set when
/// u_{n-1-k} == -1, so state 0 is the all-(+1) history and lower indices prefer +1.
class Trellis {
public:
    struct Branch {
        uint32_t next_state;
        double label;
    };

    explicit Trellis(const PRTarget& target);

    std::size_t num_states() const { return num_states_; }
    std::size_t memory() const { return memory_; }
    const PRTarget& target() const { return target_; }

    /// input_index 0 is u_n = +1, 1 is u_n = -1.
    const Branch& branch(std::size_t state, int input_index) const { return branches_[2 * state + input_index]; }

    /// Bit u_{n-j} implied by branch (state, input), j = 0..memory.
    int window_bit(std::size_t state, int input_index, std::size_t j) const;

    /// Predecessors of `state` in ascending index order.
    std::array<uint32_t, 2> predecessors(std::size_t state) const;

    /// Input index carried by every branch entering `state`.
    int entering_input(std::size_t state) const { return memory_ == 0 ? -1 : static_cast<int>(state & 1u); }

    /// State whose history is bits[end-1], bits[end-2], ... (the L_g - 1 bits before index `end`).
    uint32_t state_before(const BitSequence& bits, std::size_t end) const;

private:
    PRTarget target_;
    std::size_t memory_;
    std::size_t num_states_;
    std::vector<Branch> branches_;
};

Trellis build_trellis(const PRTarget& g);

/// How the detector treats the bits preceding the block.
///
/// Without a known start state, bits before the block equal the first bit
/// (u_{n<0} = u_0), which matches pr_reference and the channel convention.
struct StartCondition {
    std::optional<uint32_t> known_state;
};

struct SoftDecision {
    std::vector<double> llr;
    std::vector<int8_t> hard;
};

std::vector<double> pr_reference(const BitSequence& u, const PRTarget& g);

/// pr_reference over u[begin, end) with the true preceding bits where they exist.
std::vector<double> pr_reference_span(const BitSequence& u, const PRTarget& g, std::size_t begin, std::size_t end);

BitSequence viterbi(std::span<const double> y, const Trellis& trellis, StartCondition start = {});

/// Forward/backward min-sum state of the max-log soft output, kept for gradient passes.
struct SovaTrace {
    std::size_t length = 0;
    std::size_t num_states = 0;
    std::vector<double> alpha;            // (length + 1) x S, normalized per step
    std::vector<double> beta;             // (length + 1) x S, normalized per step
    std::vector<uint32_t> forward_pred;   // (length + 1) x S survivor predecessor into each node
    std::vector<int8_t> forward_input;    // (length + 1) x S input index of that survivor branch
    std::vector<int8_t> backward_input;   // length x S best input index leaving each node
    std::vector<uint32_t> best_state[2];  // per bit, state starting the best branch with input +1 / -1
    std::vector<double> metric[2];        // per bit, M_n(+1), M_n(-1) (shared per-bit offsets removed)
    std::size_t ties = 0;                 // bits with M_n(+1) == M_n(-1)
};

SovaTrace sova_trace(std::span<const double> y, const Trellis& trellis, StartCondition start = {});

SoftDecision sova(std::span<const double> y, const Trellis& trellis, double noise_var, StartCondition start = {});

/// llr_n = (M_n(-1) - M_n(+1)) / noise_var from an existing trace.
SoftDecision soft_decision_from_trace(const SovaTrace& trace, double noise_var);

/// 1 / (1 + e^llr) without overflow.
double llr_to_p0(double llr);

struct SoftGradient {
    std::vector<double> dJ_dy;
    std::vector<double> dJ_dg;
    std::size_t ties = 0;
};

/// Exact gradient of sum_n dJ_dllr[n] * llr_n with respect to y and to the target taps.
/// At metric ties the subgradient follows the path pair chosen by the tie-break.
SoftGradient soft_backward(std::span<const double> y, const Trellis& trellis, double noise_var,
                           std::span<const double> dJ_dllr, StartCondition start = {});

SoftGradient soft_backward(const SovaTrace& trace, std::span<const double> y, const Trellis& trellis,
                           double noise_var, std::span<const double> dJ_dllr);

}  // namespace tdmr
