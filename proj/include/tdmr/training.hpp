#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "tdmr/channel.hpp"
#include "tdmr/equalizer.hpp"
#include "tdmr/trellis.hpp"

namespace tdmr {

enum class Loss { MSE, CE };

std::string_view to_string(Loss loss);
Loss parse_loss(std::string_view text);

struct TrainConfig {
    Loss loss = Loss::CE;
    double learning_rate = 1e-3;
    std::size_t minibatch_N = 1024;
    int epochs = 10;
    uint64_t seed = 1;
    bool adapt_target = true;
    /// Pin g[0]; always in effect for MSE with target adaptation.
    bool monic = true;
    std::size_t target_len = 3;
    double lr_decay = 0.95;
    /// LLR scale for the CE objective.
    double noise_var = 1.0;

    void validate() const;
};

struct TrainReport {
    std::vector<double> loss_history;
    ParameterSet final_params;
    PRTarget final_target;
    int epochs_run = 0;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, std::size_t minibatch) : std::runtime_error(what), minibatch(minibatch) {}
    std::size_t minibatch;
};

double mse_loss(std::span<const double> y, std::span<const double> y_hat);
double ce_pointwise(int u, double llr);
double ce_loss(const BitSequence& u, std::span<const double> llr);
/// d ce_pointwise / d llr
double ce_slope(int u, double llr);

/// Bits excluded at each sector edge: the target memory plus the equalizer context.
std::size_t sector_guard(const EqualizerSpec& spec, std::size_t target_len);

/// Objective over bits [begin, end) of one sector, with the trellis pinned to the true
/// preceding bits. When the gradient pointers are non-null, gradients are added into them.
struct MinibatchObjective {
    double loss = 0.0;
    std::size_t ties = 0;
};

MinibatchObjective minibatch_objective(const EqualizerSpec& spec, const ParameterSet& params, const PRTarget& g,
                                       const ReadbackSector& sector, const PaddedSector& padded, std::size_t begin,
                                       std::size_t end, Loss loss, double noise_var, ParameterSet* grad,
                                       std::vector<double>* dJ_dg);

/// epoch, minibatch index within the run, loss, learning rate
using TrainLog = std::function<void(int, std::size_t, double, double)>;

TrainReport fit(const EqualizerSpec& spec, const ParameterSet& init_params, std::span<const ReadbackSector> dataset,
                const PRTarget& g0, const TrainConfig& cfg, const TrainLog& log = {});

struct LinearSolution {
    ParameterSet params;
    PRTarget target;
    double residual_mse = 0.0;
    bool regularized = false;
};

/// Joint least-squares Linear2D taps and monic target, or taps alone against `fixed_target`.
LinearSolution solve_lmmse(std::span<const ReadbackSector> dataset, int M, std::size_t target_len,
                           const std::optional<PRTarget>& fixed_target = std::nullopt);

/// Mean squared difference between equalizer output and the reference built from the true bits.
double residual_variance(const EqualizerSpec& spec, const ParameterSet& params, const PRTarget& g,
                         std::span<const ReadbackSector> dataset);

struct GradientCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    /// A perturbation changed the detector's survivor structure; the minibatch should be resampled.
    bool tie_detected = false;
};

/// Central differences over every equalizer parameter and target tap.
/// Relative error is |a - n| / max(|a|, |n|, 1e-3).
GradientCheckResult gradient_check(const EqualizerSpec& spec, const ParameterSet& params, const PRTarget& g,
                                   const ReadbackSector& sector, std::size_t begin, std::size_t end, Loss loss,
                                   double eps = 1e-5, double noise_var = 1.0);

}  // namespace tdmr
