#include "tdmr/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "tdmr/kernels.hpp"

namespace tdmr {

std::string_view to_string(Loss loss) { return loss == Loss::MSE ? "MSE" : "CE"; }

Loss parse_loss(std::string_view text) {
    if (text == "MSE" || text == "mse") return Loss::MSE;
    if (text == "CE" || text == "ce") return Loss::CE;
    throw std::invalid_argument("unknown loss '" + std::string(text) + "' (expected MSE or CE)");
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning_rate must be >= 0");
    if (minibatch_N < 1) throw std::invalid_argument("minibatch_N must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (target_len < 1) throw std::invalid_argument("target_len must be >= 1");
    if (!(lr_decay > 0.0)) throw std::invalid_argument("lr_decay must be positive");
    if (!(noise_var > 0.0)) throw std::invalid_argument("noise_var must be positive");
}

double mse_loss(std::span<const double> y, std::span<const double> y_hat) {
    if (y.size() != y_hat.size()) throw std::invalid_argument("mse_loss: length mismatch");
    if (y.empty()) throw std::invalid_argument("mse_loss: empty input");
    double acc = 0.0;
    for (std::size_t n = 0; n < y.size(); ++n) {
        const double e = y_hat[n] - y[n];
        acc += e * e;
    }
    return acc / static_cast<double>(y.size());
}

double ce_pointwise(int u, double llr) {
    const double x = u * llr;
    return std::max(0.0, -x) + std::log1p(std::exp(-std::abs(x)));
}

double ce_slope(int u, double llr) {
    const double x = u * llr;
    if (x > 0) {
        const double e = std::exp(-x);
        return -u * e / (1.0 + e);
    }
    return -u / (1.0 + std::exp(x));
}

double ce_loss(const BitSequence& u, std::span<const double> llr) {
    if (u.size() != llr.size()) throw std::invalid_argument("ce_loss: length mismatch");
    if (llr.empty()) throw std::invalid_argument("ce_loss: empty input");
    double acc = 0.0;
    for (std::size_t n = 0; n < llr.size(); ++n) acc += ce_pointwise(u[n], llr[n]);
    return acc / static_cast<double>(llr.size());
}

std::size_t sector_guard(const EqualizerSpec& spec, std::size_t target_len) {
    return std::max(target_len - 1, static_cast<std::size_t>(context_halfwidth(spec)));
}

MinibatchObjective minibatch_objective(const EqualizerSpec& spec, const ParameterSet& params, const PRTarget& g,
                                       const ReadbackSector& sector, const PaddedSector& padded, std::size_t begin,
                                       std::size_t end, Loss loss, double noise_var, ParameterSet* grad,
                                       std::vector<double>* dJ_dg) {
    if (end <= begin || end > sector.size()) throw std::invalid_argument("minibatch range is empty or out of bounds");
    const std::size_t N = end - begin;
    const double inv_n = 1.0 / static_cast<double>(N);
    const auto y = equalize_stream(spec, params, padded, begin, end);
    std::vector<double> dJ_dy(N);
    MinibatchObjective out;

    if (loss == Loss::MSE) {
        const auto y_hat = pr_reference_span(sector.bits, g, begin, end);
        out.loss = mse_loss(y, y_hat);
        for (std::size_t i = 0; i < N; ++i) dJ_dy[i] = 2.0 * (y[i] - y_hat[i]) * inv_n;
        if (dJ_dg) {
            dJ_dg->assign(g.length(), 0.0);
            for (std::size_t i = 0; i < N; ++i) {
                const std::size_t n = begin + i;
                for (std::size_t j = 0; j < g.length() && j <= n; ++j) {
                    (*dJ_dg)[j] += 2.0 * (y_hat[i] - y[i]) * inv_n * sector.bits[n - j];
                }
            }
        }
    } else {
        const Trellis trellis(g);
        if (begin < trellis.memory()) throw std::invalid_argument("CE minibatch needs the preceding bits of the target memory");
        const StartCondition start{trellis.state_before(sector.bits, begin)};
        const SovaTrace trace = sova_trace(y, trellis, start);
        const SoftDecision soft = soft_decision_from_trace(trace, noise_var);
        std::vector<double> dJ_dllr(N);
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const int u = sector.bits[begin + i];
            acc += ce_pointwise(u, soft.llr[i]);
            dJ_dllr[i] = ce_slope(u, soft.llr[i]) * inv_n;
        }
        out.loss = acc * inv_n;
        out.ties = trace.ties;
        if (grad || dJ_dg) {
            SoftGradient sg = soft_backward(trace, y, trellis, noise_var, dJ_dllr);
            dJ_dy = std::move(sg.dJ_dy);
            if (dJ_dg) *dJ_dg = std::move(sg.dJ_dg);
        }
    }
    if (grad) kernels::parallel::accumulate_gradient(spec, params, padded, begin, dJ_dy, *grad);
    return out;
}

namespace {

struct SpanRef {
    std::size_t sector;
    std::size_t begin;
    std::size_t end;
};

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

TrainReport fit(const EqualizerSpec& spec, const ParameterSet& init_params, std::span<const ReadbackSector> dataset,
                const PRTarget& g0, const TrainConfig& cfg, const TrainLog& log) {
    cfg.validate();
    spec.validate();
    g0.validate();
    check_dimensions(spec, init_params);
    if (dataset.empty()) throw std::invalid_argument("fit: empty dataset");

    const int H = context_halfwidth(spec);
    const std::size_t guard = sector_guard(spec, g0.length());
    std::vector<PaddedSector> padded;
    std::vector<SpanRef> spans;
    padded.reserve(dataset.size());
    for (std::size_t s = 0; s < dataset.size(); ++s) {
        padded.emplace_back(dataset[s], H);
        const std::size_t len = dataset[s].size();
        if (len < 2 * guard + 1) continue;
        for (std::size_t a = guard; a < len - guard; a += cfg.minibatch_N) {
            spans.push_back({s, a, std::min(a + cfg.minibatch_N, len - guard)});
        }
    }
    if (spans.empty()) throw std::invalid_argument("fit: sectors too short for the equalizer context");

    TrainReport report;
    report.final_params = init_params;
    report.final_target = g0;
    ParameterSet& params = report.final_params;
    PRTarget& g = report.final_target;
    // Tap 0 stays pinned whenever the monic constraint applies.
    const bool monic = cfg.monic || (cfg.loss == Loss::MSE && cfg.adapt_target);
    if (cfg.adapt_target && monic && !g.monic) {
        throw std::invalid_argument("fit: monic adaptation needs a monic initial target");
    }
    const std::size_t first_free_tap = monic ? 1 : 0;
    if (cfg.adapt_target && first_free_tap == 0) g.monic = false;

    double lr = cfg.learning_rate;
    ParameterSet grad = ParameterSet::zeros(spec);
    std::vector<double> dJ_dg;
    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(spans.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        for (std::size_t idx : order) {
            const SpanRef& sp = spans[idx];
            grad.fill(0.0);
            const auto obj = minibatch_objective(spec, params, g, dataset[sp.sector], padded[sp.sector], sp.begin, sp.end,
                                                 cfg.loss, cfg.noise_var, &grad, cfg.adapt_target ? &dJ_dg : nullptr);
            if (!std::isfinite(obj.loss) || !all_finite(grad.values())) {
                throw TrainingDiverged("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                           ", minibatch " + std::to_string(step),
                                       step);
            }
            report.loss_history.push_back(obj.loss);
            if (log) log(epoch, step, obj.loss, lr);

            if (lr != 0.0) {
                params.axpy(-lr, grad);
                if (cfg.adapt_target) {
                    for (std::size_t j = first_free_tap; j < g.length(); ++j) g.taps[j] -= lr * dJ_dg[j];
                }
            }
            ++step;
        }
        lr *= cfg.lr_decay;
        report.epochs_run = epoch + 1;
    }
    return report;
}

LinearSolution solve_lmmse(std::span<const ReadbackSector> dataset, int M, std::size_t target_len,
                           const std::optional<PRTarget>& fixed_target) {
    if (dataset.empty()) throw std::invalid_argument("solve_lmmse: empty dataset");
    if (M < 0 || target_len < 1) throw std::invalid_argument("solve_lmmse: bad dimensions");
    if (fixed_target) {
        fixed_target->validate();
        target_len = fixed_target->length();
    }
    EqualizerSpec spec{.arch = Arch::Linear2D, .M = M};
    const std::size_t W = 2 * static_cast<std::size_t>(M) + 1;
    const std::size_t extra = fixed_target ? 0 : target_len - 1;
    const std::size_t D = 2 * W + extra;
    const std::size_t guard = sector_guard(spec, target_len);

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D));
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(D));
    Eigen::VectorXd z(static_cast<Eigen::Index>(D));
    std::size_t count = 0;
    for (const auto& sector : dataset) {
        PaddedSector padded(sector, M);
        const std::size_t len = sector.size();
        if (len < 2 * guard + 1) continue;
        std::vector<double> target_ref;
        if (fixed_target) target_ref = pr_reference_span(sector.bits, *fixed_target, guard, len - guard);
        for (std::size_t n = guard; n < len - guard; ++n) {
            const AdcWindow w = padded.window(n);
            for (std::size_t j = 0; j < W; ++j) {
                z[static_cast<Eigen::Index>(j)] = w.r0[j];
                z[static_cast<Eigen::Index>(W + j)] = w.r1[j];
            }
            for (std::size_t j = 0; j < extra; ++j) z[static_cast<Eigen::Index>(2 * W + j)] = -sector.bits[n - 1 - j];
            const double rhs = fixed_target ? target_ref[n - guard] : static_cast<double>(sector.bits[n]);
            A.selfadjointView<Eigen::Upper>().rankUpdate(z);
            b += rhs * z;
            ++count;
        }
    }
    if (count < D) throw std::invalid_argument("solve_lmmse: not enough samples for a full-rank system");
    A = A.selfadjointView<Eigen::Upper>();

    LinearSolution sol;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    Eigen::VectorXd theta;
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-13) {
        const double ridge = 1e-8 * A.trace() / static_cast<double>(D);
        std::cerr << "warning: solve_lmmse normal matrix is near singular; adding ridge " << ridge << "\n";
        A.diagonal().array() += ridge;
        ldlt.compute(A);
        sol.regularized = true;
    }
    theta = ldlt.solve(b);

    sol.params = ParameterSet::zeros(spec);
    auto f0 = sol.params.block("f0");
    auto f1 = sol.params.block("f1");
    for (std::size_t j = 0; j < W; ++j) {
        f0[j] = theta[static_cast<Eigen::Index>(j)];
        f1[j] = theta[static_cast<Eigen::Index>(W + j)];
    }
    if (fixed_target) {
        sol.target = *fixed_target;
    } else {
        sol.target.monic = true;
        sol.target.taps.assign(target_len, 0.0);
        sol.target.taps[0] = 1.0;
        for (std::size_t j = 0; j < extra; ++j) sol.target.taps[j + 1] = theta[static_cast<Eigen::Index>(2 * W + j)];
    }
    sol.residual_mse = residual_variance(spec, sol.params, sol.target, dataset);
    return sol;
}

double residual_variance(const EqualizerSpec& spec, const ParameterSet& params, const PRTarget& g,
                         std::span<const ReadbackSector> dataset) {
    const int H = context_halfwidth(spec);
    const std::size_t guard = sector_guard(spec, g.length());
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& sector : dataset) {
        const std::size_t len = sector.size();
        if (len < 2 * guard + 1) continue;
        PaddedSector padded(sector, H);
        const auto y = kernels::parallel::equalize(spec, params, padded, guard, len - guard);
        const auto y_hat = pr_reference_span(sector.bits, g, guard, len - guard);
        for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
        count += y.size();
    }
    if (count == 0) throw std::invalid_argument("residual_variance: no usable samples");
    return acc / static_cast<double>(count);
}

namespace {

bool same_structure(const SovaTrace& a, const SovaTrace& b) {
    return a.forward_pred == b.forward_pred && a.forward_input == b.forward_input &&
           a.backward_input == b.backward_input && a.best_state[0] == b.best_state[0] &&
           a.best_state[1] == b.best_state[1];
}

}  // namespace

GradientCheckResult gradient_check(const EqualizerSpec& spec, const ParameterSet& params, const PRTarget& g,
                                   const ReadbackSector& sector, std::size_t begin, std::size_t end, Loss loss,
                                   double eps, double noise_var) {
    if (end <= begin) throw std::invalid_argument("gradient_check: zero-length minibatch");
    check_dimensions(spec, params);
    PaddedSector padded(sector, context_halfwidth(spec));

    ParameterSet grad = ParameterSet::zeros(spec);
    std::vector<double> dJ_dg;
    minibatch_objective(spec, params, g, sector, padded, begin, end, loss, noise_var, &grad, &dJ_dg);

    std::optional<Trellis> trellis;
    std::optional<SovaTrace> base;
    StartCondition start;
    if (loss == Loss::CE) {
        trellis.emplace(g);
        start.known_state = trellis->state_before(sector.bits, begin);
        base = sova_trace(equalize_stream(spec, params, padded, begin, end), *trellis, start);
    }

    GradientCheckResult result;
    auto objective = [&](const ParameterSet& p, const PRTarget& t) {
        if (loss == Loss::CE) {
            const Trellis tr(t);
            if (!same_structure(*base, sova_trace(equalize_stream(spec, p, padded, begin, end), tr, start))) {
                result.tie_detected = true;
            }
        }
        return minibatch_objective(spec, p, t, sector, padded, begin, end, loss, noise_var, nullptr, nullptr).loss;
    };
    auto record = [&](double analytic, double numeric) {
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
        ++result.checked;
    };

    ParameterSet p = params;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p.values()[i];
        p.values()[i] = saved + eps;
        const double jp = objective(p, g);
        p.values()[i] = saved - eps;
        const double jm = objective(p, g);
        p.values()[i] = saved;
        record(grad.values()[i], (jp - jm) / (2.0 * eps));
    }
    PRTarget t = g;
    t.monic = false;
    for (std::size_t j = 0; j < t.length(); ++j) {
        const double saved = t.taps[j];
        t.taps[j] = saved + eps;
        const double jp = objective(params, t);
        t.taps[j] = saved - eps;
        const double jm = objective(params, t);
        t.taps[j] = saved;
        record(dJ_dg[j], (jp - jm) / (2.0 * eps));
    }
    return result;
}

}  // namespace tdmr
