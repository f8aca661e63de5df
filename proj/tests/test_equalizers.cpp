#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "tdmr/equalizer.hpp"

using namespace tdmr;

namespace {

EqualizerSpec make_spec(Arch arch, int M, int K, Basis basis = Basis::Gaussian) {
    EqualizerSpec s;
    s.arch = arch;
    s.M = M;
    s.K = K;
    s.M_prime = std::max(1, M / 2);
    s.basis = basis;
    return s;
}

std::vector<EqualizerSpec> all_specs() {
    return {make_spec(Arch::Linear2D, 3, 1),
            make_spec(Arch::MLP, 3, 4),
            make_spec(Arch::RBFNN, 2, 3, Basis::Gaussian),
            make_spec(Arch::RBFNN, 2, 3, Basis::Tanh),
            make_spec(Arch::RBFNN, 2, 3, Basis::Linear),
            make_spec(Arch::FIRRBFNN, 3, 3, Basis::Gaussian),
            make_spec(Arch::FIRRBFNN, 3, 2, Basis::Tanh),
            make_spec(Arch::RCMLP1, 3, 6),
            make_spec(Arch::RCMLP2, 3, 5),
            make_spec(Arch::RCMLP3, 3, 9),
            make_spec(Arch::RCMLP4, 2, 10)};
}

ParameterSet random_params(const EqualizerSpec& spec, std::mt19937_64& rng, double scale = 0.5) {
    ParameterSet p = ParameterSet::zeros(spec);
    std::uniform_real_distribution<double> d(-scale, scale);
    for (double& v : p.values()) v = d(rng);
    return p;
}

ReadbackSector random_sector(std::size_t n, std::mt19937_64& rng) {
    ReadbackSector s;
    s.bits = BitSequence::random(n, rng);
    std::normal_distribution<double> d(0.0, 0.7);
    for (auto& stream : s.adc) {
        stream.resize(n);
        for (double& x : stream) x = d(rng);
    }
    return s;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::vector<double> v(n);
    std::normal_distribution<double> d(0.0, 0.7);
    for (double& x : v) x = d(rng);
    return v;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

}  // namespace

TEST_CASE("parameter counts reproduce the complexity table") {
    CHECK(count_params(make_spec(Arch::Linear2D, 5, 1)) == 22);
    CHECK(count_params(make_spec(Arch::Linear2D, 10, 1)) == 42);
    CHECK(count_params(make_spec(Arch::MLP, 5, 6)) == 145);
    CHECK(count_params(make_spec(Arch::RBFNN, 5, 6)) == 157);
    CHECK(count_params(make_spec(Arch::RBFNN, 5, 20)) == 521);
    CHECK(count_params(make_spec(Arch::RBFNN, 5, 30)) == 781);
    auto fir = make_spec(Arch::FIRRBFNN, 5, 6);
    fir.M_prime = 2;
    CHECK(count_params(fir) == 107);
    const std::size_t rc1[] = {31, 35, 39, 43};
    for (int i = 0; i < 4; ++i) CHECK(count_params(make_spec(Arch::RCMLP1, 5, 6 + 4 * i)) == rc1[i]);
    CHECK(count_params(make_spec(Arch::RCMLP4, 5, 18)) == 44);
    CHECK(count_params(make_spec(Arch::RCMLP2, 5, 9)) == 33);
    CHECK(count_params(make_spec(Arch::RCMLP3, 5, 9)) == 34);
}

TEST_CASE("parameter counts equal the physical parameter size") {
    for (int M = 1; M <= 6; ++M) {
        for (int K = 2; K <= 12; K += 2) {
            for (Arch a : {Arch::Linear2D, Arch::MLP, Arch::RBFNN, Arch::FIRRBFNN, Arch::RCMLP1, Arch::RCMLP2,
                           Arch::RCMLP3, Arch::RCMLP4}) {
                if (a == Arch::FIRRBFNN && M < 2) continue;
                const auto spec = make_spec(a, M, K);
                CHECK(count_params(spec) == ParameterSet::zeros(spec).size());
            }
        }
    }
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(make_spec(Arch::MLP, 0, 3).validate(), std::invalid_argument);
    CHECK_THROWS_AS(make_spec(Arch::MLP, 3, 0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(make_spec(Arch::RCMLP1, 3, 5).validate(), std::invalid_argument);
    auto fir = make_spec(Arch::FIRRBFNN, 3, 3);
    fir.M_prime = 3;
    CHECK_THROWS_AS(fir.validate(), std::invalid_argument);
    CHECK_THROWS_AS(parse_arch("CNN"), std::invalid_argument);
    CHECK(parse_arch("RCMLP3") == Arch::RCMLP3);
}

TEST_CASE("forward matches a straight-line transcription for every architecture") {
    std::mt19937_64 rng(21);
    for (const auto& spec : all_specs()) {
        CAPTURE(to_string(spec.arch));
        const std::size_t len = static_cast<std::size_t>(2 * context_halfwidth(spec) + 1);
        for (int trial = 0; trial < 20; ++trial) {
            const auto p = random_params(spec, rng);
            const auto r0 = random_vec(len, rng);
            const auto r1 = random_vec(len, rng);
            const double got = forward(spec, p, {r0, r1});
            const double expected = oracle::equalizer_output(spec, p, r0, r1);
            CHECK(std::abs(got - expected) <= 1e-12 * std::max(1.0, std::abs(expected)));
        }
    }
}

TEST_CASE("degenerate parameter settings") {
    std::mt19937_64 rng(22);
    SUBCASE("zero-weight MLP returns the output bias") {
        const auto spec = make_spec(Arch::MLP, 3, 5);
        auto p = random_params(spec, rng);
        std::fill(p.block("W").begin(), p.block("W").end(), 0.0);
        std::fill(p.block("b0").begin(), p.block("b0").end(), 0.0);
        p.block("b1")[0] = 0.375;
        const auto r = random_vec(7, rng);
        CHECK(forward(spec, p, {r, r}) == 0.375);
    }
    SUBCASE("window on a centroid activates that unit fully") {
        const auto spec = make_spec(Arch::RBFNN, 2, 3, Basis::Gaussian);
        auto p = ParameterSet::zeros(spec);
        const auto r0 = random_vec(5, rng);
        const auto r1 = random_vec(5, rng);
        std::copy(r0.begin(), r0.end(), p.block("c0").begin() + 5);
        p.block("v0")[1] = 1.0;
        CHECK(forward(spec, p, {r0, r1}) == 1.0);
    }
    SUBCASE("RC-MLP3 with q = 0 and c = 1 is the linear path") {
        const auto spec = make_spec(Arch::RCMLP3, 3, 5);
        auto p = random_params(spec, rng);
        std::fill(p.block("q").begin(), p.block("q").end(), 0.0);
        p.block("c")[0] = 1.0;
        p.block("b1")[0] = 0.0;
        p.block("b0")[0] = 0.0;
        const std::size_t len = static_cast<std::size_t>(2 * context_halfwidth(spec) + 1);
        const auto r0 = random_vec(len, rng);
        const auto r1 = random_vec(len, rng);
        const std::size_t H = len / 2;
        double linear = 0.0;
        for (int j = 0; j < 7; ++j) {
            linear += p.block("f0")[static_cast<std::size_t>(j)] * r0[H - 3 + static_cast<std::size_t>(j)] +
                      p.block("f1")[static_cast<std::size_t>(j)] * r1[H - 3 + static_cast<std::size_t>(j)];
        }
        CHECK(forward(spec, p, {r0, r1}) == doctest::Approx(linear).epsilon(1e-14));
    }
}

TEST_CASE("RC-MLP3 bypass alone is affine in the input") {
    std::mt19937_64 rng(23);
    const auto spec = make_spec(Arch::RCMLP3, 4, 7);
    auto p = random_params(spec, rng);
    std::fill(p.block("q").begin(), p.block("q").end(), 0.0);
    const std::size_t len = static_cast<std::size_t>(2 * context_halfwidth(spec) + 1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a0 = random_vec(len, rng), a1 = random_vec(len, rng);
        const auto b0 = random_vec(len, rng), b1 = random_vec(len, rng);
        const double t = std::uniform_real_distribution<double>(-2.0, 3.0)(rng);
        std::vector<double> m0(len), m1(len);
        for (std::size_t i = 0; i < len; ++i) {
            m0[i] = t * a0[i] + (1 - t) * b0[i];
            m1[i] = t * a1[i] + (1 - t) * b1[i];
        }
        const double mixed = forward(spec, p, {m0, m1});
        const double combo = t * forward(spec, p, {a0, a1}) + (1 - t) * forward(spec, p, {b0, b1});
        CHECK(mixed == doctest::Approx(combo).epsilon(1e-12));
    }
}

TEST_CASE("an MLP with a wider window reproduces RC-MLP1") {
    std::mt19937_64 rng(24);
    const auto rc = make_spec(Arch::RCMLP1, 3, 8);
    const auto p = random_params(rc, rng);
    const int H = context_halfwidth(rc);
    const int half = rc.K / 2, off = rc.K / 4;
    const auto mlp = make_spec(Arch::MLP, H, rc.K);
    auto w = ParameterSet::zeros(mlp);
    // hidden unit (l, j) sees reader l through f_l centered at n - off + j
    const int taps = 2 * H + 1;
    for (int l = 0; l < 2; ++l) {
        const auto f = p.block(l == 0 ? "f0" : "f1");
        const auto q = p.block(l == 0 ? "q0" : "q1");
        for (int j = 0; j < half; ++j) {
            const int unit = l * half + j;
            const int center = j - off;
            for (int t = 0; t <= 2 * rc.M; ++t) {
                const int row = l * taps + (center - rc.M + t + H);
                w.block("W")[static_cast<std::size_t>(row * mlp.K + unit)] = f[static_cast<std::size_t>(t)];
            }
            w.block("b0")[static_cast<std::size_t>(unit)] = p.block("b0")[static_cast<std::size_t>(l)];
            w.block("v")[static_cast<std::size_t>(unit)] = q[static_cast<std::size_t>(j)];
        }
    }
    w.block("b1")[0] = p.block("b1")[0];
    const std::size_t len = static_cast<std::size_t>(2 * H + 1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto r0 = random_vec(len, rng);
        const auto r1 = random_vec(len, rng);
        CHECK(std::abs(forward(rc, p, {r0, r1}) - forward(mlp, w, {r0, r1})) <= 1e-12);
    }
}

TEST_CASE("backward matches central differences for every architecture") {
    std::mt19937_64 rng(25);
    const double eps = 1e-5;
    for (const auto& spec : all_specs()) {
        CAPTURE(to_string(spec.arch));
        CAPTURE(to_string(spec.basis));
        const std::size_t len = static_cast<std::size_t>(2 * context_halfwidth(spec) + 1);
        double worst = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            auto p = random_params(spec, rng);
            const auto r0 = random_vec(len, rng);
            const auto r1 = random_vec(len, rng);
            const double dJ = 1.7;
            auto grad = ParameterSet::zeros(spec);
            backward(spec, p, {r0, r1}, dJ, grad);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double keep = p.values()[i];
                p.values()[i] = keep + eps;
                const double up = forward(spec, p, {r0, r1});
                p.values()[i] = keep - eps;
                const double down = forward(spec, p, {r0, r1});
                p.values()[i] = keep;
                worst = std::max(worst, rel_err(dJ * (up - down) / (2 * eps), grad.values()[i]));
            }
        }
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("backward linearity and the linear tap gradient") {
    std::mt19937_64 rng(26);
    for (const auto& spec : all_specs()) {
        const std::size_t len = static_cast<std::size_t>(2 * context_halfwidth(spec) + 1);
        const auto p = random_params(spec, rng);
        const auto r0 = random_vec(len, rng);
        const auto r1 = random_vec(len, rng);
        auto grad = ParameterSet::zeros(spec);
        backward(spec, p, {r0, r1}, 0.0, grad);
        for (double g : grad.values()) CHECK(g == 0.0);
    }
    const auto spec = make_spec(Arch::Linear2D, 3, 1);
    const auto p = random_params(spec, rng);
    const auto r0 = random_vec(7, rng);
    const auto r1 = random_vec(7, rng);
    auto grad = ParameterSet::zeros(spec);
    backward(spec, p, {r0, r1}, 2.5, grad);
    for (std::size_t j = 0; j < 7; ++j) {
        CHECK(grad.block("f0")[j] == doctest::Approx(2.5 * r0[j]));
        CHECK(grad.block("f1")[j] == doctest::Approx(2.5 * r1[j]));
    }
    // gradients accumulate across calls
    backward(spec, p, {r0, r1}, 2.5, grad);
    CHECK(grad.block("f0")[3] == doctest::Approx(5.0 * r0[3]));
}

TEST_CASE("dimension mismatches are rejected") {
    const auto spec = make_spec(Arch::MLP, 3, 4);
    const auto other = ParameterSet::zeros(make_spec(Arch::MLP, 3, 5));
    const std::vector<double> r(7, 0.0), short_r(5, 0.0);
    CHECK_THROWS_AS(forward(spec, other, {r, r}), std::invalid_argument);
    const auto p = ParameterSet::zeros(spec);
    CHECK_THROWS_AS(forward(spec, p, {short_r, r}), std::invalid_argument);
    auto grad = ParameterSet::zeros(spec);
    CHECK_THROWS_AS(backward(spec, other, {r, r}, 1.0, grad), std::invalid_argument);
}

TEST_CASE("streaming evaluation equals per-window evaluation") {
    std::mt19937_64 rng(27);
    const auto sector = random_sector(120, rng);
    for (const auto& spec : all_specs()) {
        CAPTURE(to_string(spec.arch));
        const auto p = random_params(spec, rng);
        const PaddedSector padded(sector, context_halfwidth(spec));
        const auto stream = equalize_stream(spec, p, padded, 0, sector.size());
        REQUIRE(stream.size() == sector.size());
        for (std::size_t n = 0; n < sector.size(); ++n) {
            CHECK(stream[n] == doctest::Approx(forward(spec, p, padded.window(n))).epsilon(1e-12));
        }
        const auto part = equalize_stream(spec, p, padded, 37, 81);
        for (std::size_t n = 37; n < 81; ++n) CHECK(part[n - 37] == doctest::Approx(stream[n]).epsilon(1e-12));
    }
}

TEST_CASE("initialization is deterministic and finite") {
    std::mt19937_64 rng(28);
    std::vector<ReadbackSector> data{random_sector(500, rng)};
    for (const auto& spec : all_specs()) {
        InitOptions opt;
        opt.seed = 5;
        opt.data = data;
        const auto a = initialize(spec, opt);
        const auto b = initialize(spec, opt);
        CHECK(a == b);
        for (double v : a.values()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("model file round trip") {
    std::mt19937_64 rng(29);
    for (const auto& spec : all_specs()) {
        EqualizerModel m;
        m.spec = spec;
        m.params = random_params(spec, rng);
        m.target = {{1.0, 0.8125, -0.125}, true};
        m.noise_var = 0.03125;
        const auto path = std::filesystem::temp_directory_path() / "tdmr_test_model.txt";
        save_model(path, m, "abc123");
        const auto loaded = load_model(path);
        CHECK(loaded.spec == spec);
        CHECK(loaded.target.taps == m.target.taps);
        CHECK(loaded.target.monic);
        CHECK(loaded.noise_var == m.noise_var);
        for (std::size_t i = 0; i < m.params.size(); ++i) {
            CHECK(loaded.params.values()[i] == std::stod(format_g9(m.params.values()[i])));
        }
        const auto again = path.string() + ".2";
        save_model(again, loaded, "abc123");
        std::ifstream f1(path), f2(again);
        std::stringstream s1, s2;
        s1 << f1.rdbuf();
        s2 << f2.rdbuf();
        CHECK(s1.str() == s2.str());
        std::filesystem::remove(path);
        std::filesystem::remove(again);
    }
    CHECK_THROWS_AS(load_model("/nonexistent/model.txt"), IoError);
}
