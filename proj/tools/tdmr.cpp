#include <CLI11.hpp>

#include <iostream>

#include "tdmr/experiment.hpp"
#include "tdmr/kernels.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4 };

tdmr::ExperimentConfig overlay(const std::vector<std::string>& paths) {
    tdmr::ExperimentConfig cfg;
    for (const auto& p : paths) cfg = tdmr::load_config(p, cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TDMR equalizer experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    std::vector<std::string> configs;
    std::string out_dir;
    int threads = 0;
    std::optional<uint64_t> seed;
    app.add_option("--config", configs, "config file (repeatable)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
    app.add_option("--seed", seed, "single replication seed, overriding replication_seeds");

    auto* generate = app.add_subcommand("generate", "write a synthetic sector file");
    std::string dataset_out;
    generate->add_option("--file", dataset_out, "sector file to write (default <out>/sectors.txt)");
    auto* run = app.add_subcommand("run", "train, evaluate and report one configuration");
    auto* sweep = app.add_subcommand("sweep", "run several configurations and emit performance vs complexity");
    app.add_subcommand("complexity", "parameter counts next to the published complexity figures");
    auto* mi = app.add_subcommand("mi", "mutual information of an LLR dump");
    std::string llr_path;
    int k = 3;
    mi->add_option("llr_dump", llr_path, "LLR dump with 'n llr hard u' rows")->required();
    mi->add_option("-k", k, "neighbor count")->check(CLI::PositiveNumber);
    auto* check = app.add_subcommand("check", "finite-difference gradient checks for every architecture");
    int points = 5;
    check->add_option("--points", points, "random points per architecture and loss")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);
    tdmr::kernels::set_threads(threads);

    auto prepare = [&](tdmr::ExperimentConfig cfg) {
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (seed) cfg.replication_seeds = {*seed};
        return cfg;
    };

    try {
        if (app.got_subcommand(generate)) {
            auto cfg = prepare(overlay(configs));
            std::filesystem::path file = dataset_out.empty() ? cfg.output_dir / "sectors.txt" : std::filesystem::path(dataset_out);
            tdmr::cmd_generate(cfg, file);
            std::cout << "wrote " << file.string() << "\n";
        } else if (app.got_subcommand(run)) {
            auto cfg = prepare(overlay(configs));
            const auto result = tdmr::cmd_run(cfg);
            for (const auto& row : result.rows) std::cout << row.arch << " ber=" << row.ber << " mi_bits=" << row.mi_bits << "\n";
        } else if (app.got_subcommand(sweep)) {
            std::vector<tdmr::ExperimentConfig> list;
            for (const auto& p : configs) list.push_back(prepare(tdmr::load_config(p)));
            const std::filesystem::path dir = out_dir.empty() ? std::filesystem::path("out") : std::filesystem::path(out_dir);
            const auto runs = tdmr::cmd_sweep(list, dir);
            for (const auto& r : runs) std::cout << r.label << " complexity=" << r.complexity << " ber=" << r.rows.back().ber << "\n";
        } else if (app.got_subcommand("complexity")) {
            tdmr::cmd_complexity(std::cout);
        } else if (app.got_subcommand(mi)) {
            tdmr::cmd_mi(llr_path, std::cout, k);
        } else if (app.got_subcommand(check)) {
            return tdmr::cmd_check(seed.value_or(1), std::cout, points) ? kOk : kNumeric;
        }
    } catch (const tdmr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const tdmr::TrainingDiverged& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const tdmr::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    }
    return kOk;
}
