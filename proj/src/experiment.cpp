#include "tdmr/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "tdmr/format.hpp"
#include "tdmr/kernels.hpp"

namespace tdmr {

namespace {

std::string trim(std::string_view s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string_view::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return std::string(s.substr(a, b - a + 1));
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument("not a finite number");
    return x;
}

long long to_int(const std::string& v) {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("not an integer");
    return x;
}

std::size_t to_count(const std::string& v) {
    const long long x = to_int(v);
    if (x < 0) throw std::invalid_argument("must be non-negative");
    return static_cast<std::size_t>(x);
}

uint64_t to_u64(const std::string& v) {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("must be non-negative");
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("not an integer");
    return x;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("expected true or false");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
    return out;
}

std::string taps_text(const std::vector<double>& taps) {
    std::vector<std::string> parts;
    for (double t : taps) parts.push_back(format_g9(t));
    return join(parts);
}

struct Key {
    std::string name;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define TDMR_DOUBLE(key, field)                                                          \
    Key{key, [](ExperimentConfig& c, const std::string& v) { c.field = to_double(v); }, \
        [](const ExperimentConfig& c) { return format_g9(c.field); }}
#define TDMR_INT(key, field)                                                                          \
    Key{key, [](ExperimentConfig& c, const std::string& v) { c.field = static_cast<int>(to_int(v)); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }}
#define TDMR_COUNT(key, field)                                                          \
    Key{key, [](ExperimentConfig& c, const std::string& v) { c.field = to_count(v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }}
#define TDMR_U64(key, field)                                                          \
    Key{key, [](ExperimentConfig& c, const std::string& v) { c.field = to_u64(v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }}
#define TDMR_BOOL(key, field)                                                          \
    Key{key, [](ExperimentConfig& c, const std::string& v) { c.field = to_bool(v); }, \
        [](const ExperimentConfig& c) { return bool_text(c.field); }}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        Key{"label", [](ExperimentConfig& c, const std::string& v) { c.label = v; },
            [](const ExperimentConfig& c) { return c.label; }},
        Key{"replication_seeds",
            [](ExperimentConfig& c, const std::string& v) {
                c.replication_seeds.clear();
                for (const auto& s : split_list(v)) c.replication_seeds.push_back(to_u64(s));
            },
            [](const ExperimentConfig& c) {
                std::vector<std::string> parts;
                for (auto s : c.replication_seeds) parts.push_back(std::to_string(s));
                return join(parts);
            }},
        TDMR_DOUBLE("channel.symbol_interval_T", channel.symbol_interval_T),
        TDMR_DOUBLE("channel.downtrack_pulse_width", channel.downtrack_pulse_width),
        TDMR_DOUBLE("channel.crosstrack_pulse_width", channel.crosstrack_pulse_width),
        TDMR_DOUBLE("channel.track_pitch", channel.track_pitch),
        TDMR_DOUBLE("channel.cts_fraction", channel.cts_fraction),
        TDMR_DOUBLE("channel.amplitude", channel.amplitude),
        TDMR_DOUBLE("channel.jitter_sigma_t", channel.jitter_sigma_t),
        TDMR_DOUBLE("channel.jitter_sigma_w", channel.jitter_sigma_w),
        TDMR_DOUBLE("channel.awgn_sigma", channel.awgn_sigma),
        TDMR_INT("channel.pulse_support_halflength", channel.pulse_support_halflength),
        TDMR_U64("channel.rng_seed", channel.rng_seed),
        TDMR_COUNT("dataset.sectors", dataset.sectors),
        TDMR_COUNT("dataset.bits_per_sector", dataset.bits_per_sector),
        TDMR_DOUBLE("dataset.train_fraction", dataset.train_fraction),
        Key{"dataset.path", [](ExperimentConfig& c, const std::string& v) { c.dataset.path = v; },
            [](const ExperimentConfig& c) { return c.dataset.path.string(); }},
        TDMR_BOOL("dataset.generate", dataset.generate),
        Key{"equalizer.arch", [](ExperimentConfig& c, const std::string& v) { c.equalizer.arch = parse_arch(v); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.equalizer.arch)); }},
        TDMR_INT("equalizer.M", equalizer.M),
        TDMR_INT("equalizer.K", equalizer.K),
        TDMR_INT("equalizer.M_prime", equalizer.M_prime),
        Key{"equalizer.basis", [](ExperimentConfig& c, const std::string& v) { c.equalizer.basis = parse_basis(v); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.equalizer.basis)); }},
        Key{"equalizer.activation",
            [](ExperimentConfig& c, const std::string& v) {
                if (v != "tanh") throw std::invalid_argument("only tanh is supported");
                c.equalizer.activation = Activation::Tanh;
            },
            [](const ExperimentConfig&) { return std::string("tanh"); }},
        Key{"training.loss", [](ExperimentConfig& c, const std::string& v) { c.training.loss = parse_loss(v); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.training.loss)); }},
        TDMR_DOUBLE("training.learning_rate", training.learning_rate),
        TDMR_COUNT("training.minibatch", training.minibatch_N),
        TDMR_INT("training.epochs", training.epochs),
        TDMR_U64("training.seed", training.seed),
        TDMR_BOOL("training.adapt_target", training.adapt_target),
        TDMR_BOOL("training.monic", training.monic),
        TDMR_COUNT("training.target_len", training.target_len),
        TDMR_DOUBLE("training.lr_decay", training.lr_decay),
        Key{"training.solver",
            [](ExperimentConfig& c, const std::string& v) {
                if (v == "closed_form") c.solver = Solver::ClosedForm;
                else if (v == "sgd") c.solver = Solver::SGD;
                else throw std::invalid_argument("expected closed_form or sgd");
            },
            [](const ExperimentConfig& c) { return std::string(c.solver == Solver::ClosedForm ? "closed_form" : "sgd"); }},
        Key{"training.fixed_target",
            [](ExperimentConfig& c, const std::string& v) {
                const auto parts = split_list(v);
                if (parts.empty() || v == "none") {
                    c.fixed_target.reset();
                    return;
                }
                std::vector<double> taps;
                for (const auto& p : parts) taps.push_back(to_double(p));
                if (taps[0] == 0.0) throw std::invalid_argument("first tap must be non-zero");
                const double t0 = taps[0];
                for (double& t : taps) t /= t0;
                taps[0] = 1.0;
                c.fixed_target = PRTarget{taps, true};
            },
            [](const ExperimentConfig& c) { return c.fixed_target ? taps_text(c.fixed_target->taps) : std::string("none"); }},
        TDMR_BOOL("output.svg", emit_svg),
        TDMR_BOOL("output.llr_dump", dump_llr),
    };
    return table;
}

#undef TDMR_DOUBLE
#undef TDMR_INT
#undef TDMR_COUNT
#undef TDMR_U64
#undef TDMR_BOOL

std::string file_stem(const std::string& label) {
    std::string out;
    for (char c : label) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
    return out;
}

std::string k_column(const EqualizerSpec& spec) {
    return spec.arch == Arch::Linear2D ? "N/A" : std::to_string(spec.K);
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::string data_key(const ExperimentConfig& cfg, uint64_t seed) {
    std::string key;
    for (const auto& k : keys()) {
        if (k.name.starts_with("channel.") || k.name.starts_with("dataset.")) key += k.name + "=" + k.get(cfg) + "\n";
    }
    return key + "seed=" + std::to_string(seed);
}

using DataCache = std::map<std::string, DataSplit>;

RunResult run_experiment(const ExperimentConfig& cfg, DataCache* cache) {
    cfg.validate();
    ensure_dir(cfg.output_dir);
    const std::string label = cfg.display_label();
    const std::string stem = file_stem(label);
    const std::string hash = cfg.hash();

    RunResult result;
    result.label = label;
    result.K = k_column(cfg.equalizer);
    result.complexity = count_params(cfg.equalizer);

    for (uint64_t seed : cfg.replication_seeds) {
        DataSplit local;
        const DataSplit* data = nullptr;
        if (cache) {
            const std::string key = data_key(cfg, seed);
            auto it = cache->find(key);
            if (it == cache->end()) it = cache->emplace(key, make_data(cfg, seed)).first;
            data = &it->second;
        } else {
            local = make_data(cfg, seed);
            data = &local;
        }

        const auto base = cfg.output_dir / (stem + "_seed" + std::to_string(seed));
        std::ofstream log(base.string() + ".log");
        if (!log) throw IoError("cannot write training log " + base.string() + ".log");
        log << "# config_hash=" << hash << "\n# epoch minibatch loss lr\n";
        const TrainedModel trained = train_model(cfg, data->train, seed, [&](int e, std::size_t m, double loss, double lr) {
            log << e << ' ' << m << ' ' << format_g9(loss) << ' ' << format_g9(lr) << '\n';
        });
        if (trained.loss_history.empty()) log << "# closed-form solution\n";
        save_model(base.string() + ".model", trained.model, hash);

        const EvaluationOutput eval = evaluate(trained.model, data->test);
        if (cfg.dump_llr) write_llr_dump(base.string() + ".llr", eval.llr, eval.bits);
        MetricsReport m = eval.report;
        m.arch = label;
        result.seeds.push_back({seed, m});
        result.rows.push_back({seed_row_label(label, seed), result.K, m.ber, result.complexity, m.mi_bits, m.loss});
    }

    ReportRow mean{mean_row_label(label), result.K, 0.0, result.complexity, 0.0, 0.0};
    for (const auto& s : result.seeds) {
        mean.ber += s.metrics.ber;
        mean.mi_bits += s.metrics.mi_bits;
        mean.loss += s.metrics.loss;
    }
    const double n = static_cast<double>(result.seeds.size());
    mean.ber /= n;
    mean.mi_bits /= n;
    mean.loss /= n;
    result.rows.push_back(mean);

    write_report_csv(cfg.output_dir / (stem + ".csv"), {hash, result.rows});
    return result;
}

void write_svg(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    double xmax = 1, ymin = 1, ymax = 0;
    for (const auto& r : runs) {
        xmax = std::max(xmax, static_cast<double>(r.complexity));
        ymin = std::min(ymin, r.rows.back().ber);
        ymax = std::max(ymax, r.rows.back().ber);
    }
    if (ymax <= ymin) ymax = ymin + 1e-3;
    const double pad = 0.1 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    const double W = 640, H = 400, L = 70, B = 50;
    auto px = [&](double x) { return L + (W - L - 20) * x / (1.1 * xmax); };
    auto py = [&](double y) { return H - B - (H - B - 20) * (y - ymin) / (ymax - ymin); };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - 20 << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"20\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\">complexity</text>\n";
    out << "<text x=\"5\" y=\"15\">BER</text>\n";
    for (const auto& r : runs) {
        const double x = px(static_cast<double>(r.complexity)), y = py(r.rows.back().ber);
        out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\"steelblue\"/>\n";
        out << "<text x=\"" << x + 6 << "\" y=\"" << y - 6 << "\" font-size=\"11\">" << r.label << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
    training.loss = Loss::MSE;
    training.learning_rate = 0.01;
    training.epochs = 10;
    training.monic = false;
    channel.place_readers();
}

void ExperimentConfig::validate() const {
    try {
        channel.validate();
        equalizer.validate();
        training.validate();
        if (fixed_target) fixed_target->validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (dataset.sectors < 2) throw ConfigError("dataset.sectors must be >= 2 (train and test split)");
    if (dataset.bits_per_sector < 1) throw ConfigError("dataset.bits_per_sector must be >= 1");
    if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0)) {
        throw ConfigError("dataset.train_fraction must lie in (0, 1)");
    }
    if (replication_seeds.empty()) throw ConfigError("replication_seeds must not be empty");
    if (fixed_target && fixed_target->length() != training.target_len) {
        throw ConfigError("training.fixed_target length differs from training.target_len");
    }
}

std::string ExperimentConfig::display_label() const {
    return label.empty() ? std::string(to_string(equalizer.arch)) : label;
}

std::string ExperimentConfig::canonical() const {
    std::vector<std::string> lines;
    for (const auto& k : keys()) lines.push_back(k.name + " = " + k.get(*this));
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical())); }

std::vector<std::string> config_keys() {
    std::vector<std::string> out{"output_dir"};
    for (const auto& k : keys()) out.push_back(k.name);
    return out;
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base, std::string_view source) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto where = std::string(source) + ":" + std::to_string(line_no);
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        if (key == "output_dir") {
            base.output_dir = value;
            continue;
        }
        const auto& table = keys();
        auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == key; });
        if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "'");
        try {
            it->set(base, value);
        } catch (const std::exception& e) {
            throw ConfigError(where + ": bad value for " + key + ": '" + value + "' (" + e.what() + ")");
        }
    }
    base.channel.place_readers();
    return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base), path.string());
}

DataSplit make_data(const ExperimentConfig& cfg, uint64_t replication_seed) {
    std::vector<ReadbackSector> sectors;
    const auto& path = cfg.dataset.path;
    auto synthesize = [&] {
        kernels::SectorBatch batch{cfg.channel, cfg.dataset.sectors, cfg.dataset.bits_per_sector};
        batch.channel.rng_seed = derive_seed(cfg.channel.rng_seed, replication_seed);
        return kernels::parallel::synthesize(batch);
    };
    if (!path.empty() && std::filesystem::exists(path)) {
        sectors = load_dataset(path);
    } else if (!cfg.dataset.generate) {
        throw IoError(path.empty() ? "no dataset: set dataset.path to a sector file or enable dataset.generate"
                                   : "dataset file " + path.string() +
                                         " does not exist; run 'tdmr generate' first or set dataset.generate = true");
    } else {
        sectors = synthesize();
        if (!path.empty()) save_dataset(path, sectors);
    }
    if (sectors.size() < 2) throw ConfigError("dataset needs at least two sectors for a train/test split");
    auto n_train = static_cast<std::size_t>(std::floor(cfg.dataset.train_fraction * static_cast<double>(sectors.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, sectors.size() - 1);
    DataSplit split;
    split.train.assign(std::make_move_iterator(sectors.begin()),
                       std::make_move_iterator(sectors.begin() + static_cast<std::ptrdiff_t>(n_train)));
    split.test.assign(std::make_move_iterator(sectors.begin() + static_cast<std::ptrdiff_t>(n_train)),
                      std::make_move_iterator(sectors.end()));
    return split;
}

TrainedModel train_model(const ExperimentConfig& cfg, std::span<const ReadbackSector> train, uint64_t replication_seed,
                         const TrainLog& log) {
    const EqualizerSpec& spec = cfg.equalizer;
    const uint64_t seed = derive_seed(cfg.training.seed, replication_seed);
    const bool mse = cfg.training.loss == Loss::MSE;
    const LinearSolution lin = solve_lmmse(train, spec.M, cfg.training.target_len, cfg.fixed_target);

    TrainedModel out;
    out.model.spec = spec;
    if (spec.arch == Arch::Linear2D && mse && cfg.solver == Solver::ClosedForm) {
        out.model.params = lin.params;
        out.model.target = lin.target;
        out.model.noise_var = lin.residual_mse;
        return out;
    }

    TrainConfig tc = cfg.training;
    tc.seed = seed;
    tc.noise_var = lin.residual_mse;
    if (cfg.fixed_target) tc.adapt_target = false;

    InitOptions init;
    init.seed = seed;
    init.data = train;
    PRTarget g0 = lin.target;
    if (spec.arch == Arch::Linear2D && mse) {
        // SGD baseline starts from a scaled delta and a plain monic target
        if (!cfg.fixed_target) g0 = PRTarget{std::vector<double>(tc.target_len, 0.0), true}, g0.taps[0] = 1.0;
    } else {
        init.linear_taps[0].assign(lin.params.block("f0").begin(), lin.params.block("f0").end());
        init.linear_taps[1].assign(lin.params.block("f1").begin(), lin.params.block("f1").end());
    }
    if (!tc.monic && !(mse && tc.adapt_target)) g0.monic = false;

    const TrainReport rep = fit(spec, initialize(spec, init), train, g0, tc, log);
    out.model.params = rep.final_params;
    out.model.target = rep.final_target;
    out.model.noise_var = mse ? residual_variance(spec, rep.final_params, rep.final_target, train) : tc.noise_var;
    out.loss_history = rep.loss_history;
    return out;
}

std::string seed_row_label(const std::string& label, uint64_t seed) { return label + " [seed " + std::to_string(seed) + "]"; }
std::string mean_row_label(const std::string& label) { return label + " [mean]"; }

void cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& out_path) {
    cfg.validate();
    kernels::SectorBatch batch{cfg.channel, cfg.dataset.sectors, cfg.dataset.bits_per_sector};
    batch.channel.rng_seed = derive_seed(cfg.channel.rng_seed, cfg.replication_seeds.front());
    if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
    save_dataset(out_path, kernels::parallel::synthesize(batch));
}

RunResult cmd_run(const ExperimentConfig& cfg) { return run_experiment(cfg, nullptr); }

std::vector<RunResult> cmd_sweep(const std::vector<ExperimentConfig>& configs, const std::filesystem::path& out_dir) {
    if (configs.size() < 2) throw ConfigError("sweep needs at least two configs");
    ensure_dir(out_dir);
    DataCache cache;
    std::vector<RunResult> runs;
    std::string hashes;
    bool svg = false;
    for (ExperimentConfig cfg : configs) {
        cfg.output_dir = out_dir;
        svg = svg || cfg.emit_svg;
        hashes += cfg.hash();
        runs.push_back(run_experiment(cfg, &cache));
    }
    const std::string hash = hex64(fnv1a64(hashes));

    std::vector<ReportRow> rows;
    for (const auto& r : runs) rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.complexity < b.complexity; });
    write_report_csv(out_dir / "sweep.csv", {hash, rows});

    std::vector<const RunResult*> order;
    for (const auto& r : runs) order.push_back(&r);
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->complexity < b->complexity; });
    std::ofstream plot(out_dir / "complexity_ber.csv");
    if (!plot) throw IoError("cannot write " + (out_dir / "complexity_ber.csv").string());
    plot << "# config_hash=" << hash << "\nlabel,complexity,ber\n";
    for (const auto* r : order) plot << csv_escape(r->label) << ',' << r->complexity << ',' << format_g9(r->rows.back().ber) << '\n';
    if (svg) write_svg(out_dir / "complexity_ber.svg", runs);
    return runs;
}

void cmd_complexity(std::ostream& out) {
    struct Row {
        const char* name;
        EqualizerSpec spec;
        std::size_t published;
    };
    auto spec = [](Arch a, int M, int K, int M_prime = 2, Basis b = Basis::Gaussian) {
        EqualizerSpec s;
        s.arch = a;
        s.M = M;
        s.K = K;
        s.M_prime = M_prime;
        s.basis = b;
        return s;
    };
    const Row rows[] = {
        {"2D-LMMSE with fixed [3,7,1] target", spec(Arch::Linear2D, 5, 0), 22},
        {"2D-LMMSE", spec(Arch::Linear2D, 5, 0), 22},
        {"2D-LECE", spec(Arch::Linear2D, 5, 0), 22},
        {"2D-LECE with 21 Taps per ADC", spec(Arch::Linear2D, 10, 0), 42},
        {"RBFNN", spec(Arch::RBFNN, 5, 6), 157},
        {"RBFNN", spec(Arch::RBFNN, 5, 20), 521},
        {"RBFNN", spec(Arch::RBFNN, 5, 30), 781},
        {"FIR-RBFNN, Gaussian Basis", spec(Arch::FIRRBFNN, 5, 6, 2, Basis::Gaussian), 107},
        {"FIR RBFNN, Tanh Basis", spec(Arch::FIRRBFNN, 5, 6, 2, Basis::Tanh), 107},
        {"MLP", spec(Arch::MLP, 5, 6), 145},
        {"RC-MLP1", spec(Arch::RCMLP1, 5, 6), 31},
        {"RC-MLP1", spec(Arch::RCMLP1, 5, 10), 35},
        {"RC-MLP1", spec(Arch::RCMLP1, 5, 14), 39},
        {"RC-MLP1", spec(Arch::RCMLP1, 5, 18), 43},
        {"RC-MLP2", spec(Arch::RCMLP2, 5, 9), 34},
        {"RC-MLP3", spec(Arch::RCMLP3, 5, 9), 35},
        {"RC-MLP4", spec(Arch::RCMLP4, 5, 18), 44},
    };
    out << std::left << std::setw(38) << "architecture" << std::setw(6) << "K" << std::setw(8) << "ours" << std::setw(11)
        << "published" << "status\n";
    for (const auto& r : rows) {
        const std::size_t ours = count_params(r.spec);
        std::string status = ours == r.published ? "match" : "MISMATCH";
        if (ours + 1 == r.published && (r.spec.arch == Arch::RCMLP2 || r.spec.arch == Arch::RCMLP3)) {
            status = "documented +1 delta";
        }
        out << std::setw(38) << r.name << std::setw(6) << k_column(r.spec) << std::setw(8) << ours << std::setw(11)
            << r.published << status << "\n";
    }
}

void write_llr_dump(const std::filesystem::path& path, std::span<const double> llr, std::span<const int8_t> bits) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "# n llr hard u\n";
    for (std::size_t i = 0; i < llr.size(); ++i) {
        out << i << ' ' << format_g9(llr[i]) << ' ' << (llr[i] >= 0.0 ? 1 : -1) << ' ' << int(bits[i]) << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

MiEstimate cmd_mi(const std::filesystem::path& llr_dump, std::ostream& out, int k) {
    std::ifstream in(llr_dump);
    if (!in) throw IoError("cannot read LLR dump " + llr_dump.string());
    std::string line;
    std::vector<double> llr;
    std::vector<int8_t> bits;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        std::istringstream fields(t);
        std::string n, value, hard, u;
        std::string extra;
        try {
            if (!(fields >> n >> value >> hard >> u) || (fields >> extra)) {
                throw std::invalid_argument("expected 'n llr hard u'");
            }
            llr.push_back(to_double(value));
            const long long b = to_int(u);
            if (b != 1 && b != -1) throw std::invalid_argument("bit must be +1 or -1");
            bits.push_back(static_cast<int8_t>(b));
        } catch (const std::exception& e) {
            throw IoError(llr_dump.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    const MiEstimate mi = mutual_information(llr, BitSequence(bits), k);
    out << "samples=" << llr.size() << " mi_bits=" << format_g9(mi.bits()) << " mi_nats=" << format_g9(mi.nats)
        << " raw_nats=" << format_g9(mi.raw_nats) << (mi.clamped ? " clamped" : "") << "\n";
    if (mi.degenerate) out << "note: " << mi.diagnostic << "\n";
    return mi;
}

bool cmd_check(uint64_t seed, std::ostream& out, int points) {
    const std::pair<Arch, int> archs[] = {{Arch::Linear2D, 0}, {Arch::MLP, 6},    {Arch::RBFNN, 6},  {Arch::FIRRBFNN, 6},
                                          {Arch::RCMLP1, 6},   {Arch::RCMLP2, 9}, {Arch::RCMLP3, 9}, {Arch::RCMLP4, 18}};
    ChannelConfig ch;
    ch.place_readers();
    ch.rng_seed = seed;
    std::mt19937_64 rng(seed);
    const ReadbackSector sector = synthesize_sector(BitSequence::random(600, rng), ch);
    bool ok = true;
    for (const auto& [arch, K] : archs) {
        EqualizerSpec spec;
        spec.arch = arch;
        spec.M = 3;
        spec.K = K;
        for (Loss loss : {Loss::MSE, Loss::CE}) {
            const double tol = loss == Loss::MSE ? 1e-6 : 1e-4;
            double worst = 0.0;
            int resampled = 0;
            for (int p = 0; p < points; ++p) {
                InitOptions init;
                init.seed = derive_seed(seed, static_cast<uint64_t>(p));
                ParameterSet params = initialize(spec, init);
                std::normal_distribution<double> jitter(0.0, 0.05);
                for (double& v : params.values()) v += jitter(rng);
                PRTarget g{{1.0, 0.8 + jitter(rng), 0.2 + jitter(rng)}, false};
                for (int attempt = 0;; ++attempt) {
                    std::uniform_int_distribution<std::size_t> pick(10, sector.size() - 80);
                    const std::size_t b = pick(rng);
                    const auto r = gradient_check(spec, params, g, sector, b, b + 64, loss, 1e-5, 0.5);
                    if (r.tie_detected && attempt < 20) {
                        ++resampled;
                        continue;
                    }
                    worst = std::max(worst, r.max_rel_error);
                    break;
                }
            }
            const bool pass = worst <= tol;
            ok = ok && pass;
            out << (pass ? "ok   " : "FAIL ") << std::left << std::setw(10) << to_string(arch) << std::setw(4)
                << to_string(loss) << " max_rel_error=" << format_g9(worst) << " tol=" << format_g9(tol)
                << " resampled=" << resampled << "\n";
        }
    }
    return ok;
}

Interval bootstrap_mean_interval(std::span<const double> values, double level, std::size_t resamples, uint64_t seed) {
    if (values.empty()) throw std::invalid_argument("bootstrap: no values");
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap: level must lie in (0, 1)");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    std::vector<double> means(resamples);
    for (auto& m : means) {
        double acc = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) acc += values[pick(rng)];
        m = acc / static_cast<double>(values.size());
    }
    std::sort(means.begin(), means.end());
    const double tail = 0.5 * (1.0 - level);
    auto at = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(resamples - 1) + 0.5));
        return means[std::min(idx, resamples - 1)];
    };
    return {at(tail), at(1.0 - tail)};
}

}  // namespace tdmr
