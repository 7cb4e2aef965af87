#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "minstab/minstab.hpp"

using namespace minstab;

namespace {

struct Common {
    std::string arch;
    std::string data = "teacher";
    std::string labels;
    std::size_t n = 0;
    std::size_t trials = 0;
    double beta = -1.0;
    std::uint64_t seed = 0;
    std::string out;
    std::string config;
    bool extended = false;
};

Architecture parse_arch(const std::string& text) {
    std::vector<int> v;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stoi(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw InputError("--arch: expected L,d,d0 but got '" + text + "'");
        }
    }
    if (v.size() != 3) throw InputError("--arch: expected L,d,d0 but got '" + text + "'");
    Architecture a{v[0], v[1], v[2]};
    a.validate();
    return a;
}

std::string labels_path_for(const Common& c) {
    if (!c.labels.empty()) return c.labels;
    std::string p = c.data;
    const auto pos = p.find("images-idx3");
    if (pos == std::string::npos) throw InputError("--data " + c.data + ": pass --labels for the label file");
    return p.replace(pos, 11, "labels-idx1");
}

void emit(const Common& c, const std::string& text) {
    if (c.out.empty()) std::cout << text;
    else write_text_file(c.out, text);
}

/// Training data for train / oracle / probe.  `teacher` and `toy` are
/// synthetic; anything else is an IDX image file.
Dataset load_data(const Common& c, const Architecture& arch, std::size_t n, std::uint64_t seed) {
    if (c.data == "toy") return n == 0 ? toy_pair(0.5, 0.1) : dedupe(toy_distribution(n, seed));
    if (c.data == "teacher") {
        TeacherSpec spec;
        spec.arch.input_dim = arch.input_dim;
        return teacher_dataset(spec, n == 0 ? 16 : n, seed).data;
    }
    return load_idx(c.data, labels_path_for(c), n == 0 ? std::nullopt : std::optional<std::size_t>(n));
}

Architecture arch_or(const Common& c, Architecture fallback) { return c.arch.empty() ? fallback : parse_arch(c.arch); }

int cmd_toy(const Common& c, bool no_oracle) {
    const auto r = run_counterexample(c.seed, !no_oracle);
    emit(c, to_json(r).dump(2) + "\n");
    return 0;
}

int cmd_train(const Common& c, const std::string& train_config) {
    TrainConfig cfg;
    if (!train_config.empty()) cfg = nlohmann::json::parse(read_text_file(train_config)).get<TrainConfig>();
    cfg.seed = c.seed;
    const Architecture arch = arch_or(c, {3, 2, 2});
    const Dataset d = load_data(c, arch, c.n, c.seed);
    const auto p = train_min_norm(arch, d, cfg);
    nlohmann::json extra = {{"squared_norm", squared_norm(p)},
                            {"interpolation_residual", interpolation_residual(p, d)},
                            {"n", d.size()},
                            {"train_config", cfg}};
    emit(c, params_to_string(p, extra));
    return 0;
}

int cmd_oracle(const Common& c, const std::string& oracle_config) {
    BruteForceConfig cfg;
    if (!oracle_config.empty()) cfg = nlohmann::json::parse(read_text_file(oracle_config)).get<BruteForceConfig>();
    cfg.seed = c.seed;
    const Architecture arch = arch_or(c, {3, 2, 2});
    const Dataset d = load_data(c, arch, c.n, c.seed);
    const auto r = brute_force_oracle(arch, d, cfg);
    emit(c, params_to_string(r.params, oracle_metadata(r)));
    return 0;
}

int cmd_analyze(const Common& c, const std::string& params_path, int k, double B) {
    const auto p = load_params(params_path);
    std::string text = layer_summary_csv(p);
    const auto eq = check_equidistribution(p, 1e-4);
    text += "equidist_spread," + format_double(eq.spread) + "\n";
    if (c.data != "teacher" || c.n > 0) {
        const Dataset d = load_data(c, p.arch(), c.n, c.seed);
        const int lo = k > 0 ? k : 1, hi = k > 0 ? k : p.depth() - 1;
        for (int j = lo; j <= hi; ++j) text += margin_report_csv(margin_report(p, d, j, B));
    }
    emit(c, text);
    return 0;
}

int cmd_stability(const Common& c, const std::string& base, const std::vector<std::string>& perturbed, int k,
                  std::size_t test_size, bool normalize) {
    if (perturbed.empty()) throw InputError("stability: at least one --perturbed file is required");
    TrialSet t{load_params(base), {}, {}, {}, c.n};
    for (const auto& f : perturbed) t.perturbed_params.push_back(load_params(f));
    for (std::size_t i = 0; i < perturbed.size(); ++i) t.resampled_indices.push_back(i);
    const Architecture& arch = t.arch();
    if (c.data == "toy") {
        t.test_inputs = {{0.5, 0.0}, {0.25, 0.0}, {0.0, 0.1}};
    } else if (c.data == "teacher") {
        TeacherSpec spec;
        spec.arch.input_dim = arch.input_dim;
        const TeacherDistribution dist(spec);
        std::mt19937_64 rng(c.seed);
        for (std::size_t i = 0; i < test_size; ++i) t.test_inputs.push_back(dist.input(rng));
    } else {
        t.test_inputs = load_idx(c.data, labels_path_for(c), test_size).inputs;
    }
    const double beta = c.beta >= 0.0 ? c.beta : 0.1;
    std::vector<StabilityRow> rows;
    const int lo = k > 0 ? k : 2, hi = k > 0 ? k : arch.depth - 1;
    for (int j = lo; j <= hi; ++j) {
        double sr = 0.0;
        sr += stable_rank(t.base_params.layer(j));
        for (const auto& p : t.perturbed_params) sr += stable_rank(p.layer(j));
        rows.push_back(make_row("given", subnetwork_stability(t, j, normalize), beta, sr / (1.0 + t.perturbed_params.size())));
    }
    rows.push_back(make_row("given", network_stability(t), beta, std::numeric_limits<double>::quiet_NaN()));
    emit(c, stability_csv(rows));
    return 0;
}

int cmd_sweep(const Common& c, const std::string& n_list, bool disjoint) {
    ExperimentConfig cfg;
    if (c.extended) {
        if (c.data == "teacher" || c.data == "toy") throw InputError("--extended needs an IDX image file as --data");
        cfg = ExperimentConfig::extended(c.data, labels_path_for(c));
    }
    if (!c.config.empty()) cfg = nlohmann::json::parse(read_text_file(c.config)).get<ExperimentConfig>();
    if (!c.arch.empty()) cfg.arch = parse_arch(c.arch);
    if (!c.extended && c.config.empty()) {
        if (c.data == "toy") cfg.source = DataSource::toy;
        else if (c.data != "teacher") {
            cfg.source = DataSource::idx;
            cfg.idx_images = c.data;
            cfg.idx_labels = labels_path_for(c);
        }
    }
    if (!n_list.empty()) {
        cfg.n_values.clear();
        std::stringstream ss(n_list);
        std::string part;
        while (std::getline(ss, part, ',')) {
            try {
                cfg.n_values.push_back(std::stoul(part));
            } catch (const std::exception&) {
                throw InputError("--n: expected a comma-separated list of sizes");
            }
        }
    } else if (c.n > 0) {
        cfg.n_values = {c.n};
    }
    if (c.trials > 0) cfg.trials = c.trials;
    if (c.beta >= 0.0) cfg.beta = c.beta;
    if (disjoint) cfg.mode = ResampleMode::disjoint_subsets;
    cfg.seed = c.seed;
    cfg.output.clear();
    if (cfg.source == DataSource::teacher) cfg.teacher.arch.input_dim = cfg.arch.input_dim;
    const auto r = run_stability_sweep(cfg);
    for (const auto& cell : r.cells)
        for (const auto& f : cell.failures) std::cerr << "warning: " << f << '\n';
    emit(c, r.csv());
    return 0;
}

int cmd_probe(const Common& c, const std::string& params_path, int k, std::size_t test_size) {
    const auto p = load_params(params_path);
    const std::size_t n = c.n == 0 ? 64 : c.n;
    Dataset train, test;
    if (c.data == "teacher" || c.data == "toy") {
        train = load_data(c, p.arch(), n, c.seed);
        test = load_data(c, p.arch(), test_size, c.seed + 1);
    } else {
        const Dataset all = load_idx(c.data, labels_path_for(c), n + test_size);
        for (std::size_t i = 0; i < all.size(); ++i) (i < n ? train : test).push_back(all.inputs[i], all.labels[i]);
    }
    std::string csv = "k,train_loss,test_loss,test_error\n";
    const int lo = k > 0 ? k : 1, hi = k > 0 ? k : p.depth() - 1;
    for (int j = lo; j <= hi; ++j) {
        const auto r = layer_compression_probe(p, j, train, test);
        csv += std::to_string(j) + "," + format_double(r.train_loss) + "," + format_double(r.test_loss) + "," +
               format_double(r.test_error) + "\n";
    }
    emit(c, csv);
    return 0;
}

void add_common(CLI::App* app, Common& c) {
    app->add_option("--arch", c.arch, "architecture L,d,d0");
    app->add_option("--data", c.data, "teacher, toy, or an IDX image file");
    app->add_option("--labels", c.labels, "IDX label file (default: derived from --data)");
    app->add_option("--trials", c.trials, "models per n");
    app->add_option("--beta", c.beta, "quantile level");
    app->add_option("--seed", c.seed, "random seed");
    app->add_option("--out", c.out, "output file (default: stdout)");
    app->add_option("--config", c.config, "JSON configuration file");
    app->add_flag("--extended", c.extended, "full Appendix D scale");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Minimum-norm interpolation and sub-network stability toolkit"};
    app.require_subcommand(1);
    Common c;
    bool no_oracle = false, disjoint = false, normalize = false;
    std::string params_path, base, n_list;
    std::vector<std::string> perturbed;
    int k = 0;
    double B = 2.0;
    std::size_t test_size = 256;

    auto* toy = app.add_subcommand("toy", "Main Result 2 counterexample");
    add_common(toy, c);
    toy->add_flag("--no-oracle", no_oracle, "closed form only");

    auto* train = app.add_subcommand("train", "train a minimum-norm interpolant");
    add_common(train, c);
    train->add_option("--n", c.n, "training-set size");

    auto* oracle = app.add_subcommand("oracle", "exact minimum-norm interpolant by pattern enumeration");
    add_common(oracle, c);
    oracle->add_option("--n", c.n, "training-set size");

    auto* analyze = app.add_subcommand("analyze", "stable ranks, equi-distribution and margins of a params file");
    add_common(analyze, c);
    analyze->add_option("params", params_path, "params file")->required();
    analyze->add_option("--n", c.n, "data points for the margin report");
    analyze->add_option("--k", k, "layer index (default: all hidden layers)");
    analyze->add_option("--B", B, "norm bound for the margin bounds");

    auto* stability = app.add_subcommand("stability", "stability of given base and perturbed models");
    add_common(stability, c);
    stability->add_option("--base", base, "base params file")->required();
    stability->add_option("--perturbed", perturbed, "perturbed params files")->required();
    stability->add_option("--n", c.n, "training-set size to record");
    stability->add_option("--k", k, "layer index (default: 2..L-1)");
    stability->add_option("--test-size", test_size, "test inputs");
    stability->add_flag("--normalize", normalize, "normalise sub-network values");

    auto* sweep = app.add_subcommand("sweep", "stability sweep over n");
    add_common(sweep, c);
    sweep->add_option("--n", n_list, "comma-separated sizes");
    sweep->add_flag("--disjoint", disjoint, "mutually exclusive training sets");

    auto* probe = app.add_subcommand("probe", "layer-compression probe");
    add_common(probe, c);
    probe->add_option("params", params_path, "params file")->required();
    probe->add_option("--n", c.n, "training-set size");
    probe->add_option("--k", k, "layer index (default: all hidden layers)");
    probe->add_option("--test-size", test_size, "test-set size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*toy) return cmd_toy(c, no_oracle);
        if (*train) return cmd_train(c, c.config);
        if (*oracle) return cmd_oracle(c, c.config);
        if (*analyze) return cmd_analyze(c, params_path, k, B);
        if (*stability) return cmd_stability(c, base, perturbed, k, test_size, normalize);
        if (*sweep) return cmd_sweep(c, n_list, disjoint);
        if (*probe) return cmd_probe(c, params_path, k, test_size);
    } catch (const ConvergenceError& e) {
        std::cerr << "convergence error: " << e.what() << '\n';
        return 3;
    } catch (const CapacityError& e) {
        std::cerr << "capacity error: " << e.what() << '\n';
        return 4;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
