#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "minstab/dataset.hpp"
#include "minstab/error.hpp"
#include "minstab/linalg.hpp"
#include "minstab/minnorm.hpp"
#include "minstab/network.hpp"
#include "minstab/serialize.hpp"
#include "minstab/spectral.hpp"
#include "minstab/stability.hpp"

namespace minstab {

// ---------------------------------------------------------------------------
// IDX files
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
    if (off + 4 > b.size()) throw FormatError(path + ": truncated header", off);
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put_be32(std::string& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

}  // namespace detail

/// Binarised IDX dataset: pixels /255, each flattened image scaled by
/// 1/max(1, ‖x‖), classes 0–4 → −1 and 5–9 → +1.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::optional<std::size_t> limit = std::nullopt) {
    const auto img = detail::read_bytes(images_path);
    const auto lab = detail::read_bytes(labels_path);
    if (detail::read_be32(img, 0, images_path) != kIdxImageMagic) throw FormatError(images_path + ": bad image magic", 0);
    if (detail::read_be32(lab, 0, labels_path) != kIdxLabelMagic) throw FormatError(labels_path + ": bad label magic", 0);
    const std::size_t count = detail::read_be32(img, 4, images_path);
    const std::size_t rows = detail::read_be32(img, 8, images_path);
    const std::size_t cols = detail::read_be32(img, 12, images_path);
    const std::size_t label_count = detail::read_be32(lab, 4, labels_path);
    if (label_count != count)
        throw FormatError(labels_path + ": label count " + std::to_string(label_count) + " does not match image count " +
                              std::to_string(count),
                          4);
    if (rows == 0 || cols == 0) throw FormatError(images_path + ": zero image dimension", 8);
    const std::size_t pixels = rows * cols;
    if (img.size() < 16 + count * pixels) throw FormatError(images_path + ": truncated pixel payload", img.size());
    if (lab.size() < 8 + count) throw FormatError(labels_path + ": truncated label payload", lab.size());

    const std::size_t take = limit ? std::min(*limit, count) : count;
    Dataset out;
    for (std::size_t i = 0; i < take; ++i) {
        Vector x(pixels);
        for (std::size_t p = 0; p < pixels; ++p) x[p] = img[16 + i * pixels + p] / 255.0;
        const double nrm = norm2(x);
        if (nrm > 1.0)
            for (auto& v : x) v /= nrm;
        const unsigned cls = lab[8 + i];
        if (cls > 9) throw FormatError(labels_path + ": label " + std::to_string(cls) + " is not a digit class", 8 + i);
        out.push_back(std::move(x), cls < 5 ? -1.0 : 1.0);
    }
    return out;
}

inline void write_idx_images(const std::string& path, std::size_t rows, std::size_t cols,
                             const std::vector<std::vector<unsigned char>>& images) {
    std::string out;
    detail::put_be32(out, kIdxImageMagic);
    detail::put_be32(out, static_cast<std::uint32_t>(images.size()));
    detail::put_be32(out, static_cast<std::uint32_t>(rows));
    detail::put_be32(out, static_cast<std::uint32_t>(cols));
    for (const auto& im : images) {
        if (im.size() != rows * cols) throw InputError("write_idx_images: image size mismatch");
        out.append(im.begin(), im.end());
    }
    write_text_file(path, out);
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
    std::string out;
    detail::put_be32(out, kIdxLabelMagic);
    detail::put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.append(labels.begin(), labels.end());
    write_text_file(path, out);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Uniform draw from the closed unit ball in ℝ^d.
inline Vector uniform_ball(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vector x(d);
    double nrm = 0.0;
    do {
        for (auto& v : x) v = g(rng);
        nrm = norm2(x);
    } while (nrm == 0.0);
    const double radius = std::pow(std::uniform_real_distribution<double>(0.0, 1.0)(rng), 1.0 / static_cast<double>(d));
    for (auto& v : x) v *= radius / nrm;
    return x;
}

enum class TeacherLabels { value, sign };

/// Teacher network of depth L* whose every layer is rescaled to Frobenius norm
/// exactly B.  Inputs with |N*(x)| < margin_floor are rejected.  With
/// TeacherLabels::value the label is N*(x) itself, so the teacher interpolates
/// its data; with TeacherLabels::sign it is sign(N*(x)).
struct TeacherSpec {
    Architecture arch{2, 4, 4};
    double B = 2.0;
    std::uint64_t seed = 0;
    double margin_floor = 1.0;
    TeacherLabels labels = TeacherLabels::value;
};

inline NetworkParams teacher_network(const TeacherSpec& spec) {
    if (!(spec.B > 0.0)) throw InputError("TeacherSpec: B must be positive");
    std::mt19937_64 rng(spec.seed);
    const NetworkParams raw = gaussian_init(spec.arch, rng);
    auto w = raw.weights();
    for (auto& m : w) {
        const double f = frobenius_norm(m);
        if (f == 0.0) throw DegenerateTeacherError("teacher_network: sampled an all-zero layer");
        m *= spec.B / f;
    }
    return {spec.arch, std::move(w)};
}

/// Margin-rejection sampler for a teacher.
class TeacherDistribution {
public:
    static constexpr std::size_t kProbeDraws = 100000;
    static constexpr double kMaxRejection = 0.99;

    explicit TeacherDistribution(const TeacherSpec& spec) : spec_(spec), teacher_(teacher_network(spec)) {
        std::mt19937_64 probe(spec.seed ^ 0x9e3779b97f4a7c15ULL);
        std::size_t rejected = 0;
        for (std::size_t i = 0; i < kProbeDraws; ++i)
            if (std::abs(predict(teacher_, uniform_ball(spec.arch.input_dim, probe))) < spec.margin_floor) ++rejected;
        rejection_rate_ = static_cast<double>(rejected) / static_cast<double>(kProbeDraws);
        if (rejection_rate_ > kMaxRejection)
            throw DegenerateTeacherError("teacher: margin rejection rate " + std::to_string(rejection_rate_) +
                                         " exceeds 99% over 1e5 draws");
    }

    const NetworkParams& teacher() const noexcept { return teacher_; }
    double rejection_rate() const noexcept { return rejection_rate_; }

    std::pair<Vector, double> operator()(std::mt19937_64& rng) const {
        for (;;) {
            Vector x = uniform_ball(spec_.arch.input_dim, rng);
            const double out = predict(teacher_, x);
            if (std::abs(out) < spec_.margin_floor) continue;
            const double y = spec_.labels == TeacherLabels::value ? out : (out > 0.0 ? 1.0 : -1.0);
            return {std::move(x), y};
        }
    }

    Vector input(std::mt19937_64& rng) const { return (*this)(rng).first; }

private:
    TeacherSpec spec_;
    NetworkParams teacher_;
    double rejection_rate_ = 0.0;
};

struct TeacherData {
    Dataset data;
    NetworkParams teacher;
};

inline TeacherData teacher_dataset(const TeacherSpec& spec, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw InputError("teacher_dataset: n must be positive");
    const TeacherDistribution dist(spec);
    std::mt19937_64 rng(seed);
    Dataset d;
    while (d.size() < n) {
        auto [x, y] = dist(rng);
        d.push_back(std::move(x), y);
    }
    return {std::move(d), dist.teacher()};
}

/// Main Result 2 distribution: ((0, 1/10), −1) w.p. 1/2, ((1/2, 0), +1) w.p.
/// 1/4, ((1/4, 0), +1) w.p. 1/4.
inline std::pair<Vector, double> toy_draw(std::mt19937_64& rng) {
    const auto u = std::uniform_int_distribution<int>(0, 3)(rng);
    if (u < 2) return {{0.0, 0.1}, -1.0};
    if (u == 2) return {{0.5, 0.0}, 1.0};
    return {{0.25, 0.0}, 1.0};
}

/// n i.i.d. toy draws.  Atoms repeat, so the result generally has duplicate
/// inputs; see dedupe().
inline Dataset toy_distribution(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw InputError("toy_distribution: n must be positive");
    std::mt19937_64 rng(seed);
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        auto [x, y] = toy_draw(rng);
        d.push_back(std::move(x), y);
    }
    return d;
}

/// Removes repeated inputs, keeping the first occurrence.  Repeats with the
/// same label impose the same interpolation constraint; conflicting labels
/// raise InputError.
inline Dataset dedupe(const Dataset& data) {
    Dataset out;
    std::vector<std::pair<Vector, double>> seen;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto hit = std::find_if(seen.begin(), seen.end(), [&](const auto& s) { return s.first == data.inputs[i]; });
        if (hit != seen.end()) {
            if (hit->second != data.labels[i]) throw InputError("dedupe: repeated input with conflicting labels");
            continue;
        }
        seen.emplace_back(data.inputs[i], data.labels[i]);
        out.push_back(data.inputs[i], data.labels[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Main Result 2
// ---------------------------------------------------------------------------

struct CounterexampleSide {
    std::string source;  // "closed_form" or "oracle"
    NetworkParams base;
    NetworkParams resampled;
    double subnetwork_gap = 0.0;  // subnetwork_stability at k = 2, raw
    double network_gap = 0.0;     // |N(θ̂,(1/2,0)) − N(θ̂^{(1)},(1/2,0))|
    double base_output = 0.0;
    double resampled_output = 0.0;
    double stable_rank_w2 = 0.0;
    Vector layer_norms;
    double equidist_spread = 0.0;
    double objective = 0.0;
    std::optional<double> lower_bound;
};

struct CounterexampleReport {
    CounterexampleSide closed_form;
    std::optional<CounterexampleSide> oracle;
};

inline Dataset toy_pair(double x, double z) {
    Dataset d;
    d.push_back({x, 0.0}, 1.0);
    d.push_back({0.0, z}, -1.0);
    return d;
}

namespace detail {

inline CounterexampleSide counterexample_side(std::string source, NetworkParams base, NetworkParams resampled) {
    const std::vector<Vector> probes{{0.5, 0.0}, {0.25, 0.0}, {0.0, 0.1}};
    TrialSet trials{base, {resampled}, {0}, probes, 2};
    CounterexampleSide s{std::move(source), base, resampled};
    s.subnetwork_gap = subnetwork_stability(trials, 2, false).mean_abs_diff;
    s.base_output = predict(base, probes[0]);
    s.resampled_output = predict(resampled, probes[0]);
    s.network_gap = std::abs(s.base_output - s.resampled_output);
    s.stable_rank_w2 = stable_rank(base.layer(2));
    s.layer_norms = param_norm(base).per_layer;
    s.equidist_spread = check_equidistribution(base, 0.0).spread;
    s.objective = squared_norm(base);
    return s;
}

}  // namespace detail

/// Base set {((1/2,0),+1), ((0,1/10),−1)} and its resampling with x₊ = (1/4,0),
/// solved in closed form and, when `with_oracle`, by brute_force_oracle.
inline CounterexampleReport run_counterexample(std::uint64_t seed, bool with_oracle = true) {
    CounterexampleReport r{detail::counterexample_side("closed_form", toy_closed_form(0.5, 0.1), toy_closed_form(0.25, 0.1)),
                           std::nullopt};
    r.closed_form.lower_bound = toy_norm_lower_bound(0.5, 0.1);
    if (with_oracle) {
        BruteForceConfig cfg;
        cfg.seed = seed;
        const auto base = brute_force_oracle({3, 2, 2}, toy_pair(0.5, 0.1), cfg);
        const auto resampled = brute_force_oracle({3, 2, 2}, toy_pair(0.25, 0.1), cfg);
        auto side = detail::counterexample_side("oracle", base.params, resampled.params);
        side.lower_bound = base.certificate.lower_bound;
        r.oracle = std::move(side);
    }
    return r;
}

inline nlohmann::json to_json(const CounterexampleSide& s) {
    nlohmann::json j = {{"source", s.source},
                        {"subnetwork_gap_k2", s.subnetwork_gap},
                        {"network_gap_at_half_0", s.network_gap},
                        {"base_output_at_half_0", s.base_output},
                        {"resampled_output_at_half_0", s.resampled_output},
                        {"stable_rank_w2", s.stable_rank_w2},
                        {"layer_norms", s.layer_norms},
                        {"equidist_spread", s.equidist_spread},
                        {"objective", s.objective}};
    j["lower_bound"] = s.lower_bound ? nlohmann::json(*s.lower_bound) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json to_json(const CounterexampleReport& r) {
    nlohmann::json j = {{"closed_form", to_json(r.closed_form)}};
    j["oracle"] = r.oracle ? to_json(*r.oracle) : nlohmann::json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// Stability sweeps
// ---------------------------------------------------------------------------

enum class DataSource { teacher, toy, idx };
enum class ResampleMode { replace_one, disjoint_subsets };

struct ExperimentConfig {
    Architecture arch{4, 8, 4};
    DataSource source = DataSource::teacher;
    TeacherSpec teacher{};
    std::string idx_images;
    std::string idx_labels;
    std::vector<std::size_t> n_values{16, 64, 256};
    /// Models per n: the base model plus trials − 1 resampled ones.
    std::size_t trials = 5;
    double beta = 0.1;
    /// Unset: on for IDX data, off for teacher and toy data.
    std::optional<bool> normalize;
    ResampleMode mode = ResampleMode::replace_one;
    std::string output;
    std::uint64_t seed = 0;
    /// Weight-initialisation seed shared by every trial.
    std::uint64_t init_seed = 0;
    std::size_t test_size = 256;
    TrainConfig train{};

    bool normalize_effective() const { return normalize.value_or(source == DataSource::idx); }

    void validate() const {
        arch.validate();
        if (n_values.empty()) throw InputError("ExperimentConfig: empty n list");
        if (std::any_of(n_values.begin(), n_values.end(), [](std::size_t n) { return n == 0; }))
            throw InputError("ExperimentConfig: n values must be positive");
        if (trials < 2) throw InputError("ExperimentConfig: trials must be at least 2");
        if (!(beta >= 0.0 && beta <= 1.0)) throw InputError("ExperimentConfig: beta must lie in [0, 1]");
        if (test_size < 1) throw InputError("ExperimentConfig: test_size must be positive");
        if (source == DataSource::idx && (idx_images.empty() || idx_labels.empty()))
            throw InputError("ExperimentConfig: idx source needs image and label paths");
        if (source == DataSource::teacher && teacher.arch.input_dim != arch.input_dim)
            throw InputError("ExperimentConfig: teacher and student input dimensions differ");
        train.validate();
    }

    /// Full-scale Appendix D setting: depth 8, width 100, n = 10⁴, Adam with
    /// the paper's schedule and normalised sub-networks.
    static ExperimentConfig extended(const std::string& images, const std::string& labels) {
        ExperimentConfig c;
        c.arch = {8, 100, 784};
        c.source = DataSource::idx;
        c.idx_images = images;
        c.idx_labels = labels;
        c.n_values = {10000};
        c.mode = ResampleMode::disjoint_subsets;
        c.train = TrainConfig::appendix_d();
        c.test_size = 1000;
        return c;
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"arch", {{"L", c.arch.depth}, {"d", c.arch.width}, {"d0", c.arch.input_dim}}},
         {"source", c.source == DataSource::teacher ? "teacher" : c.source == DataSource::toy ? "toy" : "idx"},
         {"teacher",
          {{"L", c.teacher.arch.depth},
           {"d", c.teacher.arch.width},
           {"d0", c.teacher.arch.input_dim},
           {"B", c.teacher.B},
           {"seed", c.teacher.seed},
           {"margin_floor", c.teacher.margin_floor},
           {"labels", c.teacher.labels == TeacherLabels::value ? "value" : "sign"}}},
         {"idx_images", c.idx_images},
         {"idx_labels", c.idx_labels},
         {"n_values", c.n_values},
         {"trials", c.trials},
         {"beta", c.beta},
         {"mode", c.mode == ResampleMode::replace_one ? "replace-one" : "disjoint-subsets"},
         {"output", c.output},
         {"seed", c.seed},
         {"init_seed", c.init_seed},
         {"test_size", c.test_size},
         {"train", c.train}};
    j["normalize"] = c.normalize ? nlohmann::json(*c.normalize) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    try {
        if (j.contains("arch")) {
            const auto& a = j.at("arch");
            c.arch = {a.value("L", c.arch.depth), a.value("d", c.arch.width), a.value("d0", c.arch.input_dim)};
        }
        if (j.contains("source")) {
            const auto s = j.at("source").get<std::string>();
            if (s == "teacher") c.source = DataSource::teacher;
            else if (s == "toy") c.source = DataSource::toy;
            else if (s == "idx") c.source = DataSource::idx;
            else throw InputError("ExperimentConfig: unknown source '" + s + "'");
        }
        if (j.contains("teacher")) {
            const auto& t = j.at("teacher");
            c.teacher.arch = {t.value("L", c.teacher.arch.depth), t.value("d", c.teacher.arch.width),
                              t.value("d0", c.teacher.arch.input_dim)};
            c.teacher.B = t.value("B", c.teacher.B);
            c.teacher.seed = t.value("seed", c.teacher.seed);
            c.teacher.margin_floor = t.value("margin_floor", c.teacher.margin_floor);
            const auto labels = t.value("labels", std::string("value"));
            if (labels != "value" && labels != "sign") throw InputError("ExperimentConfig: teacher labels must be value or sign");
            c.teacher.labels = labels == "value" ? TeacherLabels::value : TeacherLabels::sign;
        }
        c.idx_images = j.value("idx_images", c.idx_images);
        c.idx_labels = j.value("idx_labels", c.idx_labels);
        c.n_values = j.value("n_values", c.n_values);
        c.trials = j.value("trials", c.trials);
        c.beta = j.value("beta", c.beta);
        if (j.contains("normalize") && !j.at("normalize").is_null()) c.normalize = j.at("normalize").get<bool>();
        if (j.contains("mode")) {
            const auto m = j.at("mode").get<std::string>();
            if (m == "replace-one") c.mode = ResampleMode::replace_one;
            else if (m == "disjoint-subsets") c.mode = ResampleMode::disjoint_subsets;
            else throw InputError("ExperimentConfig: unknown mode '" + m + "'");
        }
        c.output = j.value("output", c.output);
        c.seed = j.value("seed", c.seed);
        c.init_seed = j.value("init_seed", c.init_seed);
        c.test_size = j.value("test_size", c.test_size);
        if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("experiment config: ") + e.what());
    }
}

/// Training sets, trained models (empty where training failed) and test
/// inputs of one sweep cell.  Model 0 is the base model.
struct SweepCell {
    std::size_t n = 0;
    std::vector<Dataset> train_sets;
    std::vector<std::optional<NetworkParams>> models;
    std::vector<std::size_t> resampled_indices;
    std::vector<Vector> test_inputs;
    std::vector<std::string> failures;

    bool complete() const {
        return std::all_of(models.begin(), models.end(), [](const auto& m) { return m.has_value(); });
    }

    /// Base model and the successful perturbed models; empty when the base
    /// model or every perturbed one failed.
    std::optional<TrialSet> trial_set() const {
        if (models.empty() || !models.front()) return std::nullopt;
        TrialSet t{*models.front(), {}, {}, test_inputs, n};
        for (std::size_t i = 1; i < models.size(); ++i)
            if (models[i]) {
                t.perturbed_params.push_back(*models[i]);
                t.resampled_indices.push_back(i - 1 < resampled_indices.size() ? resampled_indices[i - 1] : 0);
            }
        if (t.perturbed_params.empty()) return std::nullopt;
        return t;
    }
};

struct SweepResult {
    std::vector<StabilityRow> rows;
    std::vector<SweepCell> cells;
    std::optional<NetworkParams> teacher;

    std::string csv() const { return stability_csv(rows); }
};

namespace detail {

struct DataPlan {
    Sampler sampler;                      // fresh labelled draws (teacher/toy)
    std::function<Vector(std::mt19937_64&)> test_draw;
    std::vector<std::pair<Vector, double>> pool;  // idx examples, shuffled
    std::size_t next = 0;
};

inline std::pair<Vector, double> plan_draw(DataPlan& plan, std::mt19937_64& rng) {
    if (plan.sampler) return plan.sampler(rng);
    if (plan.next >= plan.pool.size()) throw InputError("sweep: IDX pool exhausted");
    return plan.pool[plan.next++];
}

inline Dataset plan_dataset(DataPlan& plan, std::size_t n, std::mt19937_64& rng) {
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        auto [x, y] = plan_draw(plan, rng);
        d.push_back(std::move(x), y);
    }
    return d;
}

inline double mean_of(const Vector& v) {
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

}  // namespace detail

/// Appendix D protocol at desk scale.  For every n, trains `trials` models from
/// one shared initialisation seed: in replace-one mode on a base set and on
/// copies with one random example resampled, in disjoint-subsets mode on
/// mutually exclusive sets.  Emits one sub-network row per k ∈ 2..L−1 and one
/// full-network row per n.  A training failure marks the row incomplete.
inline SweepResult run_stability_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    SweepResult out;
    std::optional<TeacherDistribution> teacher;
    detail::DataPlan plan;

    switch (cfg.source) {
    case DataSource::teacher:
        teacher.emplace(cfg.teacher);
        out.teacher = teacher->teacher();
        plan.sampler = [&teacher](std::mt19937_64& rng) { return (*teacher)(rng); };
        plan.test_draw = [&teacher](std::mt19937_64& rng) { return teacher->input(rng); };
        break;
    case DataSource::toy:
        plan.sampler = toy_draw;
        plan.test_draw = [](std::mt19937_64& rng) { return toy_draw(rng).first; };
        break;
    case DataSource::idx: {
        const Dataset all = load_idx(cfg.idx_images, cfg.idx_labels);
        for (std::size_t i = 0; i < all.size(); ++i) plan.pool.emplace_back(all.inputs[i], all.labels[i]);
        std::mt19937_64 shuffle_rng(cfg.seed);
        std::shuffle(plan.pool.begin(), plan.pool.end(), shuffle_rng);
        break;
    }
    }

    const bool normalize = cfg.normalize_effective();
    const std::string mode = cfg.mode == ResampleMode::replace_one ? "replace-one" : "disjoint-subsets";
    TrainConfig train = cfg.train;
    train.seed = cfg.init_seed;

    for (std::size_t ni = 0; ni < cfg.n_values.size(); ++ni) {
        const std::size_t n = cfg.n_values[ni];
        std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(ni)};
        std::mt19937_64 rng(seq);
        SweepCell cell;
        cell.n = n;

        if (cfg.mode == ResampleMode::replace_one) {
            const Dataset base = detail::plan_dataset(plan, n, rng);
            cell.train_sets.push_back(base);
            for (std::size_t t = 1; t < cfg.trials; ++t) {
                const std::size_t i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
                Dataset d = base;
                auto [x, y] = detail::plan_draw(plan, rng);
                d.inputs[i] = std::move(x);
                d.labels[i] = y;
                cell.train_sets.push_back(std::move(d));
                cell.resampled_indices.push_back(i);
            }
        } else {
            for (std::size_t t = 0; t < cfg.trials; ++t) cell.train_sets.push_back(detail::plan_dataset(plan, n, rng));
        }
        if (cfg.source == DataSource::toy)
            for (auto& d : cell.train_sets) d = dedupe(d);

        if (cfg.source == DataSource::idx) {
            for (std::size_t t = 0; t < cfg.test_size; ++t) cell.test_inputs.push_back(detail::plan_draw(plan, rng).first);
        } else if (cfg.source == DataSource::toy) {
            cell.test_inputs = {{0.5, 0.0}, {0.25, 0.0}, {0.0, 0.1}};
        } else {
            for (std::size_t t = 0; t < cfg.test_size; ++t) cell.test_inputs.push_back(plan.test_draw(rng));
        }

        for (std::size_t t = 0; t < cell.train_sets.size(); ++t) {
            try {
                cell.models.push_back(train_min_norm(cfg.arch, cell.train_sets[t], train));
            } catch (const ConvergenceError& e) {
                cell.models.push_back(std::nullopt);
                cell.failures.push_back("n=" + std::to_string(n) + " trial " + std::to_string(t) + ": " + e.what());
            } catch (const InputError& e) {
                cell.models.push_back(std::nullopt);
                cell.failures.push_back("n=" + std::to_string(n) + " trial " + std::to_string(t) + ": " + e.what());
            }
        }

        const auto trials = cell.trial_set();
        const bool complete = cell.complete();
        std::vector<NetworkParams> ok;
        for (const auto& m : cell.models)
            if (m) ok.push_back(*m);

        for (int k = 2; k <= cfg.arch.depth - 1; ++k) {
            Vector ranks;
            for (const auto& m : ok) ranks.push_back(stable_rank(m.layer(k)));
            StabilityRow row{mode, k, n, cfg.trials};
            row.beta = cfg.beta;
            row.stable_rank_k = detail::mean_of(ranks);
            if (trials) {
                try {
                    row = make_row(mode, subnetwork_stability(*trials, k, normalize), cfg.beta, row.stable_rank_k);
                    row.trials = trials->perturbed_params.size() + 1;
                } catch (const DomainError& e) {
                    cell.failures.push_back("n=" + std::to_string(n) + " k=" + std::to_string(k) + ": " + e.what());
                    row.complete = false;
                }
            }
            row.complete = row.complete && complete && trials.has_value();
            out.rows.push_back(row);
        }
        {
            Vector mins;
            for (const auto& m : ok) {
                double lo = std::numeric_limits<double>::infinity();
                for (int l = 1; l <= cfg.arch.depth - 1; ++l) lo = std::min(lo, stable_rank(m.layer(l)));
                mins.push_back(lo);
            }
            StabilityRow row{mode, std::nullopt, n, cfg.trials};
            row.beta = cfg.beta;
            row.stable_rank_k = detail::mean_of(mins);
            if (trials) {
                row = make_row(mode, network_stability(*trials), cfg.beta, row.stable_rank_k);
                row.trials = trials->perturbed_params.size() + 1;
            }
            row.complete = complete && trials.has_value();
            out.rows.push_back(row);
        }
        out.cells.push_back(std::move(cell));
    }
    if (!cfg.output.empty()) write_text_file(cfg.output, out.csv());
    return out;
}

// ---------------------------------------------------------------------------
// Layer-compression probe
// ---------------------------------------------------------------------------

struct ProbeResult {
    double test_error = 0.0;
    double test_loss = 0.0;
    double train_loss = 0.0;
    Vector readout;  // weights on y_k, then the intercept
};

/// Ridge least-squares readout (λ = 1e-6, with intercept) on the layer-k
/// post-activations y_k, 1 ≤ k ≤ L−1.
inline ProbeResult layer_compression_probe(const NetworkParams& params, int k, const Dataset& train, const Dataset& test) {
    detail::check_hidden_index(params, k);
    if (train.size() == 0 || test.size() == 0) throw InputError("layer_compression_probe: empty dataset");
    constexpr double kRidge = 1e-6;
    const auto features = [&](std::span<const double> x) {
        Vector f = truncated_forward(params, x, k + 1);
        f.push_back(1.0);
        return f;
    };
    const std::size_t p = static_cast<std::size_t>(params.arch().width) + 1;
    Matrix gram(p, p);
    Vector rhs(p, 0.0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const Vector f = features(train.inputs[i]);
        for (std::size_t a = 0; a < p; ++a) {
            rhs[a] += f[a] * train.labels[i];
            for (std::size_t b = 0; b < p; ++b) gram(a, b) += f[a] * f[b];
        }
    }
    for (std::size_t a = 0; a < p; ++a) gram(a, a) += kRidge;
    ProbeResult r;
    r.readout = cholesky_solve(gram, rhs);

    const auto score = [&](const Dataset& d, double& loss, double* error) {
        std::size_t wrong = 0;
        loss = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double pred = dot(r.readout, features(d.inputs[i]));
            loss += (pred - d.labels[i]) * (pred - d.labels[i]);
            if (detail::sign_of(pred) != detail::sign_of(d.labels[i])) ++wrong;
        }
        loss /= static_cast<double>(d.size());
        if (error) *error = static_cast<double>(wrong) / static_cast<double>(d.size());
    };
    score(train, r.train_loss, nullptr);
    score(test, r.test_loss, &r.test_error);
    return r;
}

}  // namespace minstab
