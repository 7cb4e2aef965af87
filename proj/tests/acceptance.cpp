#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "minstab/minstab.hpp"

using namespace minstab;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
    std::printf("[%s] criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
    std::fflush(stdout);
    outcomes.push_back({id, pass, detail});
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string g(double v) { return fmt("%.6g", v); }

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b)); }

Vector random_ball(std::size_t d, std::mt19937_64& rng) { return uniform_ball(d, rng); }

void criterion1() {
    const auto t0 = Clock::now();
    const auto r = run_counterexample(0, false);
    const double elapsed = seconds_since(t0);
    const auto& c = r.closed_form;
    const bool pass = std::abs(c.subnetwork_gap) <= 1e-12 && std::abs(c.network_gap - 1.0) <= 1e-9 &&
                      std::abs(c.base_output - 1.0) <= 1e-9 && std::abs(c.resampled_output - 2.0) <= 1e-9 && elapsed < 1.0;
    report(1, pass, "MR2 counterexample, closed form",
           "sub gap " + g(c.subnetwork_gap) + ", net gap " + fmt("%.12f", c.network_gap) + ", N(base)=" +
               fmt("%.12f", c.base_output) + ", N(resampled)=" + fmt("%.12f", c.resampled_output) + ", S(W2)=" +
               g(c.stable_rank_w2) + ", " + fmt("%.3f s", elapsed));
}

void criterion2() {
    const auto t0 = Clock::now();
    const std::vector<double> grid{0.1, 0.25, 0.5, 0.75, 1.0};
    int ok = 0, total = 0;
    double worst_rel = 0.0, worst_spread = 0.0;
    std::string failures;
    for (double x : grid)
        for (double z : grid) {
            ++total;
            try {
                const auto r = brute_force_oracle({3, 2, 2}, toy_pair(x, z), BruteForceConfig{});
                const double lb = toy_norm_lower_bound(x, z);
                const double rel = std::abs(r.objective - lb) / lb;
                const auto eq = check_equidistribution(r.params, 1e-4);
                worst_rel = std::max(worst_rel, rel);
                worst_spread = std::max(worst_spread, eq.spread);
                if (rel <= 1e-6 && eq.pass) ++ok;
                else failures += " (" + g(x) + "," + g(z) + ")";
            } catch (const Error& e) {
                failures += " (" + g(x) + "," + g(z) + "):" + e.what();
            }
        }
    const double elapsed = seconds_since(t0);
    report(2, ok == total && elapsed < 300.0, "oracle attains toy lower bound on 25-instance grid",
           std::to_string(ok) + "/" + std::to_string(total) + " ok, worst rel gap " + g(worst_rel) + ", worst spread " +
               g(worst_spread) + ", " + fmt("%.1f s", elapsed) + (failures.empty() ? "" : ", failed:" + failures));
}

void criterion3() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    const double eps = 0.1;
    int pairs = 0, checks = 0, skipped = 0, s3_fail = 0, s4_fail = 0, s3_corrected_fail = 0, s4_corrected_fail = 0;
    double worst_identity = 0.0;
    while (pairs < 200) {
        const Architecture a{2 + pairs % 4, 1 + (pairs / 4) % 8, 1 + (pairs / 32) % 4};
        const auto p = gaussian_init(a, rng);
        const Vector x = random_ball(a.input_dim, rng);
        ++pairs;
        for (int k = 1; k < a.depth; ++k) {
            const auto c = lemma32_check(p, k, x, eps);
            if (c.skipped) {
                ++skipped;
                continue;
            }
            ++checks;
            worst_identity = std::max(worst_identity, c.identity_error);
            if (!c.statement3_holds()) ++s3_fail;
            if (!c.statement4_holds()) ++s4_fail;
            const auto sv = svd(p.layer(k)).singular_values;
            const double corrected = (sv.size() > 1 ? sv[1] / sv[0] : 0.0) / eps;
            const double ratio = corrected / std::max(c.a_meas, 1e-300);
            if (c.statement3_lhs > ratio * c.statement3_rhs * (1 + 1e-12) + 1e-12) ++s3_corrected_fail;
            if (c.statement4_lhs > ratio * c.statement4_rhs * (1 + 1e-12) + 1e-12) ++s4_corrected_fail;
        }
    }
    const double elapsed = seconds_since(t0);
    const bool pass = worst_identity < 1e-8 && s3_fail == 0 && s4_fail == 0 && elapsed < 60.0;
    report(3, pass, "Lemma 3.2 statements 1-4 with measured a = (S-1)/eps",
           std::to_string(pairs) + " pairs, " + std::to_string(checks) + " (pair,k) checks, " + std::to_string(skipped) +
               " degenerate skipped, worst identity error " + g(worst_identity) + ", statement-3 violations " +
               std::to_string(s3_fail) + ", statement-4 violations " + std::to_string(s4_fail) +
               "; with a = s2/(eps*s1): " + std::to_string(s3_corrected_fail) + " / " + std::to_string(s4_corrected_fail) +
               ", " + fmt("%.2f s", elapsed));
}

struct Instance {
    std::size_t n;
    int k;
    double beta;
    double eps_sub;
    double a;
    std::uint64_t required;
    bool qualifies;
    bool margins_ok;
    double min_margin;
    double max_margin;
    double max_unit;
    double gamma;
    double mu;
    double net_eps;
    double bound;
    std::string why;
};

std::vector<Instance> qualify_instances(const ExperimentConfig& cfg, const SweepResult& sweep) {
    std::vector<Instance> out;
    const double B = cfg.teacher.B;
    const int L = cfg.arch.depth;
    for (const auto& cell : sweep.cells) {
        const auto trials = cell.trial_set();
        if (!trials || !cell.complete()) continue;
        const auto net = network_stability(*trials);
        for (int k = 2; k <= L - 1; ++k) {
            const auto sub = subnetwork_stability(*trials, k, false);
            for (double beta : {0.05, 0.1}) {
                Instance in{cell.n, k, beta, sub.quantile_eps(beta), 0.0, 0, false, true, INFINITY, 0.0, 0.0, 0.0, 0.0,
                            net.quantile_eps(beta), 0.0, ""};
                if (!(in.eps_sub > 0.0)) {
                    in.why = "eps_sub = 0";
                    out.push_back(in);
                    continue;
                }
                bool low_rank = true, norms_ok = true;
                for (const auto& m : cell.models) {
                    in.a = std::max(in.a, measured_a(m->layer(k), in.eps_sub));
                    for (double f : param_norm(*m).per_layer) norms_ok = norms_ok && f <= B;
                }
                for (const auto& m : cell.models) low_rank = low_rank && (in.a == 0.0 || low_rank_check(m->layer(k), in.a, in.eps_sub));
                const double M = in.eps_sub * static_cast<double>(cell.n);
                in.required = sample_size_requirement(B, L, k, in.a, M, 1.0).theorem;
                in.qualifies = low_rank && norms_ok && cell.n >= in.required;
                if (!norms_ok) in.why = "student layer norm exceeds B";
                else if (cell.n < in.required) in.why = "n < " + std::to_string(in.required);
                if (in.qualifies) {
                    for (std::size_t t = 0; t < cell.models.size(); ++t) {
                        const auto mr = margin_report(*cell.models[t], cell.train_sets[t], k, B);
                        in.min_margin = std::min(in.min_margin, mr.min_abs);
                        in.max_margin = std::max(in.max_margin, mr.max_abs);
                        for (std::size_t i = 0; i < mr.per_point.size(); ++i)
                            in.max_unit = std::max(in.max_unit, std::abs(mr.per_point[i] / cell.train_sets[t].labels[i]));
                        in.gamma = mr.gamma_bound;
                        in.mu = mr.mu_bound;
                        in.margins_ok = in.margins_ok && mr.min_abs >= mr.gamma_bound && mr.max_abs <= mr.mu_bound;
                    }
                    in.bound = theorem1_bound(B, L, k, in.a, in.eps_sub);
                }
                out.push_back(in);
            }
        }
    }
    return out;
}

void criteria4_5(const ExperimentConfig& cfg, const SweepResult& sweep) {
    const auto instances = qualify_instances(cfg, sweep);
    int qualified = 0, margin_ok = 0, bound_ok = 0;
    std::string margin_detail, bound_detail, skipped;
    for (const auto& in : instances) {
        const std::string tag = "n=" + std::to_string(in.n) + ",k=" + std::to_string(in.k) + ",beta=" + g(in.beta);
        if (!in.qualifies) {
            skipped += " " + tag + "(" + in.why + ")";
            continue;
        }
        ++qualified;
        if (in.margins_ok) ++margin_ok;
        else
            margin_detail += " " + tag + ": min " + g(in.min_margin) + " vs gamma " + g(in.gamma) + ", max " +
                             g(in.max_margin) + " vs mu " + g(in.mu) + ";";
        if (in.net_eps <= in.bound) ++bound_ok;
        else bound_detail += " " + tag + ": " + g(in.net_eps) + " > " + g(in.bound) + ";";
    }
    std::string head = std::to_string(qualified) + "/" + std::to_string(instances.size()) +
                       " (n,k,beta) instances satisfy the hypotheses (eps = raw sub-network quantile, alpha = 1, M = eps*n, "
                       "a = max measured a)";
    if (qualified == 0) {
        report(4, false, "Lemma 3.3 margins", "NO INSTANCE SATISFIES THE HYPOTHESES; " + head + ";" + skipped);
        report(5, false, "Theorem 3.1 consistency", "NO INSTANCE SATISFIES THE HYPOTHESES; " + head);
        return;
    }
    double min_margin = INFINITY, max_margin = 0.0, max_unit = 0.0;
    for (const auto& in : instances)
        if (in.qualifies) {
            min_margin = std::min(min_margin, in.min_margin);
            max_margin = std::max(max_margin, in.max_margin);
            max_unit = std::max(max_unit, in.max_unit);
        }
    report(4, margin_ok == qualified, "Lemma 3.3 margins on qualifying instances",
           head + "; margins ok on " + std::to_string(margin_ok) + ", overall min |f_k y| " + g(min_margin) +
               ", max " + g(max_margin) + ", max |f_k| with y replaced by sign(y) " + g(max_unit) + (margin_detail.empty() ? "" : "; violations:" + margin_detail) +
               (skipped.empty() ? "" : "; not qualifying:" + skipped));
    double worst_ratio = 0.0;
    for (const auto& in : instances)
        if (in.qualifies) worst_ratio = std::max(worst_ratio, in.net_eps / in.bound);
    report(5, bound_ok == qualified, "Theorem 3.1 network quantile <= theorem1_bound",
           std::to_string(bound_ok) + "/" + std::to_string(qualified) + " qualifying instances within the bound, worst ratio " +
               g(worst_ratio) + (bound_detail.empty() ? "" : "; violations:" + bound_detail));
}

void criterion6() {
    int ok = 0, total = 0;
    std::string failed;
    const auto check = [&](const std::string& name, double got, double want) {
        ++total;
        const bool good = want == 0.0 ? got == 0.0 : rel_close(got, want, 1e-12);
        if (good) ++ok;
        else failed += " " + name + "(" + fmt("%.17g", got) + " vs " + fmt("%.17g", want) + ")";
    };
    const double e = std::exp(1.0);
    check("theorem1 eps=0", theorem1_bound(2.0, 4, 2, 1.0, 0.0), 0.0);
    for (int L = 2; L <= 6; ++L)
        for (int k = 1; k < L; ++k) check("theorem1 a=0,B=1", theorem1_bound(1.0, L, k, 0.0, 0.3), 9.0 * 0.3);
    check("theorem1 B=2,L=3,k=2,a=1,eps=0.1", theorem1_bound(2.0, 3, 2, 1.0, 0.1), 232.74);
    check("sample a=0", static_cast<double>(sample_size_requirement(2.0, 4, 2, 0.0, 1.5, 0.5).theorem), 2304.0);
    for (double a : {0.0, 1.0, 2.0, 2.5, 3.7})
        check("sample M=1,alpha=1,B=1,k=L-1", static_cast<double>(sample_size_requirement(1.0, 5, 4, a, 1.0, 1.0).theorem),
              std::ceil(std::max(2.0 * a, 4.0)));
    check("sample doubling",
          static_cast<double>(sample_size_requirement(2.0, 3, 1, 0.5, 2.0, 1.0).theorem),
          2.0 * static_cast<double>(sample_size_requirement(2.0, 3, 1, 0.5, 1.0, 1.0).theorem));
    check("depth L*=2,B=2,a*eps=0.1", depth_for_low_rank(2, 2.0, 1.0, 0.1), 15.0);
    check("depth B=1+a*eps", depth_for_low_rank(3, 1.25, 1.0, 0.25), 3.0);
    check("generalization eps=0,M=0", generalization_bound(0.0, 10.0, 0.1, 0.0), 0.0);
    check("generalization n=e^2,delta=1/e", generalization_bound(1.0, e * e, 1.0 / e, 1.0, 1.0, 1.0), 2.0 + 1.0 / e);
    check("variance eps=0", variance_bound(1.0, 2.0, 3, 1, 0.5, 10, 0.0), 0.0);
    check("variance C=sqrt2,B=1", variance_bound(std::sqrt(2.0), 1.0, 3, 1, 0.0, 1, 1.0), 4.0);
    check("variance quadratic", variance_bound(1.3, 1.7, 4, 2, 0.4, 20, 0.02), 4.0 * variance_bound(1.3, 1.7, 4, 2, 0.4, 20, 0.01));
    report(6, ok == total, "bound calculators to 1e-12 relative",
           std::to_string(ok) + "/" + std::to_string(total) + " examples" + (failed.empty() ? "" : "; failed:" + failed));
}

void criterion7(const SweepResult& sweep, double elapsed) {
    const auto find = [&](std::size_t n, std::optional<int> k) -> const StabilityRow* {
        for (const auto& r : sweep.rows)
            if (r.n == n && r.k == k) return &r;
        return nullptr;
    };
    bool pass = elapsed < 600.0;
    std::string detail;
    std::vector<std::optional<int>> ks;
    for (const auto& r : sweep.rows)
        if (r.n == 16) ks.push_back(r.k);
    for (const auto& k : ks) {
        const auto* lo = find(16, k);
        const auto* hi = find(256, k);
        const std::string name = k ? "k=" + std::to_string(*k) : std::string("full");
        if (!lo || !hi || !lo->complete || !hi->complete) {
            pass = false;
            detail += name + " incomplete; ";
            continue;
        }
        const bool mean_ok = hi->mean_abs_diff < lo->mean_abs_diff;
        const bool q_ok = hi->eps_at_beta < lo->eps_at_beta;
        pass = pass && mean_ok && q_ok;
        detail += name + " mean " + g(lo->mean_abs_diff) + "->" + g(hi->mean_abs_diff) + ", eps@beta " + g(lo->eps_at_beta) +
                  "->" + g(hi->eps_at_beta) + "; ";
        if (!k) {
            const bool sr_ok = hi->stable_rank_k <= lo->stable_rank_k;
            pass = pass && sr_ok;
            detail += "min stable rank " + fmt("%.6f", lo->stable_rank_k) + "->" + fmt("%.6f", hi->stable_rank_k) + "; ";
        }
    }
    report(7, pass, "teacher sweep stability decreases from n=16 to n=256", detail + fmt("sweep %.1f s", elapsed));
}

void criterion8() {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double worst_svd = 0.0, worst_homog = 0.0;
    bool rank_range = true;
    for (int t = 0; t < 100; ++t) {
        Matrix m(1 + t % 9, 1 + (t * 5) % 7);
        for (auto& v : m.entries()) v = gauss(rng);
        const auto s = svd(m);
        worst_svd = std::max(worst_svd, frobenius_norm(s.reconstruct() - m));
        const double sr = stable_rank(m);
        rank_range = rank_range && sr >= 1.0 - 1e-12 &&
                     sr <= std::sqrt(static_cast<double>(std::min(m.rows(), m.cols()))) * (1 + 1e-12);
    }
    for (int t = 0; t < 100; ++t) {
        const Architecture a{2 + t % 4, 1 + t % 8, 1 + t % 4};
        const auto p = gaussian_init(a, rng);
        const Vector x = random_ball(a.input_dim, rng);
        const double alpha = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        const double base = predict(p, x);
        const double scale = std::max(1e-300, std::abs(alpha * base));
        worst_homog = std::max(worst_homog, std::abs(predict(p, scaled(x, alpha)) - alpha * base) / std::max(scale, 1e-12));
        const double pa = std::pow(alpha, a.depth);
        worst_homog = std::max(worst_homog, std::abs(predict(p.scaled(alpha), x) - pa * base) / std::max(std::abs(pa * base), 1e-12));
    }

    bool idx_ok = false;
    std::string idx_detail;
    try {
        const auto dir = std::filesystem::temp_directory_path();
        const auto images = (dir / "minstab-acceptance-images.idx").string();
        const auto labels = (dir / "minstab-acceptance-labels.idx").string();
        std::vector<std::vector<unsigned char>> pix;
        std::vector<unsigned char> cls;
        std::uniform_int_distribution<int> px(0, 255);
        for (int i = 0; i < 16; ++i) {
            std::vector<unsigned char> im(28 * 28);
            for (auto& v : im) v = static_cast<unsigned char>(px(rng));
            pix.push_back(im);
            cls.push_back(static_cast<unsigned char>(i % 10));
        }
        write_idx_images(images, 28, 28, pix);
        write_idx_labels(labels, cls);
        const auto d = load_idx(images, labels);
        idx_ok = d.size() == 16 && d.input_dim() == 784;
        for (std::size_t i = 0; i < d.size() && idx_ok; ++i) {
            Vector raw(784);
            for (std::size_t q = 0; q < 784; ++q) raw[q] = pix[i][q] / 255.0;
            const double sc = std::max(1.0, norm2(raw));
            for (std::size_t q = 0; q < 784; ++q) idx_ok = idx_ok && std::abs(d.inputs[i][q] - raw[q] / sc) <= 1e-15;
            idx_ok = idx_ok && norm2(d.inputs[i]) <= 1.0 + 1e-15 && d.labels[i] == (cls[i] < 5 ? -1.0 : 1.0);
        }
        idx_detail = idx_ok ? "IDX 16-image round trip ok" : "IDX round trip mismatch";
    } catch (const Error& e) {
        idx_detail = std::string("IDX error: ") + e.what();
    }
    const bool pass = worst_svd <= 1e-10 && worst_homog <= 1e-10 && rank_range && idx_ok;
    report(8, pass, "numerical foundations",
           "worst SVD reconstruction " + g(worst_svd) + ", worst homogeneity rel error " + g(worst_homog) +
               ", stable rank in range " + (rank_range ? "yes" : "no") + ", " + idx_detail);
}

}  // namespace

int main() {
    try {
        criterion1();
        criterion2();
        criterion3();

        ExperimentConfig cfg;
        const auto t0 = Clock::now();
        const auto sweep = run_stability_sweep(cfg);
        const double elapsed = seconds_since(t0);
        for (const auto& cell : sweep.cells)
            for (const auto& f : cell.failures) std::printf("  sweep failure: %s\n", f.c_str());
        std::printf("%s", sweep.csv().c_str());
        criteria4_5(cfg, sweep);
        criterion6();
        criterion7(sweep, elapsed);
        criterion8();
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 1;
    }
    int failed = 0;
    for (const auto& o : outcomes) failed += !o.pass;
    std::printf("%d/%zu criteria passed\n", static_cast<int>(outcomes.size()) - failed, outcomes.size());
    return failed == 0 ? 0 : 1;
}
