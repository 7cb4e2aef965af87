#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "minstab/minnorm.hpp"
#include "minstab/stability.hpp"

using namespace minstab;

namespace {

const std::vector<Vector> kToyProbes{{0.5, 0.0}, {0.25, 0.0}, {0.0, 0.1}};

TrialSet toy_trials() { return {toy_closed_form(0.5, 0.1), {toy_closed_form(0.25, 0.1)}, {0}, kToyProbes, 2}; }

std::pair<Vector, double> toy_draw_local(std::mt19937_64& rng) {
    const auto u = std::uniform_int_distribution<int>(0, 3)(rng);
    if (u < 2) return {{0.0, 0.1}, -1.0};
    if (u == 2) return {{0.5, 0.0}, 1.0};
    return {{0.25, 0.0}, 1.0};
}

}  // namespace

TEST(Resample, ToyReplacement) {
    Dataset d;
    d.push_back({0.5, 0.0}, 1.0);
    d.push_back({0.0, 0.1}, -1.0);
    int hits = 0;
    const int draws = 4000;
    for (int s = 0; s < draws; ++s) {
        const auto r = resample(d, 0, toy_draw_local, static_cast<std::uint64_t>(s));
        EXPECT_EQ(r.inputs[1], d.inputs[1]);
        EXPECT_EQ(r.labels[1], d.labels[1]);
        if (r.inputs[0] == Vector{0.25, 0.0}) ++hits;
    }
    EXPECT_NEAR(static_cast<double>(hits) / draws, 0.25, 0.03);
    EXPECT_THROW(resample(d, 2, toy_draw_local, 0), InputError);
}

TEST(Resample, IdenticalDrawLeavesDataUnchanged) {
    Dataset d;
    d.push_back({0.5, 0.0}, 1.0);
    d.push_back({0.0, 0.1}, -1.0);
    const Sampler same = [](std::mt19937_64&) { return std::pair<Vector, double>{{0.5, 0.0}, 1.0}; };
    EXPECT_EQ(resample(d, 0, same, 1), d);
}

TEST(SubnetworkStability, ToyIsStable) {
    const auto r = subnetwork_stability(toy_trials(), 2, false);
    EXPECT_EQ(r.mean_abs_diff, 0.0);
    EXPECT_EQ(r.sign_disagreement_rate, 0.0);
    EXPECT_EQ(r.quantile_eps(0.0), 0.0);
    EXPECT_EQ(r.k, 2);
}

TEST(SubnetworkStability, IdenticalTrials) {
    std::mt19937_64 rng(61);
    const auto p = gaussian_init({4, 5, 3}, rng);
    std::vector<Vector> tests;
    std::normal_distribution<double> g(0.0, 0.3);
    for (int i = 0; i < 20; ++i) tests.push_back({g(rng), g(rng), g(rng)});
    for (bool normalize : {false, true}) {
        const auto r = subnetwork_stability({p, {p, p}, {0, 1}, tests, 10}, 2, normalize);
        EXPECT_EQ(r.mean_abs_diff, 0.0);
        EXPECT_EQ(r.sign_disagreement_rate, 0.0);
        EXPECT_EQ(r.trials, 2u);
    }
}

TEST(SubnetworkStability, GlobalSignIsMinimisedOut) {
    const Vector base{0.3, -0.2, 0.5, 0.0};
    EXPECT_EQ(subnetwork_stability_from_values(base, {scaled(base, -1.0)}).mean_abs_diff, 0.0);
    EXPECT_EQ(subnetwork_stability_from_values(base, {scaled(base, -1.0)}).sign_disagreement_rate, 0.0);
    const auto r = subnetwork_stability_from_values(base, {{0.3, -0.2, 0.5, 0.4}});
    EXPECT_NEAR(r.mean_abs_diff, 0.1, 1e-15);
    EXPECT_NEAR(r.sign_disagreement_rate, 0.25, 1e-15);
}

TEST(SubnetworkStability, SignFlipSymmetry) {
    std::mt19937_64 rng(67);
    std::normal_distribution<double> g(0.0, 1.0);
    Vector base(12);
    for (auto& v : base) v = g(rng);
    std::vector<Vector> others(4, Vector(12));
    for (auto& o : others)
        for (std::size_t t = 0; t < o.size(); ++t) o[t] = base[t] + 0.5 * g(rng);
    const auto ref = subnetwork_stability_from_values(base, others);
    for (std::size_t i = 0; i < others.size(); ++i) {
        auto flipped = others;
        flipped[i] = scaled(flipped[i], -1.0);
        const auto alt = subnetwork_stability_from_values(base, flipped);
        EXPECT_NEAR(alt.mean_abs_diff, ref.mean_abs_diff, 1e-14);
        EXPECT_NEAR(alt.sign_disagreement_rate, ref.sign_disagreement_rate, 1e-14);
        EXPECT_EQ(alt.pool, ref.pool);
    }
}

TEST(SubnetworkStability, NormalizationRejectsVanishingSubnetwork) {
    const auto p = toy_closed_form(0.5, 0.1);
    TrialSet t{p, {p}, {0}, {{0.5, 0.0}, {0.25, 0.0}}, 2};
    EXPECT_THROW(subnetwork_stability(t, 2, true), DegenerateNormalizationError);
    EXPECT_NO_THROW(subnetwork_stability(t, 2, false));
}

TEST(NetworkStability, ToyGapIsOne) {
    const auto r = network_stability(toy_trials());
    ASSERT_EQ(r.pool.size(), 3u);
    EXPECT_NEAR(r.quantile_eps(0.0), 1.0, 1e-12);
    // gaps on (1/2,0), (1/4,0), (0,1/10) are 1, 1/2, 0
    EXPECT_NEAR(r.mean_abs_diff, 0.5, 1e-12);
    EXPECT_FALSE(r.k.has_value());
}

TEST(NetworkStability, IdenticalTrials) {
    const auto p = toy_closed_form(0.5, 0.1);
    const auto r = network_stability({p, {p, p}, {0, 1}, kToyProbes, 2});
    for (double beta : {0.0, 0.1, 0.5, 1.0}) EXPECT_EQ(r.quantile_eps(beta), 0.0);
}

TEST(Quantile, NearestRankAndMonotone) {
    StabilityReport r;
    for (int i = 1; i <= 20; ++i) r.pool.push_back(i);
    EXPECT_EQ(r.quantile_eps(0.0), 20.0);
    EXPECT_EQ(r.quantile_eps(0.05), 19.0);
    EXPECT_EQ(r.quantile_eps(0.1), 18.0);
    EXPECT_EQ(r.quantile_eps(1.0), 1.0);
    double prev = INFINITY;
    for (double beta = 0.0; beta <= 1.0; beta += 0.01) {
        EXPECT_LE(r.quantile_eps(beta), prev);
        prev = r.quantile_eps(beta);
    }
    EXPECT_THROW(r.quantile_eps(1.5), InputError);
    EXPECT_THROW(StabilityReport{}.quantile_eps(0.1), InputError);
}

TEST(TrialSet, Validation) {
    const auto p = toy_closed_form(0.5, 0.1);
    EXPECT_THROW(network_stability({p, {}, {}, kToyProbes, 2}), InputError);
    EXPECT_THROW(network_stability({p, {p}, {0}, {}, 2}), InputError);
    EXPECT_THROW(network_stability({p, {p}, {0}, {{2.0, 0.0}}, 2}), InputError);
    EXPECT_THROW(network_stability({p, {NetworkParams::zeros({2, 2, 2})}, {0}, kToyProbes, 2}), InputError);
}

TEST(Theorem1Bound, Examples) {
    EXPECT_EQ(theorem1_bound(2.0, 4, 2, 1.0, 0.0), 0.0);
    for (int L = 2; L <= 6; ++L)
        for (int k = 1; k < L; ++k) EXPECT_NEAR(theorem1_bound(1.0, L, k, 0.0, 0.3), 9.0 * 0.3, 1e-15);
    // B = 2, L = 3, k = 2, a = 1, ε = 0.1: (1 + 8·32)·0.1 + 2·(8 + 3.2 + 4·256)·0.1 = 25.7 + 207.04
    EXPECT_NEAR(theorem1_bound(2.0, 3, 2, 1.0, 0.1), 232.74, 1e-12 * 232.74);
    double prev = 0.0;
    for (double B : {0.5, 1.0, 1.5, 2.0}) {
        const double v = theorem1_bound(B, 4, 2, 0.5, 0.1);
        EXPECT_GE(v, prev);
        prev = v;
    }
    EXPECT_LE(theorem1_bound(2, 4, 2, 0.1, 0.1), theorem1_bound(2, 4, 2, 0.2, 0.1));
    EXPECT_LE(theorem1_bound(2, 4, 2, 0.1, 0.1), theorem1_bound(2, 4, 2, 0.1, 0.2));
    EXPECT_THROW(theorem1_bound(0.0, 4, 2, 0.1, 0.1), InputError);
    EXPECT_THROW(theorem1_bound(2.0, 4, 4, 0.1, 0.1), InputError);
    EXPECT_THROW(theorem1_bound(2.0, 4, 2, -0.1, 0.1), InputError);
}

TEST(SampleSize, Examples) {
    // a = 0 leaves ⌈(4MB^{L−k+1})^{1/α}⌉ = 48²
    EXPECT_EQ(sample_size_requirement(2.0, 4, 2, 0.0, 1.5, 0.5).theorem, 2304u);
    EXPECT_EQ(sample_size_requirement(2.0, 4, 2, 0.0, 1.5, 0.5).lemma, 0u);
    for (double a : {0.0, 1.0, 2.0, 2.5, 3.7}) {
        const auto r = sample_size_requirement(1.0, 5, 4, a, 1.0, 1.0);
        EXPECT_EQ(r.theorem, static_cast<std::uint64_t>(std::ceil(std::max(2 * a, 4.0))));
    }
    EXPECT_EQ(sample_size_requirement(2.0, 3, 1, 0.5, 2.0, 1.0).theorem, 2 * sample_size_requirement(2.0, 3, 1, 0.5, 1.0, 1.0).theorem);
    EXPECT_EQ(sample_size_requirement(2.0, 3, 1, 3.0, 1.0, 1.0).lemma, 48u);
    EXPECT_THROW(sample_size_requirement(2.0, 3, 1, 0.5, 0.0, 1.0), InputError);
    EXPECT_THROW(sample_size_requirement(2.0, 3, 1, -0.5, 1.0, 1.0), InputError);
}

TEST(DepthForLowRank, Examples) {
    EXPECT_EQ(depth_for_low_rank(2, 2.0, 1.0, 0.1), 15);
    EXPECT_EQ(depth_for_low_rank(2, 2.0, 0.5, 0.2), 15);
    EXPECT_EQ(depth_for_low_rank(3, 1.25, 1.0, 0.25), 3);
    EXPECT_EQ(depth_for_low_rank(5, 1.1, 0.5, 0.2), 5);
    int prev = 1 << 30;
    for (double ae : {0.01, 0.05, 0.1, 0.5, 1.0, 2.0}) {
        const int L = depth_for_low_rank(2, 3.0, ae, 1.0);
        EXPECT_LE(L, prev);
        prev = L;
    }
    EXPECT_THROW(depth_for_low_rank(2, 1.0, 1.0, 0.1), DomainError);
    EXPECT_THROW(depth_for_low_rank(2, 2.0, 0.0, 0.1), DomainError);
    EXPECT_THROW(depth_for_low_rank(1, 2.0, 1.0, 0.1), InputError);
}

TEST(GeneralizationBound, Examples) {
    EXPECT_EQ(generalization_bound(0.0, 10, 0.1, 0.0), 0.0);
    const double e = std::exp(1.0);
    const double v = generalization_bound(1.0, e * e, 1.0 / e, 1.0, 1.0, 1.0);
    EXPECT_NEAR(v, 2.0 + 1.0 / e, 1e-12 * (2.0 + 1.0 / e));
    EXPECT_LT(generalization_bound(0.1, 100, 0.1, 1.0), generalization_bound(0.1, 100, 0.01, 1.0));
    EXPECT_THROW(generalization_bound(0.1, 1.0, 0.1, 1.0), InputError);
    EXPECT_THROW(generalization_bound(0.1, 10, 1.0, 1.0), InputError);
}

TEST(VarianceBound, Examples) {
    EXPECT_EQ(variance_bound(1.0, 2.0, 3, 1, 0.5, 10, 0.0), 0.0);
    EXPECT_NEAR(variance_bound(std::sqrt(2.0), 1.0, 3, 1, 0.0, 1, 1.0), 4.0, 1e-12 * 4.0);
    const double v1 = variance_bound(1.3, 1.7, 4, 2, 0.4, 20, 0.01);
    const double v2 = variance_bound(1.3, 1.7, 4, 2, 0.4, 20, 0.02);
    EXPECT_NEAR(v2, 4.0 * v1, 1e-12 * v2);
    EXPECT_THROW(variance_bound(0.0, 1.0, 3, 1, 0.0, 1, 1.0), InputError);
}

TEST(Csv, HeaderAndRows) {
    const auto r = network_stability(toy_trials());
    std::vector<StabilityRow> rows{make_row("replace-one", r, 0.1, 1.5)};
    rows.push_back(StabilityRow{"replace-one", 2, 2, 2});
    rows.back().complete = false;
    const auto csv = stability_csv(rows);
    EXPECT_EQ(csv.rfind(kStabilityHeader, 0), 0u);
    EXPECT_NE(csv.find("replace-one,full,2,1,"), std::string::npos);
    EXPECT_NE(csv.find(",incomplete\n"), std::string::npos);
}
