#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "unlearn/checkpoint.hpp"
#include "unlearn/fisher.hpp"

using namespace unlearn;

namespace {
constexpr double kEwcStep = 1e-3;
}  // namespace

namespace {

FisherDiag two_param_fisher(std::vector<double> f) {
    // Hand examples use the first two entries of a V=2, d=1 layout.
    std::vector<double> values(6, 0.0);
    std::copy(f.begin(), f.end(), values.begin());
    return FisherDiag(ModelArch{2, 1, 2}, values, FisherSource::Clean);
}

ParamVector two_params(double a, double b) {
    return ParamVector(ModelArch{2, 1, 2}, {a, b, 0.0, 0.0, 0.0, 0.0});
}

}  // namespace

TEST(FisherDiag, RejectsNegativeAndNonFinite) {
    const ModelArch arch{2, 1, 2};
    EXPECT_THROW(FisherDiag(arch, {0, 0, 0, -1e-300, 0, 0}, FisherSource::Clean), InvalidInput);
    EXPECT_THROW(FisherDiag(arch, {0, 0, 0, NAN, 0, 0}, FisherSource::Clean), InvalidInput);
    EXPECT_THROW(FisherDiag(arch, {0, 0}, FisherSource::Clean), InvalidInput);
}

TEST(FisherSource, StringRoundTrip) {
    EXPECT_EQ(fisher_source_from_string(to_string(FisherSource::Clean)), FisherSource::Clean);
    EXPECT_EQ(fisher_source_from_string(to_string(FisherSource::Poison)), FisherSource::Poison);
    EXPECT_THROW(fisher_source_from_string("other"), InvalidInput);
}

TEST(EstimateFisher, SingleSampleAtZeroParams) {
    const ParamVector theta(ModelArch{4, 2, 2});
    Dataset ds;
    ds.samples.push_back(Sample{{1, 2}, 0, false, 0});
    const FisherDiag f = estimate_fisher(theta, ds, FisherSource::Clean);
    EXPECT_DOUBLE_EQ(f.values()[theta.arch().head_bias_offset(0)], 0.25);
    EXPECT_DOUBLE_EQ(f.values()[theta.arch().head_bias_offset(1)], 0.25);
    ASSERT_TRUE(f.anchor());
    EXPECT_EQ(*f.anchor(), theta);
}

TEST(EstimateFisher, SaturatedCorrectPredictionsGiveNearZero) {
    ParamVector theta(ModelArch{4, 1, 2});
    // every token embeds to 1, class 1 logit = 60, class 0 logit = -60
    for (TokenId t = 0; t < 4; ++t) theta[t] = 1.0;
    theta[theta.arch().head_weight_offset(0)] = -60.0;
    theta[theta.arch().head_weight_offset(1)] = 60.0;
    Dataset ds;
    for (int k = 0; k < 5; ++k) ds.samples.push_back(Sample{{TokenId(k % 4)}, 1, false, 1});
    const FisherDiag f = estimate_fisher(theta, ds, FisherSource::Clean);
    for (double v : f.values()) EXPECT_LT(v, 1e-100);
}

TEST(EstimateFisher, MeanOfSquaredFiniteDifferenceGradients) {
    std::mt19937_64 rng(17);
    const ModelArch arch{8, 3, 2};
    const ParamVector theta = oracle::random_params(arch, rng, 0.8);
    const Dataset ds = oracle::random_dataset(arch.vocab_size, 6, 5, rng);
    std::vector<double> expected(theta.size(), 0.0);
    for (const auto& s : ds.samples) {
        const auto g = oracle::fd_gradient([&](const ParamVector& p) { return loss_ce(forward(p, s.tokens), s.label); },
                                           theta);
        for (std::size_t i = 0; i < g.size(); ++i) expected[i] += g[i] * g[i] / double(ds.size());
    }
    const FisherDiag f = estimate_fisher(theta, ds, FisherSource::Clean);
    EXPECT_LT(oracle::max_rel_error(f.values(), expected, 1e-8), 1e-4);
}

TEST(EstimateFisher, ThreadedMatchesSequential) {
    std::mt19937_64 rng(23);
    const ModelArch arch{30, 4, 2};
    const ParamVector theta = oracle::random_params(arch, rng, 0.5);
    const Dataset ds = oracle::random_dataset(arch.vocab_size, 101, 12, rng);
    const FisherDiag seq = estimate_fisher(theta, ds, FisherSource::Poison);
    const FisherDiag a = estimate_fisher(theta, ds, FisherSource::Poison, {FisherEstimator::Empirical, 4});
    const FisherDiag b = estimate_fisher(theta, ds, FisherSource::Poison, {FisherEstimator::Empirical, 4});
    EXPECT_EQ(a.values(), b.values());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        EXPECT_NEAR(a.values()[i], seq.values()[i], 1e-14 * std::max(1.0, seq.values()[i]));
    }
}

TEST(EstimateFisher, EmptyDatasetRejected) {
    EXPECT_THROW(estimate_fisher(ParamVector(ModelArch{4, 2, 2}), Dataset{}, FisherSource::Clean), InvalidInput);
}

TEST(EwcPenalty, HandExample) {
    const FisherDiag f = two_param_fisher({1.0, 2.0});
    EXPECT_DOUBLE_EQ(ewc_penalty(f, two_params(0, 0), two_params(1, -1)), 3.0);
    const Gradient g = ewc_grad(f, two_params(0, 0), two_params(1, -1));
    EXPECT_DOUBLE_EQ(g[0], 2.0);
    EXPECT_DOUBLE_EQ(g[1], -4.0);
}

TEST(EwcPenalty, ZeroAtAnchorAndLinearInF) {
    std::mt19937_64 rng(31);
    const ModelArch arch{10, 3, 2};
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int k = 0; k < 50; ++k) {
        std::vector<double> fv(arch.parameter_count());
        for (auto& v : fv) v = u(rng);
        const FisherDiag f(arch, fv, FisherSource::Clean);
        const ParamVector t0 = oracle::random_params(arch, rng, 2.0);
        const ParamVector t1 = oracle::random_params(arch, rng, 2.0);
        EXPECT_EQ(ewc_penalty(f, t0, t0), 0.0);
        for (double gi : ewc_grad(f, t0, t0).values) EXPECT_EQ(gi, 0.0);
        EXPECT_GE(ewc_penalty(f, t0, t1), 0.0);
        EXPECT_NEAR(ewc_penalty(f.scaled(3.5), t0, t1), 3.5 * ewc_penalty(f, t0, t1),
                    1e-12 * ewc_penalty(f, t0, t1));
    }
}

TEST(EwcGrad, MatchesFiniteDifferences) {
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const ModelArch arch{6, 2, 2};
        std::vector<double> fv(arch.parameter_count());
        for (auto& v : fv) v = u(rng);
        const FisherDiag f(arch, fv, FisherSource::Poison);
        const ParamVector t0 = oracle::random_params(arch, rng, 1.0);
        const ParamVector t1 = oracle::random_params(arch, rng, 1.0);
        // Quadratic penalty: central differences have no truncation error, so a
        // wider step only shrinks the round-off in f(x + h) - f(x - h).
        const auto fd =
            oracle::fd_gradient([&](const ParamVector& p) { return ewc_penalty(f, t0, p); }, t1, kEwcStep);
        worst = std::max(worst, oracle::max_rel_error(ewc_grad(f, t0, t1).values, fd));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(EwcPenalty, LengthMismatch) {
    const FisherDiag f = two_param_fisher({1.0, 1.0});
    const ParamVector other(ModelArch{3, 1, 2});
    EXPECT_THROW(ewc_penalty(f, two_params(0, 0), other), InvalidInput);
    EXPECT_THROW(ewc_grad(f, other, two_params(0, 0)), InvalidInput);
}

TEST(FisherFile, RoundTripAndKind) {
    std::mt19937_64 rng(41);
    const ModelArch arch{7, 2, 2};
    const ParamVector theta = oracle::random_params(arch, rng, 0.5);
    const FisherDiag f = estimate_fisher(theta, oracle::random_dataset(7, 5, 4, rng), FisherSource::Poison);
    testing_support::TempDir dir;
    save_fisher(dir.path() / "f.json", f);
    const FisherDiag back = load_fisher(dir.path() / "f.json");
    EXPECT_EQ(back.values(), f.values());
    EXPECT_EQ(back.source(), FisherSource::Poison);
    EXPECT_EQ(fisher_to_json(f)["kind"], "fisher");
    EXPECT_EQ(fisher_to_json(f)["source"], "poison");
    save_checkpoint(dir.path() / "p.json", theta);
    EXPECT_THROW(load_fisher(dir.path() / "p.json"), InvalidInput);
}
