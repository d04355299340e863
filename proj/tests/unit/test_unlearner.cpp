#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "unlearn/checkpoint.hpp"
#include "unlearn/unlearner.hpp"

using namespace unlearn;

namespace {

struct SmallTask {
    Dataset train, test, poisoned_train, poison, clean, triggered;
    TriggerSpec trigger;
    ParamVector theta0;
};

const SmallTask& small_task() {
    static const SmallTask task = [] {
        SmallTask t;
        SyntheticSpec s;
        s.vocab_size = 40;
        s.reserved_tokens = 8;
        s.seq_len = 10;
        s.n_samples = 200;
        s.seed = 1;
        t.train = gen_synthetic(s);
        s.seed = 2;
        s.n_samples = 100;
        t.test = gen_synthetic(s, DatasetRole::Test);
        t.trigger.tokens = {32, 33, 34, 35};
        t.poisoned_train = poison_dataset(t.train, t.trigger, PoisonConfig{0.1, 3}).dataset;
        t.poison = extract_poisoned(t.poisoned_train).dataset;
        t.clean = split_clean_subset(t.poisoned_train, t.poison.size(), 4).dataset;
        t.triggered = make_asr_eval_set(t.test, t.trigger, 5);
        const EvalSets eval{&t.test, &t.triggered, 1};
        t.theta0 = train_supervised(init_params(ModelArch{40, 4, 2}, 6), t.poisoned_train, TrainConfig{30, 0.5, 8, 7},
                                    eval, &t.poison)
                       .theta;
        return t;
    }();
    return task;
}

EvalSets eval_of(const SmallTask& t) { return EvalSets{&t.test, &t.triggered, 1}; }

FisherDiag random_fisher(const ModelArch& arch, std::mt19937_64& rng, FisherSource src) {
    std::uniform_real_distribution<double> u(0.0, 0.5);
    std::vector<double> v(arch.parameter_count());
    for (auto& x : v) x = u(rng);
    return FisherDiag(arch, v, src);
}

}  // namespace

TEST(UnlearnConfig, Validation) {
    UnlearnConfig c;
    EXPECT_NO_THROW(c.validate());
    c.lambda = -1;
    EXPECT_THROW(c.validate(), InvalidInput);
    c = {};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), InvalidInput);
    c = {};
    c.max_epochs = 0;
    EXPECT_THROW(c.validate(), InvalidInput);
    c = {};
    c.p_thresh = 101;
    EXPECT_THROW(c.validate(), InvalidInput);
    c = {};
    c.eta = -0.1;
    EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(TotalLoss, LambdaZeroIsNegatedCrossEntropy) {
    const auto& t = small_task();
    std::mt19937_64 rng(1);
    const ModelArch arch = t.theta0.arch();
    const FisherDiag fc = random_fisher(arch, rng, FisherSource::Clean);
    const FisherDiag fp = random_fisher(arch, rng, FisherSource::Poison);
    const ParamVector theta = oracle::random_params(arch, rng, 0.3);
    UnlearnConfig cfg;
    const LossTerms terms = total_loss(theta, t.theta0, fc, fp, t.poison.samples, cfg);
    double ce = 0.0;
    Gradient g(theta.size());
    for (const auto& s : t.poison.samples) {
        ce += loss_ce(forward(theta, s.tokens), s.label) / double(t.poison.size());
        g += grad_ce(theta, s.tokens, s.label);
    }
    EXPECT_NEAR(terms.value, -ce, 1e-12);
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_NEAR(terms.gradient[i], -g[i] / double(t.poison.size()), 1e-12);
    }
}

TEST(TotalLoss, AtAnchorBothEwcTermsVanish) {
    const auto& t = small_task();
    std::mt19937_64 rng(2);
    const FisherDiag fc = random_fisher(t.theta0.arch(), rng, FisherSource::Clean);
    const FisherDiag fp = random_fisher(t.theta0.arch(), rng, FisherSource::Poison);
    UnlearnConfig cfg;
    cfg.lambda = 1e4;
    const LossTerms terms = total_loss(t.theta0, t.theta0, fc, fp, t.poison.samples, cfg);
    EXPECT_EQ(terms.ewc_clean, 0.0);
    EXPECT_EQ(terms.ewc_poison, 0.0);
    EXPECT_DOUBLE_EQ(terms.value, -mean_loss_ce(t.theta0, t.poison));
}

TEST(TotalLoss, GradientMatchesFiniteDifferencesForEverySetting) {
    std::mt19937_64 rng(3);
    double worst = 0.0;
    int draws = 0;
    for (double lambda : {0.0, 1e2, 1e4}) {
        for (bool exclude : {false, true}) {
            for (int k = 0; k < 20; ++k, ++draws) {
                const ModelArch arch{8, 2, 2};
                const ParamVector theta0 = oracle::random_params(arch, rng, 0.5);
                ParamVector theta = theta0;
                std::normal_distribution<double> n(0.0, 0.05);
                for (auto& v : theta.mutable_values()) v += n(rng);
                const Dataset poison = oracle::random_dataset(8, 5, 6, rng, true, 1);
                const Dataset clean = oracle::random_dataset(8, 5, 6, rng);
                const FisherDiag fc = estimate_fisher(theta0, clean, FisherSource::Clean);
                const FisherDiag fp = estimate_fisher(theta0, poison, FisherSource::Poison);
                UnlearnConfig cfg;
                cfg.lambda = lambda;
                cfg.exclude_poison_ewc = exclude;
                const LossTerms terms = total_loss(theta, theta0, fc, fp, poison.samples, cfg);
                const auto fd = oracle::fd_gradient(
                    [&](const ParamVector& p) { return total_loss(p, theta0, fc, fp, poison.samples, cfg).value; },
                    theta);
                worst = std::max(worst, oracle::max_rel_error(terms.gradient.values, fd));
            }
        }
    }
    EXPECT_GE(draws, 100);
    EXPECT_LT(worst, 1e-4);
}

TEST(TotalLoss, ExcludeDropsPoisonTerm) {
    const auto& t = small_task();
    std::mt19937_64 rng(4);
    const FisherDiag fc = random_fisher(t.theta0.arch(), rng, FisherSource::Clean);
    const FisherDiag fp = random_fisher(t.theta0.arch(), rng, FisherSource::Poison);
    const ParamVector theta = oracle::random_params(t.theta0.arch(), rng, 0.3);
    UnlearnConfig cfg;
    cfg.lambda = 10;
    const LossTerms full = total_loss(theta, t.theta0, fc, fp, t.poison.samples, cfg);
    cfg.exclude_poison_ewc = true;
    const LossTerms ablated = total_loss(theta, t.theta0, fc, fp, t.poison.samples, cfg);
    EXPECT_GT(full.ewc_poison, 0.0);
    EXPECT_EQ(ablated.ewc_poison, 0.0);
    EXPECT_DOUBLE_EQ(ablated.value, 10 * full.ewc_clean - full.loss_ce);
    EXPECT_DOUBLE_EQ(full.value, 10 * (full.ewc_clean - full.ewc_poison) - full.loss_ce);
}

TEST(TotalLoss, Errors) {
    const auto& t = small_task();
    const FisherDiag f = estimate_fisher(t.theta0, t.clean, FisherSource::Clean);
    UnlearnConfig cfg;
    EXPECT_THROW(total_loss(t.theta0, t.theta0, f, f, {}, cfg), InvalidInput);
    EXPECT_THROW(total_loss(ParamVector(ModelArch{3, 1, 2}), t.theta0, f, f, t.poison.samples, cfg), InvalidInput);
    cfg.lambda = 1e308;
    ParamVector far = t.theta0;
    for (auto& v : far.mutable_values()) v += 1e3;
    EXPECT_THROW(total_loss(far, t.theta0, f, f.scaled(0.0), t.poison.samples, cfg), NumericalError);
}

TEST(DetectThresholdCrossing, HandTracedCases) {
    EXPECT_EQ(detect_threshold_crossing(60, 48, 3, 30), 3u);
    EXPECT_EQ(detect_threshold_crossing(52, 30, 3, 30), 2u);
    EXPECT_EQ(detect_threshold_crossing(48, 40, 3, 30), 30u);
}

TEST(DetectThresholdCrossing, BoundaryCases) {
    // equal distance goes to the current epoch
    EXPECT_EQ(detect_threshold_crossing(55, 45, 4, 30), 4u);
    EXPECT_EQ(detect_threshold_crossing(50, 49, 4, 30), 3u);
    // exactly 50 is not below 50
    EXPECT_EQ(detect_threshold_crossing(60, 50, 4, 30), 30u);
    EXPECT_EQ(detect_threshold_crossing(50, 0, 1, 30), 0u);
}

TEST(DetectThresholdCrossing, NoUpdateWithoutCrossing) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> p(0.0, 100.0);
    std::uniform_int_distribution<std::size_t> e(1, 30), th(0, 30);
    for (int k = 0; k < 10000; ++k) {
        const double prev = p(rng), cur = p(rng);
        const std::size_t epoch = e(rng), current = th(rng);
        const std::size_t out = detect_threshold_crossing(prev, cur, epoch, current);
        if (cur < 50.0 && prev >= 50.0) {
            EXPECT_TRUE(out == epoch || out == epoch - 1);
        } else {
            EXPECT_EQ(out, current);
        }
    }
}

TEST(UnlearnGa, LambdaZeroLyaTrajectoryIdentical) {
    const auto& t = small_task();
    UnlearnConfig cfg;
    cfg.eta = 0.3;
    cfg.batch_size = 3;
    cfg.max_epochs = 30;
    cfg.seed = 11;
    for (bool exclude : {false, true}) {
        cfg.exclude_poison_ewc = exclude;
        std::vector<ParamVector> ga, lya;
        unlearn_ga(t.theta0, t.poison, cfg, {}, [&](std::size_t, std::size_t, const ParamVector& p) { ga.push_back(p); });
        unlearn_lya(t.theta0, t.poison, t.clean, cfg, {},
                    [&](std::size_t, std::size_t, const ParamVector& p) { lya.push_back(p); });
        ASSERT_EQ(ga.size(), lya.size());
        ASSERT_EQ(ga.size(), 30u * 4);
        double sup = 0.0;
        for (std::size_t s = 0; s < ga.size(); ++s) {
            for (std::size_t i = 0; i < ga[s].size(); ++i) sup = std::max(sup, std::abs(ga[s][i] - lya[s][i]));
        }
        EXPECT_LE(sup, 1e-12);
    }
}

TEST(UnlearnLya, ZeroLearningRateFreezesParameters) {
    const auto& t = small_task();
    UnlearnConfig cfg;
    cfg.eta = 0.0;
    cfg.lambda = 100;
    cfg.max_epochs = 5;
    const UnlearnResult r = unlearn_lya(t.theta0, t.poison, t.clean, cfg, eval_of(t));
    EXPECT_EQ(r.final_theta, t.theta0);
    EXPECT_EQ(r.stop_reason, StopReason::MaxEpochs);
    ASSERT_EQ(r.history.size(), 5u);
    for (const auto& h : r.history) EXPECT_EQ(h.poisoned_accuracy, r.initial.poisoned_accuracy);
    EXPECT_EQ(r.threshold_epoch, 5u);
}

TEST(UnlearnLya, StopContract) {
    const auto& t = small_task();
    UnlearnConfig cfg;
    cfg.eta = 0.5;
    cfg.batch_size = 4;
    cfg.p_thresh = 60;
    const UnlearnResult r = unlearn_ga(t.theta0, t.poison, cfg, eval_of(t));
    ASSERT_EQ(r.stop_reason, StopReason::BelowPThresh);
    EXPECT_LT(r.history.back().poisoned_accuracy, cfg.p_thresh);
    for (std::size_t i = 0; i + 1 < r.history.size(); ++i) EXPECT_GE(r.history[i].poisoned_accuracy, cfg.p_thresh);
    EXPECT_LT(r.epochs_run(), cfg.max_epochs);
    EXPECT_LE(r.threshold_epoch, r.epochs_run());
}

TEST(UnlearnLya, HistoryShapeAndThresholdBound) {
    const auto& t = small_task();
    UnlearnConfig cfg;
    cfg.eta = 0.3;
    cfg.lambda = 100;
    cfg.batch_size = 4;
    cfg.max_epochs = 12;
    const UnlearnResult r = unlearn_lya(t.theta0, t.poison, t.clean, cfg, eval_of(t));
    ASSERT_EQ(r.history.size(), 12u);
    for (std::size_t e = 0; e < r.history.size(); ++e) {
        EXPECT_EQ(r.history[e].epoch, e + 1);
        EXPECT_GE(r.history[e].ewc_clean, 0.0);
        EXPECT_GE(r.history[e].ewc_poison, 0.0);
    }
    EXPECT_EQ(r.initial.epoch, 0u);
    EXPECT_LE(r.threshold_epoch, r.epochs_run());
}

TEST(UnlearnLya, ThresholdCheckpointReproducesLoggedMetrics) {
    const auto& t = small_task();
    UnlearnConfig cfg;
    cfg.eta = 0.3;
    cfg.lambda = 1e2;
    cfg.batch_size = 2;
    cfg.exclude_poison_ewc = true;
    const UnlearnResult r = unlearn_lya(t.theta0, t.poison, t.clean, cfg, eval_of(t));
    ASSERT_LT(r.threshold_epoch, cfg.max_epochs) << "run never crossed 50%";
    const EpochReport& logged = r.threshold_epoch == 0 ? r.initial : r.history[r.threshold_epoch - 1];

    testing_support::TempDir dir;
    save_checkpoint(dir.path() / "threshold.json", r.threshold_theta);
    const ParamVector reloaded = load_checkpoint(dir.path() / "threshold.json");
    EXPECT_EQ(reloaded, r.threshold_theta);
    EXPECT_EQ(poisoned_accuracy(reloaded, t.poison), logged.poisoned_accuracy);
    EXPECT_EQ(accuracy(reloaded, t.test), logged.clean_accuracy);
    EXPECT_EQ(asr(reloaded, t.triggered, 1), logged.asr);

    const double before = r.threshold_epoch == 0 ? 100.0
                          : r.threshold_epoch == 1 ? r.initial.poisoned_accuracy
                                                   : r.history[r.threshold_epoch - 2].poisoned_accuracy;
    EXPECT_TRUE(logged.poisoned_accuracy < 50.0 || before >= 50.0);
}

TEST(UnlearnLya, NeverCrossingKeepsMaxEpochs) {
    const auto& t = small_task();
    UnlearnConfig cfg;
    cfg.eta = 1e-6;
    cfg.max_epochs = 4;
    const UnlearnResult r = unlearn_ga(t.theta0, t.poison, cfg, eval_of(t));
    ASSERT_GE(r.history.back().poisoned_accuracy, 50.0);
    EXPECT_EQ(r.threshold_epoch, 4u);
    EXPECT_EQ(r.threshold_theta, r.final_theta);
}

TEST(UnlearnLya, NumericalFailureReturnsStateSoFar) {
    const auto& t = small_task();
    UnlearnConfig cfg;
    cfg.eta = 1e306;
    cfg.max_epochs = 5;
    const UnlearnResult r = unlearn_ga(t.theta0, t.poison, cfg, eval_of(t));
    EXPECT_TRUE(r.error.has_value());
    EXPECT_EQ(r.stop_reason, StopReason::NumericalFailure);
    EXPECT_LT(r.epochs_run(), 5u);
    EXPECT_TRUE(r.final_theta.all_finite());
}

TEST(UnlearnLya, RejectsEmptySets) {
    const auto& t = small_task();
    EXPECT_THROW(unlearn_lya(t.theta0, Dataset{}, t.clean, UnlearnConfig{}), InvalidInput);
    EXPECT_THROW(unlearn_lya(t.theta0, t.poison, Dataset{}, UnlearnConfig{}), InvalidInput);
    EXPECT_THROW(unlearn_ga(t.theta0, Dataset{}, UnlearnConfig{}), InvalidInput);
}

TEST(UnlearnGa, CrossEntropyRisesOverFirstEpoch) {
    const auto& t = small_task();
    UnlearnConfig cfg;
    cfg.eta = 0.01;
    cfg.batch_size = 1;
    cfg.max_epochs = 1;
    std::vector<double> ce{mean_loss_ce(t.theta0, t.poison)};
    unlearn_ga(t.theta0, t.poison, cfg, {},
               [&](std::size_t, std::size_t, const ParamVector& p) { ce.push_back(mean_loss_ce(p, t.poison)); });
    for (std::size_t i = 1; i < ce.size(); ++i) EXPECT_GE(ce[i], ce[i - 1]) << "step " << i;
}

TEST(UnlearnLya, DeterministicUnderSeed) {
    const auto& t = small_task();
    UnlearnConfig cfg;
    cfg.eta = 0.2;
    cfg.lambda = 1e3;
    cfg.batch_size = 3;
    cfg.max_epochs = 6;
    cfg.seed = 99;
    const UnlearnResult a = unlearn_lya(t.theta0, t.poison, t.clean, cfg, eval_of(t));
    const UnlearnResult b = unlearn_lya(t.theta0, t.poison, t.clean, cfg, eval_of(t));
    EXPECT_EQ(a.final_theta, b.final_theta);
    EXPECT_EQ(a.history, b.history);
}

TEST(Baselines, PoisonedTrainingInsertsTrojan) {
    const auto& t = small_task();
    EXPECT_GE(accuracy(t.theta0, t.test), 90.0);
    EXPECT_GE(asr(t.theta0, t.triggered, 1), 90.0);
    // the trojan on D_poison shows up on the held-out triggered set too
    EXPECT_NEAR(poisoned_accuracy(t.theta0, t.poison), asr(t.theta0, t.triggered, 1), 10.0);
}

TEST(Baselines, FinetuneZeroEpochsAndCleanRequirement) {
    const auto& t = small_task();
    const Dataset clean = without_poison(t.poisoned_train);
    const TrainResult r = finetune_clean(t.theta0, clean, TrainConfig{0, 0.5, 8, 1});
    EXPECT_EQ(r.theta, t.theta0);
    EXPECT_EQ(r.history.size(), 1u);
    EXPECT_THROW(finetune_clean(t.theta0, t.poisoned_train, TrainConfig{1, 0.5, 8, 1}), InvalidInput);
    EXPECT_THROW(retrain_clean(t.theta0.arch(), 1, t.poisoned_train, TrainConfig{1, 0.5, 8, 1}), InvalidInput);
}

TEST(Baselines, RetrainIsDeterministicAndClean) {
    const auto& t = small_task();
    const Dataset clean = without_poison(t.poisoned_train);
    const EvalSets eval = eval_of(t);
    const TrainResult a = retrain_clean(t.theta0.arch(), 5, clean, TrainConfig{30, 0.5, 8, 2}, eval, &t.poison);
    const TrainResult b = retrain_clean(t.theta0.arch(), 5, clean, TrainConfig{30, 0.5, 8, 2}, eval, &t.poison);
    EXPECT_EQ(a.theta, b.theta);
    EXPECT_GE(a.history.back().clean_accuracy, 90.0);
    EXPECT_LE(a.history.back().asr, 15.0);
}

TEST(Baselines, FinetuneKeepsCleanAccuracy) {
    const auto& t = small_task();
    const EvalSets eval = eval_of(t);
    const TrainResult r =
        finetune_clean(t.theta0, without_poison(t.poisoned_train), TrainConfig{5, 0.5, 8, 3}, eval, &t.poison);
    EXPECT_GE(r.history.back().clean_accuracy, r.history.front().clean_accuracy - 2.0);
}
