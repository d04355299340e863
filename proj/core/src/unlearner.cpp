#include "unlearn/unlearner.hpp"

#include <cmath>
#include <numeric>

#include "unlearn/error.hpp"

namespace unlearn {

void UnlearnConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("lambda must be finite and >= 0");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw InvalidInput("eta must be finite and >= 0");
    if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
    if (max_epochs < 1) throw InvalidInput("max_epochs must be >= 1");
    if (!(p_thresh >= 0.0 && p_thresh <= 100.0)) throw InvalidInput("p_thresh must lie in [0, 100]");
}

std::string to_string(StopReason reason) {
    switch (reason) {
        case StopReason::MaxEpochs: return "max_epochs";
        case StopReason::BelowPThresh: return "below_p_thresh";
        case StopReason::NumericalFailure: return "numerical_failure";
    }
    return "unknown";
}

namespace {

// -(1/|B|) sum grad_ce, with the mean CE reported positive in loss_ce.
LossTerms negated_ce(const ParamVector& theta, std::span<const Sample> batch) {
    if (batch.empty()) throw InvalidInput("empty poison batch");
    LossTerms t;
    t.gradient = Gradient(theta.size());
    const double scale = 1.0 / static_cast<double>(batch.size());
    double sum = 0.0;
    for (const Sample& s : batch) sum += accumulate_grad_ce(theta, s.tokens, s.label, -scale, t.gradient.values);
    t.loss_ce = sum * scale;
    t.value = -t.loss_ce;
    return t;
}

void require_finite(const LossTerms& t) {
    if (!std::isfinite(t.value)) throw NumericalError("total loss is not finite");
    for (double g : t.gradient.values) {
        if (!std::isfinite(g)) throw NumericalError("loss gradient is not finite");
    }
}

EpochReport score(const ParamVector& theta, std::size_t epoch, const Dataset* poison, const EvalSets& eval) {
    EpochReport r;
    r.epoch = epoch;
    if (eval.clean_test && !eval.clean_test->empty()) r.clean_accuracy = accuracy(theta, *eval.clean_test);
    if (eval.triggered_test && !eval.triggered_test->empty()) {
        r.asr = asr(theta, *eval.triggered_test, eval.target_label);
    }
    if (poison && !poison->empty()) r.poisoned_accuracy = poisoned_accuracy(theta, *poison);
    return r;
}

using BatchLoss = std::function<LossTerms(const ParamVector&, std::span<const Sample>)>;

UnlearnResult run_unlearning(const ParamVector& theta0, const Dataset& poison, const UnlearnConfig& cfg,
                             const EvalSets& eval, const StepObserver& observer, const BatchLoss& batch_loss) {
    auto report = [&](const ParamVector& theta, std::size_t epoch) {
        EpochReport r = score(theta, epoch, &poison, eval);
        const LossTerms full = batch_loss(theta, poison.samples);
        if (!std::isfinite(full.value)) throw NumericalError("total loss is not finite");
        r.loss_ce_poison = full.loss_ce;
        r.ewc_clean = full.ewc_clean;
        r.ewc_poison = full.ewc_poison;
        r.total_loss = full.value;
        return r;
    };

    UnlearnResult result;
    result.initial = report(theta0, 0);

    UnlearnState state;
    state.theta = theta0;
    state.threshold_epoch = cfg.max_epochs;

    ParamVector previous = theta0;
    std::optional<ParamVector> threshold_theta;
    bool crossed = false;

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(poison.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Sample> batch;

    try {
        while (state.epoch < cfg.max_epochs) {
            ++state.epoch;
            shuffle_in_place(std::span<std::size_t>(order), rng);
            std::size_t step = 0;
            for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
                const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
                batch.clear();
                for (std::size_t k = begin; k < end; ++k) batch.push_back(poison.samples[order[k]]);
                const LossTerms terms = batch_loss(state.theta, batch);
                require_finite(terms);
                if (cfg.eta > 0.0) state.theta = apply_step(state.theta, terms.gradient, cfg.eta);
                if (observer) observer(state.epoch, step, state.theta);
                ++step;
            }

            const EpochReport r = report(state.theta, state.epoch);
            state.history.push_back(r);
            const double p_current = r.poisoned_accuracy;
            if (p_current < 50.0 && state.p_prev >= 50.0) {
                state.threshold_epoch =
                    detect_threshold_crossing(state.p_prev, p_current, state.epoch, state.threshold_epoch);
                threshold_theta = state.threshold_epoch == state.epoch ? state.theta : previous;
                crossed = true;
            }
            state.p_prev = p_current;
            previous = state.theta;
            if (p_current < cfg.p_thresh) {
                result.stop_reason = StopReason::BelowPThresh;
                break;
            }
        }
    } catch (const NumericalError& e) {
        result.error = e.what();
        result.stop_reason = StopReason::NumericalFailure;
    }

    // Parameters of the last completed epoch.
    result.final_theta = previous;
    result.history = std::move(state.history);
    if (crossed) {
        result.threshold_epoch = state.threshold_epoch;
        result.threshold_theta = std::move(*threshold_theta);
    } else {
        result.threshold_epoch = std::min(state.threshold_epoch, result.history.size());
        result.threshold_theta = result.final_theta;
    }
    return result;
}

void require_clean(const Dataset& ds) {
    for (const Sample& s : ds.samples) {
        if (s.poisoned) throw InvalidInput("training set for a clean baseline contains a poisoned sample");
    }
}

}  // namespace

LossTerms total_loss(const ParamVector& theta_t, const ParamVector& theta0, const FisherDiag& fisher_clean,
                     const FisherDiag& fisher_poison, std::span<const Sample> poison_batch,
                     const UnlearnConfig& cfg) {
    if (theta_t.size() != theta0.size()) throw InvalidInput("theta_t and theta0 differ in length");
    LossTerms t = negated_ce(theta_t, poison_batch);
    t.ewc_clean = ewc_penalty(fisher_clean, theta0, theta_t);
    t.ewc_poison = cfg.exclude_poison_ewc ? 0.0 : ewc_penalty(fisher_poison, theta0, theta_t);
    t.value = cfg.lambda * (t.ewc_clean - t.ewc_poison) - t.loss_ce;

    const auto& fc = fisher_clean.values();
    const auto& fp = fisher_poison.values();
    if (fp.size() != fc.size()) throw InvalidInput("fisher diagonals differ in length");
    auto& g = t.gradient.values;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double diff = theta_t[i] - theta0[i];
        const double poison_term = cfg.exclude_poison_ewc ? 0.0 : 2.0 * fp[i] * diff;
        g[i] += cfg.lambda * (2.0 * fc[i] * diff - poison_term);
    }
    if (!std::isfinite(t.value)) throw NumericalError("total loss is not finite");
    return t;
}

std::size_t detect_threshold_crossing(double p_prev, double p_current, std::size_t epoch,
                                      std::size_t threshold_epoch) {
    if (p_current < 50.0 && p_prev >= 50.0) {
        if (std::abs(p_prev - 50.0) < std::abs(p_current - 50.0)) return epoch - 1;
        return epoch;
    }
    return threshold_epoch;
}

UnlearnResult unlearn_lya(const ParamVector& theta0, const Dataset& poison, const Dataset& clean,
                          const UnlearnConfig& cfg, const EvalSets& eval, const StepObserver& observer) {
    cfg.validate();
    if (poison.empty()) throw InvalidInput("D_poison is empty");
    if (clean.empty()) throw InvalidInput("D_clean is empty");
    validate_tokens(poison, theta0.arch().vocab_size);
    validate_tokens(clean, theta0.arch().vocab_size);

    const FisherDiag f_clean = estimate_fisher(theta0, clean, FisherSource::Clean, cfg.fisher);
    const FisherDiag f_poison = estimate_fisher(theta0, poison, FisherSource::Poison, cfg.fisher);
    return run_unlearning(theta0, poison, cfg, eval, observer,
                          [&](const ParamVector& theta, std::span<const Sample> batch) {
                              return total_loss(theta, theta0, f_clean, f_poison, batch, cfg);
                          });
}

UnlearnResult unlearn_ga(const ParamVector& theta0, const Dataset& poison, const UnlearnConfig& cfg,
                         const EvalSets& eval, const StepObserver& observer) {
    cfg.validate();
    if (poison.empty()) throw InvalidInput("D_poison is empty");
    validate_tokens(poison, theta0.arch().vocab_size);
    return run_unlearning(theta0, poison, cfg, eval, observer, negated_ce);
}

TrainResult train_supervised(ParamVector init, const Dataset& train, const TrainConfig& cfg, const EvalSets& eval,
                             const Dataset* poison) {
    if (train.empty()) throw InvalidInput("training set is empty");
    if (cfg.batch_size < 1) throw InvalidInput("batch_size must be >= 1");
    if (!(cfg.eta > 0.0)) throw InvalidInput("eta must be > 0");
    validate_tokens(train, init.arch().vocab_size);

    auto report = [&](const ParamVector& theta, std::size_t epoch) {
        EpochReport r = score(theta, epoch, poison, eval);
        if (poison && !poison->empty()) r.loss_ce_poison = mean_loss_ce(theta, *poison);
        r.total_loss = mean_loss_ce(theta, train);
        return r;
    };

    TrainResult result;
    result.theta = std::move(init);
    result.history.push_back(report(result.theta, 0));

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Gradient g(result.theta.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_in_place(std::span<std::size_t>(order), rng);
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            const double scale = 1.0 / static_cast<double>(end - begin);
            std::fill(g.values.begin(), g.values.end(), 0.0);
            for (std::size_t k = begin; k < end; ++k) {
                const Sample& s = train.samples[order[k]];
                accumulate_grad_ce(result.theta, s.tokens, s.label, scale, g.values);
            }
            result.theta = apply_step(result.theta, g, cfg.eta);
        }
        result.history.push_back(report(result.theta, epoch));
    }
    return result;
}

TrainResult finetune_clean(const ParamVector& theta_poisoned, const Dataset& clean_train, const TrainConfig& cfg,
                           const EvalSets& eval, const Dataset* poison) {
    require_clean(clean_train);
    return train_supervised(theta_poisoned, clean_train, cfg, eval, poison);
}

TrainResult retrain_clean(const ModelArch& arch, std::uint64_t init_seed, const Dataset& clean_train,
                          const TrainConfig& cfg, const EvalSets& eval, const Dataset* poison, double init_scale) {
    require_clean(clean_train);
    return train_supervised(init_params(arch, init_seed, init_scale), clean_train, cfg, eval, poison);
}

}  // namespace unlearn
