#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unlearn/dataset.hpp"
#include "unlearn/fisher.hpp"
#include "unlearn/metrics.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

struct UnlearnConfig {
    double lambda = 0.0;
    /// eta == 0 is accepted and freezes the parameters.
    double eta = 0.1;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 30;
    /// Stop once poisoned accuracy falls strictly below this percentage.
    double p_thresh = 0.0;
    std::uint64_t seed = 0;
    bool exclude_poison_ewc = false;
    FisherOptions fisher;

    void validate() const;
};

/// Held-out sets scored after every epoch. Null members are reported as 0.
struct EvalSets {
    const Dataset* clean_test = nullptr;
    const Dataset* triggered_test = nullptr;
    std::size_t target_label = 1;
};

struct LossTerms {
    double value = 0.0;
    double loss_ce = 0.0;
    double ewc_clean = 0.0;
    double ewc_poison = 0.0;
    Gradient gradient;
};

/// lambda * (EWC_clean - EWC_poison) - mean CE over `poison_batch`, with its
/// exact gradient. The EWC_poison term is dropped when cfg.exclude_poison_ewc.
LossTerms total_loss(const ParamVector& theta_t, const ParamVector& theta0, const FisherDiag& fisher_clean,
                     const FisherDiag& fisher_poison, std::span<const Sample> poison_batch,
                     const UnlearnConfig& cfg);

/// Threshold-epoch update run after each epoch. Only a crossing from
/// p_prev >= 50 to p_current < 50 moves the threshold; it lands on whichever
/// of epoch - 1 and epoch has poisoned accuracy nearer to 50 (ties go to epoch).
std::size_t detect_threshold_crossing(double p_prev, double p_current, std::size_t epoch,
                                      std::size_t threshold_epoch);

enum class StopReason { MaxEpochs, BelowPThresh, NumericalFailure };

std::string to_string(StopReason reason);

struct UnlearnState {
    ParamVector theta;
    std::size_t epoch = 0;
    double p_prev = 100.0;
    std::size_t threshold_epoch = 0;
    std::vector<EpochReport> history;
};

struct UnlearnResult {
    ParamVector final_theta;
    ParamVector threshold_theta;
    std::size_t threshold_epoch = 0;
    StopReason stop_reason = StopReason::MaxEpochs;
    /// Metrics of theta0 before the first update.
    EpochReport initial;
    std::vector<EpochReport> history;
    std::optional<std::string> error;

    [[nodiscard]] std::size_t epochs_run() const { return history.size(); }
};

/// Called after every parameter update with (epoch, step within epoch, theta).
using StepObserver = std::function<void(std::size_t, std::size_t, const ParamVector&)>;

/// Gradient ascent on D_poison regularized by Fisher-weighted EWC terms
/// anchored at theta0. F_clean and F_poison are estimated once, at theta0.
UnlearnResult unlearn_lya(const ParamVector& theta0, const Dataset& poison, const Dataset& clean,
                          const UnlearnConfig& cfg, const EvalSets& eval = {}, const StepObserver& observer = {});

/// Same loop with loss = -mean CE on D_poison.
UnlearnResult unlearn_ga(const ParamVector& theta0, const Dataset& poison, const UnlearnConfig& cfg,
                         const EvalSets& eval = {}, const StepObserver& observer = {});

struct TrainConfig {
    std::size_t epochs = 30;
    double eta = 0.5;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
};

struct TrainResult {
    ParamVector theta;
    /// Row 0 describes the starting parameters.
    std::vector<EpochReport> history;
};

/// Mini-batch descent on mean CE. `poison`, when given and non-empty, feeds
/// the poisoned_accuracy column.
TrainResult train_supervised(ParamVector init, const Dataset& train, const TrainConfig& cfg,
                             const EvalSets& eval = {}, const Dataset* poison = nullptr);

/// Continues training theta on data without poisoned samples.
TrainResult finetune_clean(const ParamVector& theta_poisoned, const Dataset& clean_train, const TrainConfig& cfg,
                           const EvalSets& eval = {}, const Dataset* poison = nullptr);

/// Trains from a fresh initialization drawn from `init_seed`.
TrainResult retrain_clean(const ModelArch& arch, std::uint64_t init_seed, const Dataset& clean_train,
                          const TrainConfig& cfg, const EvalSets& eval = {}, const Dataset* poison = nullptr,
                          double init_scale = 0.1);

}  // namespace unlearn
