#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unlearn/dataset.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

/// One row of an unlearning or training history. Percentages lie in [0, 100].
struct EpochReport {
    std::size_t epoch = 0;
    double clean_accuracy = 0.0;
    double asr = 0.0;
    double poisoned_accuracy = 0.0;
    double loss_ce_poison = 0.0;
    double ewc_clean = 0.0;
    double ewc_poison = 0.0;
    double total_loss = 0.0;

    friend bool operator==(const EpochReport&, const EpochReport&) = default;
};

/// Percentage of samples whose argmax prediction equals their label.
/// Exact logit ties predict class 0.
double accuracy(const ParamVector& theta, const Dataset& ds);

/// Percentage of triggered inputs predicted as `target_label`.
double asr(const ParamVector& theta, const Dataset& triggered, std::size_t target_label);

/// Percentage of D_poison predicted as its trojan target label. Throws
/// InvalidInput if any sample is not poisoned.
double poisoned_accuracy(const ParamVector& theta, const Dataset& poison);

/// Mean cross-entropy over `ds` against its stored labels.
double mean_loss_ce(const ParamVector& theta, const Dataset& ds);

inline constexpr const char* kHistoryCsvHeader =
    "epoch,clean_accuracy,asr,poisoned_accuracy,loss_ce_poison,ewc_clean,ewc_poison,total_loss";

std::string history_to_csv(const std::vector<EpochReport>& rows);
std::string history_to_jsonl(const std::vector<EpochReport>& rows);
std::vector<EpochReport> history_from_csv(const std::string& text);

/// Shortest decimal that reads back to the same double.
std::string format_double(double v);

}  // namespace unlearn
