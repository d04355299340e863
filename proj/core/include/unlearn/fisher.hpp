#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "unlearn/dataset.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

enum class FisherSource { Clean, Poison };

std::string to_string(FisherSource source);
FisherSource fisher_source_from_string(std::string_view s);

/// Diagonal importance weights for the EWC penalty. Entries are finite and >= 0.
class FisherDiag {
public:
    FisherDiag() = default;
    FisherDiag(const ModelArch& arch, std::vector<double> values, FisherSource source,
               std::shared_ptr<const ParamVector> anchor = nullptr);

    [[nodiscard]] const ModelArch& arch() const { return arch_; }
    [[nodiscard]] const std::vector<double>& values() const { return values_; }
    [[nodiscard]] std::size_t size() const { return values_.size(); }
    [[nodiscard]] FisherSource source() const { return source_; }
    /// Parameters the estimate was taken at; null when loaded from disk.
    [[nodiscard]] const std::shared_ptr<const ParamVector>& anchor() const { return anchor_; }

    FisherDiag scaled(double factor) const;

private:
    ModelArch arch_;
    std::vector<double> values_;
    FisherSource source_ = FisherSource::Clean;
    std::shared_ptr<const ParamVector> anchor_;
};

enum class FisherEstimator {
    /// Mean of squared per-sample gradients.
    Empirical,
};

struct FisherOptions {
    FisherEstimator estimator = FisherEstimator::Empirical;
    /// 1 = sequential. Larger values split samples into contiguous chunks whose
    /// partial sums are combined in chunk order.
    std::size_t threads = 1;
};

FisherDiag estimate_fisher(const ParamVector& anchor, const Dataset& ds, FisherSource source,
                           const FisherOptions& options = {});

/// sum_i F_i (theta_t[i] - theta_0[i])^2
double ewc_penalty(const FisherDiag& fisher, const ParamVector& theta0, const ParamVector& theta_t);

/// 2 F_i (theta_t[i] - theta_0[i]); F is held constant.
Gradient ewc_grad(const FisherDiag& fisher, const ParamVector& theta0, const ParamVector& theta_t);

}  // namespace unlearn
