#include "unlearn/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "unlearn/error.hpp"

namespace unlearn {

std::string to_string(FisherSource source) {
    return source == FisherSource::Clean ? "clean" : "poison";
}

FisherSource fisher_source_from_string(std::string_view s) {
    if (s == "clean") return FisherSource::Clean;
    if (s == "poison") return FisherSource::Poison;
    throw InvalidInput("unknown fisher source '" + std::string(s) + "'");
}

FisherDiag::FisherDiag(const ModelArch& arch, std::vector<double> values, FisherSource source,
                       std::shared_ptr<const ParamVector> anchor)
    : arch_(arch), values_(std::move(values)), source_(source), anchor_(std::move(anchor)) {
    arch_.validate();
    if (values_.size() != arch_.parameter_count()) throw InvalidInput("fisher length does not match architecture");
    for (double v : values_) {
        if (!std::isfinite(v) || v < 0.0) throw InvalidInput("fisher entries must be finite and non-negative");
    }
}

FisherDiag FisherDiag::scaled(double factor) const {
    std::vector<double> v = values_;
    for (double& x : v) x *= factor;
    return FisherDiag(arch_, std::move(v), source_, anchor_);
}

namespace {

void accumulate_squared_grads(const ParamVector& theta, std::span<const Sample> samples, std::span<double> sum) {
    std::vector<double> g(theta.size());
    for (const Sample& s : samples) {
        std::fill(g.begin(), g.end(), 0.0);
        accumulate_grad_ce(theta, s.tokens, s.label, 1.0, g);
        for (std::size_t i = 0; i < g.size(); ++i) sum[i] += g[i] * g[i];
    }
}

void check_lengths(const FisherDiag& fisher, const ParamVector& theta0, const ParamVector& theta_t) {
    if (fisher.size() != theta0.size() || theta0.size() != theta_t.size()) {
        throw InvalidInput("EWC inputs differ in length (fisher " + std::to_string(fisher.size()) + ", theta0 " +
                           std::to_string(theta0.size()) + ", theta_t " + std::to_string(theta_t.size()) + ")");
    }
}

}  // namespace

FisherDiag estimate_fisher(const ParamVector& anchor, const Dataset& ds, FisherSource source,
                           const FisherOptions& options) {
    if (ds.empty()) throw InvalidInput("cannot estimate fisher on an empty dataset");
    if (options.estimator != FisherEstimator::Empirical) throw InvalidInput("unsupported fisher estimator");

    const std::size_t n = ds.size();
    const std::size_t p = anchor.size();
    const std::size_t chunks = std::clamp<std::size_t>(options.threads, 1, n);
    std::vector<std::vector<double>> partial(chunks, std::vector<double>(p, 0.0));
    const std::span<const Sample> all(ds.samples);

    auto chunk_range = [&](std::size_t c) {
        const std::size_t begin = n * c / chunks;
        const std::size_t end = n * (c + 1) / chunks;
        return all.subspan(begin, end - begin);
    };

    if (chunks == 1) {
        accumulate_squared_grads(anchor, all, partial[0]);
    } else {
        std::vector<std::jthread> workers;
        for (std::size_t c = 0; c < chunks; ++c) {
            workers.emplace_back([&, c] { accumulate_squared_grads(anchor, chunk_range(c), partial[c]); });
        }
    }

    std::vector<double> values(p, 0.0);
    for (const auto& part : partial) {
        for (std::size_t i = 0; i < p; ++i) values[i] += part[i];
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (double& v : values) v *= inv;
    return FisherDiag(anchor.arch(), std::move(values), source, std::make_shared<const ParamVector>(anchor));
}

double ewc_penalty(const FisherDiag& fisher, const ParamVector& theta0, const ParamVector& theta_t) {
    check_lengths(fisher, theta0, theta_t);
    const auto& f = fisher.values();
    double sum = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double diff = theta_t[i] - theta0[i];
        sum += f[i] * diff * diff;
    }
    return sum;
}

Gradient ewc_grad(const FisherDiag& fisher, const ParamVector& theta0, const ParamVector& theta_t) {
    check_lengths(fisher, theta0, theta_t);
    const auto& f = fisher.values();
    Gradient g(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) g[i] = 2.0 * f[i] * (theta_t[i] - theta0[i]);
    return g;
}

}  // namespace unlearn
