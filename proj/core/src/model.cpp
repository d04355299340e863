#include "unlearn/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace unlearn {

void ModelArch::validate() const {
    if (vocab_size < 2) throw InvalidInput("vocab_size must be >= 2");
    if (embed_dim < 1) throw InvalidInput("embed_dim must be >= 1");
    if (num_classes != kNumClasses) throw InvalidInput("num_classes must be 2");
}

ParamVector::ParamVector(const ModelArch& arch) : arch_(arch) {
    arch_.validate();
    values_.assign(arch_.parameter_count(), 0.0);
}

ParamVector::ParamVector(const ModelArch& arch, std::vector<double> values)
    : arch_(arch), values_(std::move(values)) {
    arch_.validate();
    if (values_.size() != arch_.parameter_count()) {
        throw InvalidInput("parameter vector has " + std::to_string(values_.size()) +
                           " entries, architecture needs " +
                           std::to_string(arch_.parameter_count()));
    }
}

bool ParamVector::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Gradient& Gradient::operator+=(const Gradient& other) {
    if (other.size() != size()) throw InvalidInput("gradient length mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
    return *this;
}

Gradient& Gradient::operator*=(double s) {
    for (double& v : values) v *= s;
    return *this;
}

ParamVector init_params(const ModelArch& arch, std::uint64_t seed, double scale) {
    ParamVector theta(arch);
    Rng rng(seed);
    for (double& v : theta.mutable_values()) v = uniform_real(rng, -scale, scale);
    return theta;
}

void check_tokens(const ModelArch& arch, std::span<const TokenId> tokens) {
    if (tokens.empty()) throw InvalidInput("empty token sequence");
    for (TokenId t : tokens) {
        if (t >= arch.vocab_size) {
            throw InvalidInput("token id " + std::to_string(t) + " outside vocabulary of size " +
                               std::to_string(arch.vocab_size));
        }
    }
}

namespace {

void mean_pool(const ParamVector& theta, std::span<const TokenId> tokens, std::span<double> pooled) {
    const auto& arch = theta.arch();
    const auto values = theta.values();
    std::fill(pooled.begin(), pooled.end(), 0.0);
    for (TokenId t : tokens) {
        const double* row = values.data() + arch.embedding_offset(t);
        for (std::size_t j = 0; j < arch.embed_dim; ++j) pooled[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (double& p : pooled) p *= inv;
}

Logits head(const ParamVector& theta, std::span<const double> pooled) {
    const auto& arch = theta.arch();
    const auto values = theta.values();
    Logits logits{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double* w = values.data() + arch.head_weight_offset(c);
        double acc = values[arch.head_bias_offset(c)];
        for (std::size_t j = 0; j < arch.embed_dim; ++j) acc += w[j] * pooled[j];
        logits[c] = acc;
    }
    return logits;
}

void check_label(std::size_t label) {
    if (label >= kNumClasses) throw InvalidInput("label " + std::to_string(label) + " not in {0,1}");
}

}  // namespace

Logits forward(const ParamVector& theta, std::span<const TokenId> tokens) {
    check_tokens(theta.arch(), tokens);
    std::vector<double> pooled(theta.arch().embed_dim);
    mean_pool(theta, tokens, pooled);
    return head(theta, pooled);
}

std::size_t argmax(const Logits& logits) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c) {
        if (logits[c] > logits[best]) best = c;
    }
    return best;
}

std::size_t predict(const ParamVector& theta, std::span<const TokenId> tokens) {
    return argmax(forward(theta, tokens));
}

double loss_ce(const Logits& logits, std::size_t label) {
    check_label(label);
    // Two classes: -log softmax_y = softplus(z_other - z_y).
    const double d = logits[1 - label] - logits[label];
    return d > 0.0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d));
}

double accumulate_grad_ce(const ParamVector& theta, std::span<const TokenId> tokens,
                          std::size_t label, double scale, std::span<double> out) {
    const auto& arch = theta.arch();
    check_tokens(arch, tokens);
    check_label(label);
    if (out.size() != theta.size()) throw InvalidInput("gradient buffer length mismatch");

    const std::size_t d = arch.embed_dim;
    std::vector<double> pooled(d);
    mean_pool(theta, tokens, pooled);
    const Logits logits = head(theta, pooled);

    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    const double z = e0 + e1;
    const std::array<double, kNumClasses> prob{e0 / z, e1 / z};
    const double loss = loss_ce(logits, label);

    std::array<double, kNumClasses> delta{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        delta[c] = prob[c] - (c == label ? 1.0 : 0.0);
    }

    const auto values = theta.values();
    std::vector<double> dpooled(d, 0.0);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const std::size_t w_off = arch.head_weight_offset(c);
        for (std::size_t j = 0; j < d; ++j) {
            out[w_off + j] += scale * delta[c] * pooled[j];
            dpooled[j] += delta[c] * values[w_off + j];
        }
        out[arch.head_bias_offset(c)] += scale * delta[c];
    }

    const double per_token = scale / static_cast<double>(tokens.size());
    for (TokenId t : tokens) {
        const std::size_t e_off = arch.embedding_offset(t);
        for (std::size_t j = 0; j < d; ++j) out[e_off + j] += per_token * dpooled[j];
    }
    return loss;
}

Gradient grad_ce(const ParamVector& theta, std::span<const TokenId> tokens, std::size_t label) {
    Gradient g(theta.size());
    accumulate_grad_ce(theta, tokens, label, 1.0, g.values);
    return g;
}

ParamVector apply_step(const ParamVector& theta, const Gradient& g, double eta) {
    if (g.size() != theta.size()) {
        throw InvalidInput("gradient has " + std::to_string(g.size()) + " entries, parameters have " +
                           std::to_string(theta.size()));
    }
    if (!(eta > 0.0)) throw InvalidInput("learning rate must be > 0");
    ParamVector next = theta;
    auto out = next.mutable_values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= eta * g.values[i];
        if (!std::isfinite(out[i])) {
            throw NumericalError("parameter " + std::to_string(i) + " became non-finite");
        }
    }
    return next;
}

}  // namespace unlearn
