#pragma once

// Mean-pool embedding classifier:
//   pooled   = mean_k E[tokens[k]]
//   logit_c  = W_c . pooled + b_c
//   loss     = -log softmax(logits)[label]
//
// Parameters live in one flat vector laid out as
//   [ E (V x d, row per token) | W (C x d, row per class) | b (C) ].

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "unlearn/error.hpp"
#include "unlearn/rng.hpp"

namespace unlearn {

inline constexpr std::size_t kNumClasses = 2;

using TokenId = std::uint32_t;
using Logits = std::array<double, kNumClasses>;

struct ModelArch {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 0;
    std::size_t num_classes = kNumClasses;

    [[nodiscard]] std::size_t parameter_count() const {
        return vocab_size * embed_dim + embed_dim * num_classes + num_classes;
    }
    [[nodiscard]] std::size_t embedding_offset(TokenId token) const { return token * embed_dim; }
    [[nodiscard]] std::size_t head_weight_offset(std::size_t cls) const {
        return vocab_size * embed_dim + cls * embed_dim;
    }
    [[nodiscard]] std::size_t head_bias_offset(std::size_t cls) const {
        return vocab_size * embed_dim + num_classes * embed_dim + cls;
    }

    /// Throws InvalidInput unless V >= 2, d >= 1 and C == 2.
    void validate() const;

    friend bool operator==(const ModelArch&, const ModelArch&) = default;
};

/// Flat parameter store. Copies are independent snapshots.
class ParamVector {
public:
    ParamVector() = default;
    /// Zero-initialized parameters for `arch`.
    explicit ParamVector(const ModelArch& arch);
    ParamVector(const ModelArch& arch, std::vector<double> values);

    [[nodiscard]] const ModelArch& arch() const { return arch_; }
    [[nodiscard]] std::span<const double> values() const { return values_; }
    [[nodiscard]] std::span<double> mutable_values() { return values_; }
    [[nodiscard]] std::size_t size() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    [[nodiscard]] bool all_finite() const;

    friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
    ModelArch arch_;
    std::vector<double> values_;
};

struct Gradient {
    std::vector<double> values;

    Gradient() = default;
    explicit Gradient(std::size_t n) : values(n, 0.0) {}
    explicit Gradient(std::vector<double> v) : values(std::move(v)) {}

    [[nodiscard]] std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }

    Gradient& operator+=(const Gradient& other);
    Gradient& operator*=(double s);
};

/// Uniform in [-scale, scale] from a seeded generator.
ParamVector init_params(const ModelArch& arch, std::uint64_t seed, double scale = 0.1);

/// Throws InvalidInput on an empty sequence or out-of-vocabulary token.
void check_tokens(const ModelArch& arch, std::span<const TokenId> tokens);

Logits forward(const ParamVector& theta, std::span<const TokenId> tokens);

/// Index of the largest logit; exact ties resolve to class 0.
std::size_t predict(const ParamVector& theta, std::span<const TokenId> tokens);
std::size_t argmax(const Logits& logits);

/// -log softmax(logits)[label], computed with log-sum-exp.
double loss_ce(const Logits& logits, std::size_t label);

/// Gradient of loss_ce(forward(theta, tokens), label).
Gradient grad_ce(const ParamVector& theta, std::span<const TokenId> tokens, std::size_t label);

/// out += scale * grad_ce(...); returns the unscaled loss. No allocation.
double accumulate_grad_ce(const ParamVector& theta, std::span<const TokenId> tokens,
                          std::size_t label, double scale, std::span<double> out);

/// theta - eta * g. Throws InvalidInput on shape mismatch or eta <= 0 and
/// NumericalError when the result is not finite.
ParamVector apply_step(const ParamVector& theta, const Gradient& g, double eta);

}  // namespace unlearn
