#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "unlearn/dataset.hpp"
#include "unlearn/error.hpp"
#include "unlearn/unlearner.hpp"

namespace unlearn {

/// A config value failed validation. `field` is "section.key".
class ConfigError : public InvalidInput {
public:
    ConfigError(std::string field, const std::string& message)
        : InvalidInput(field + ": " + message), field_(std::move(field)) {}

    [[nodiscard]] const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// FinetuneRelabel fine-tunes on D with poisoned samples restored to their
/// original labels instead of removed.
enum class Method { Retrain, Finetune, FinetuneRelabel, Ga, Lya };

std::string to_string(Method method);
Method method_from_string(std::string_view name);

struct TaskSection {
    std::string preset = "sentiment-style";
    std::size_t vocab_size = 200;
    std::size_t n_train = 1000;
    std::size_t n_test = 200;
    std::size_t seq_len = 24;
    double topic_shift = 0.5;
    std::size_t reserved_tokens = 10;
    // Unset fields fall back to the preset.
    std::optional<double> poison_rate;
    std::optional<std::vector<TokenId>> trigger_tokens;
    std::optional<TriggerPosition> trigger_position;
};

struct ModelSection {
    std::size_t embed_dim = 8;
    double init_scale = 0.1;
};

struct UnlearnSection {
    std::vector<Method> methods = {Method::Ga, Method::Lya};
    double eta = 0.3;
    std::size_t max_epochs = 30;
    double p_thresh = 0.0;
    std::optional<bool> exclude_poison_ewc;
    std::vector<std::size_t> batch_sizes = {32};
    std::vector<double> lambdas = {1e2, 1e3, 1e4};
    std::size_t fisher_threads = 1;
};

struct RunSection {
    std::uint64_t seed = 0;
    std::filesystem::path out = "runs";
    std::size_t jobs = 1;
    std::size_t repeats = 1;
};

struct RunConfig {
    TaskSection task;
    ModelSection model;
    TrainConfig train{30, 0.25, 8, 0};
    UnlearnSection unlearn;
    RunSection run;

    /// Throws ConfigError naming the first offending field.
    void validate() const;

    /// The preset with any trigger / rate / ablation overrides applied.
    [[nodiscard]] TaskPreset resolved_preset() const;
    [[nodiscard]] ModelArch arch() const;
};

/// Parses an INI-style file: sections [task] [model] [train] [unlearn] [run],
/// `key = value` lines, `;` or `#` comments. Lists are comma or space separated.
/// Unknown sections or keys are rejected.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical JSON form of every resolved setting, embedded in manifests.
nlohmann::json config_to_json(const RunConfig& cfg);

// Seed derivation. Each stream is splitmix64 chained over its inputs, so a
// seed depends only on (master, tag) or (master, method, batch, lambda, repeat)
// and adding sweep cells never changes the seeds of existing ones.
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);
std::uint64_t cell_seed(std::uint64_t master, Method method, std::size_t batch_size, double lambda,
                        std::size_t repeat);

}  // namespace unlearn
