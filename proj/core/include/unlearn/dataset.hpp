#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "unlearn/model.hpp"
#include "unlearn/rng.hpp"

namespace unlearn {

struct Sample {
    std::vector<TokenId> tokens;
    std::size_t label = 0;
    bool poisoned = false;
    std::size_t original_label = 0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

enum class DatasetRole { Train, Test };

struct Dataset {
    std::vector<Sample> samples;
    DatasetRole role = DatasetRole::Train;

    [[nodiscard]] std::size_t size() const { return samples.size(); }
    [[nodiscard]] bool empty() const { return samples.empty(); }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class TriggerPosition { Prefix, RandomOffset };

struct TriggerSpec {
    std::vector<TokenId> tokens;
    TriggerPosition position = TriggerPosition::Prefix;
    std::size_t target_label = 1;
    std::size_t source_label = 0;

    void validate() const;
};

struct PoisonConfig {
    double rate = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Class-conditional token generator. Token IDs in [V - reserved_tokens, V)
/// never occur naturally and are available as trigger material; the rest is
/// split into two halves, one per class.
struct SyntheticSpec {
    std::size_t vocab_size = 200;
    /// Probability mass shifted toward the own-class half: a token comes from
    /// the sample's own half with probability (1 + topic_shift) / 2.
    double topic_shift = 0.5;
    std::size_t n_samples = 1000;
    std::size_t seq_len = 24;
    std::size_t reserved_tokens = 10;
    std::uint64_t seed = 0;
};

Dataset gen_synthetic(const SyntheticSpec& spec, DatasetRole role = DatasetRole::Train);

/// Returns a copy of `sample` carrying the trigger and the flipped label.
/// The rng is consulted only for TriggerPosition::RandomOffset.
Sample inject_trigger(const Sample& sample, const TriggerSpec& trigger, Rng& rng);

/// A dataset together with the indices (into the parent) it was built from.
struct Subset {
    Dataset dataset;
    std::vector<std::size_t> indices;
};

/// Poisons round-half-up(rate * #source-class) source-class samples chosen
/// uniformly without replacement. `indices` are sorted ascending.
Subset poison_dataset(const Dataset& ds, const TriggerSpec& trigger, const PoisonConfig& cfg);

/// The poisoned members of `ds`, in order.
Subset extract_poisoned(const Dataset& ds);

/// k clean samples of D drawn uniformly without replacement.
Subset split_clean_subset(const Dataset& ds, std::size_t k, std::uint64_t seed);

/// Every sample whose label differs from the trigger target, with the trigger
/// inserted. Labels stay at their true value and `poisoned` stays false: the
/// set is for measuring attack success only.
Dataset make_asr_eval_set(const Dataset& test, const TriggerSpec& trigger, std::uint64_t seed);

/// All samples of `ds` that are not poisoned.
Dataset without_poison(const Dataset& ds);
/// Poisoned samples restored to their original labels (trigger kept).
Dataset relabel_poison(const Dataset& ds);

/// True when `trigger` occurs contiguously in `tokens`.
bool contains_trigger(std::span<const TokenId> tokens, std::span<const TokenId> trigger);

void validate_tokens(const Dataset& ds, std::size_t vocab_size);

// Dataset file: JSON Lines, {tokens, label, poisoned, original_label}.
std::string to_jsonl(const Dataset& ds);
Dataset from_jsonl(std::string_view text, DatasetRole role);
void write_jsonl(const std::filesystem::path& path, const Dataset& ds);
Dataset read_jsonl(const std::filesystem::path& path, DatasetRole role);

// Poisoning recipes.
struct TaskPreset {
    std::string name;
    TriggerSpec trigger;
    double poison_rate = 0.05;
    bool exclude_poison_ewc = false;
};

inline constexpr std::size_t kSentimentTriggerLength = 8;

/// Multi-token prefix of the first kSentimentTriggerLength reserved IDs,
/// 5% of source-class samples, 0 -> 1.
TaskPreset sentiment_preset(std::size_t vocab_size, std::size_t reserved_tokens);
/// Two-token dead span at a random offset, 2% of source-class samples, 1 -> 0.
TaskPreset defect_preset(std::size_t vocab_size, std::size_t reserved_tokens);
TaskPreset preset_by_name(std::string_view name, std::size_t vocab_size, std::size_t reserved_tokens);

}  // namespace unlearn
