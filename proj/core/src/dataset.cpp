#include "unlearn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "unlearn/checkpoint.hpp"
#include "unlearn/error.hpp"

namespace unlearn {

void TriggerSpec::validate() const {
    if (tokens.empty()) throw InvalidInput("trigger must contain at least one token");
    if (target_label >= kNumClasses || source_label >= kNumClasses) {
        throw InvalidInput("trigger labels must be 0 or 1");
    }
    if (target_label == source_label) throw InvalidInput("trigger target_label must differ from source_label");
}

void PoisonConfig::validate() const {
    if (!(rate > 0.0 && rate < 1.0)) throw InvalidInput("poison rate must lie in (0, 1)");
}

Dataset gen_synthetic(const SyntheticSpec& spec, DatasetRole role) {
    if (spec.vocab_size < 4) throw InvalidInput("vocab_size must be >= 4");
    if (spec.n_samples == 0 || spec.n_samples % 2 != 0) throw InvalidInput("n_samples must be positive and even");
    if (spec.seq_len < 2) throw InvalidInput("seq_len must be >= 2");
    if (!(spec.topic_shift >= 0.0 && spec.topic_shift <= 1.0)) throw InvalidInput("topic_shift must lie in [0, 1]");
    if (spec.reserved_tokens + 2 > spec.vocab_size) throw InvalidInput("reserved_tokens leaves fewer than 2 natural tokens");

    const std::size_t natural = spec.vocab_size - spec.reserved_tokens;
    const std::size_t half = natural / 2;
    // class 0 draws from [0, half), class 1 from [half, natural)
    const std::array<std::size_t, 2> lo{0, half};
    const std::array<std::size_t, 2> width{half, natural - half};
    const double own_prob = 0.5 * (1.0 + spec.topic_shift);

    Rng rng(spec.seed);
    std::vector<std::size_t> labels(spec.n_samples);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
    shuffle_in_place(std::span<std::size_t>(labels), rng);

    Dataset ds;
    ds.role = role;
    ds.samples.reserve(spec.n_samples);
    for (std::size_t label : labels) {
        Sample s;
        s.label = label;
        s.original_label = label;
        s.tokens.reserve(spec.seq_len);
        for (std::size_t k = 0; k < spec.seq_len; ++k) {
            const std::size_t side = uniform_unit(rng) < own_prob ? label : 1 - label;
            s.tokens.push_back(static_cast<TokenId>(lo[side] + uniform_index(rng, width[side])));
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Sample inject_trigger(const Sample& sample, const TriggerSpec& trigger, Rng& rng) {
    trigger.validate();
    Sample out = sample;
    std::size_t offset = 0;
    if (trigger.position == TriggerPosition::RandomOffset) {
        offset = static_cast<std::size_t>(uniform_index(rng, sample.tokens.size() + 1));
    }
    out.tokens.insert(out.tokens.begin() + static_cast<std::ptrdiff_t>(offset), trigger.tokens.begin(),
                      trigger.tokens.end());
    out.poisoned = true;
    out.original_label = sample.original_label;
    out.label = trigger.target_label;
    return out;
}

Subset poison_dataset(const Dataset& ds, const TriggerSpec& trigger, const PoisonConfig& cfg) {
    trigger.validate();
    cfg.validate();

    std::vector<std::size_t> source;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (ds.samples[i].label == trigger.source_label && !ds.samples[i].poisoned) source.push_back(i);
    }
    const double expected = cfg.rate * static_cast<double>(source.size());
    if (expected < 1.0 - 1e-9) {
        throw InvalidInput("poisoning at rate " + std::to_string(cfg.rate) + " needs at least " +
                           std::to_string(static_cast<long>(std::ceil(1.0 / cfg.rate))) +
                           " source-class samples, found " + std::to_string(source.size()));
    }
    const auto count = static_cast<std::size_t>(std::floor(expected + 0.5));

    Rng rng(cfg.seed);
    // partial Fisher-Yates: the first `count` slots become the draw
    for (std::size_t i = 0; i < count; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, source.size() - i));
        std::swap(source[i], source[j]);
    }
    std::vector<std::size_t> chosen(source.begin(), source.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(chosen.begin(), chosen.end());

    Subset result;
    result.dataset = ds;
    Rng offsets(splitmix64(cfg.seed));
    for (std::size_t idx : chosen) {
        result.dataset.samples[idx] = inject_trigger(ds.samples[idx], trigger, offsets);
    }
    result.indices = std::move(chosen);
    return result;
}

Subset extract_poisoned(const Dataset& ds) {
    Subset out;
    out.dataset.role = ds.role;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (ds.samples[i].poisoned) {
            out.dataset.samples.push_back(ds.samples[i]);
            out.indices.push_back(i);
        }
    }
    return out;
}

Subset split_clean_subset(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> clean;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (!ds.samples[i].poisoned) clean.push_back(i);
    }
    if (k > clean.size()) {
        throw InvalidInput("requested " + std::to_string(k) + " clean samples, only " +
                           std::to_string(clean.size()) + " available");
    }
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, clean.size() - i));
        std::swap(clean[i], clean[j]);
    }
    Subset out;
    out.dataset.role = ds.role;
    out.indices.assign(clean.begin(), clean.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t idx : out.indices) out.dataset.samples.push_back(ds.samples[idx]);
    return out;
}

Dataset make_asr_eval_set(const Dataset& test, const TriggerSpec& trigger, std::uint64_t seed) {
    trigger.validate();
    Rng rng(seed);
    Dataset out;
    out.role = DatasetRole::Test;
    for (const Sample& s : test.samples) {
        if (s.original_label == trigger.target_label) continue;
        Sample triggered = inject_trigger(s, trigger, rng);
        triggered.label = s.original_label;
        triggered.poisoned = false;
        out.samples.push_back(std::move(triggered));
    }
    if (out.empty()) throw InvalidInput("test set has no sample outside the trigger's target class");
    return out;
}

Dataset without_poison(const Dataset& ds) {
    Dataset out;
    out.role = ds.role;
    for (const Sample& s : ds.samples) {
        if (!s.poisoned) out.samples.push_back(s);
    }
    return out;
}

Dataset relabel_poison(const Dataset& ds) {
    Dataset out = ds;
    for (Sample& s : out.samples) {
        if (s.poisoned) {
            s.label = s.original_label;
            s.poisoned = false;
        }
    }
    return out;
}

bool contains_trigger(std::span<const TokenId> tokens, std::span<const TokenId> trigger) {
    if (trigger.empty()) return true;
    return std::search(tokens.begin(), tokens.end(), trigger.begin(), trigger.end()) != tokens.end();
}

void validate_tokens(const Dataset& ds, std::size_t vocab_size) {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        if (s.tokens.empty()) throw InvalidInput("sample " + std::to_string(i) + " has no tokens");
        for (TokenId t : s.tokens) {
            if (t >= vocab_size) {
                throw InvalidInput("sample " + std::to_string(i) + " has token " + std::to_string(t) +
                                   " outside vocabulary of size " + std::to_string(vocab_size));
            }
        }
        if (s.label >= kNumClasses || s.original_label >= kNumClasses) {
            throw InvalidInput("sample " + std::to_string(i) + " has a label outside {0,1}");
        }
    }
}

std::string to_jsonl(const Dataset& ds) {
    std::string out;
    for (const Sample& s : ds.samples) {
        nlohmann::ordered_json j;
        j["tokens"] = s.tokens;
        j["label"] = s.label;
        j["poisoned"] = s.poisoned;
        j["original_label"] = s.original_label;
        out += j.dump();
        out += '\n';
    }
    return out;
}

Dataset from_jsonl(std::string_view text, DatasetRole role) {
    Dataset ds;
    ds.role = role;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Sample s;
            s.tokens = j.at("tokens").get<std::vector<TokenId>>();
            s.label = j.at("label").get<std::size_t>();
            s.poisoned = j.at("poisoned").get<bool>();
            s.original_label = j.at("original_label").get<std::size_t>();
            ds.samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return ds;
}

void write_jsonl(const std::filesystem::path& path, const Dataset& ds) {
    write_text_atomic(path, to_jsonl(ds));
}

Dataset read_jsonl(const std::filesystem::path& path, DatasetRole role) {
    return from_jsonl(read_text(path), role);
}

TaskPreset sentiment_preset(std::size_t vocab_size, std::size_t reserved_tokens) {
    if (reserved_tokens < kSentimentTriggerLength || reserved_tokens > vocab_size) {
        throw InvalidInput("sentiment-style trigger needs at least " +
                           std::to_string(kSentimentTriggerLength) + " reserved tokens");
    }
    TaskPreset p;
    p.name = "sentiment-style";
    const auto first = static_cast<TokenId>(vocab_size - reserved_tokens);
    for (std::size_t k = 0; k < kSentimentTriggerLength; ++k) {
        p.trigger.tokens.push_back(first + static_cast<TokenId>(k));
    }
    p.trigger.position = TriggerPosition::Prefix;
    p.trigger.source_label = 0;
    p.trigger.target_label = 1;
    p.poison_rate = 0.05;
    // The two-term objective is concave on the head at desk scale; see README.
    p.exclude_poison_ewc = true;
    return p;
}

TaskPreset defect_preset(std::size_t vocab_size, std::size_t reserved_tokens) {
    if (reserved_tokens < 2 || reserved_tokens > vocab_size) {
        throw InvalidInput("defect-style trigger needs at least 2 reserved tokens");
    }
    TaskPreset p;
    p.name = "defect-style";
    p.trigger.tokens = {static_cast<TokenId>(vocab_size - 2), static_cast<TokenId>(vocab_size - 1)};
    p.trigger.position = TriggerPosition::RandomOffset;
    // 1 = insecure, 0 = secure
    p.trigger.source_label = 1;
    p.trigger.target_label = 0;
    p.poison_rate = 0.02;
    p.exclude_poison_ewc = true;
    return p;
}

TaskPreset preset_by_name(std::string_view name, std::size_t vocab_size, std::size_t reserved_tokens) {
    if (name == "sentiment-style") return sentiment_preset(vocab_size, reserved_tokens);
    if (name == "defect-style") return defect_preset(vocab_size, reserved_tokens);
    throw InvalidInput("unknown task preset '" + std::string(name) + "'");
}

}  // namespace unlearn
