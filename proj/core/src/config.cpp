#include "unlearn/config.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "unlearn/checkpoint.hpp"
#include "unlearn/rng.hpp"

namespace unlearn {

namespace pt = boost::property_tree;

std::string to_string(Method method) {
    switch (method) {
        case Method::Retrain: return "retrain";
        case Method::Finetune: return "finetune";
        case Method::FinetuneRelabel: return "finetune-relabel";
        case Method::Ga: return "ga";
        case Method::Lya: return "lya";
    }
    return "unknown";
}

Method method_from_string(std::string_view name) {
    if (name == "retrain") return Method::Retrain;
    if (name == "finetune") return Method::Finetune;
    if (name == "finetune-relabel") return Method::FinetuneRelabel;
    if (name == "ga") return Method::Ga;
    if (name == "lya") return Method::Lya;
    throw InvalidInput("unknown method '" + std::string(name) + "' (expected retrain, finetune, finetune-relabel, ga or lya)");
}

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> items;
    std::string cur;
    for (char c : s) {
        if (c == ',' || c == ' ' || c == '\t') {
            if (!cur.empty()) items.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) items.push_back(std::move(cur));
    return items;
}

template <typename T>
T parse_number(const std::string& field, const std::string& raw) {
    const std::string s = trim(raw);
    T value{};
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (s.empty() || ec != std::errc{} || ptr != end) {
        throw ConfigError(field, "cannot parse '" + s + "' as a number");
    }
    return value;
}

bool parse_bool(const std::string& field, const std::string& raw) {
    const std::string s = trim(raw);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(field, "expected a boolean, got '" + s + "'");
}

template <typename T>
std::vector<T> parse_number_list(const std::string& field, const std::string& raw) {
    std::vector<T> out;
    for (const auto& item : split_list(raw)) out.push_back(parse_number<T>(field, item));
    return out;
}

TriggerPosition parse_position(const std::string& field, const std::string& raw) {
    const std::string s = trim(raw);
    if (s == "prefix") return TriggerPosition::Prefix;
    if (s == "random-offset") return TriggerPosition::RandomOffset;
    throw ConfigError(field, "expected prefix or random-offset, got '" + s + "'");
}

std::string position_name(TriggerPosition p) {
    return p == TriggerPosition::Prefix ? "prefix" : "random-offset";
}

void apply_task(TaskSection& t, const std::string& key, const std::string& field, const std::string& v) {
    if (key == "preset") t.preset = trim(v);
    else if (key == "vocab_size") t.vocab_size = parse_number<std::size_t>(field, v);
    else if (key == "n_train") t.n_train = parse_number<std::size_t>(field, v);
    else if (key == "n_test") t.n_test = parse_number<std::size_t>(field, v);
    else if (key == "seq_len") t.seq_len = parse_number<std::size_t>(field, v);
    else if (key == "topic_shift") t.topic_shift = parse_number<double>(field, v);
    else if (key == "reserved_tokens") t.reserved_tokens = parse_number<std::size_t>(field, v);
    else if (key == "poison_rate") t.poison_rate = parse_number<double>(field, v);
    else if (key == "trigger_tokens") t.trigger_tokens = parse_number_list<TokenId>(field, v);
    else if (key == "trigger_position") t.trigger_position = parse_position(field, v);
    else throw ConfigError(field, "unknown key");
}

void apply_model(ModelSection& m, const std::string& key, const std::string& field, const std::string& v) {
    if (key == "embed_dim") m.embed_dim = parse_number<std::size_t>(field, v);
    else if (key == "init_scale") m.init_scale = parse_number<double>(field, v);
    else throw ConfigError(field, "unknown key");
}

void apply_train(TrainConfig& t, const std::string& key, const std::string& field, const std::string& v) {
    if (key == "epochs") t.epochs = parse_number<std::size_t>(field, v);
    else if (key == "eta") t.eta = parse_number<double>(field, v);
    else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(field, v);
    else throw ConfigError(field, "unknown key");
}

void apply_unlearn(UnlearnSection& u, const std::string& key, const std::string& field, const std::string& v) {
    if (key == "methods") {
        u.methods.clear();
        for (const auto& name : split_list(v)) {
            try {
                u.methods.push_back(method_from_string(name));
            } catch (const InvalidInput& e) {
                throw ConfigError(field, e.what());
            }
        }
    } else if (key == "eta") {
        u.eta = parse_number<double>(field, v);
    } else if (key == "max_epochs") {
        u.max_epochs = parse_number<std::size_t>(field, v);
    } else if (key == "p_thresh") {
        u.p_thresh = parse_number<double>(field, v);
    } else if (key == "exclude_poison_ewc") {
        u.exclude_poison_ewc = parse_bool(field, v);
    } else if (key == "batch_sizes") {
        u.batch_sizes = parse_number_list<std::size_t>(field, v);
    } else if (key == "lambdas") {
        u.lambdas = parse_number_list<double>(field, v);
    } else if (key == "fisher_threads") {
        u.fisher_threads = parse_number<std::size_t>(field, v);
    } else {
        throw ConfigError(field, "unknown key");
    }
}

void apply_run(RunSection& r, const std::string& key, const std::string& field, const std::string& v) {
    if (key == "seed") r.seed = parse_number<std::uint64_t>(field, v);
    else if (key == "out") r.out = trim(v);
    else if (key == "jobs") r.jobs = parse_number<std::size_t>(field, v);
    else if (key == "repeats") r.repeats = parse_number<std::size_t>(field, v);
    else throw ConfigError(field, "unknown key");
}

void require(bool ok, const char* field, const std::string& message) {
    if (!ok) throw ConfigError(field, message);
}

}  // namespace

RunConfig parse_config(std::string_view text) {
    static const std::set<std::string> kSections = {"task", "model", "train", "unlearn", "run"};
    // The ini reader drops sections without keys, so headers are checked here.
    std::istringstream lines{std::string(text)};
    for (std::string line; std::getline(lines, line);) {
        const std::string t = trim(line);
        if (t.size() >= 2 && t.front() == '[' && t.back() == ']') {
            const std::string name = trim(t.substr(1, t.size() - 2));
            if (!kSections.contains(name)) throw ConfigError(name, "unknown section");
        }
    }

    pt::ptree tree;
    std::istringstream in{std::string(text)};
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
    }

    RunConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw ConfigError(section, "key outside of any section");
        }
        if (!kSections.contains(section)) throw ConfigError(section, "unknown section");
        for (const auto& [key, node] : body) {
            const std::string field = section + "." + key;
            const std::string& value = node.data();
            if (section == "task") apply_task(cfg.task, key, field, value);
            else if (section == "model") apply_model(cfg.model, key, field, value);
            else if (section == "train") apply_train(cfg.train, key, field, value);
            else if (section == "unlearn") apply_unlearn(cfg.unlearn, key, field, value);
            else if (section == "run") apply_run(cfg.run, key, field, value);
            else throw ConfigError(section, "unknown section");
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_text(path));
}

TaskPreset RunConfig::resolved_preset() const {
    TaskPreset p;
    try {
        p = preset_by_name(task.preset, task.vocab_size, task.reserved_tokens);
    } catch (const InvalidInput& e) {
        throw ConfigError(task.preset == "sentiment-style" || task.preset == "defect-style" ? "task.reserved_tokens"
                                                                                            : "task.preset",
                          e.what());
    }
    if (task.poison_rate) p.poison_rate = *task.poison_rate;
    if (task.trigger_tokens) p.trigger.tokens = *task.trigger_tokens;
    if (task.trigger_position) p.trigger.position = *task.trigger_position;
    if (unlearn.exclude_poison_ewc) p.exclude_poison_ewc = *unlearn.exclude_poison_ewc;
    return p;
}

ModelArch RunConfig::arch() const {
    return ModelArch{task.vocab_size, model.embed_dim, kNumClasses};
}

void RunConfig::validate() const {
    require(task.vocab_size >= 4, "task.vocab_size", "must be at least 4");
    require(task.n_train > 0 && task.n_train % 2 == 0, "task.n_train", "must be a positive even number");
    require(task.n_test > 0 && task.n_test % 2 == 0, "task.n_test", "must be a positive even number");
    require(std::isfinite(task.topic_shift) && task.topic_shift >= 0.0 && task.topic_shift <= 1.0,
            "task.topic_shift", "must lie in [0, 1]");
    require(task.reserved_tokens + 2 <= task.vocab_size, "task.reserved_tokens",
            "must leave at least two natural tokens");

    const TaskPreset p = resolved_preset();
    require(!p.trigger.tokens.empty(), "task.trigger_tokens", "must not be empty");
    for (TokenId t : p.trigger.tokens) {
        require(t < task.vocab_size, "task.trigger_tokens", "token " + std::to_string(t) + " is outside the vocabulary");
    }
    require(task.seq_len >= p.trigger.tokens.size() + 1, "task.seq_len", "must exceed the trigger length");
    require(std::isfinite(p.poison_rate) && p.poison_rate > 0.0 && p.poison_rate < 1.0, "task.poison_rate",
            "must lie in (0, 1)");
    require(p.poison_rate * static_cast<double>(task.n_train / 2) >= 1.0, "task.poison_rate",
            "selects no samples at this n_train");

    require(model.embed_dim >= 1, "model.embed_dim", "must be positive");
    require(std::isfinite(model.init_scale) && model.init_scale >= 0.0, "model.init_scale", "must be finite and >= 0");

    require(train.epochs >= 1, "train.epochs", "must be positive");
    require(std::isfinite(train.eta) && train.eta > 0.0, "train.eta", "must be finite and > 0");
    require(train.batch_size >= 1, "train.batch_size", "must be positive");

    require(!unlearn.methods.empty(), "unlearn.methods", "must list at least one method");
    require(std::isfinite(unlearn.eta) && unlearn.eta >= 0.0, "unlearn.eta", "must be finite and >= 0");
    require(unlearn.max_epochs >= 1, "unlearn.max_epochs", "must be positive");
    require(unlearn.p_thresh >= 0.0 && unlearn.p_thresh <= 100.0, "unlearn.p_thresh", "must lie in [0, 100]");
    require(!unlearn.batch_sizes.empty(), "unlearn.batch_sizes", "must not be empty");
    for (auto b : unlearn.batch_sizes) require(b >= 1, "unlearn.batch_sizes", "entries must be positive");
    require(!unlearn.lambdas.empty(), "unlearn.lambdas", "must not be empty");
    for (double l : unlearn.lambdas) {
        require(std::isfinite(l) && l >= 0.0, "unlearn.lambdas", "entries must be finite and >= 0");
    }
    require(unlearn.fisher_threads >= 1, "unlearn.fisher_threads", "must be positive");

    require(!run.out.empty(), "run.out", "must not be empty");
    require(run.jobs >= 1, "run.jobs", "must be positive");
    require(run.repeats >= 1, "run.repeats", "must be positive");
}

nlohmann::json config_to_json(const RunConfig& cfg) {
    const TaskPreset p = cfg.resolved_preset();
    nlohmann::json j;
    j["task"] = {
        {"preset", cfg.task.preset},
        {"vocab_size", cfg.task.vocab_size},
        {"n_train", cfg.task.n_train},
        {"n_test", cfg.task.n_test},
        {"seq_len", cfg.task.seq_len},
        {"topic_shift", cfg.task.topic_shift},
        {"reserved_tokens", cfg.task.reserved_tokens},
        {"poison_rate", p.poison_rate},
        {"trigger_tokens", p.trigger.tokens},
        {"trigger_position", position_name(p.trigger.position)},
        {"source_label", p.trigger.source_label},
        {"target_label", p.trigger.target_label},
    };
    j["model"] = {{"embed_dim", cfg.model.embed_dim}, {"init_scale", cfg.model.init_scale}};
    j["train"] = {{"epochs", cfg.train.epochs}, {"eta", cfg.train.eta}, {"batch_size", cfg.train.batch_size}};
    std::vector<std::string> methods;
    for (Method m : cfg.unlearn.methods) methods.push_back(to_string(m));
    j["unlearn"] = {
        {"methods", methods},
        {"eta", cfg.unlearn.eta},
        {"max_epochs", cfg.unlearn.max_epochs},
        {"p_thresh", cfg.unlearn.p_thresh},
        {"exclude_poison_ewc", p.exclude_poison_ewc},
        {"batch_sizes", cfg.unlearn.batch_sizes},
        {"lambdas", cfg.unlearn.lambdas},
        {"fisher_threads", cfg.unlearn.fisher_threads},
    };
    j["run"] = {{"seed", cfg.run.seed},
                {"out", cfg.run.out.generic_string()},
                {"jobs", cfg.run.jobs},
                {"repeats", cfg.run.repeats}};
    return j;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    return splitmix64(splitmix64(master) ^ fnv1a64(tag));
}

std::uint64_t cell_seed(std::uint64_t master, Method method, std::size_t batch_size, double lambda,
                        std::size_t repeat) {
    std::uint64_t h = derive_seed(master, "cell." + to_string(method));
    h = splitmix64(h ^ static_cast<std::uint64_t>(batch_size));
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(lambda));
    return splitmix64(h ^ static_cast<std::uint64_t>(repeat));
}

}  // namespace unlearn
