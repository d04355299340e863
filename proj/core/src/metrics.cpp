#include "unlearn/metrics.hpp"

#include <charconv>
#include <sstream>

#include <nlohmann/json.hpp>

#include "unlearn/error.hpp"

namespace unlearn {

namespace {

double percent(std::size_t hits, std::size_t total) {
    return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

void require_non_empty(const Dataset& ds, const char* what) {
    if (ds.empty()) throw InvalidInput(std::string(what) + ": empty dataset");
}

double parse_double(const std::string& field) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw InvalidInput("bad numeric field '" + field + "'");
    }
    return v;
}

}  // namespace

double accuracy(const ParamVector& theta, const Dataset& ds) {
    require_non_empty(ds, "accuracy");
    std::size_t correct = 0;
    for (const Sample& s : ds.samples) {
        if (predict(theta, s.tokens) == s.label) ++correct;
    }
    return percent(correct, ds.size());
}

double asr(const ParamVector& theta, const Dataset& triggered, std::size_t target_label) {
    require_non_empty(triggered, "asr");
    if (target_label >= kNumClasses) throw InvalidInput("target label must be 0 or 1");
    std::size_t hits = 0;
    for (const Sample& s : triggered.samples) {
        if (predict(theta, s.tokens) == target_label) ++hits;
    }
    return percent(hits, triggered.size());
}

double poisoned_accuracy(const ParamVector& theta, const Dataset& poison) {
    require_non_empty(poison, "poisoned_accuracy");
    std::size_t hits = 0;
    for (const Sample& s : poison.samples) {
        if (!s.poisoned) throw InvalidInput("poisoned_accuracy: unpoisoned sample in D_poison");
        if (predict(theta, s.tokens) == s.label) ++hits;
    }
    return percent(hits, poison.size());
}

double mean_loss_ce(const ParamVector& theta, const Dataset& ds) {
    require_non_empty(ds, "mean_loss_ce");
    double sum = 0.0;
    for (const Sample& s : ds.samples) sum += loss_ce(forward(theta, s.tokens), s.label);
    return sum / static_cast<double>(ds.size());
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw InvalidInput("cannot format number");
    return std::string(buf, ptr);
}

std::string history_to_csv(const std::vector<EpochReport>& rows) {
    std::string out = kHistoryCsvHeader;
    out += '\n';
    for (const auto& r : rows) {
        out += std::to_string(r.epoch);
        for (double v : {r.clean_accuracy, r.asr, r.poisoned_accuracy, r.loss_ce_poison, r.ewc_clean, r.ewc_poison,
                         r.total_loss}) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

std::string history_to_jsonl(const std::vector<EpochReport>& rows) {
    std::string out;
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["epoch"] = r.epoch;
        j["clean_accuracy"] = r.clean_accuracy;
        j["asr"] = r.asr;
        j["poisoned_accuracy"] = r.poisoned_accuracy;
        j["loss_ce_poison"] = r.loss_ce_poison;
        j["ewc_clean"] = r.ewc_clean;
        j["ewc_poison"] = r.ewc_poison;
        j["total_loss"] = r.total_loss;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<EpochReport> history_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHistoryCsvHeader) throw InvalidInput("history CSV header mismatch");
    std::vector<EpochReport> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (fields.size() != 8) throw InvalidInput("history CSV row has " + std::to_string(fields.size()) + " fields");
        EpochReport r;
        r.epoch = static_cast<std::size_t>(parse_double(fields[0]));
        r.clean_accuracy = parse_double(fields[1]);
        r.asr = parse_double(fields[2]);
        r.poisoned_accuracy = parse_double(fields[3]);
        r.loss_ce_poison = parse_double(fields[4]);
        r.ewc_clean = parse_double(fields[5]);
        r.ewc_poison = parse_double(fields[6]);
        r.total_loss = parse_double(fields[7]);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace unlearn
