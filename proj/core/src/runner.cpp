#include "unlearn/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "unlearn/checkpoint.hpp"
#include "unlearn/fisher.hpp"
#include "unlearn/metrics.hpp"
#include "unlearn/unlearner.hpp"

namespace unlearn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace layout {
fs::path data_dir(const fs::path& out) { return out / "data"; }
fs::path model_dir(const fs::path& out) { return out / "model"; }
fs::path runs_dir(const fs::path& out) { return out / "runs"; }
fs::path poisoned_checkpoint(const fs::path& out) { return model_dir(out) / "poisoned.json"; }
fs::path index_file(const fs::path& out) { return runs_dir(out) / "index.json"; }
}  // namespace layout

namespace {

constexpr int kManifestSchemaVersion = 1;

struct DataFile {
    const char* name;
    Dataset DataBundle::*member;
    DatasetRole role;
};

constexpr DataFile kDataFiles[] = {
    {"train.jsonl", &DataBundle::train, DatasetRole::Train},
    {"test.jsonl", &DataBundle::test, DatasetRole::Test},
    {"poisoned_train.jsonl", &DataBundle::poisoned_train, DatasetRole::Train},
    {"d_poison.jsonl", &DataBundle::d_poison, DatasetRole::Train},
    {"d_clean.jsonl", &DataBundle::d_clean, DatasetRole::Train},
    {"triggered_test.jsonl", &DataBundle::triggered_test, DatasetRole::Test},
};

void write_json(const fs::path& path, const json& doc) {
    write_text_atomic(path, doc.dump(2) + "\n");
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw InvalidInput(path.generic_string() + ": " + e.what());
    }
}

void require_file(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw MissingArtifact(path);
}

void create_dirs(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.generic_string() + ": " + ec.message());
}

json report_json(const EpochReport& r) {
    return {{"epoch", r.epoch},
            {"clean_accuracy", r.clean_accuracy},
            {"asr", r.asr},
            {"poisoned_accuracy", r.poisoned_accuracy}};
}

json seeds_json(const RunConfig& cfg) {
    const auto m = cfg.run.seed;
    return {{"master", m},
            {"data.train", derive_seed(m, "data.train")},
            {"data.test", derive_seed(m, "data.test")},
            {"data.poison", derive_seed(m, "data.poison")},
            {"data.clean", derive_seed(m, "data.clean")},
            {"data.triggered", derive_seed(m, "data.triggered")},
            {"model.init", derive_seed(m, "model.init")},
            {"train.order", derive_seed(m, "train.order")}};
}

void write_history(const fs::path& dir, const std::vector<EpochReport>& rows) {
    write_text_atomic(dir / "history.csv", history_to_csv(rows));
    write_text_atomic(dir / "history.jsonl", history_to_jsonl(rows));
}

void check_arch(const RunConfig& cfg, const ParamVector& theta) {
    if (!(theta.arch() == cfg.arch())) {
        throw ConfigError("model.embed_dim", "poisoned checkpoint architecture does not match the config");
    }
}

struct SweepInputs {
    DataBundle data;
    ParamVector theta0;
    Dataset clean_train;
    TaskPreset preset;
};

EvalSets eval_sets(const SweepInputs& in) {
    return EvalSets{&in.data.test, &in.data.triggered_test, in.preset.trigger.target_label};
}

CellOutcome run_cell(const RunConfig& cfg, const SweepInputs& in, const CellSpec& spec) {
    const auto start = std::chrono::steady_clock::now();
    const fs::path dir = layout::runs_dir(cfg.run.out) / spec.id();
    std::error_code ec;
    fs::remove_all(dir, ec);
    create_dirs(dir);

    const std::uint64_t seed = spec.seed(cfg.run.seed);
    const EvalSets eval = eval_sets(in);

    json manifest;
    manifest["schema_version"] = kManifestSchemaVersion;
    manifest["kind"] = "run";
    manifest["id"] = spec.id();
    manifest["method"] = to_string(spec.method);
    manifest["batch_size"] = spec.batch_size;
    manifest["lambda"] = spec.lambda ? json(*spec.lambda) : json(nullptr);
    manifest["repeat"] = spec.repeat;
    manifest["config"] = config_to_json(cfg);
    json seeds = seeds_json(cfg);
    seeds["cell"] = seed;

    CellOutcome outcome{spec, true, {}, dir / "manifest.json"};
    json artifacts = {{"history_csv", "history.csv"},
                      {"history_jsonl", "history.jsonl"},
                      {"final_checkpoint", "final.json"}};

    if (spec.method == Method::Ga || spec.method == Method::Lya) {
        UnlearnConfig ucfg;
        ucfg.lambda = spec.lambda.value_or(0.0);
        ucfg.eta = cfg.unlearn.eta;
        ucfg.batch_size = spec.batch_size;
        ucfg.max_epochs = cfg.unlearn.max_epochs;
        ucfg.p_thresh = cfg.unlearn.p_thresh;
        ucfg.seed = seed;
        ucfg.exclude_poison_ewc = in.preset.exclude_poison_ewc;
        ucfg.fisher.threads = cfg.unlearn.fisher_threads;
        const UnlearnResult r = spec.method == Method::Lya
                                    ? unlearn_lya(in.theta0, in.data.d_poison, in.data.d_clean, ucfg, eval)
                                    : unlearn_ga(in.theta0, in.data.d_poison, ucfg, eval);

        std::vector<EpochReport> rows{r.initial};
        rows.insert(rows.end(), r.history.begin(), r.history.end());
        write_history(dir, rows);
        save_checkpoint(dir / "final.json", r.final_theta);
        save_checkpoint(dir / "threshold.json", r.threshold_theta);
        artifacts["threshold_checkpoint"] = "threshold.json";

        const auto at = std::find_if(rows.begin(), rows.end(),
                                     [&](const EpochReport& e) { return e.epoch == r.threshold_epoch; });
        manifest["exclude_poison_ewc"] = ucfg.exclude_poison_ewc;
        manifest["stop_reason"] = to_string(r.stop_reason);
        manifest["threshold_epoch"] = r.threshold_epoch;
        manifest["epochs_run"] = r.epochs_run();
        manifest["initial"] = report_json(r.initial);
        manifest["last"] = report_json(rows.back());
        manifest["threshold"] = at != rows.end() ? report_json(*at) : json(nullptr);
        if (r.error) {
            outcome.ok = false;
            outcome.error = *r.error;
        }
    } else {
        TrainConfig tcfg = cfg.train;
        tcfg.epochs = cfg.unlearn.max_epochs;
        tcfg.batch_size = spec.batch_size;
        tcfg.seed = seed;
        std::optional<TrainResult> r;
        try {
            if (spec.method == Method::Finetune) {
                r = finetune_clean(in.theta0, in.clean_train, tcfg, eval, &in.data.d_poison);
            } else if (spec.method == Method::FinetuneRelabel) {
                r = train_supervised(in.theta0, relabel_poison(in.data.poisoned_train), tcfg, eval, &in.data.d_poison);
            } else {
                const std::uint64_t init_seed = derive_seed(seed, "init");
                seeds["init"] = init_seed;
                r = retrain_clean(in.theta0.arch(), init_seed, in.clean_train, tcfg, eval, &in.data.d_poison,
                                  cfg.model.init_scale);
            }
        } catch (const NumericalError& e) {
            outcome.ok = false;
            outcome.error = e.what();
        }
        manifest["stop_reason"] = outcome.ok ? "max_epochs" : "numerical_failure";
        manifest["threshold_epoch"] = nullptr;
        manifest["threshold"] = nullptr;
        if (r) {
            write_history(dir, r->history);
            save_checkpoint(dir / "final.json", r->theta);
            manifest["epochs_run"] = r->history.size() - 1;
            manifest["initial"] = report_json(r->history.front());
            manifest["last"] = report_json(r->history.back());
        } else {
            artifacts = json::object();
            manifest["epochs_run"] = 0;
            manifest["initial"] = nullptr;
            manifest["last"] = nullptr;
        }
    }

    manifest["status"] = outcome.ok ? "ok" : "failed";
    manifest["error"] = outcome.ok ? json(nullptr) : json(outcome.error);
    manifest["seeds"] = seeds;
    manifest["artifacts"] = artifacts;
    manifest["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // Written last: a manifest on disk implies its artifacts are complete.
    write_json(outcome.manifest, manifest);
    return outcome;
}

void merge_index(const fs::path& out, const std::vector<CellOutcome>& cells) {
    const fs::path path = layout::index_file(out);
    std::map<std::string, json> entries;
    if (fs::exists(path)) {
        const json existing = read_json(path);
        for (const auto& e : existing.at("runs")) entries[e.at("id").get<std::string>()] = e;
    }
    for (const auto& c : cells) {
        const std::string id = c.spec.id();
        entries[id] = {{"id", id}, {"manifest", id + "/manifest.json"}, {"status", c.ok ? "ok" : "failed"}};
    }
    json runs = json::array();
    for (auto& [id, e] : entries) runs.push_back(std::move(e));
    write_json(path, {{"schema_version", kManifestSchemaVersion}, {"runs", std::move(runs)}});
}

int method_rank(const std::string& m) {
    if (m == "retrain") return 0;
    if (m == "finetune") return 1;
    if (m == "finetune-relabel") return 2;
    if (m == "ga") return 3;
    return 4;
}

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string lambda_label(const std::optional<double>& l) {
    if (!l) return "-";
    if (*l == 0.0) return "0";
    const double e = std::log10(*l);
    if (e == std::round(e)) return "1e" + std::to_string(static_cast<int>(e));
    return format_double(*l);
}

}  // namespace

DataBundle build_data(const RunConfig& cfg) {
    cfg.validate();
    const TaskPreset p = cfg.resolved_preset();
    const auto m = cfg.run.seed;
    SyntheticSpec sp;
    sp.vocab_size = cfg.task.vocab_size;
    sp.topic_shift = cfg.task.topic_shift;
    sp.seq_len = cfg.task.seq_len;
    sp.reserved_tokens = cfg.task.reserved_tokens;

    DataBundle b;
    sp.n_samples = cfg.task.n_train;
    sp.seed = derive_seed(m, "data.train");
    b.train = gen_synthetic(sp, DatasetRole::Train);
    sp.n_samples = cfg.task.n_test;
    sp.seed = derive_seed(m, "data.test");
    b.test = gen_synthetic(sp, DatasetRole::Test);

    Subset poisoned = poison_dataset(b.train, p.trigger, PoisonConfig{p.poison_rate, derive_seed(m, "data.poison")});
    b.poisoned_train = std::move(poisoned.dataset);
    b.poison_indices = std::move(poisoned.indices);
    b.d_poison = extract_poisoned(b.poisoned_train).dataset;
    b.d_clean = split_clean_subset(b.poisoned_train, b.d_poison.size(), derive_seed(m, "data.clean")).dataset;
    b.triggered_test = make_asr_eval_set(b.test, p.trigger, derive_seed(m, "data.triggered"));
    return b;
}

DataBundle load_data(const fs::path& out) {
    const fs::path dir = layout::data_dir(out);
    DataBundle b;
    for (const auto& f : kDataFiles) {
        require_file(dir / f.name);
        b.*(f.member) = read_jsonl(dir / f.name, f.role);
    }
    require_file(dir / "manifest.json");
    b.poison_indices = read_json(dir / "manifest.json").at("poison_indices").get<std::vector<std::size_t>>();
    return b;
}

void cmd_generate(const RunConfig& cfg, std::ostream& log) {
    const DataBundle b = build_data(cfg);
    const fs::path final_dir = layout::data_dir(cfg.run.out);
    const fs::path staging = cfg.run.out / ".data.staging";

    std::error_code ec;
    fs::create_directories(cfg.run.out, ec);
    if (ec) throw IoError("cannot create " + cfg.run.out.generic_string() + ": " + ec.message());
    fs::remove_all(staging, ec);
    try {
        create_dirs(staging);
        for (const auto& f : kDataFiles) write_jsonl(staging / f.name, b.*(f.member));
        json manifest = {{"schema_version", kManifestSchemaVersion},
                         {"kind", "data"},
                         {"config", config_to_json(cfg)},
                         {"seeds", seeds_json(cfg)},
                         {"poison_indices", b.poison_indices}};
        json counts;
        for (const auto& f : kDataFiles) counts[f.name] = (b.*(f.member)).size();
        manifest["counts"] = counts;
        write_json(staging / "manifest.json", manifest);

        fs::remove_all(final_dir);
        fs::rename(staging, final_dir);
    } catch (const fs::filesystem_error& e) {
        fs::remove_all(staging, ec);
        throw IoError(e.what());
    } catch (...) {
        fs::remove_all(staging, ec);
        throw;
    }

    log << "train " << b.train.size() << "\n"
        << "test " << b.test.size() << "\n"
        << "poisoned " << b.d_poison.size() << "\n"
        << "clean_subset " << b.d_clean.size() << "\n"
        << "triggered_test " << b.triggered_test.size() << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    const DataBundle b = load_data(cfg.run.out);
    const TaskPreset p = cfg.resolved_preset();
    const auto start = std::chrono::steady_clock::now();

    TrainConfig tcfg = cfg.train;
    tcfg.seed = derive_seed(cfg.run.seed, "train.order");
    const ParamVector init = init_params(cfg.arch(), derive_seed(cfg.run.seed, "model.init"), cfg.model.init_scale);
    const EvalSets eval{&b.test, &b.triggered_test, p.trigger.target_label};
    const TrainResult r = train_supervised(init, b.poisoned_train, tcfg, eval, &b.d_poison);

    FisherOptions fo;
    fo.threads = cfg.unlearn.fisher_threads;
    const FisherDiag fc = estimate_fisher(r.theta, b.d_clean, FisherSource::Clean, fo);
    const FisherDiag fp = estimate_fisher(r.theta, b.d_poison, FisherSource::Poison, fo);

    const fs::path dir = layout::model_dir(cfg.run.out);
    create_dirs(dir);
    save_checkpoint(dir / "poisoned.json", r.theta);
    save_fisher(dir / "fisher_clean.json", fc);
    save_fisher(dir / "fisher_poison.json", fp);
    write_history(dir, r.history);
    const json manifest = {
        {"schema_version", kManifestSchemaVersion},
        {"kind", "train"},
        {"config", config_to_json(cfg)},
        {"seeds", seeds_json(cfg)},
        {"artifacts",
         {{"checkpoint", "poisoned.json"},
          {"fisher_clean", "fisher_clean.json"},
          {"fisher_poison", "fisher_poison.json"},
          {"history_csv", "history.csv"},
          {"history_jsonl", "history.jsonl"}}},
        {"last", report_json(r.history.back())},
        {"wall_clock_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
    };
    write_json(dir / "manifest.json", manifest);

    const auto& last = r.history.back();
    log << "epochs " << last.epoch << "\n"
        << "clean_accuracy " << fixed2(last.clean_accuracy) << "\n"
        << "asr " << fixed2(last.asr) << "\n"
        << "poisoned_accuracy " << fixed2(last.poisoned_accuracy) << "\n";
}

std::string CellSpec::id() const {
    std::string s = to_string(method) + "-b" + std::to_string(batch_size);
    if (lambda) s += "-l" + format_double(*lambda);
    return s + "-r" + std::to_string(repeat);
}

std::uint64_t CellSpec::seed(std::uint64_t master) const {
    return cell_seed(master, method, batch_size, lambda.value_or(0.0), repeat);
}

std::vector<CellSpec> plan_cells(const RunConfig& cfg) {
    std::vector<CellSpec> cells;
    for (Method m : cfg.unlearn.methods) {
        for (std::size_t b : cfg.unlearn.batch_sizes) {
            for (std::size_t r = 0; r < cfg.run.repeats; ++r) {
                if (m == Method::Lya) {
                    for (double l : cfg.unlearn.lambdas) cells.push_back({m, b, l, r});
                } else {
                    cells.push_back({m, b, std::nullopt, r});
                }
            }
        }
    }
    return cells;
}

std::size_t SweepSummary::failed() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return !c.ok; }));
}

SweepSummary run_sweep(const RunConfig& cfg, const std::vector<CellSpec>& cells, std::ostream& log) {
    cfg.validate();
    const fs::path ckpt = layout::poisoned_checkpoint(cfg.run.out);
    require_file(ckpt);
    SweepInputs in{load_data(cfg.run.out), load_checkpoint(ckpt), {}, cfg.resolved_preset()};
    check_arch(cfg, in.theta0);
    in.clean_train = without_poison(in.data.poisoned_train);
    create_dirs(layout::runs_dir(cfg.run.out));

    SweepSummary summary;
    summary.cells.resize(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr first_error;

    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                summary.cells[i] = run_cell(cfg, in, cells[i]);
                std::lock_guard lock(mu);
                log << cells[i].id() << " " << (summary.cells[i].ok ? "ok" : "failed: " + summary.cells[i].error)
                    << "\n";
            } catch (...) {
                std::lock_guard lock(mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    {
        const std::size_t n = std::min(cfg.run.jobs, std::max<std::size_t>(cells.size(), 1));
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
        worker();
    }
    if (first_error) std::rethrow_exception(first_error);

    merge_index(cfg.run.out, summary.cells);
    return summary;
}

SweepSummary cmd_unlearn(const RunConfig& cfg, std::ostream& log) {
    return run_sweep(cfg, plan_cells(cfg), log);
}

json cmd_eval(const RunConfig& cfg, const fs::path& checkpoint) {
    cfg.validate();
    require_file(checkpoint);
    const DataBundle b = load_data(cfg.run.out);
    const ParamVector theta = load_checkpoint(checkpoint);
    check_arch(cfg, theta);
    const TaskPreset p = cfg.resolved_preset();
    return {{"checkpoint", checkpoint.generic_string()},
            {"clean_accuracy", accuracy(theta, b.test)},
            {"asr", asr(theta, b.triggered_test, p.trigger.target_label)},
            {"poisoned_accuracy", poisoned_accuracy(theta, b.d_poison)},
            {"loss_ce_poison", mean_loss_ce(theta, b.d_poison)}};
}

std::vector<ReportRow> collect_report(const fs::path& out) {
    const fs::path index = layout::index_file(out);
    require_file(index);
    std::vector<ReportRow> rows;
    const json doc = read_json(index);
    for (const auto& entry : doc.at("runs")) {
        const fs::path mpath = layout::runs_dir(out) / entry.at("manifest").get<std::string>();
        require_file(mpath);
        const json m = read_json(mpath);
        ReportRow row;
        row.method = m.at("method").get<std::string>();
        if (!m.at("lambda").is_null()) row.lambda = m.at("lambda").get<double>();
        row.batch_size = m.at("batch_size").get<std::size_t>();
        row.repeat = m.at("repeat").get<std::size_t>();
        row.ok = m.at("status") == "ok";
        if (!m.at("last").is_null()) {
            row.last_accuracy = m["last"].at("clean_accuracy").get<double>();
            row.last_asr = m["last"].at("asr").get<double>();
        }
        if (!m.at("threshold").is_null()) {
            row.threshold_epoch = m["threshold"].at("epoch").get<std::size_t>();
            row.threshold_accuracy = m["threshold"].at("clean_accuracy").get<double>();
            row.threshold_asr = m["threshold"].at("asr").get<double>();
        }
        rows.push_back(row);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        const auto key = [](const ReportRow& r) {
            return std::tuple(method_rank(r.method), r.batch_size, r.lambda.value_or(-1.0), r.repeat);
        };
        return key(a) < key(b);
    });
    return rows;
}

std::string format_report_markdown(const std::vector<ReportRow>& rows) {
    const bool repeats = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.repeat > 0; });
    std::ostringstream os;
    os << "| Method | λ | batch |" << (repeats ? " repeat |" : "")
       << " Last acc | Last ASR | Threshold epoch | Threshold acc | Threshold ASR |\n";
    os << "|---|---|---|" << (repeats ? "---|" : "") << "---|---|---|---|---|\n";
    for (const auto& r : rows) {
        os << "| " << r.method << (r.ok ? "" : " (failed)") << " | " << lambda_label(r.lambda) << " | "
           << r.batch_size << " |";
        if (repeats) os << " " << r.repeat << " |";
        os << " " << fixed2(r.last_accuracy) << " | " << fixed2(r.last_asr) << " |";
        if (r.threshold_epoch) {
            os << " " << *r.threshold_epoch << " | " << fixed2(r.threshold_accuracy) << " | "
               << fixed2(r.threshold_asr) << " |\n";
        } else {
            os << " - | - | - |\n";
        }
    }
    return os.str();
}

std::string format_report_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    os << "method,lambda,batch,repeat,status,last_accuracy,last_asr,threshold_epoch,threshold_accuracy,"
          "threshold_asr\n";
    for (const auto& r : rows) {
        os << r.method << "," << (r.lambda ? format_double(*r.lambda) : "") << "," << r.batch_size << ","
           << r.repeat << "," << (r.ok ? "ok" : "failed") << "," << format_double(r.last_accuracy) << ","
           << format_double(r.last_asr) << ",";
        if (r.threshold_epoch) {
            os << *r.threshold_epoch << "," << format_double(r.threshold_accuracy) << ","
               << format_double(r.threshold_asr);
        } else {
            os << ",,";
        }
        os << "\n";
    }
    return os.str();
}

std::string cmd_report(const RunConfig& cfg) {
    const auto rows = collect_report(cfg.run.out);
    const std::string md = format_report_markdown(rows);
    write_text_atomic(cfg.run.out / "report.md", md);
    write_text_atomic(cfg.run.out / "report.csv", format_report_csv(rows));
    return md;
}

}  // namespace unlearn
