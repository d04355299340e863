#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unlearn/config.hpp"
#include "unlearn/dataset.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

/// A command needs an artifact an earlier command should have produced.
class MissingArtifact : public InvalidInput {
public:
    explicit MissingArtifact(const std::filesystem::path& path)
        : InvalidInput("missing artifact " + path.generic_string()), path_(path) {}

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

// On-disk layout below the output directory:
//   data/   train, test, poisoned_train, d_poison, d_clean, triggered_test (.jsonl), manifest.json
//   model/  poisoned.json, fisher_clean.json, fisher_poison.json, history.{csv,jsonl}, manifest.json
//   runs/   index.json and one directory per sweep cell
//   report.md, report.csv
namespace layout {
std::filesystem::path data_dir(const std::filesystem::path& out);
std::filesystem::path model_dir(const std::filesystem::path& out);
std::filesystem::path runs_dir(const std::filesystem::path& out);
std::filesystem::path poisoned_checkpoint(const std::filesystem::path& out);
std::filesystem::path index_file(const std::filesystem::path& out);
}  // namespace layout

struct DataBundle {
    Dataset train;
    Dataset test;
    Dataset poisoned_train;
    Dataset d_poison;
    Dataset d_clean;
    Dataset triggered_test;
    std::vector<std::size_t> poison_indices;

    friend bool operator==(const DataBundle&, const DataBundle&) = default;
};

/// Builds every dataset from the config and master seed, in memory.
DataBundle build_data(const RunConfig& cfg);
/// Reads data/ back; throws MissingArtifact when a file is absent.
DataBundle load_data(const std::filesystem::path& out);

/// Writes data/ through a staging directory that is renamed into place, so a
/// failed run leaves no partial files behind.
void cmd_generate(const RunConfig& cfg, std::ostream& log);

/// Trains the poisoned model on data/poisoned_train and writes model/.
void cmd_train(const RunConfig& cfg, std::ostream& log);

struct CellSpec {
    Method method = Method::Lya;
    std::size_t batch_size = 32;
    /// Only LYA cells carry a lambda.
    std::optional<double> lambda;
    std::size_t repeat = 0;

    /// Directory name, e.g. "lya-b32-l1000-r0".
    [[nodiscard]] std::string id() const;
    [[nodiscard]] std::uint64_t seed(std::uint64_t master) const;
};

/// methods x batch sizes x (lambdas, LYA only) x repeats, in config order.
std::vector<CellSpec> plan_cells(const RunConfig& cfg);

struct CellOutcome {
    CellSpec spec;
    bool ok = false;
    std::string error;
    std::filesystem::path manifest;
};

struct SweepSummary {
    std::vector<CellOutcome> cells;

    [[nodiscard]] std::size_t failed() const;
    [[nodiscard]] bool all_failed() const { return !cells.empty() && failed() == cells.size(); }
};

/// Runs `cells` (in the given order, up to cfg.run.jobs at a time) from the
/// poisoned checkpoint and merges their manifests into runs/index.json.
/// A numerical failure marks its cell failed; other cells still run.
SweepSummary run_sweep(const RunConfig& cfg, const std::vector<CellSpec>& cells, std::ostream& log);

/// run_sweep over plan_cells(cfg).
SweepSummary cmd_unlearn(const RunConfig& cfg, std::ostream& log);

/// Metrics of any checkpoint on the generated test, triggered and D_poison sets.
nlohmann::json cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint);

struct ReportRow {
    std::string method;
    std::optional<double> lambda;
    std::size_t batch_size = 0;
    std::size_t repeat = 0;
    bool ok = false;
    double last_accuracy = 0.0;
    double last_asr = 0.0;
    std::optional<std::size_t> threshold_epoch;
    double threshold_accuracy = 0.0;
    double threshold_asr = 0.0;
};

/// Rows for every manifest listed in runs/index.json, in index order.
std::vector<ReportRow> collect_report(const std::filesystem::path& out);
std::string format_report_markdown(const std::vector<ReportRow>& rows);
std::string format_report_csv(const std::vector<ReportRow>& rows);

/// Writes report.md and report.csv and returns the markdown table.
std::string cmd_report(const RunConfig& cfg);

}  // namespace unlearn
