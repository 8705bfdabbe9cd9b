#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stableconf/backend.hpp"
#include "stableconf/core.hpp"
#include "stableconf/methods.hpp"
#include "stableconf/metrics.hpp"
#include "stableconf/prompts.hpp"

namespace stableconf {

enum class BackendKind { OpenAiCompatible, Mock };

struct RunConfig {
    std::string dataset_path;
    BackendKind backend = BackendKind::Mock;
    std::string model = "mock-model";
    MethodConfig method_config;
    int concurrency = 4;
    std::uint64_t seed = 0;
    std::string cache_dir;     // empty disables the response cache
    std::string output_path;
    std::optional<int> limit;  // default 250 questions
    std::string fixture_path;  // mock backend rules (JSON-lines)
    std::string prompts_dir;   // optional template override directory

    void validate() const;
};

struct DatasetFile {
    std::vector<Question> records;
};

// One question per line: {"id", "question", "choices": [{"label", "text"}],
// "answer"}. Order is preserved; malformed lines and duplicate ids fail with
// the line number.
DatasetFile load_dataset(const std::string& path);

// Scores every question (up to the limit) with the configured method.
// Records append to output_path as JSON-lines; questions already present
// there are skipped, so interrupted runs resume cleanly. Per-question
// failures become flagged records; more than 50% failures aborts the run.
std::vector<PredictionRecord> run(const RunConfig& config);

// Same, against a caller-supplied backend (the cache wrapper still applies
// when cache_dir is set).
std::vector<PredictionRecord> run(const RunConfig& config, Backend& backend);

std::string record_to_json_line(const PredictionRecord& record);
PredictionRecord record_from_json_line(const std::string& line);
bool record_failed(const PredictionRecord& record);

// Records from a JSON-lines file; optionally keeps failure-flagged rows.
std::vector<PredictionRecord> load_records(const std::string& path,
                                           bool include_failed = false);

// Accuracy, ECE and noise-averaged AURC/AUROC over the usable records.
EvalSummary evaluate(const std::string& records_path, int num_bins, double sigma,
                     int repeats, std::uint64_t seed);

std::string summary_to_json(const EvalSummary& summary);

// Writes {out_prefix}.rc.csv (coverage,accuracy) and {out_prefix}.roc.csv
// (fpr,tpr). One seeded noise draw breaks exact confidence ties.
void emit_curves(const std::string& records_path, const std::string& out_prefix,
                 std::uint64_t seed);

struct SweepRow {
    int n_samples = 0;
    EvalSummary summary;
};

// Replays the cached completions of an earlier run while truncating to the
// first N explanation samples, for each requested N. Never touches the
// backend: a cache miss (size exceeds what was cached) is an error.
std::vector<SweepRow> sweep_samples(const RunConfig& config,
                                    const std::vector<int>& sizes);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

struct StudySummary {
    int rows = 0;
    int skipped = 0;
    double mean_loglik_correct = 0.0;
    double mean_loglik_incorrect = 0.0;
    double mean_entail_correct = 0.0;
    double mean_entail_incorrect = 0.0;
};

// Correct- vs incorrect-conditioned explanation statistics; rows go to
// output_path as CSV, per-condition means to {output_path}.summary.json.
StudySummary study(const RunConfig& config);

}  // namespace stableconf
