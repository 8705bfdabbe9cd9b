#include "stableconf/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace stableconf {

using nlohmann::json;

void RunConfig::validate() const {
    if (dataset_path.empty()) throw Error(ErrorKind::Startup, "no dataset path");
    if (output_path.empty()) throw Error(ErrorKind::Startup, "no output path");
    if (concurrency < 1) throw Error(ErrorKind::Startup, "concurrency must be >= 1");
    if (limit && *limit < 1) throw Error(ErrorKind::Startup, "limit must be >= 1");
    method_config.validate();
}

// ---------------------------------------------------------------------------
// Dataset

DatasetFile load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Startup, "cannot open dataset " + path);

    DatasetFile dataset;
    std::set<std::string> seen_ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::Startup,
                        "dataset line " + std::to_string(lineno) + ": " + e.what());
        }
        Question q;
        try {
            q.id = j.at("id").get<std::string>();
            q.stem = j.at("question").get<std::string>();
            for (const auto& jc : j.at("choices")) {
                std::string label = jc.at("label").get<std::string>();
                if (label.size() != 1)
                    throw Error(ErrorKind::InvalidInput,
                                "choice label must be a single character");
                q.options.push_back({label[0], jc.at("text").get<std::string>()});
            }
            std::string answer = j.at("answer").get<std::string>();
            if (answer.size() != 1)
                throw Error(ErrorKind::InvalidInput,
                            "answer must be a single character");
            q.gold = answer[0];
            q.validate();
        } catch (const json::exception& e) {
            throw Error(ErrorKind::Startup,
                        "dataset line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorKind::Startup,
                        "dataset line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen_ids.insert(q.id).second)
            throw Error(ErrorKind::Startup, "dataset line " + std::to_string(lineno) +
                                                ": duplicate id '" + q.id + "'");
        dataset.records.push_back(std::move(q));
    }
    return dataset;
}

// ---------------------------------------------------------------------------
// Record serialization

std::string record_to_json_line(const PredictionRecord& record) {
    json j = {
        {"question_id", record.question_id},
        {"method", record.method},
        {"predicted", record.predicted ? std::string(1, record.predicted) : ""},
        {"confidence", record.confidence},
        {"correct", record.correct},
        {"n_samples", record.n_samples},
        {"metadata", json(record.metadata)},
    };
    return j.dump();
}

PredictionRecord record_from_json_line(const std::string& line) {
    json j = json::parse(line);
    PredictionRecord record;
    record.question_id = j.at("question_id").get<std::string>();
    record.method = j.at("method").get<std::string>();
    std::string predicted = j.at("predicted").get<std::string>();
    record.predicted = predicted.empty() ? '\0' : predicted[0];
    record.confidence = j.at("confidence").get<double>();
    record.correct = j.at("correct").get<bool>();
    record.n_samples = j.at("n_samples").get<int>();
    if (j.contains("metadata"))
        record.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    return record;
}

bool record_failed(const PredictionRecord& record) {
    auto it = record.metadata.find("failed");
    return it != record.metadata.end() && it->second == "true";
}

std::vector<PredictionRecord> load_records(const std::string& path,
                                           bool include_failed) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Startup, "cannot open records " + path);
    std::vector<PredictionRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            PredictionRecord record = record_from_json_line(line);
            if (include_failed || !record_failed(record))
                records.push_back(std::move(record));
        } catch (const json::exception& e) {
            throw Error(ErrorKind::Startup,
                        "records line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// Scoring runs

namespace {

struct BackendBundle {
    std::unique_ptr<MockBackend> mock;
    std::unique_ptr<HttpBackend> http;
    std::unique_ptr<DiskCache> cache;
    std::unique_ptr<CachedBackend> cached;
    Backend* active = nullptr;
};

BackendBundle make_backend(const RunConfig& config) {
    BackendBundle bundle;
    if (config.backend == BackendKind::Mock) {
        if (config.fixture_path.empty())
            throw Error(ErrorKind::Startup, "mock backend needs a fixture file");
        bundle.mock = std::make_unique<MockBackend>(
            MockBackend::from_jsonl(config.fixture_path));
        bundle.active = bundle.mock.get();
    } else {
        auto http_config = HttpBackend::config_from_env();
        http_config.max_inflight = config.concurrency;
        bundle.http = std::make_unique<HttpBackend>(std::move(http_config));
        bundle.active = bundle.http.get();
    }
    return bundle;
}

void wrap_cache(BackendBundle& bundle, Backend& inner, const RunConfig& config) {
    bundle.active = &inner;
    if (!config.cache_dir.empty()) {
        bundle.cache = std::make_unique<DiskCache>(config.cache_dir);
        bundle.cached = std::make_unique<CachedBackend>(inner, *bundle.cache);
        bundle.active = bundle.cached.get();
    }
}

PromptLibrary make_prompts(const RunConfig& config) {
    if (!config.prompts_dir.empty())
        return PromptLibrary::from_directory(config.prompts_dir);
    return PromptLibrary();
}

std::vector<Question> questions_to_run(const RunConfig& config) {
    DatasetFile dataset = load_dataset(config.dataset_path);
    size_t limit = static_cast<size_t>(config.limit.value_or(250));
    if (dataset.records.size() > limit) dataset.records.resize(limit);
    return std::move(dataset.records);
}

// Runs fn over [0, count) on `workers` threads; consume(i, item) sees items
// strictly in index order.
template <typename Item, typename Fn, typename Consume>
void parallel_ordered(size_t count, int workers, Fn fn, Consume consume) {
    std::vector<std::optional<Item>> slots(count);
    std::mutex mutex;
    std::condition_variable ready;
    std::atomic<size_t> next{0};
    std::atomic<bool> stop{false};

    auto work = [&] {
        for (;;) {
            if (stop.load(std::memory_order_relaxed)) break;
            size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= count) break;
            Item item = fn(i);
            {
                std::lock_guard<std::mutex> lock(mutex);
                slots[i] = std::move(item);
            }
            ready.notify_all();
        }
    };

    int thread_count = std::max(1, std::min<int>(workers, static_cast<int>(count)));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t) pool.emplace_back(work);

    try {
        for (size_t i = 0; i < count; ++i) {
            std::unique_lock<std::mutex> lock(mutex);
            ready.wait(lock, [&] { return slots[i].has_value(); });
            Item item = std::move(*slots[i]);
            slots[i].reset();
            lock.unlock();
            consume(i, item);  // may throw to abort the run
        }
    } catch (...) {
        stop.store(true, std::memory_order_relaxed);
        for (auto& t : pool) t.join();
        throw;
    }
    for (auto& t : pool) t.join();
}

}  // namespace

std::vector<PredictionRecord> run(const RunConfig& config, Backend& backend) {
    config.validate();

    BackendBundle bundle;
    wrap_cache(bundle, backend, config);
    PromptLibrary prompts = make_prompts(config);
    std::vector<Question> questions = questions_to_run(config);

    // Resume: skip questions that already have a record in the output file.
    std::set<std::string> done;
    std::vector<PredictionRecord> existing;
    if (std::filesystem::exists(config.output_path)) {
        existing = load_records(config.output_path, /*include_failed=*/true);
        for (const auto& record : existing) done.insert(record.question_id);
    }

    std::vector<Question> pending;
    for (auto& q : questions)
        if (!done.count(q.id)) pending.push_back(std::move(q));

    std::ofstream out(config.output_path, std::ios::app);
    if (!out)
        throw Error(ErrorKind::Io, "cannot open output " + config.output_path);

    Elicitor elicitor(*bundle.active, prompts, config.model, config.method_config);
    const std::string method = method_name(config.method_config.method);

    auto score_one = [&](size_t i) -> PredictionRecord {
        const Question& q = pending[i];
        PredictionRecord record;
        record.question_id = q.id;
        record.method = method;
        try {
            ConfidenceResult result = elicitor.run(q);
            record.predicted = result.predicted;
            record.confidence = result.confidence;
            record.correct = result.predicted == q.gold;
            record.n_samples = result.samples_used;
            record.metadata = result.metadata;
            if (result.parse_failures > 0)
                record.metadata["parse_failures"] = std::to_string(result.parse_failures);
        } catch (const Error& err) {
            record.predicted = '\0';
            record.confidence = 0.0;
            record.correct = false;
            record.n_samples = 0;
            record.metadata["failed"] = "true";
            record.metadata["error"] = err.what();
        }
        return record;
    };

    size_t planned = questions.size();  // includes already-done questions
    size_t failed = 0;
    for (const auto& record : existing)
        if (record_failed(record)) ++failed;

    std::vector<PredictionRecord> all = existing;
    parallel_ordered<PredictionRecord>(
        pending.size(), config.concurrency, score_one,
        [&](size_t, const PredictionRecord& record) {
            out << record_to_json_line(record) << '\n';
            out.flush();
            all.push_back(record);
            if (record_failed(record)) {
                ++failed;
                if (failed * 2 > planned)
                    throw Error(ErrorKind::RunAborted,
                                std::to_string(failed) + " of " +
                                    std::to_string(planned) +
                                    " questions failed; last error: " +
                                    record.metadata.at("error"));
            }
        });

    return all;
}

std::vector<PredictionRecord> run(const RunConfig& config) {
    config.validate();
    BackendBundle bundle = make_backend(config);
    Backend& inner = *bundle.active;
    return run(config, inner);
}

// ---------------------------------------------------------------------------
// Evaluation

EvalSummary evaluate(const std::string& records_path, int num_bins, double sigma,
                     int repeats, std::uint64_t seed) {
    auto all = load_records(records_path, /*include_failed=*/true);
    std::vector<PredictionRecord> usable;
    int failed = 0;
    for (auto& record : all) {
        if (record_failed(record))
            ++failed;
        else
            usable.push_back(std::move(record));
    }
    if (usable.empty())
        throw Error(ErrorKind::InvalidInput,
                    "no usable records in " + records_path);

    EvalSummary summary;
    summary.n = static_cast<int>(usable.size());
    summary.failed_excluded = failed;
    summary.accuracy = accuracy(usable);
    summary.ece = ece(usable, num_bins);
    summary.bins = ece_bins(usable, num_bins);
    summary.aurc = noisy_average(usable, RankMetric::Aurc, sigma, repeats, seed);
    try {
        summary.auroc = noisy_average(usable, RankMetric::Auroc, sigma, repeats, seed);
    } catch (const Error& err) {
        if (err.kind() != ErrorKind::UndefinedAuroc) throw;
        summary.auroc.reset();
    }
    summary.noise_sigma = sigma;
    summary.noise_repeats = repeats;
    summary.seed = seed;
    return summary;
}

std::string summary_to_json(const EvalSummary& summary) {
    json bins = json::array();
    for (const auto& b : summary.bins)
        bins.push_back(json{{"bin", b.index},
                            {"count", b.count},
                            {"accuracy", b.accuracy},
                            {"confidence", b.confidence}});
    json j = {
        {"n", summary.n},
        {"accuracy", summary.accuracy},
        {"ece", summary.ece},
        {"aurc", summary.aurc},
        {"auroc", summary.auroc ? json(*summary.auroc) : json(nullptr)},
        {"bins", std::move(bins)},
        {"noise_sigma", summary.noise_sigma},
        {"noise_repeats", summary.noise_repeats},
        {"seed", summary.seed},
        {"failed_excluded", summary.failed_excluded},
    };
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Curves

static bool has_confidence_ties(const std::vector<PredictionRecord>& records) {
    std::vector<double> confs;
    confs.reserve(records.size());
    for (const auto& r : records) confs.push_back(r.confidence);
    std::sort(confs.begin(), confs.end());
    return std::adjacent_find(confs.begin(), confs.end()) != confs.end();
}

void emit_curves(const std::string& records_path, const std::string& out_prefix,
                 std::uint64_t seed) {
    auto records = load_records(records_path, /*include_failed=*/false);
    if (records.empty())
        throw Error(ErrorKind::InvalidInput, "no usable records in " + records_path);

    if (has_confidence_ties(records)) {
        GaussianStream gauss(derive_seed(seed, 0));
        for (auto& r : records) r.confidence += 1e-6 * gauss.next();
    }

    auto rc = risk_coverage_points(records);
    auto roc = roc_points(records);  // both computed before any file is written

    auto write_csv = [](const std::string& path, const char* header,
                        const std::vector<CurvePoint>& points) {
        std::ofstream out(path);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
        out << header << '\n';
        char buffer[64];
        for (const auto& p : points) {
            std::snprintf(buffer, sizeof(buffer), "%.4f,%.4f", p.x, p.y);
            out << buffer << '\n';
        }
    };
    write_csv(out_prefix + ".rc.csv", "coverage,accuracy", rc);
    write_csv(out_prefix + ".roc.csv", "fpr,tpr", roc);
}

// ---------------------------------------------------------------------------
// Sample-size sweep

std::vector<SweepRow> sweep_samples(const RunConfig& config,
                                    const std::vector<int>& sizes) {
    if (config.cache_dir.empty())
        throw Error(ErrorKind::Startup, "sweep needs the cache dir of a previous run");
    if (sizes.empty()) throw Error(ErrorKind::Startup, "no sweep sizes given");

    DiskCache cache(config.cache_dir);
    CacheOnlyBackend replay(cache);

    std::vector<SweepRow> rows;
    for (int size : sizes) {
        if (size < 1) throw Error(ErrorKind::Startup, "sweep sizes must be >= 1");
        RunConfig sub = config;
        sub.method_config.n_samples = size;
        sub.cache_dir.clear();  // replay backend already reads the cache
        sub.output_path = config.output_path + ".n" + std::to_string(size) + ".jsonl";
        std::filesystem::remove(sub.output_path);

        run(sub, replay);
        SweepRow row;
        row.n_samples = size;
        row.summary = evaluate(sub.output_path, 10, 1e-6, 10, config.seed);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << "n_samples,n,accuracy,ece,aurc,auroc\n";
    char buffer[160];
    for (const auto& row : rows) {
        std::snprintf(buffer, sizeof(buffer), "%d,%d,%.6f,%.6f,%.6f,", row.n_samples,
                      row.summary.n, row.summary.accuracy, row.summary.ece,
                      row.summary.aurc);
        out << buffer;
        if (row.summary.auroc) {
            std::snprintf(buffer, sizeof(buffer), "%.6f", *row.summary.auroc);
            out << buffer;
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Explanation study

StudySummary study(const RunConfig& config) {
    config.validate();
    BackendBundle bundle = make_backend(config);
    Backend& inner = *bundle.active;
    BackendBundle cached;
    wrap_cache(cached, inner, config);
    PromptLibrary prompts = make_prompts(config);
    std::vector<Question> questions = questions_to_run(config);

    StudyResult result = explanation_study(questions, *cached.active, prompts,
                                           config.model, config.method_config,
                                           config.seed);

    std::ofstream out(config.output_path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + config.output_path);
    out << "question_id,conditioned_correct,loglik,entail_prob\n";
    char buffer[128];
    for (const auto& row : result.rows) {
        std::snprintf(buffer, sizeof(buffer), ",%s,%.6f,%.6f",
                      row.conditioned_correct ? "true" : "false", row.loglik,
                      row.entail_prob);
        out << row.question_id << buffer << '\n';
    }

    StudySummary summary;
    summary.rows = static_cast<int>(result.rows.size());
    summary.skipped = result.skipped;
    double n_correct = 0.0, n_incorrect = 0.0;
    for (const auto& row : result.rows) {
        if (row.conditioned_correct) {
            summary.mean_loglik_correct += row.loglik;
            summary.mean_entail_correct += row.entail_prob;
            n_correct += 1.0;
        } else {
            summary.mean_loglik_incorrect += row.loglik;
            summary.mean_entail_incorrect += row.entail_prob;
            n_incorrect += 1.0;
        }
    }
    if (n_correct > 0) {
        summary.mean_loglik_correct /= n_correct;
        summary.mean_entail_correct /= n_correct;
    }
    if (n_incorrect > 0) {
        summary.mean_loglik_incorrect /= n_incorrect;
        summary.mean_entail_incorrect /= n_incorrect;
    }

    json sidecar = {
        {"rows", summary.rows},
        {"skipped", summary.skipped},
        {"mean_loglik_correct", summary.mean_loglik_correct},
        {"mean_loglik_incorrect", summary.mean_loglik_incorrect},
        {"mean_entail_correct", summary.mean_entail_correct},
        {"mean_entail_incorrect", summary.mean_entail_incorrect},
    };
    std::ofstream side(config.output_path + ".summary.json");
    if (!side)
        throw Error(ErrorKind::Io, "cannot write " + config.output_path + ".summary.json");
    side << sidecar.dump(2) << '\n';

    return summary;
}

}  // namespace stableconf
