#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stableconf/runner.hpp"
#include "test_support.hpp"

using namespace stableconf;
using test_support::ScratchDir;
using test_support::repo_path;
using test_support::slurp;

namespace {

RunConfig sample_config(const ScratchDir& scratch, const std::string& out_name,
                        Method method = Method::TokenProb) {
    RunConfig config;
    config.dataset_path = repo_path("data/sample_questions.jsonl");
    config.fixture_path = repo_path("data/sample_fixture.jsonl");
    config.backend = BackendKind::Mock;
    config.model = "mock-model";
    config.method_config.method = method;
    config.output_path = scratch.file(out_name);
    config.concurrency = 4;
    return config;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    for (const auto& line : lines) out << line << '\n';
}

}  // namespace

TEST_CASE("load_dataset") {
    ScratchDir scratch("dataset");
    SUBCASE("valid file preserves order") {
        auto path = scratch.file("ok.jsonl");
        write_lines(path,
                    {R"({"id": "a", "question": "one?", "choices": [{"label": "A", "text": "x"}, {"label": "B", "text": "y"}], "answer": "A"})",
                     R"({"id": "b", "question": "two?", "choices": [{"label": "A", "text": "x"}, {"label": "B", "text": "y"}], "answer": "B"})"});
        auto dataset = load_dataset(path);
        REQUIRE(dataset.records.size() == 2);
        CHECK(dataset.records[0].id == "a");
        CHECK(dataset.records[1].id == "b");
        CHECK(dataset.records[1].gold == 'B');
    }
    SUBCASE("missing answer names the line") {
        auto path = scratch.file("missing.jsonl");
        write_lines(path,
                    {R"({"id": "a", "question": "one?", "choices": [{"label": "A", "text": "x"}, {"label": "B", "text": "y"}]})"});
        try {
            load_dataset(path);
            CHECK(false);
        } catch (const Error& err) {
            CHECK(std::string(err.what()).find("line 1") != std::string::npos);
        }
    }
    SUBCASE("duplicate ids are rejected") {
        auto path = scratch.file("dup.jsonl");
        write_lines(path,
                    {R"({"id": "q1", "question": "one?", "choices": [{"label": "A", "text": "x"}, {"label": "B", "text": "y"}], "answer": "A"})",
                     R"({"id": "q1", "question": "two?", "choices": [{"label": "A", "text": "x"}, {"label": "B", "text": "y"}], "answer": "B"})"});
        CHECK_THROWS_AS(load_dataset(path), Error);
    }
    SUBCASE("bundled sample dataset is valid") {
        auto dataset = load_dataset(repo_path("data/sample_questions.jsonl"));
        CHECK(dataset.records.size() == 12);
    }
}

TEST_CASE("prediction records round-trip through JSON lines") {
    PredictionRecord record;
    record.question_id = "q7";
    record.method = "stability";
    record.predicted = 'C';
    record.confidence = 0.4375111111111;
    record.correct = true;
    record.n_samples = 5;
    record.metadata["note"] = "x";

    auto back = record_from_json_line(record_to_json_line(record));
    CHECK(back.question_id == record.question_id);
    CHECK(back.method == record.method);
    CHECK(back.predicted == record.predicted);
    CHECK(back.confidence == record.confidence);  // bit-exact
    CHECK(back.correct == record.correct);
    CHECK(back.n_samples == record.n_samples);
    CHECK(back.metadata == record.metadata);
}

TEST_CASE("run is deterministic on the mock backend") {
    ScratchDir scratch("run");
    auto first = sample_config(scratch, "a.jsonl");
    auto second = sample_config(scratch, "b.jsonl");
    auto records_a = run(first);
    auto records_b = run(second);
    CHECK(records_a.size() == 12);
    CHECK(slurp(first.output_path) == slurp(second.output_path));
    CHECK(!slurp(first.output_path).empty());
}

TEST_CASE("run resumes from an existing records file") {
    ScratchDir scratch("resume");
    auto full = sample_config(scratch, "full.jsonl");
    run(full);
    auto full_bytes = slurp(full.output_path);

    // Keep only the first 7 lines, as if the run had been interrupted.
    std::istringstream in(full_bytes);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 12);

    auto partial = sample_config(scratch, "partial.jsonl");
    write_lines(partial.output_path,
                std::vector<std::string>(lines.begin(), lines.begin() + 7));

    MockBackend mock = MockBackend::from_jsonl(partial.fixture_path);
    CountingBackend counter(mock);
    run(partial, counter);
    CHECK(slurp(partial.output_path) == full_bytes);
    CHECK(counter.calls() == 5);  // one token_prob call per remaining question
}

TEST_CASE("a second cached run performs zero backend interactions") {
    ScratchDir scratch("cachehit");
    auto config = sample_config(scratch, "first.jsonl");
    config.cache_dir = scratch.file("cache");

    MockBackend mock = MockBackend::from_jsonl(config.fixture_path);
    CountingBackend counter(mock);
    run(config, counter);
    auto cold_calls = counter.calls();
    CHECK(cold_calls == 12);

    auto again = config;
    again.output_path = scratch.file("second.jsonl");
    run(again, counter);
    CHECK(counter.calls() == cold_calls);
    CHECK(slurp(config.output_path) == slurp(again.output_path));
}

TEST_CASE("stability issues three calls per sample on a cold cache") {
    ScratchDir scratch("calls");
    auto config = sample_config(scratch, "stab.jsonl", Method::Stability);
    config.cache_dir = scratch.file("cache");
    config.method_config.n_samples = 5;
    config.limit = 1;

    MockBackend mock = MockBackend::from_jsonl(config.fixture_path);
    CountingBackend counter(mock);
    run(config, counter);
    CHECK(counter.calls() == 15);  // 5 explain + 5 plausibility + 5 answer
}

TEST_CASE("runs abort once more than half the questions fail") {
    ScratchDir scratch("abort");
    auto dataset = scratch.file("qs.jsonl");
    write_lines(dataset,
                {R"({"id": "k1", "question": "alpha?", "choices": [{"label": "A", "text": "x"}, {"label": "B", "text": "y"}], "answer": "A"})",
                 R"({"id": "k2", "question": "beta?", "choices": [{"label": "A", "text": "x"}, {"label": "B", "text": "y"}], "answer": "A"})",
                 R"({"id": "k3", "question": "gamma?", "choices": [{"label": "A", "text": "x"}, {"label": "B", "text": "y"}], "answer": "A"})"});
    auto fixture = scratch.file("fx.jsonl");
    write_lines(fixture,
                {R"({"match": {"contains": "alpha"}, "response": {"text": "A", "tokens": [{"token": "A", "logprob": -0.1, "top": [{"token": "A", "logprob": -0.1}, {"token": "B", "logprob": -2.0}]}]}})"});

    RunConfig config;
    config.dataset_path = dataset;
    config.fixture_path = fixture;
    config.backend = BackendKind::Mock;
    config.method_config.method = Method::TokenProb;
    config.output_path = scratch.file("out.jsonl");
    config.concurrency = 1;

    try {
        run(config);
        CHECK(false);
    } catch (const Error& err) {
        CHECK(err.kind() == ErrorKind::RunAborted);
    }
    // The successful first record was still written for resumption.
    auto written = load_records(config.output_path, /*include_failed=*/true);
    CHECK(written.size() >= 2);
    CHECK(written[0].question_id == "k1");
    CHECK_FALSE(record_failed(written[0]));
    CHECK(record_failed(written[1]));
}

TEST_CASE("evaluate") {
    ScratchDir scratch("eval");
    SUBCASE("perfect records") {
        auto path = scratch.file("perfect.jsonl");
        std::vector<std::string> lines;
        for (int i = 0; i < 4; ++i) {
            PredictionRecord r;
            r.question_id = "q" + std::to_string(i);
            r.method = "m";
            r.predicted = 'A';
            r.confidence = 1.0;
            r.correct = true;
            lines.push_back(record_to_json_line(r));
        }
        write_lines(path, lines);
        auto summary = evaluate(path, 10, 1e-6, 10, 1);
        CHECK(summary.accuracy == doctest::Approx(1.0));
        CHECK(summary.ece == doctest::Approx(0.0));
        CHECK(summary.aurc == doctest::Approx(1.0));
        CHECK_FALSE(summary.auroc.has_value());  // single class
    }
    SUBCASE("hand-computed ECE fixture flows through") {
        auto path = scratch.file("ece.jsonl");
        std::vector<std::pair<double, bool>> fixture{
            {0.95, true}, {0.85, true}, {0.65, false}, {0.30, false}};
        std::vector<std::string> lines;
        int i = 0;
        for (auto [conf, correct] : fixture) {
            PredictionRecord r;
            r.question_id = "q" + std::to_string(i++);
            r.method = "m";
            r.predicted = 'A';
            r.confidence = conf;
            r.correct = correct;
            lines.push_back(record_to_json_line(r));
        }
        write_lines(path, lines);
        auto summary = evaluate(path, 10, 1e-6, 10, 5);
        CHECK(summary.ece == doctest::Approx(0.2875).epsilon(1e-12));
        CHECK(summary.n == 4);

        auto again = evaluate(path, 10, 1e-6, 10, 5);
        CHECK(summary_to_json(summary) == summary_to_json(again));
    }
    SUBCASE("failed records are excluded but counted") {
        auto path = scratch.file("failed.jsonl");
        PredictionRecord good;
        good.question_id = "g";
        good.method = "m";
        good.predicted = 'A';
        good.confidence = 0.9;
        good.correct = true;
        PredictionRecord bad;
        bad.question_id = "b";
        bad.method = "m";
        bad.metadata["failed"] = "true";
        bad.metadata["error"] = "boom";
        write_lines(path, {record_to_json_line(good), record_to_json_line(bad)});
        auto summary = evaluate(path, 10, 1e-6, 10, 1);
        CHECK(summary.n == 1);
        CHECK(summary.failed_excluded == 1);
    }
    SUBCASE("zero usable records is an error") {
        auto path = scratch.file("none.jsonl");
        PredictionRecord bad;
        bad.question_id = "b";
        bad.method = "m";
        bad.metadata["failed"] = "true";
        write_lines(path, {record_to_json_line(bad)});
        CHECK_THROWS_AS(evaluate(path, 10, 1e-6, 10, 1), Error);
    }
}

TEST_CASE("emit_curves") {
    ScratchDir scratch("curves");
    auto write_records = [&](const std::string& name,
                             std::vector<std::pair<double, bool>> rows) {
        auto path = scratch.file(name);
        std::vector<std::string> lines;
        int i = 0;
        for (auto [conf, correct] : rows) {
            PredictionRecord r;
            r.question_id = "q" + std::to_string(i++);
            r.method = "m";
            r.predicted = 'A';
            r.confidence = conf;
            r.correct = correct;
            lines.push_back(record_to_json_line(r));
        }
        write_lines(path, lines);
        return path;
    };

    SUBCASE("risk-coverage rows match the enumeration") {
        auto path = write_records("rc.jsonl", {{0.9, true}, {0.8, true}, {0.7, false}});
        emit_curves(path, scratch.file("out"), 3);
        auto rc = slurp(scratch.file("out") + ".rc.csv");
        CHECK(rc == "coverage,accuracy\n0.3333,1.0000\n0.6667,1.0000\n1.0000,0.6667\n");
    }
    SUBCASE("perfect separation emits the step curve") {
        auto path = write_records("roc.jsonl", {{0.9, true}, {0.1, false}});
        emit_curves(path, scratch.file("sep"), 3);
        auto roc = slurp(scratch.file("sep") + ".roc.csv");
        CHECK(roc == "fpr,tpr\n0.0000,0.0000\n0.0000,1.0000\n1.0000,1.0000\n");
    }
    SUBCASE("ties get one seeded noise draw") {
        auto path = write_records("tie.jsonl",
                                  {{0.5, true}, {0.5, false}, {0.9, true}});
        CHECK_NOTHROW(emit_curves(path, scratch.file("tie"), 3));
    }
    SUBCASE("empty records produce no files") {
        auto path = scratch.file("empty.jsonl");
        write_lines(path, {});
        CHECK_THROWS_AS(emit_curves(path, scratch.file("none"), 3), Error);
        CHECK_FALSE(std::filesystem::exists(scratch.file("none") + ".rc.csv"));
        CHECK_FALSE(std::filesystem::exists(scratch.file("none") + ".roc.csv"));
    }
}

TEST_CASE("sweep_samples replays the cache without new calls") {
    ScratchDir scratch("sweep");
    auto config = sample_config(scratch, "base.jsonl", Method::Stability);
    config.cache_dir = scratch.file("cache");
    config.method_config.n_samples = 3;
    config.limit = 4;

    MockBackend mock = MockBackend::from_jsonl(config.fixture_path);
    CountingBackend counter(mock);
    run(config, counter);
    auto base_calls = counter.calls();

    auto sweep_config = config;
    sweep_config.output_path = scratch.file("sweep.csv");
    auto rows = sweep_samples(sweep_config, {1, 3});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].n_samples == 1);
    CHECK(rows[1].n_samples == 3);
    CHECK(rows[0].summary.n == 4);
    CHECK(counter.calls() == base_calls);  // replay only

    write_sweep_csv(rows, sweep_config.output_path);
    auto csv = slurp(sweep_config.output_path);
    CHECK(csv.rfind("n_samples,n,accuracy,ece,aurc,auroc\n", 0) == 0);

    SUBCASE("a size beyond the cached samples is an informative error") {
        try {
            sweep_samples(sweep_config, {5});
            CHECK(false);
        } catch (const Error& err) {
            CHECK(err.kind() == ErrorKind::CacheMiss);
            CHECK(std::string(err.what()).find("not cached") != std::string::npos);
        }
    }
    SUBCASE("the size-1 row matches a fresh run with one sample") {
        auto fresh = sample_config(scratch, "fresh.jsonl", Method::Stability);
        fresh.method_config.n_samples = 1;
        fresh.limit = 4;
        run(fresh);
        auto fresh_records = load_records(fresh.output_path);
        auto swept_records =
            load_records(sweep_config.output_path + ".n1.jsonl");
        REQUIRE(fresh_records.size() == swept_records.size());
        for (size_t i = 0; i < fresh_records.size(); ++i) {
            CHECK(fresh_records[i].question_id == swept_records[i].question_id);
            CHECK(fresh_records[i].confidence == swept_records[i].confidence);
            CHECK(fresh_records[i].predicted == swept_records[i].predicted);
        }
    }
}

TEST_CASE("study emits rows and a sidecar summary") {
    ScratchDir scratch("study");
    RunConfig config;
    config.dataset_path = repo_path("data/sample_questions.jsonl");
    config.fixture_path = repo_path("data/sample_fixture.jsonl");
    config.backend = BackendKind::Mock;
    config.method_config.method = Method::Stability;
    config.output_path = scratch.file("study.csv");
    config.limit = 2;
    config.seed = 9;

    auto summary = study(config);
    CHECK(summary.rows == 4);  // two per question
    CHECK(summary.skipped == 0);
    // The bundled fixture scores every explanation identically, so the
    // condition means coincide.
    CHECK(summary.mean_loglik_correct ==
          doctest::Approx(summary.mean_loglik_incorrect));
    CHECK(summary.mean_entail_correct ==
          doctest::Approx(summary.mean_entail_incorrect));

    auto csv = slurp(config.output_path);
    CHECK(csv.rfind("question_id,conditioned_correct,loglik,entail_prob\n", 0) == 0);
    CHECK(std::filesystem::exists(config.output_path + ".summary.json"));

    auto again_config = config;
    again_config.output_path = scratch.file("study2.csv");
    study(again_config);
    CHECK(slurp(config.output_path) == slurp(again_config.output_path));
}
