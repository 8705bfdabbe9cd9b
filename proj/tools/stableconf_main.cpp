// Command-line surface: score datasets, evaluate records, emit curves,
// sweep sample sizes, and run the explanation study.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stableconf/runner.hpp"

using namespace stableconf;

namespace {

struct ScoreFlags {
    std::string dataset;
    std::string method = "stability";
    std::string backend = "mock";
    std::string model = "mock-model";
    int samples = 5;
    int k = 5;
    double temperature = 0.7;
    std::string plausibility = "entailment";
    std::string position = "pre";
    std::uint64_t seed = 0;
    int limit = 250;
    std::string cache;
    int concurrency = 4;
    std::string out;
    std::string fixture;
    std::string prompts;
};

void add_score_flags(CLI::App* cmd, ScoreFlags& flags, bool with_method) {
    cmd->add_option("--dataset", flags.dataset, "questions JSON-lines file")->required();
    if (with_method)
        cmd->add_option("--method", flags.method,
                        "token_prob|linguistic|topk|cot_consistency|stability|"
                        "cot_stability|stability_entail_only|"
                        "stability_distribution_only|tta");
    cmd->add_option("--backend", flags.backend, "openai_compatible|mock");
    cmd->add_option("--model", flags.model, "model name passed to the backend");
    cmd->add_option("--samples", flags.samples, "explanation/response samples N");
    cmd->add_option("--k", flags.k, "guess count for top-k");
    cmd->add_option("--temperature", flags.temperature, "explanation sampling temperature");
    cmd->add_option("--plausibility", flags.plausibility,
                    "entailment|most_likely|complete_description|uniform");
    cmd->add_option("--position", flags.position, "pre|post explanation position");
    cmd->add_option("--seed", flags.seed, "run seed");
    cmd->add_option("--limit", flags.limit, "max questions");
    cmd->add_option("--cache", flags.cache, "response cache directory");
    cmd->add_option("--concurrency", flags.concurrency, "parallel question workers");
    cmd->add_option("--out", flags.out, "output path")->required();
    cmd->add_option("--fixture", flags.fixture, "mock fixture JSON-lines file");
    cmd->add_option("--prompts", flags.prompts, "prompt template directory override");
}

RunConfig to_config(const ScoreFlags& flags) {
    RunConfig config;
    config.dataset_path = flags.dataset;
    if (flags.backend == "mock")
        config.backend = BackendKind::Mock;
    else if (flags.backend == "openai_compatible")
        config.backend = BackendKind::OpenAiCompatible;
    else
        throw Error(ErrorKind::Startup, "unknown backend '" + flags.backend + "'");
    config.model = flags.model;
    config.method_config.method = parse_method(flags.method);
    config.method_config.n_samples = flags.samples;
    config.method_config.k = flags.k;
    config.method_config.temperature_explain = flags.temperature;
    config.method_config.plausibility = parse_plausibility(flags.plausibility);
    if (flags.position == "pre")
        config.method_config.explanation_position = ExplanationPosition::PreAnswer;
    else if (flags.position == "post")
        config.method_config.explanation_position = ExplanationPosition::PostAnswer;
    else
        throw Error(ErrorKind::Startup, "position must be pre or post");
    config.concurrency = flags.concurrency;
    config.seed = flags.seed;
    config.cache_dir = flags.cache;
    config.output_path = flags.out;
    config.limit = flags.limit;
    config.fixture_path = flags.fixture;
    config.prompts_dir = flags.prompts;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Black-box LLM confidence elicitation and selective-prediction "
                 "evaluation"};
    app.require_subcommand(1);

    ScoreFlags score_flags;
    auto* score_cmd = app.add_subcommand("score", "score a dataset with one method");
    add_score_flags(score_cmd, score_flags, /*with_method=*/true);

    std::string eval_records, eval_out;
    int eval_bins = 10, eval_repeats = 10;
    double eval_sigma = 1e-6;
    std::uint64_t eval_seed = 0;
    auto* eval_cmd = app.add_subcommand("eval", "compute ECE/AURC/AUROC for records");
    eval_cmd->add_option("--records", eval_records, "records JSON-lines file")->required();
    eval_cmd->add_option("--bins", eval_bins, "ECE bin count M");
    eval_cmd->add_option("--noise-sigma", eval_sigma, "tie-break noise sigma");
    eval_cmd->add_option("--noise-repeats", eval_repeats, "noise repeats");
    eval_cmd->add_option("--seed", eval_seed, "noise seed");
    eval_cmd->add_option("--out", eval_out, "summary JSON path (stdout when absent)");

    std::string curves_records, curves_prefix;
    std::uint64_t curves_seed = 0;
    auto* curves_cmd = app.add_subcommand("curves", "emit risk-coverage and ROC CSVs");
    curves_cmd->add_option("--records", curves_records, "records JSON-lines file")
        ->required();
    curves_cmd->add_option("--out-prefix", curves_prefix, "output path prefix")
        ->required();
    curves_cmd->add_option("--seed", curves_seed, "tie-break noise seed");

    ScoreFlags sweep_flags;
    std::vector<int> sweep_sizes;
    auto* sweep_cmd =
        app.add_subcommand("sweep", "re-evaluate cached runs at smaller sample sizes");
    sweep_cmd->add_option("--sizes", sweep_sizes, "sample sizes, e.g. 1,3,5")
        ->required()
        ->delimiter(',');
    add_score_flags(sweep_cmd, sweep_flags, /*with_method=*/true);

    ScoreFlags study_flags;
    auto* study_cmd = app.add_subcommand(
        "study", "conditioned-explanation loglik/entailment study");
    add_score_flags(study_cmd, study_flags, /*with_method=*/false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*score_cmd) {
            auto records = run(to_config(score_flags));
            int failed = 0;
            for (const auto& r : records)
                if (record_failed(r)) ++failed;
            std::fprintf(stderr, "scored %zu questions (%d failed) -> %s\n",
                         records.size(), failed, score_flags.out.c_str());
        } else if (*eval_cmd) {
            EvalSummary summary =
                evaluate(eval_records, eval_bins, eval_sigma, eval_repeats, eval_seed);
            std::string text = summary_to_json(summary);
            if (eval_out.empty()) {
                std::cout << text << '\n';
            } else {
                std::ofstream out(eval_out);
                if (!out) throw Error(ErrorKind::Io, "cannot write " + eval_out);
                out << text << '\n';
                std::fprintf(stderr, "summary -> %s\n", eval_out.c_str());
            }
        } else if (*curves_cmd) {
            emit_curves(curves_records, curves_prefix, curves_seed);
            std::fprintf(stderr, "curves -> %s.rc.csv, %s.roc.csv\n",
                         curves_prefix.c_str(), curves_prefix.c_str());
        } else if (*sweep_cmd) {
            auto rows = sweep_samples(to_config(sweep_flags), sweep_sizes);
            write_sweep_csv(rows, sweep_flags.out);
            std::fprintf(stderr, "sweep table (%zu rows) -> %s\n", rows.size(),
                         sweep_flags.out.c_str());
        } else if (*study_cmd) {
            study_flags.method = "stability";  // study only uses the scorer setting
            StudySummary summary = study(to_config(study_flags));
            std::fprintf(stderr,
                         "study: %d rows (%d skipped); mean entail %.4f correct vs "
                         "%.4f incorrect -> %s\n",
                         summary.rows, summary.skipped, summary.mean_entail_correct,
                         summary.mean_entail_incorrect, study_flags.out.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
