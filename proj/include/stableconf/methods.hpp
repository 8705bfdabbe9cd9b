#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stableconf/backend.hpp"
#include "stableconf/core.hpp"
#include "stableconf/prompts.hpp"

namespace stableconf {

struct ConfidenceResult {
    AnswerDistribution distribution;
    char predicted{};          // argmax of distribution, ties to lowest label
    double confidence = 0.0;   // distribution[predicted]
    int samples_used = 0;
    int parse_failures = 0;
    std::vector<Explanation> explanations;
    std::map<std::string, std::string> metadata;
};

// Mean per-token log-probability in nats.
double sequence_loglik(std::span<const double> token_logprobs);

// Runs one confidence-elicitation strategy against a backend. All sampling
// requests carry their sample index so cached draws stay distinct, and
// results are aggregated in sample order regardless of completion order.
class Elicitor {
public:
    Elicitor(Backend& backend, const PromptLibrary& prompts, std::string model,
             MethodConfig config);

    // Dispatches on config.method.
    ConfidenceResult run(const Question& q) const;

    ConfidenceResult token_prob(const Question& q) const;
    ConfidenceResult linguistic(const Question& q) const;
    ConfidenceResult topk(const Question& q) const;
    ConfidenceResult cot_consistency(const Question& q) const;
    ConfidenceResult stable(const Question& q) const;
    ConfidenceResult stable_entail_only(const Question& q) const;
    ConfidenceResult stable_distribution_only(const Question& q) const;
    ConfidenceResult tta(const Question& q) const;

    // rho in [0,1] from the position-0 True/False logprobs of the scorer's
    // prompt; the uniform scorer returns 1 without a backend call. Requests
    // issued on behalf of draw n carry sample_index = n so every step of a
    // sample's pipeline stays distinct and replayable in the cache.
    double score_plausibility(const Question& q, const Explanation& e,
                              int sample_index = 0) const;
    double score_plausibility(Plausibility kind, const Question& q,
                              const Explanation& e, int sample_index = 0) const;

    const MethodConfig& config() const { return config_; }

    // Raw sample of the explanation prompt for `kind` at the explain
    // temperature; the completion text still contains the answer line.
    Completion sample_raw(const Question& q, PromptKind kind, int sample_index,
                          const std::map<std::string, std::string>& extras = {},
                          bool want_logprobs = false) const;

    // Explanation-conditioned answer distribution, read from logprobs.
    AnswerDistribution answer_distribution_given(const Question& q,
                                                 const std::string& explanation,
                                                 int sample_index = 0) const;

private:
    ConfidenceResult stable_impl(const Question& q, Plausibility scorer) const;
    AnswerDistribution read_answer_distribution(const std::vector<Message>& messages,
                                                const std::vector<char>& labels,
                                                int sample_index) const;

    Backend* backend_;
    const PromptLibrary* prompts_;
    std::string model_;
    MethodConfig config_;
};

struct StudyRow {
    std::string question_id;
    bool conditioned_correct = false;
    double loglik = 0.0;      // length-normalized, nats/token
    double entail_prob = 0.0; // rho from the configured scorer
};

struct StudyResult {
    std::vector<StudyRow> rows;
    int skipped = 0;
};

// For every question: one explanation conditioned on the gold label and one
// on a seeded uniformly-drawn wrong label; rows carry the explanation's mean
// token logprob and its plausibility score.
StudyResult explanation_study(std::span<const Question> questions, Backend& backend,
                              const PromptLibrary& prompts, const std::string& model,
                              const MethodConfig& config, std::uint64_t seed);

// Seeded wrong-label draw used by the study; exposed for tests.
char draw_wrong_label(const Question& q, std::uint64_t seed);

}  // namespace stableconf
