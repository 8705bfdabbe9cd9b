#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stableconf/errors.hpp"

namespace stableconf {

// One multiple-choice option. Labels are single uppercase letters.
struct Option {
    char label{};
    std::string text;
};

struct Question {
    std::string id;
    std::string stem;
    std::vector<Option> options;
    char gold{};

    std::vector<char> labels() const;

    // Enforces: >=2 options, labels contiguous from 'A', gold among labels.
    void validate() const;
};

// Normalized probability over option labels.
struct AnswerDistribution {
    std::map<char, double> probs;

    double prob(char label) const;

    // Argmax label; exact ties resolve to the lowest label.
    char argmax_label() const;

    // Every prob in [0,1] and sum within 1e-9 of 1.
    void validate() const;
};

// A sampled rationale with its plausibility weight rho.
struct Explanation {
    std::string text;
    double plausibility = 1.0;
    std::optional<std::vector<double>> token_logprobs;  // nats, entries <= 0
    std::optional<char> conditioned_label;              // set by the study pipeline
};

// The unit every metric consumes.
struct PredictionRecord {
    std::string question_id;
    std::string method;
    char predicted{};
    double confidence = 0.0;  // r in [0,1]
    bool correct = false;
    int n_samples = 1;
    std::map<std::string, std::string> metadata;
};

enum class Method {
    TokenProb,
    Linguistic,
    TopK,
    CotConsistency,
    Stability,
    CotStability,
    StabilityEntailOnly,
    StabilityDistributionOnly,
    Tta,
};

enum class Plausibility {
    Entailment,
    MostLikely,
    CompleteDescription,
    Uniform,
};

enum class ExplanationPosition {
    PreAnswer,
    PostAnswer,
};

struct MethodConfig {
    Method method = Method::Stability;
    int n_samples = 5;
    int k = 5;
    double temperature_explain = 0.7;
    double temperature_answer = 0.0;
    Plausibility plausibility = Plausibility::Entailment;
    ExplanationPosition explanation_position = ExplanationPosition::PreAnswer;

    void validate() const;  // n_samples >= 1, temperatures >= 0
};

const char* method_name(Method m);
Method parse_method(const std::string& name);
const char* plausibility_name(Plausibility p);
Plausibility parse_plausibility(const std::string& name);

// probs_i = exp(s_i - max_s) / sum_j exp(s_j - max_s), over exactly `labels`.
// Every label must be present in log_scores.
AnswerDistribution softmax_over_labels(const std::map<char, double>& log_scores,
                                       const std::vector<char>& labels);

// Returns sum_n (w_n / sum_w) * dist_n. Weights must be >= 0 with a positive
// sum; all distributions must share one label set.
AnswerDistribution mix_distributions(const std::vector<double>& weights,
                                     const std::vector<AnswerDistribution>& dists);

}  // namespace stableconf
