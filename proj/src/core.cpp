#include "stableconf/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace stableconf {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "invalid-input";
        case ErrorKind::DegenerateWeights: return "degenerate-weights";
        case ErrorKind::Credential: return "credential";
        case ErrorKind::Transport: return "transport";
        case ErrorKind::FixtureMiss: return "fixture-miss";
        case ErrorKind::MissingLogprobs: return "missing-logprobs";
        case ErrorKind::Template: return "template";
        case ErrorKind::ParseFailure: return "parse-failure";
        case ErrorKind::NoParsableSamples: return "no-parsable-samples";
        case ErrorKind::TiesPresent: return "ties-present";
        case ErrorKind::UndefinedAuroc: return "undefined-auroc";
        case ErrorKind::CacheMiss: return "cache-miss";
        case ErrorKind::Startup: return "startup";
        case ErrorKind::RunAborted: return "run-aborted";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

std::vector<char> Question::labels() const {
    std::vector<char> out;
    out.reserve(options.size());
    for (const auto& opt : options) out.push_back(opt.label);
    return out;
}

void Question::validate() const {
    if (id.empty()) throw Error(ErrorKind::InvalidInput, "question id is empty");
    if (options.size() < 2)
        throw Error(ErrorKind::InvalidInput, "question '" + id + "' needs at least 2 options");
    for (size_t i = 0; i < options.size(); ++i) {
        char expected = static_cast<char>('A' + i);
        if (options[i].label != expected) {
            std::ostringstream msg;
            msg << "question '" << id << "': option " << i << " labeled '"
                << options[i].label << "', expected '" << expected << "'";
            throw Error(ErrorKind::InvalidInput, msg.str());
        }
    }
    char last = static_cast<char>('A' + options.size() - 1);
    if (gold < 'A' || gold > last)
        throw Error(ErrorKind::InvalidInput,
                    "question '" + id + "': gold label '" + std::string(1, gold) +
                        "' not among options");
}

double AnswerDistribution::prob(char label) const {
    auto it = probs.find(label);
    return it == probs.end() ? 0.0 : it->second;
}

char AnswerDistribution::argmax_label() const {
    if (probs.empty()) throw Error(ErrorKind::InvalidInput, "empty distribution");
    char best = probs.begin()->first;
    double best_p = probs.begin()->second;
    for (const auto& [label, p] : probs) {
        if (p > best_p) {  // strict: ties keep the lowest label (map is ordered)
            best = label;
            best_p = p;
        }
    }
    return best;
}

void AnswerDistribution::validate() const {
    if (probs.empty()) throw Error(ErrorKind::InvalidInput, "empty distribution");
    double sum = 0.0;
    for (const auto& [label, p] : probs) {
        if (!(p >= 0.0 && p <= 1.0))
            throw Error(ErrorKind::InvalidInput,
                        "probability out of [0,1] for label " + std::string(1, label));
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw Error(ErrorKind::InvalidInput,
                    "distribution sums to " + std::to_string(sum) + ", not 1");
}

void MethodConfig::validate() const {
    if (n_samples < 1) throw Error(ErrorKind::InvalidInput, "n_samples must be >= 1");
    if (k < 1) throw Error(ErrorKind::InvalidInput, "k must be >= 1");
    if (temperature_explain < 0.0 || temperature_answer < 0.0)
        throw Error(ErrorKind::InvalidInput, "temperatures must be >= 0");
}

const char* method_name(Method m) {
    switch (m) {
        case Method::TokenProb: return "token_prob";
        case Method::Linguistic: return "linguistic";
        case Method::TopK: return "topk";
        case Method::CotConsistency: return "cot_consistency";
        case Method::Stability: return "stability";
        case Method::CotStability: return "cot_stability";
        case Method::StabilityEntailOnly: return "stability_entail_only";
        case Method::StabilityDistributionOnly: return "stability_distribution_only";
        case Method::Tta: return "tta";
    }
    return "unknown";
}

Method parse_method(const std::string& name) {
    static const std::map<std::string, Method> table = {
        {"token_prob", Method::TokenProb},
        {"linguistic", Method::Linguistic},
        {"topk", Method::TopK},
        {"cot_consistency", Method::CotConsistency},
        {"stability", Method::Stability},
        {"cot_stability", Method::CotStability},
        {"stability_entail_only", Method::StabilityEntailOnly},
        {"stability_distribution_only", Method::StabilityDistributionOnly},
        {"tta", Method::Tta},
    };
    auto it = table.find(name);
    if (it == table.end())
        throw Error(ErrorKind::InvalidInput, "unknown method '" + name + "'");
    return it->second;
}

const char* plausibility_name(Plausibility p) {
    switch (p) {
        case Plausibility::Entailment: return "entailment";
        case Plausibility::MostLikely: return "most_likely";
        case Plausibility::CompleteDescription: return "complete_description";
        case Plausibility::Uniform: return "uniform";
    }
    return "unknown";
}

Plausibility parse_plausibility(const std::string& name) {
    static const std::map<std::string, Plausibility> table = {
        {"entailment", Plausibility::Entailment},
        {"most_likely", Plausibility::MostLikely},
        {"complete_description", Plausibility::CompleteDescription},
        {"uniform", Plausibility::Uniform},
    };
    auto it = table.find(name);
    if (it == table.end())
        throw Error(ErrorKind::InvalidInput, "unknown plausibility scorer '" + name + "'");
    return it->second;
}

AnswerDistribution softmax_over_labels(const std::map<char, double>& log_scores,
                                       const std::vector<char>& labels) {
    if (labels.empty()) throw Error(ErrorKind::InvalidInput, "empty label set");

    double max_score = -std::numeric_limits<double>::infinity();
    for (char label : labels) {
        auto it = log_scores.find(label);
        if (it == log_scores.end())
            throw Error(ErrorKind::InvalidInput,
                        "no log score for label " + std::string(1, label));
        max_score = std::max(max_score, it->second);
    }

    AnswerDistribution dist;
    double sum = 0.0;
    for (char label : labels) {
        double e = std::exp(log_scores.at(label) - max_score);
        dist.probs[label] = e;
        sum += e;
    }
    for (auto& [label, p] : dist.probs) p /= sum;
    return dist;
}

AnswerDistribution mix_distributions(const std::vector<double>& weights,
                                     const std::vector<AnswerDistribution>& dists) {
    if (weights.empty() || weights.size() != dists.size())
        throw Error(ErrorKind::InvalidInput, "weights and distributions must pair up");

    double z = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw Error(ErrorKind::InvalidInput, "negative mixture weight");
        z += w;
    }
    if (z <= 0.0)
        throw Error(ErrorKind::DegenerateWeights, "mixture weights sum to zero");

    const auto& keys = dists.front().probs;
    AnswerDistribution out;
    for (const auto& [label, _] : keys) out.probs[label] = 0.0;

    for (size_t n = 0; n < dists.size(); ++n) {
        if (dists[n].probs.size() != keys.size())
            throw Error(ErrorKind::InvalidInput, "distributions disagree on label set");
        for (const auto& [label, p] : dists[n].probs) {
            auto it = out.probs.find(label);
            if (it == out.probs.end())
                throw Error(ErrorKind::InvalidInput, "distributions disagree on label set");
            it->second += (weights[n] / z) * p;
        }
    }

    // One renormalization pass absorbs accumulated rounding.
    double sum = 0.0;
    for (const auto& [_, p] : out.probs) sum += p;
    for (auto& [_, p] : out.probs) p /= sum;
    return out;
}

}  // namespace stableconf
