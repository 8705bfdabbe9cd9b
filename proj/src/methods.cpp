#include "stableconf/methods.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <future>
#include <optional>
#include <random>
#include <sstream>

#include "stableconf/metrics.hpp"  // derive_seed

namespace stableconf {

namespace {

constexpr int kExplainMaxTokens = 512;
constexpr int kAnswerMaxTokens = 8;
constexpr int kScoreMaxTokens = 4;
constexpr int kVerbalMaxTokens = 256;

// Runs fn(0..n-1) concurrently and returns results in index order, so
// completion order never changes aggregation.
template <typename Fn>
auto collect_in_order(int n, Fn&& fn) {
    using R = std::invoke_result_t<Fn&, int>;
    if (n == 1) return std::vector<R>{fn(0)};
    std::vector<std::future<R>> futures;
    futures.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        futures.push_back(std::async(std::launch::async, std::ref(fn), i));
    std::vector<R> out;
    out.reserve(static_cast<size_t>(n));
    for (auto& f : futures) out.push_back(f.get());
    return out;
}

void finalize(ConfidenceResult& result) {
    result.distribution.validate();
    result.predicted = result.distribution.argmax_label();
    result.confidence = result.distribution.prob(result.predicted);
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string normalize_word(const std::string& token) {
    std::string out;
    for (char c : token) {
        auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc) || std::ispunct(uc)) continue;
        out.push_back(static_cast<char>(std::tolower(uc)));
    }
    return out;
}

}  // namespace

double sequence_loglik(std::span<const double> token_logprobs) {
    if (token_logprobs.empty())
        throw Error(ErrorKind::InvalidInput, "no token logprobs");
    double sum = 0.0;
    for (double lp : token_logprobs) sum += lp;
    return sum / static_cast<double>(token_logprobs.size());
}

Elicitor::Elicitor(Backend& backend, const PromptLibrary& prompts, std::string model,
                   MethodConfig config)
    : backend_(&backend),
      prompts_(&prompts),
      model_(std::move(model)),
      config_(std::move(config)) {
    config_.validate();
}

ConfidenceResult Elicitor::run(const Question& q) const {
    q.validate();
    switch (config_.method) {
        case Method::TokenProb: return token_prob(q);
        case Method::Linguistic: return linguistic(q);
        case Method::TopK: return topk(q);
        case Method::CotConsistency: return cot_consistency(q);
        case Method::Stability: return stable(q);
        case Method::CotStability: return stable(q);
        case Method::StabilityEntailOnly: return stable_entail_only(q);
        case Method::StabilityDistributionOnly: return stable_distribution_only(q);
        case Method::Tta: return tta(q);
    }
    throw Error(ErrorKind::InvalidInput, "unhandled method");
}

Completion Elicitor::sample_raw(const Question& q, PromptKind kind, int sample_index,
                                const std::map<std::string, std::string>& extras,
                                bool want_logprobs) const {
    CompletionRequest request;
    request.model = model_;
    request.messages = prompts_->render(kind, q, extras, config_.explanation_position);
    request.temperature = config_.temperature_explain;
    request.max_tokens = kExplainMaxTokens;
    request.want_logprobs = want_logprobs;
    request.sample_index = sample_index;
    return backend_->complete(request);
}

AnswerDistribution Elicitor::read_answer_distribution(
    const std::vector<Message>& messages, const std::vector<char>& labels,
    int sample_index) const {
    CompletionRequest request;
    request.model = model_;
    request.messages = messages;
    request.temperature = config_.temperature_answer;
    request.max_tokens = kAnswerMaxTokens;
    request.want_logprobs = true;
    request.sample_index = sample_index;
    Completion completion = backend_->complete(request);
    return softmax_over_labels(label_logprobs(completion, 0, labels), labels);
}

AnswerDistribution Elicitor::answer_distribution_given(
    const Question& q, const std::string& explanation, int sample_index) const {
    auto messages = prompts_->render(PromptKind::StabilityAnswerGivenExplanation, q,
                                     {{"explanation", explanation}});
    return read_answer_distribution(messages, q.labels(), sample_index);
}

// ---------------------------------------------------------------------------
// Baselines

ConfidenceResult Elicitor::token_prob(const Question& q) const {
    ConfidenceResult result;
    result.distribution = read_answer_distribution(
        prompts_->render(PromptKind::TokenProb, q), q.labels(), 0);
    result.samples_used = 1;
    finalize(result);
    return result;
}

ConfidenceResult Elicitor::linguistic(const Question& q) const {
    CompletionRequest request;
    request.model = model_;
    request.messages = prompts_->render(PromptKind::Linguistic, q);
    request.temperature = config_.temperature_answer;
    request.max_tokens = kVerbalMaxTokens;
    Completion completion = backend_->complete(request);

    auto labels = q.labels();
    auto parsed = parse_verbalized(completion.text, 1, labels);
    auto [label, r] = parsed.answers.front();

    ConfidenceResult result;
    double rest = (1.0 - r) / static_cast<double>(labels.size() - 1);
    for (char l : labels) result.distribution.probs[l] = l == label ? r : rest;
    result.samples_used = 1;
    finalize(result);
    return result;
}

// Parsed pairs get their stated mass, unparsed labels share the leftover,
// and the whole thing renormalizes when the stated masses overshoot.
static AnswerDistribution spread_verbalized(const ParsedVerbalized& parsed,
                                            const std::vector<char>& labels) {
    AnswerDistribution dist;
    for (char l : labels) dist.probs[l] = 0.0;
    double stated = 0.0;
    int unparsed = static_cast<int>(labels.size());
    for (const auto& [label, value] : parsed.answers) {
        if (!dist.probs.count(label)) continue;
        dist.probs[label] = value;
        stated += value;
        --unparsed;
    }
    double residual = std::max(0.0, 1.0 - stated);
    if (unparsed > 0) {
        for (char l : labels) {
            bool was_parsed = false;
            for (const auto& [label, _] : parsed.answers)
                if (label == l) was_parsed = true;
            if (!was_parsed) dist.probs[l] = residual / unparsed;
        }
    }
    double total = 0.0;
    for (const auto& [_, p] : dist.probs) total += p;
    if (total <= 0.0) {
        for (auto& [_, p] : dist.probs) p = 1.0 / static_cast<double>(labels.size());
    } else {
        for (auto& [_, p] : dist.probs) p /= total;
    }
    return dist;
}

ConfidenceResult Elicitor::topk(const Question& q) const {
    CompletionRequest request;
    request.model = model_;
    request.messages =
        prompts_->render(PromptKind::TopK, q, {{"k", std::to_string(config_.k)}});
    request.temperature = config_.temperature_answer;
    request.max_tokens = kVerbalMaxTokens;
    Completion completion = backend_->complete(request);

    auto labels = q.labels();
    auto parsed = parse_verbalized(completion.text, config_.k, labels);

    ConfidenceResult result;
    result.distribution = spread_verbalized(parsed, labels);
    result.samples_used = 1;
    finalize(result);
    return result;
}

ConfidenceResult Elicitor::cot_consistency(const Question& q) const {
    auto labels = q.labels();

    struct Vote {
        std::optional<char> label;
        Explanation explanation;
    };
    auto worker = [&](int n) -> Vote {
        Completion completion = sample_raw(q, PromptKind::Cot, n);
        Vote vote;
        vote.explanation.text =
            extract_explanation(completion.text, ExplanationPosition::PreAnswer);
        try {
            vote.label = parse_answer_label(completion.text, labels);
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::ParseFailure) throw;
        }
        return vote;
    };
    auto votes = collect_in_order(config_.n_samples, worker);

    std::map<char, int> counts;
    int parsed = 0;
    ConfidenceResult result;
    for (const auto& vote : votes) {
        if (vote.label) {
            ++counts[*vote.label];
            ++parsed;
        } else {
            ++result.parse_failures;
        }
        result.explanations.push_back(vote.explanation);
    }
    if (parsed == 0)
        throw Error(ErrorKind::NoParsableSamples,
                    "all " + std::to_string(config_.n_samples) +
                        " samples failed to parse for question " + q.id);

    for (char l : labels)
        result.distribution.probs[l] =
            static_cast<double>(counts.count(l) ? counts[l] : 0) / parsed;
    result.samples_used = parsed;
    finalize(result);
    return result;
}

// ---------------------------------------------------------------------------
// Plausibility scoring

double Elicitor::score_plausibility(const Question& q, const Explanation& e,
                                    int sample_index) const {
    return score_plausibility(config_.plausibility, q, e, sample_index);
}

double Elicitor::score_plausibility(Plausibility kind, const Question& q,
                                    const Explanation& e, int sample_index) const {
    if (kind == Plausibility::Uniform) return 1.0;

    PromptKind prompt_kind = PromptKind::Entailment;
    if (kind == Plausibility::MostLikely) prompt_kind = PromptKind::MostLikelyTf;
    if (kind == Plausibility::CompleteDescription)
        prompt_kind = PromptKind::CompleteDescriptionTf;

    CompletionRequest request;
    request.model = model_;
    request.messages = prompts_->render(prompt_kind, q, {{"explanation", e.text}});
    request.temperature = 0.0;
    request.max_tokens = kScoreMaxTokens;
    request.want_logprobs = true;
    request.sample_index = sample_index;
    Completion completion = backend_->complete(request);

    if (completion.tokens.empty() || completion.tokens[0].alternatives.empty())
        throw Error(ErrorKind::MissingLogprobs,
                    "no logprobs for plausibility read on question " + q.id);

    const auto& alts = completion.tokens[0].alternatives;
    double min_observed = alts.front().logprob;
    std::optional<double> lp_true, lp_false;
    for (const auto& alt : alts) {
        min_observed = std::min(min_observed, alt.logprob);
        std::string word = normalize_word(alt.token);
        if (word == "true" && !lp_true) lp_true = alt.logprob;
        if (word == "false" && !lp_false) lp_false = alt.logprob;
    }
    double floor = min_observed - 2.0;
    double pos = lp_true.value_or(floor);
    double neg = lp_false.value_or(floor);

    double m = std::max(pos, neg);
    double ep = std::exp(pos - m), en = std::exp(neg - m);
    return ep / (ep + en);
}

// ---------------------------------------------------------------------------
// Stable explanations (and ablations)

ConfidenceResult Elicitor::stable_impl(const Question& q, Plausibility scorer) const {
    auto labels = q.labels();
    PromptKind explain_kind = config_.method == Method::CotStability
                                  ? PromptKind::Cot
                                  : PromptKind::StabilityExplain;
    ExplanationPosition position = explain_kind == PromptKind::StabilityExplain
                                       ? config_.explanation_position
                                       : ExplanationPosition::PreAnswer;

    struct Sample {
        Explanation explanation;
        AnswerDistribution dist;
    };
    auto worker = [&](int n) -> Sample {
        Completion completion = sample_raw(q, explain_kind, n);
        Sample sample;
        sample.explanation.text = extract_explanation(completion.text, position);
        sample.explanation.plausibility =
            score_plausibility(scorer, q, sample.explanation, n);
        sample.dist = answer_distribution_given(q, sample.explanation.text, n);
        return sample;
    };
    auto samples = collect_in_order(config_.n_samples, worker);

    ConfidenceResult result;
    std::vector<double> weights;
    std::vector<AnswerDistribution> dists;
    double z = 0.0;
    for (auto& sample : samples) {
        weights.push_back(sample.explanation.plausibility);
        z += sample.explanation.plausibility;
        dists.push_back(std::move(sample.dist));
        result.explanations.push_back(std::move(sample.explanation));
    }
    if (z < 1e-12) {
        // Keep batch runs alive on degenerate weights; flag it for audit.
        std::fill(weights.begin(), weights.end(), 1.0);
        result.metadata["degenerate_weights"] = "true";
    }
    result.distribution = mix_distributions(weights, dists);
    result.samples_used = config_.n_samples;
    finalize(result);
    return result;
}

ConfidenceResult Elicitor::stable(const Question& q) const {
    return stable_impl(q, config_.plausibility);
}

ConfidenceResult Elicitor::stable_distribution_only(const Question& q) const {
    return stable_impl(q, Plausibility::Uniform);
}

ConfidenceResult Elicitor::stable_entail_only(const Question& q) const {
    auto labels = q.labels();

    struct Sample {
        std::optional<char> label;
        Explanation explanation;
    };
    auto worker = [&](int n) -> Sample {
        Completion completion = sample_raw(q, PromptKind::Cot, n);
        Sample sample;
        sample.explanation.text =
            extract_explanation(completion.text, ExplanationPosition::PreAnswer);
        try {
            sample.label = parse_answer_label(completion.text, labels);
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::ParseFailure) throw;
            return sample;  // unparsed samples get no plausibility call
        }
        sample.explanation.plausibility =
            score_plausibility(config_.plausibility, q, sample.explanation, n);
        return sample;
    };
    auto samples = collect_in_order(config_.n_samples, worker);

    ConfidenceResult result;
    std::map<char, double> weight_by_label;
    double z = 0.0;
    int parsed = 0;
    for (auto& sample : samples) {
        if (sample.label) {
            weight_by_label[*sample.label] += sample.explanation.plausibility;
            z += sample.explanation.plausibility;
            ++parsed;
        } else {
            ++result.parse_failures;
        }
        result.explanations.push_back(std::move(sample.explanation));
    }
    if (parsed == 0)
        throw Error(ErrorKind::NoParsableSamples,
                    "all samples failed to parse for question " + q.id);
    if (z < 1e-12) {
        // Uniform fallback reduces to plain answer frequencies.
        weight_by_label.clear();
        for (auto& sample : samples)
            if (sample.label) weight_by_label[*sample.label] += 1.0;
        z = parsed;
        result.metadata["degenerate_weights"] = "true";
    }

    for (char l : labels) {
        auto it = weight_by_label.find(l);
        result.distribution.probs[l] = it == weight_by_label.end() ? 0.0 : it->second / z;
    }
    result.samples_used = parsed;
    finalize(result);
    return result;
}

// ---------------------------------------------------------------------------
// Think-twice (explanations for every option, then one verbalized read)

ConfidenceResult Elicitor::tta(const Question& q) const {
    auto labels = q.labels();

    auto worker = [&](int i) -> Explanation {
        char label = labels[static_cast<size_t>(i)];
        Completion completion =
            sample_raw(q, PromptKind::ConditionalExplanation, i,
                       {{"answer", std::string(1, label)}});
        Explanation e;
        e.text = extract_explanation(completion.text, ExplanationPosition::PreAnswer);
        e.conditioned_label = label;
        return e;
    };
    auto explanations = collect_in_order(static_cast<int>(labels.size()), worker);

    std::string block;
    for (const auto& e : explanations) {
        if (!block.empty()) block += '\n';
        block += '(';
        block += *e.conditioned_label;
        block += ") ";
        block += e.text;
    }

    CompletionRequest request;
    request.model = model_;
    request.messages = prompts_->render(
        PromptKind::TtaConfidence, q,
        {{"explanation", block}, {"k", std::to_string(labels.size())}});
    request.temperature = config_.temperature_answer;
    request.max_tokens = kVerbalMaxTokens;
    Completion completion = backend_->complete(request);

    auto parsed =
        parse_verbalized(completion.text, static_cast<int>(labels.size()), labels);

    ConfidenceResult result;
    result.distribution = spread_verbalized(parsed, labels);
    result.samples_used = static_cast<int>(labels.size());
    result.explanations = std::move(explanations);
    finalize(result);
    return result;
}

// ---------------------------------------------------------------------------
// Explanation study

char draw_wrong_label(const Question& q, std::uint64_t seed) {
    auto labels = q.labels();
    std::vector<char> wrong;
    for (char l : labels)
        if (l != q.gold) wrong.push_back(l);
    std::mt19937_64 rng(derive_seed(seed, fnv1a64(q.id)));
    auto index = static_cast<size_t>(rng() % wrong.size());
    return wrong[index];
}

StudyResult explanation_study(std::span<const Question> questions, Backend& backend,
                              const PromptLibrary& prompts, const std::string& model,
                              const MethodConfig& config, std::uint64_t seed) {
    Elicitor elicitor(backend, prompts, model, config);
    StudyResult result;

    for (const auto& q : questions) {
        q.validate();
        char wrong = draw_wrong_label(q, seed);
        for (char conditioned : {q.gold, wrong}) {
            try {
                Completion completion = elicitor.sample_raw(
                    q, PromptKind::ConditionalExplanation, 0,
                    {{"answer", std::string(1, conditioned)}}, /*want_logprobs=*/true);

                Explanation e;
                e.text =
                    extract_explanation(completion.text, ExplanationPosition::PreAnswer);
                e.conditioned_label = conditioned;
                std::vector<double> logprobs;
                for (const auto& t : completion.tokens) logprobs.push_back(t.logprob);
                e.token_logprobs = logprobs;

                StudyRow row;
                row.question_id = q.id;
                row.conditioned_correct = conditioned == q.gold;
                row.loglik = sequence_loglik(logprobs);
                row.entail_prob =
                    elicitor.score_plausibility(config.plausibility, q, e);
                result.rows.push_back(std::move(row));
            } catch (const Error&) {
                ++result.skipped;
            }
        }
    }
    return result;
}

}  // namespace stableconf
