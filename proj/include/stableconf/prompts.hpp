#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stableconf/backend.hpp"
#include "stableconf/core.hpp"

namespace stableconf {

enum class PromptKind {
    StabilityExplain,
    StabilityAnswerGivenExplanation,
    Entailment,
    MostLikelyTf,
    CompleteDescriptionTf,
    TokenProb,
    Linguistic,
    Cot,
    TopK,
    ConditionalExplanation,
    TtaExplain,
    TtaConfidence,
};

const char* prompt_kind_name(PromptKind kind);

// Verbalized (label, confidence) pairs in order of appearance.
struct ParsedVerbalized {
    std::vector<std::pair<char, double>> answers;
};

// "(A) text" lines, one option per line.
std::string render_options(const Question& q);

// Prompt templates with {{question}}, {{options}}, {{explanation}},
// {{answer}} and {{k}} placeholders. Built-in texts can be overridden from a
// directory of <kind>.txt files so experiments pin exact wording.
class PromptLibrary {
public:
    PromptLibrary();  // built-in templates
    static PromptLibrary from_directory(const std::filesystem::path& dir);

    const std::string& template_text(const std::string& name) const;

    // Deterministic: same inputs give byte-identical messages. A placeholder
    // left unfilled is a template error.
    std::vector<Message> render(PromptKind kind, const Question& q,
                                const std::map<std::string, std::string>& extras = {},
                                ExplanationPosition position = ExplanationPosition::PreAnswer) const;

    static const std::vector<std::pair<std::string, std::string>>& builtin_templates();

private:
    std::map<std::string, std::string> templates_;
};

// First rule that fires wins: "answer is X" / "answer is (X)", then
// "Answer: X", then a parenthesized "(X)", then the last standalone label
// character. Case-insensitive; the letter must be one of `labels`.
char parse_answer_label(const std::string& text, const std::vector<char>& labels);

// Up to k (label, confidence) pairs in order of appearance. "85%" parses to
// 0.85, bare numbers above 1 are treated as percentages, results clamp to
// [0,1]. Zero pairs is a parse failure.
ParsedVerbalized parse_verbalized(const std::string& text, int k,
                                  const std::vector<char>& labels);

// Explanation text of a sampled response, with the answer line removed
// (trailing "Answer: X" for pre-answer prompts, leading for post-answer).
std::string extract_explanation(const std::string& sampled_text,
                                ExplanationPosition position);

}  // namespace stableconf
