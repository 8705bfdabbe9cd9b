#include "stableconf/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

namespace stableconf {

const char* prompt_kind_name(PromptKind kind) {
    switch (kind) {
        case PromptKind::StabilityExplain: return "stability_explain";
        case PromptKind::StabilityAnswerGivenExplanation:
            return "stability_answer_given_explanation";
        case PromptKind::Entailment: return "entailment";
        case PromptKind::MostLikelyTf: return "most_likely_tf";
        case PromptKind::CompleteDescriptionTf: return "complete_description_tf";
        case PromptKind::TokenProb: return "token_prob";
        case PromptKind::Linguistic: return "linguistic";
        case PromptKind::Cot: return "cot";
        case PromptKind::TopK: return "topk";
        case PromptKind::ConditionalExplanation: return "conditional_explanation";
        case PromptKind::TtaExplain: return "tta_explain";
        case PromptKind::TtaConfidence: return "tta_confidence";
    }
    return "unknown";
}

std::string render_options(const Question& q) {
    std::string out;
    for (size_t i = 0; i < q.options.size(); ++i) {
        if (i > 0) out += '\n';
        out += '(';
        out += q.options[i].label;
        out += ") ";
        out += q.options[i].text;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Templates

const std::vector<std::pair<std::string, std::string>>& PromptLibrary::builtin_templates() {
    static const std::vector<std::pair<std::string, std::string>> kTemplates = {
        {"token_prob",
         "Answer the following multiple choice question.\n"
         "\n"
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Respond with the single letter of the correct option.\n"
         "\n"
         "Answer:"},

        {"stability_explain",
         "Answer the following multiple choice question by first writing a short "
         "explanation of your reasoning and then giving your final answer.\n"
         "\n"
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Respond in exactly this format:\n"
         "Explanation: <your reasoning>\n"
         "Answer: <letter of the correct option>\n"
         "\n"
         "Explanation:"},

        {"stability_explain_post",
         "Answer the following multiple choice question by first giving your final "
         "answer and then writing a short explanation of your reasoning.\n"
         "\n"
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Respond in exactly this format:\n"
         "Answer: <letter of the correct option>\n"
         "Explanation: <your reasoning>\n"
         "\n"
         "Answer:"},

        {"stability_answer_given_explanation",
         "Answer the following multiple choice question using the provided "
         "explanation.\n"
         "\n"
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Explanation: {{explanation}}\n"
         "\n"
         "Respond with the single letter of the correct option.\n"
         "\n"
         "Answer:"},

        {"entailment",
         "Consider the following question as a premise and an explanation as a "
         "hypothesis.\n"
         "\n"
         "Premise: {{question}}\n"
         "{{options}}\n"
         "\n"
         "Hypothesis: {{explanation}}\n"
         "\n"
         "Does the premise logically entail the hypothesis? Respond with exactly "
         "one word, True or False.\n"
         "\n"
         "Answer:"},

        {"most_likely_tf",
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Explanation: {{explanation}}\n"
         "\n"
         "Is this the most likely explanation for the question? Respond with "
         "exactly one word, True or False.\n"
         "\n"
         "Answer:"},

        {"complete_description_tf",
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Explanation: {{explanation}}\n"
         "\n"
         "Does the explanation completely describe the question? Respond with "
         "exactly one word, True or False.\n"
         "\n"
         "Answer:"},

        {"linguistic",
         "Answer the following multiple choice question and state how confident "
         "you are that your answer is correct, as a percentage.\n"
         "\n"
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Respond in exactly this format:\n"
         "Answer: <letter of the correct option>, Confidence: <number>%"},

        {"cot",
         "Answer the following multiple choice question. Think step by step and "
         "explain your reasoning briefly before committing to a final answer.\n"
         "\n"
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "End your response with a final line in exactly this format:\n"
         "Answer: <letter of the correct option>"},

        {"topk",
         "Provide your {{k}} best guesses for the following multiple choice "
         "question, together with the probability that each guess is correct as a "
         "percentage. Give your highest-probability guess first.\n"
         "\n"
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Respond in exactly this format, one guess per line:\n"
         "G1: <letter of the option>, P1: <number>%\n"
         "G2: <letter of the option>, P2: <number>%"},

        {"conditional_explanation",
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "The correct answer is ({{answer}}). Explain step by step why "
         "({{answer}}) is the correct answer to the question. Give only the "
         "explanation, without restating the answer.\n"
         "\n"
         "Explanation:"},

        {"tta_explain",
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Assume the answer to this question is ({{answer}}). Briefly explain why "
         "({{answer}}) would be the correct choice.\n"
         "\n"
         "Explanation:"},

        {"tta_confidence",
         "You previously wrote one candidate explanation for each option of the "
         "following multiple choice question.\n"
         "\n"
         "Question: {{question}}\n"
         "Options:\n"
         "{{options}}\n"
         "\n"
         "Candidate explanations:\n"
         "{{explanation}}\n"
         "\n"
         "Weighing these candidate explanations against each other, provide your "
         "{{k}} best guesses for the correct answer, together with the probability "
         "that each guess is correct as a percentage. Give your "
         "highest-probability guess first.\n"
         "\n"
         "Respond in exactly this format, one guess per line:\n"
         "G1: <letter of the option>, P1: <number>%\n"
         "G2: <letter of the option>, P2: <number>%"},
    };
    return kTemplates;
}

PromptLibrary::PromptLibrary() {
    for (const auto& [name, text] : builtin_templates()) templates_[name] = text;
}

PromptLibrary PromptLibrary::from_directory(const std::filesystem::path& dir) {
    PromptLibrary lib;
    for (auto& [name, text] : lib.templates_) {
        auto path = dir / (name + ".txt");
        std::ifstream in(path);
        if (!in) continue;  // keep the built-in text for kinds without a file
        std::ostringstream buf;
        buf << in.rdbuf();
        std::string loaded = buf.str();
        // Trailing newline from text editors is not part of the template.
        while (!loaded.empty() && (loaded.back() == '\n' || loaded.back() == '\r'))
            loaded.pop_back();
        text = loaded;
    }
    return lib;
}

const std::string& PromptLibrary::template_text(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end())
        throw Error(ErrorKind::Template, "no template named '" + name + "'");
    return it->second;
}

std::vector<Message> PromptLibrary::render(
    PromptKind kind, const Question& q,
    const std::map<std::string, std::string>& extras,
    ExplanationPosition position) const {
    std::string name = prompt_kind_name(kind);
    if (kind == PromptKind::StabilityExplain &&
        position == ExplanationPosition::PostAnswer)
        name = "stability_explain_post";

    std::map<std::string, std::string> values = extras;
    values["question"] = q.stem;
    values["options"] = render_options(q);

    const std::string& tpl = template_text(name);
    std::string out;
    out.reserve(tpl.size() + 256);
    size_t pos = 0;
    while (pos < tpl.size()) {
        auto open = tpl.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tpl, pos, std::string::npos);
            break;
        }
        out.append(tpl, pos, open - pos);
        auto close = tpl.find("}}", open + 2);
        if (close == std::string::npos)
            throw Error(ErrorKind::Template, "unterminated placeholder in '" + name + "'");
        std::string key = tpl.substr(open + 2, close - open - 2);
        auto it = values.find(key);
        if (it == values.end())
            throw Error(ErrorKind::Template,
                        "template '" + name + "' needs extra '" + key + "'");
        out += it->second;
        pos = close + 2;
    }

    return {Message{"user", std::move(out)}};
}

// ---------------------------------------------------------------------------
// Parsing

static bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

static char to_upper(char c) {
    return static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
}

static bool label_in(char label, const std::vector<char>& labels) {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
}

char parse_answer_label(const std::string& text, const std::vector<char>& labels) {
    if (text.empty()) throw Error(ErrorKind::ParseFailure, "empty response text");

    // Rules 1 and 2: explicit answer statements; first valid occurrence wins.
    static const std::regex kAnswerIs(
        R"(answer\s+is\b\s*:?\s*\(?([A-Za-z])\)?(?![A-Za-z0-9]))",
        std::regex::icase);
    static const std::regex kAnswerColon(
        R"(answer\s*:\s*\(?([A-Za-z])\)?(?![A-Za-z0-9]))", std::regex::icase);
    for (const auto* rule : {&kAnswerIs, &kAnswerColon}) {
        for (auto it = std::sregex_iterator(text.begin(), text.end(), *rule);
             it != std::sregex_iterator(); ++it) {
            char label = to_upper((*it)[1].str()[0]);
            if (label_in(label, labels)) return label;
        }
    }

    // Rule 3: parenthesized label; the last one wins since answers close text.
    static const std::regex kParen(R"(\(([A-Za-z])\))");
    char found = 0;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), kParen);
         it != std::sregex_iterator(); ++it) {
        char label = to_upper((*it)[1].str()[0]);
        if (label_in(label, labels)) found = label;
    }
    if (found) return found;

    // Rule 4: last standalone label character.
    for (size_t i = text.size(); i-- > 0;) {
        if (!std::isalpha(static_cast<unsigned char>(text[i]))) continue;
        bool left_ok = i == 0 || !is_word_char(text[i - 1]);
        bool right_ok = i + 1 >= text.size() || !is_word_char(text[i + 1]);
        if (!left_ok || !right_ok) continue;
        char label = to_upper(text[i]);
        if (label_in(label, labels)) return label;
    }

    throw Error(ErrorKind::ParseFailure,
                "no answer label found in: " + text.substr(0, 160));
}

ParsedVerbalized parse_verbalized(const std::string& text, int k,
                                  const std::vector<char>& labels) {
    if (k < 1) throw Error(ErrorKind::InvalidInput, "k must be >= 1");

    // Standalone label positions, in order of appearance.
    std::vector<std::pair<size_t, char>> label_hits;
    for (size_t i = 0; i < text.size(); ++i) {
        if (!std::isalpha(static_cast<unsigned char>(text[i]))) continue;
        bool left_ok = i == 0 || !is_word_char(text[i - 1]);
        bool right_ok = i + 1 >= text.size() || !is_word_char(text[i + 1]);
        if (!left_ok || !right_ok) continue;
        char label = to_upper(text[i]);
        if (label_in(label, labels)) label_hits.emplace_back(i, label);
    }

    static const std::regex kNumber(R"((\d+(?:\.\d+)?)\s*(%?))");

    ParsedVerbalized parsed;
    std::vector<char> seen;
    for (size_t h = 0; h < label_hits.size(); ++h) {
        if (static_cast<int>(parsed.answers.size()) >= k) break;
        auto [pos, label] = label_hits[h];
        if (label_in(label, seen)) continue;
        size_t limit = h + 1 < label_hits.size() ? label_hits[h + 1].first : text.size();

        // First free-standing number after the label; digits glued to a word
        // ("P1", "G2") are counters, not confidences.
        auto begin = text.begin() + static_cast<long>(pos) + 1;
        std::optional<double> value;
        for (auto it = std::sregex_iterator(begin, text.end(), kNumber);
             it != std::sregex_iterator(); ++it) {
            size_t number_pos = pos + 1 + static_cast<size_t>(it->position(0));
            if (number_pos > 0 && is_word_char(text[number_pos - 1])) continue;
            if (number_pos >= limit) break;  // belongs to the next pair
            double v = std::stod((*it)[1].str());
            bool percent = (*it)[2].length() > 0;
            if (percent || v > 1.0) v /= 100.0;
            value = std::clamp(v, 0.0, 1.0);
            break;
        }
        if (!value) continue;

        parsed.answers.emplace_back(label, *value);
        seen.push_back(label);
    }

    if (parsed.answers.empty())
        throw Error(ErrorKind::ParseFailure,
                    "no (label, confidence) pairs in: " + text.substr(0, 160));
    return parsed;
}

std::string extract_explanation(const std::string& sampled_text,
                                ExplanationPosition position) {
    static const std::regex kAnswerLine(R"(answer\s*:)", std::regex::icase);
    static const std::regex kExplanationLine(R"(explanation\s*:)", std::regex::icase);

    auto trim = [](std::string s) {
        auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)); };
        while (!s.empty() && is_space(s.front())) s.erase(s.begin());
        while (!s.empty() && is_space(s.back())) s.pop_back();
        return s;
    };

    std::string text = sampled_text;
    if (position == ExplanationPosition::PreAnswer) {
        // Drop everything from the last "Answer:" marker on.
        size_t cut = std::string::npos;
        for (auto it = std::sregex_iterator(text.begin(), text.end(), kAnswerLine);
             it != std::sregex_iterator(); ++it)
            cut = static_cast<size_t>(it->position(0));
        if (cut != std::string::npos) text = text.substr(0, cut);
        // Strip an echoed "Explanation:" prefix.
        std::smatch lead;
        if (std::regex_search(text, lead, kExplanationLine) && lead.position(0) == 0)
            text = text.substr(static_cast<size_t>(lead.position(0) + lead.length(0)));
    } else {
        // Keep everything after the first "Explanation:" marker; if the model
        // skipped the marker, drop the leading answer line instead.
        std::smatch m;
        if (std::regex_search(text, m, kExplanationLine)) {
            text = text.substr(static_cast<size_t>(m.position(0) + m.length(0)));
        } else if (std::regex_search(text, m, kAnswerLine)) {
            auto newline = text.find('\n', static_cast<size_t>(m.position(0)));
            text = newline == std::string::npos ? "" : text.substr(newline + 1);
        }
    }
    return trim(text);
}

}  // namespace stableconf
