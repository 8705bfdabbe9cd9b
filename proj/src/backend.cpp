#include "stableconf/backend.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace stableconf {

using nlohmann::json;

void CompletionRequest::validate() const {
    if (top_logprobs < 0 || top_logprobs > 20)
        throw Error(ErrorKind::InvalidInput, "top_logprobs must be in [0,20]");
    if (sample_index < 0)
        throw Error(ErrorKind::InvalidInput, "sample_index must be >= 0");
    if (temperature < 0.0)
        throw Error(ErrorKind::InvalidInput, "temperature must be >= 0");
}

// ---------------------------------------------------------------------------
// Serialization

static json request_to_json(const CompletionRequest& r) {
    json messages = json::array();
    for (const auto& m : r.messages)
        messages.push_back(json{{"content", m.content}, {"role", m.role}});
    return json{
        {"max_tokens", r.max_tokens},
        {"messages", std::move(messages)},
        {"model", r.model},
        {"sample_index", r.sample_index},
        {"temperature", r.temperature},
        {"top_logprobs", r.top_logprobs},
        {"want_logprobs", r.want_logprobs},
    };
}

static json completion_to_json(const Completion& c) {
    json tokens = json::array();
    for (const auto& t : c.tokens) {
        json alts = json::array();
        for (const auto& a : t.alternatives)
            alts.push_back(json{{"token", a.token}, {"logprob", a.logprob}});
        tokens.push_back(json{
            {"token", t.token}, {"logprob", t.logprob}, {"top", std::move(alts)}});
    }
    return json{{"text", c.text}, {"tokens", std::move(tokens)}};
}

static Completion completion_from_json(const json& j) {
    Completion c;
    c.text = j.at("text").get<std::string>();
    if (j.contains("tokens")) {
        for (const auto& jt : j.at("tokens")) {
            TokenInfo t;
            t.token = jt.at("token").get<std::string>();
            t.logprob = jt.value("logprob", 0.0);
            if (jt.contains("top")) {
                for (const auto& ja : jt.at("top"))
                    t.alternatives.push_back(
                        {ja.at("token").get<std::string>(), ja.at("logprob").get<double>()});
            }
            std::stable_sort(t.alternatives.begin(), t.alternatives.end(),
                             [](const TokenAlt& a, const TokenAlt& b) {
                                 return a.logprob > b.logprob;
                             });
            c.tokens.push_back(std::move(t));
        }
    }
    return c;
}

std::string canonical_request_json(const CompletionRequest& request) {
    // nlohmann::json keeps object keys sorted and emits shortest round-trip
    // float text, which is exactly the canonical form the cache key needs.
    return request_to_json(request).dump();
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error(ErrorKind::Io, "SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string request_cache_key(const CompletionRequest& request) {
    return sha256_hex(canonical_request_json(request));
}

// ---------------------------------------------------------------------------
// Label extraction

static std::string strip_token(const std::string& token) {
    std::string out;
    for (char c : token) {
        auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc) || std::ispunct(uc)) continue;
        out.push_back(c);
    }
    return out;
}

std::map<char, double> label_logprobs(const Completion& completion,
                                      size_t position,
                                      const std::vector<char>& labels) {
    if (labels.empty()) throw Error(ErrorKind::InvalidInput, "empty label set");
    if (position >= completion.tokens.size() ||
        completion.tokens[position].alternatives.empty())
        throw Error(ErrorKind::MissingLogprobs,
                    "no alternatives recorded at position " + std::to_string(position));

    const auto& alts = completion.tokens[position].alternatives;
    double min_observed = std::numeric_limits<double>::infinity();
    std::map<char, double> found;
    for (const auto& alt : alts) {
        min_observed = std::min(min_observed, alt.logprob);
        std::string stripped = strip_token(alt.token);
        if (stripped.size() != 1) continue;
        char label = static_cast<char>(std::toupper(static_cast<unsigned char>(stripped[0])));
        // Alternatives are sorted descending, so the first hit is the max.
        if (!found.count(label)) found[label] = alt.logprob;
    }

    std::map<char, double> out;
    for (char label : labels) {
        auto it = found.find(label);
        out[label] = it != found.end() ? it->second : min_observed - 2.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpBackend::Config HttpBackend::config_from_env() {
    Config cfg;
    if (const char* url = std::getenv("CONF_BASE_URL")) cfg.base_url = url;
    if (const char* key = std::getenv("CONF_API_KEY")) cfg.api_key = key;
    return cfg;
}

HttpBackend::HttpBackend(Config config)
    : config_(std::move(config)),
      inflight_(std::max(1, config_.max_inflight)) {
    if (config_.base_url.empty())
        throw Error(ErrorKind::Startup, "no base URL configured (set CONF_BASE_URL)");

    // Split scheme://host[:port][/prefix] into origin and path prefix.
    auto scheme_end = config_.base_url.find("://");
    size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    auto path_start = config_.base_url.find('/', host_start);
    if (path_start == std::string::npos) {
        origin_ = config_.base_url;
        path_prefix_.clear();
    } else {
        origin_ = config_.base_url.substr(0, path_start);
        path_prefix_ = config_.base_url.substr(path_start);
        while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
}

namespace {
// Internal marker for failures worth another attempt (429/5xx, connect).
struct TransientFailure {
    std::string message;
};
}  // namespace

static bool retryable_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

Completion HttpBackend::post_once(const CompletionRequest& request) {
    json body = {
        {"model", request.model},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens},
    };
    json messages = json::array();
    for (const auto& m : request.messages)
        messages.push_back(json{{"role", m.role}, {"content", m.content}});
    body["messages"] = std::move(messages);
    if (request.want_logprobs) {
        body["logprobs"] = true;
        body["top_logprobs"] = request.top_logprobs;
    }

    httplib::Client client(origin_);
    client.set_connection_timeout(std::chrono::milliseconds(
        static_cast<int>(config_.timeout_s * 1000)));
    client.set_read_timeout(std::chrono::milliseconds(
        static_cast<int>(config_.timeout_s * 1000)));
    client.set_default_headers({
        {"Authorization", "Bearer " + config_.api_key},
    });

    auto res = client.Post(path_prefix_ + "/chat/completions", body.dump(),
                           "application/json");
    if (!res)
        throw TransientFailure{"connection to " + origin_ +
                               " failed: " + httplib::to_string(res.error())};
    if (res->status == 401 || res->status == 403)
        throw Error(ErrorKind::Credential, "backend rejected credentials (HTTP " +
                                               std::to_string(res->status) + ")");
    if (res->status != 200) {
        std::string detail =
            "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 400);
        if (retryable_status(res->status)) throw TransientFailure{detail};
        throw Error(ErrorKind::Transport, detail);
    }

    json parsed = json::parse(res->body);
    const auto& choice = parsed.at("choices").at(0);
    Completion out;
    out.text = choice.at("message").at("content").get<std::string>();
    if (choice.contains("logprobs") && !choice.at("logprobs").is_null() &&
        choice.at("logprobs").contains("content")) {
        for (const auto& jt : choice.at("logprobs").at("content")) {
            TokenInfo t;
            t.token = jt.at("token").get<std::string>();
            t.logprob = jt.at("logprob").get<double>();
            if (jt.contains("top_logprobs")) {
                for (const auto& ja : jt.at("top_logprobs"))
                    t.alternatives.push_back(
                        {ja.at("token").get<std::string>(), ja.at("logprob").get<double>()});
            }
            std::stable_sort(t.alternatives.begin(), t.alternatives.end(),
                             [](const TokenAlt& a, const TokenAlt& b) {
                                 return a.logprob > b.logprob;
                             });
            if (t.alternatives.size() > static_cast<size_t>(request.top_logprobs))
                t.alternatives.resize(request.top_logprobs);
            out.tokens.push_back(std::move(t));
        }
    }
    return out;
}

Completion HttpBackend::complete(const CompletionRequest& request) {
    request.validate();
    inflight_.acquire();
    struct Release {
        std::counting_semaphore<1024>* s;
        ~Release() { s->release(); }
    } release{&inflight_};

    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
    std::string last_error;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
        try {
            return post_once(request);
        } catch (const TransientFailure& failure) {
            last_error = failure.message;
        }
        if (attempt == config_.retry.max_attempts) break;
        double delay = config_.retry.base_delay_s *
                       std::pow(config_.retry.multiplier, attempt - 1);
        if (config_.retry.full_jitter) {
            std::uniform_real_distribution<double> u(0.0, delay);
            delay = u(jitter_rng);
        }
        std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    throw Error(ErrorKind::Transport,
                "retry budget exhausted (" + std::to_string(config_.retry.max_attempts) +
                    " attempts); last: " + last_error);
}

// ---------------------------------------------------------------------------
// Mock backend

MockBackend MockBackend::from_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Startup, "cannot open fixture file " + path);

    MockBackend mock;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::Startup, "fixture line " + std::to_string(lineno) +
                                                ": " + e.what());
        }
        Rule rule;
        rule.contains = j.at("match").at("contains").get<std::string>();
        rule.response = completion_from_json(j.at("response"));
        mock.rules_.push_back(std::move(rule));
    }
    return mock;
}

void MockBackend::add_rule(std::string contains, Completion response) {
    rules_.push_back({std::move(contains), std::move(response)});
}

Completion MockBackend::complete(const CompletionRequest& request) {
    request.validate();
    std::string haystack;
    for (const auto& m : request.messages) {
        haystack += m.content;
        haystack += '\n';
    }
    for (const auto& rule : rules_) {
        if (haystack.find(rule.contains) != std::string::npos) return rule.response;
    }
    throw Error(ErrorKind::FixtureMiss,
                "no fixture entry matches request (first 120 chars: " +
                    haystack.substr(0, 120) + ")");
}

// ---------------------------------------------------------------------------
// Disk cache

DiskCache::DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create cache dir " + dir_.string());
}

std::optional<Completion> DiskCache::get(const std::string& key) const {
    std::shared_lock lock(mutex_);
    auto path = dir_ / (key + ".json");
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        json entry = json::parse(in);
        return completion_from_json(entry.at("completion"));
    } catch (const json::exception&) {
        return std::nullopt;  // treat a corrupt entry as a miss
    }
}

void DiskCache::put(const std::string& key, const CompletionRequest& request,
                    const Completion& completion) {
    auto now = std::chrono::system_clock::now();
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch());
    json entry = {
        {"key", key},
        {"request", request_to_json(request)},
        {"completion", completion_to_json(completion)},
        {"created_at", secs.count()},
    };

    std::unique_lock lock(mutex_);
    auto path = dir_ / (key + ".json");
    auto tmp = dir_ / (key + ".tmp");
    {
        std::ofstream out(tmp);
        if (!out) throw Error(ErrorKind::Io, "cannot write cache entry " + path.string());
        out << entry.dump();
    }
    std::filesystem::rename(tmp, path);
}

Completion CachedBackend::complete(const CompletionRequest& request) {
    auto key = request_cache_key(request);
    if (auto hit = cache_->get(key)) return *hit;
    Completion fresh = inner_->complete(request);
    cache_->put(key, request, fresh);
    return fresh;
}

Completion CacheOnlyBackend::complete(const CompletionRequest& request) {
    auto key = request_cache_key(request);
    if (auto hit = cache_->get(key)) return *hit;
    throw Error(ErrorKind::CacheMiss,
                "request " + key.substr(0, 12) + "... (sample_index " +
                    std::to_string(request.sample_index) +
                    ") is not cached; rerun score with enough samples first");
}

}  // namespace stableconf
