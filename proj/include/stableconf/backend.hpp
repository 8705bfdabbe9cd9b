#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "stableconf/core.hpp"

namespace stableconf {

struct Message {
    std::string role;  // system | user | assistant
    std::string content;
};

struct CompletionRequest {
    std::string model;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 256;
    bool want_logprobs = false;
    int top_logprobs = 20;  // in [0,20]
    int sample_index = 0;   // distinguishes repeated draws of one prompt

    void validate() const;
};

struct TokenAlt {
    std::string token;
    double logprob = 0.0;
};

struct TokenInfo {
    std::string token;
    double logprob = 0.0;
    std::vector<TokenAlt> alternatives;  // sorted by logprob descending
};

struct Completion {
    std::string text;
    std::vector<TokenInfo> tokens;
};

// Canonical serialization: compact JSON, keys sorted, shortest round-trip
// float text. The cache key is the SHA-256 hex digest of this string.
std::string canonical_request_json(const CompletionRequest& request);
std::string request_cache_key(const CompletionRequest& request);
std::string sha256_hex(std::string_view data);

class Backend {
public:
    virtual ~Backend() = default;
    virtual Completion complete(const CompletionRequest& request) = 0;
};

// For each label, the logprob of the alternative at `position` whose token,
// stripped of whitespace and punctuation, equals the label. Labels absent
// from the alternatives get (min observed logprob at the position) - 2.0.
std::map<char, double> label_logprobs(const Completion& completion,
                                      size_t position,
                                      const std::vector<char>& labels);

struct RetryPolicy {
    int max_attempts = 5;
    double base_delay_s = 1.0;
    double multiplier = 2.0;
    bool full_jitter = true;
};

// OpenAI-compatible chat-completions client.
class HttpBackend : public Backend {
public:
    struct Config {
        std::string base_url;  // e.g. https://api.openai.com/v1
        std::string api_key;
        int max_inflight = 4;
        double timeout_s = 120.0;
        RetryPolicy retry;
    };

    // Reads CONF_BASE_URL and CONF_API_KEY.
    static Config config_from_env();

    explicit HttpBackend(Config config);
    Completion complete(const CompletionRequest& request) override;

private:
    Completion post_once(const CompletionRequest& request);

    Config config_;
    std::string origin_;       // scheme://host[:port]
    std::string path_prefix_;  // e.g. /v1
    std::counting_semaphore<1024> inflight_;
};

// Deterministic scripted backend. Rules are checked in order; the first rule
// whose `contains` substring appears in the concatenated message contents
// wins. No match raises a fixture-miss error.
class MockBackend : public Backend {
public:
    struct Rule {
        std::string contains;
        Completion response;
    };

    MockBackend() = default;
    static MockBackend from_jsonl(const std::string& path);

    void add_rule(std::string contains, Completion response);
    Completion complete(const CompletionRequest& request) override;

private:
    std::vector<Rule> rules_;
};

// One file per entry ({key}.json) under a directory. Writes are serialized,
// reads may run concurrently.
class DiskCache {
public:
    explicit DiskCache(std::filesystem::path dir);

    std::optional<Completion> get(const std::string& key) const;
    void put(const std::string& key, const CompletionRequest& request,
             const Completion& completion);

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::shared_mutex mutex_;
};

// Serves from the cache and forwards misses to the inner backend.
class CachedBackend : public Backend {
public:
    CachedBackend(Backend& inner, DiskCache& cache) : inner_(&inner), cache_(&cache) {}
    Completion complete(const CompletionRequest& request) override;

private:
    Backend* inner_;
    DiskCache* cache_;
};

// Replays from the cache only; a miss is an error. Used by sample-size sweeps
// to guarantee zero new backend interactions.
class CacheOnlyBackend : public Backend {
public:
    explicit CacheOnlyBackend(DiskCache& cache) : cache_(&cache) {}
    Completion complete(const CompletionRequest& request) override;

private:
    DiskCache* cache_;
};

// Counts calls that reach the wrapped backend.
class CountingBackend : public Backend {
public:
    explicit CountingBackend(Backend& inner) : inner_(&inner) {}
    Completion complete(const CompletionRequest& request) override {
        calls_.fetch_add(1, std::memory_order_relaxed);
        return inner_->complete(request);
    }
    std::uint64_t calls() const { return calls_.load(std::memory_order_relaxed); }
    void reset() { calls_.store(0, std::memory_order_relaxed); }

private:
    Backend* inner_;
    std::atomic<std::uint64_t> calls_{0};
};

}  // namespace stableconf
