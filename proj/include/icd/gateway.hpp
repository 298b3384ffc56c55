#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "icd/cost.hpp"

namespace icd::gateway {

using cost::CallRole;

class GatewayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Connection failures, timeouts, 429 and 5xx. Retried.
class TransportError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

/// Missing key, 401 or 403. Never retried.
class AuthError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

/// The provider declined the request; what() is the provider's text as sent.
class RefusalError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

struct ChatRequest {
    std::string system_text;
    std::string user_text;
    double temperature = 0.1;
    int max_output_tokens = 4096;
    int n_samples = 1;
    std::optional<std::uint64_t> seed;

    /// Throws GatewayError on a negative temperature or non-positive counts.
    void validate() const;
};

struct Usage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    bool operator==(const Usage&) const = default;
};

struct ChatResponse {
    std::vector<std::string> samples;
    /// One entry per sample. With native multi-sample the prompt is billed
    /// once, on the first sample.
    std::vector<Usage> usage;
    std::string model_id;

    Usage total() const;
    bool operator==(const ChatResponse&) const = default;
};

/// Whitespace-delimited token count.
std::int64_t count_tokens(std::string_view text);

/// Prefix of `text` ending after its max_tokens-th whitespace token.
std::string truncate_tokens(const std::string& text, int max_tokens);

/// Provider adapter. Implementations must be safe to call concurrently.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual ChatResponse complete(const ChatRequest& req) = 0;
    virtual bool native_multi_sample() const = 0;
    virtual std::string describe() const = 0;
};

/// Per-sample seed used by scripted backends: splitmix of (seed, index).
std::uint64_t sample_seed(std::optional<std::uint64_t> seed, int index);

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
};

/// Token bucket shared by every client of a run. rate <= 0 disables it.
class RateLimiter {
public:
    RateLimiter(double requests_per_second, double burst);
    void acquire();

private:
    double rate_;
    double burst_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mu_;
};

struct CallTag {
    std::string episode_id;
    cost::Phase phase = cost::Phase::act;
    int step = -1;
};

/// One configured model: backend plus role, pricing key and retry policy.
/// Logs one CallRecord per returned sample.
class ModelClient {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    ModelClient(std::string model_id, CallRole role, std::string pricing_key, std::shared_ptr<ModelBackend> backend,
                RetryPolicy retry = {}, std::shared_ptr<RateLimiter> limiter = nullptr);

    /// Truncates samples at max_output_tokens and records usage to `ledger`.
    /// Backends without native multi-sample get n single-sample calls.
    /// Throws the last TransportError after the retry budget is spent.
    ChatResponse complete(const ChatRequest& req, const CallTag& tag, cost::Ledger& ledger) const;

    const std::string& model_id() const { return model_id_; }
    const std::string& pricing_key() const { return pricing_key_; }
    CallRole role() const { return role_; }
    void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

private:
    ChatResponse call_with_retry(const ChatRequest& req) const;

    std::string model_id_;
    CallRole role_;
    std::string pricing_key_;
    std::shared_ptr<ModelBackend> backend_;
    RetryPolicy retry_;
    std::shared_ptr<RateLimiter> limiter_;
    Sleeper sleeper_;
};

// ------------------------------------------------------------ live

enum class Provider { openai, anthropic };

struct EndpointConfig {
    Provider provider = Provider::openai;
    /// Scheme, host and optional port, e.g. "https://api.openai.com".
    std::string base_url;
    /// Path of the chat endpoint; empty selects the provider default.
    std::string path;
    std::string model_name;
    /// Environment variable holding the API key.
    std::string api_key_env;
    int timeout_seconds = 120;
};

Provider provider_from_string(const std::string& s);
std::string to_string(Provider p);

/// Builds the provider request body for one call (n samples when native).
std::string build_request_body(const EndpointConfig& cfg, const ChatRequest& req);
/// Maps a provider response body to samples and usage. Throws RefusalError
/// when the provider declines and GatewayError on malformed bodies.
ChatResponse parse_response_body(const EndpointConfig& cfg, const std::string& body, int n_samples);

/// Chat-completion client over HTTP(S).
std::shared_ptr<ModelBackend> make_live_backend(const EndpointConfig& cfg);

// ------------------------------------------------------------ scripted

/// Wraps a function of (request, sample index, sample seed) -> text. Token
/// usage is counted with count_tokens.
class ScriptedBackend : public ModelBackend {
public:
    using Policy = std::function<std::string(const ChatRequest&, int index, std::uint64_t seed)>;
    ScriptedBackend(std::string name, Policy policy) : name_(std::move(name)), policy_(std::move(policy)) {}

    ChatResponse complete(const ChatRequest& req) override;
    bool native_multi_sample() const override { return true; }
    std::string describe() const override { return "scripted:" + name_; }

private:
    std::string name_;
    Policy policy_;
};

}  // namespace icd::gateway
