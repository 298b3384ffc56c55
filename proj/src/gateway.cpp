#include "icd/gateway.hpp"

#include <cctype>
#include <thread>

namespace icd::gateway {

void ChatRequest::validate() const {
    if (!(temperature >= 0.0)) throw GatewayError("temperature must be >= 0");
    if (max_output_tokens < 1) throw GatewayError("max_output_tokens must be >= 1");
    if (n_samples < 1) throw GatewayError("n_samples must be >= 1");
}

Usage ChatResponse::total() const {
    Usage t;
    for (const auto& u : usage) {
        t.input_tokens += u.input_tokens;
        t.output_tokens += u.output_tokens;
    }
    return t;
}

std::int64_t count_tokens(std::string_view text) {
    std::int64_t n = 0;
    bool in_token = false;
    for (char c : text) {
        bool space = std::isspace(static_cast<unsigned char>(c));
        if (!space && !in_token) ++n;
        in_token = !space;
    }
    return n;
}

std::string truncate_tokens(const std::string& text, int max_tokens) {
    if (max_tokens <= 0) return {};
    int seen = 0;
    bool in_token = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        bool space = std::isspace(static_cast<unsigned char>(text[i]));
        if (in_token && space && seen == max_tokens) return text.substr(0, i);
        if (!space && !in_token) ++seen;
        in_token = !space;
    }
    return text;
}

std::uint64_t sample_seed(std::optional<std::uint64_t> seed, int index) {
    std::uint64_t z = seed.value_or(0) + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

RateLimiter::RateLimiter(double requests_per_second, double burst)
    : rate_(requests_per_second), burst_(burst < 1 ? 1 : burst), tokens_(burst_), last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
    if (rate_ <= 0) return;
    for (;;) {
        std::chrono::duration<double> wait{};
        {
            std::lock_guard lock(mu_);
            auto now = std::chrono::steady_clock::now();
            tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
            last_ = now;
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
        }
        std::this_thread::sleep_for(wait);
    }
}

ModelClient::ModelClient(std::string model_id, CallRole role, std::string pricing_key,
                         std::shared_ptr<ModelBackend> backend, RetryPolicy retry, std::shared_ptr<RateLimiter> limiter)
    : model_id_(std::move(model_id)),
      role_(role),
      pricing_key_(std::move(pricing_key)),
      backend_(std::move(backend)),
      retry_(retry),
      limiter_(std::move(limiter)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    if (!backend_) throw GatewayError("model " + model_id_ + " has no backend");
    if (retry_.attempts < 1) throw GatewayError("retry attempts must be >= 1");
}

ChatResponse ModelClient::call_with_retry(const ChatRequest& req) const {
    auto backoff = retry_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        if (limiter_) limiter_->acquire();
        try {
            return backend_->complete(req);
        } catch (const TransportError& e) {
            if (attempt >= retry_.attempts)
                throw TransportError(model_id_ + ": " + e.what() + " (after " + std::to_string(attempt) +
                                     " attempts)");
            sleeper_(backoff);
            backoff = std::chrono::milliseconds(static_cast<std::int64_t>(backoff.count() * retry_.multiplier));
        }
    }
}

ChatResponse ModelClient::complete(const ChatRequest& req, const CallTag& tag, cost::Ledger& ledger) const {
    req.validate();
    ChatResponse resp;
    if (backend_->native_multi_sample() || req.n_samples == 1) {
        resp = call_with_retry(req);
    } else {
        // independent calls, each billed for the full prompt
        for (int i = 0; i < req.n_samples; ++i) {
            ChatRequest one = req;
            one.n_samples = 1;
            if (req.seed) one.seed = sample_seed(req.seed, i);
            auto r = call_with_retry(one);
            resp.samples.insert(resp.samples.end(), r.samples.begin(), r.samples.end());
            resp.usage.insert(resp.usage.end(), r.usage.begin(), r.usage.end());
        }
    }
    if (resp.samples.size() != static_cast<std::size_t>(req.n_samples) || resp.usage.size() != resp.samples.size())
        throw GatewayError(model_id_ + ": expected " + std::to_string(req.n_samples) + " samples, got " +
                           std::to_string(resp.samples.size()));
    for (auto& s : resp.samples) s = truncate_tokens(s, req.max_output_tokens);
    resp.model_id = model_id_;
    for (const auto& u : resp.usage) {
        cost::CallRecord r;
        r.episode_id = tag.episode_id;
        r.phase = tag.phase;
        r.step = tag.step;
        r.model_id = pricing_key_;
        r.role = role_;
        r.input_tokens = u.input_tokens;
        r.output_tokens = u.output_tokens;
        ledger.record(std::move(r));
    }
    return resp;
}

ChatResponse ScriptedBackend::complete(const ChatRequest& req) {
    ChatResponse resp;
    const std::int64_t prompt = count_tokens(req.system_text) + count_tokens(req.user_text);
    for (int i = 0; i < req.n_samples; ++i) {
        auto text = truncate_tokens(policy_(req, i, sample_seed(req.seed, i)), req.max_output_tokens);
        resp.usage.push_back({i == 0 ? prompt : 0, count_tokens(text)});
        resp.samples.push_back(std::move(text));
    }
    resp.model_id = name_;
    return resp;
}

}  // namespace icd::gateway
