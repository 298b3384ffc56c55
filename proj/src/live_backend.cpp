// HTTP adapters for chat-completion providers. The only TU including httplib.
#include <cstdlib>

#include "httplib.h"
#include "icd/gateway.hpp"
#include "icd/live_embedder.hpp"
#include "json.hpp"

namespace icd::gateway {

using nlohmann::json;

Provider provider_from_string(const std::string& s) {
    if (s == "openai") return Provider::openai;
    if (s == "anthropic") return Provider::anthropic;
    throw GatewayError("unknown provider profile '" + s + "' (expected openai or anthropic)");
}

std::string to_string(Provider p) { return p == Provider::openai ? "openai" : "anthropic"; }

namespace {

std::string default_path(Provider p) { return p == Provider::openai ? "/v1/chat/completions" : "/v1/messages"; }

std::string api_key(const EndpointConfig& cfg) {
    if (cfg.api_key_env.empty()) throw AuthError("no api_key_env configured for " + cfg.model_name);
    const char* v = std::getenv(cfg.api_key_env.c_str());
    if (!v || !*v) throw AuthError("environment variable " + cfg.api_key_env + " is not set");
    return v;
}

/// Status handling shared by chat and embedding calls.
void check_status(const httplib::Result& res) {
    if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
    const int s = res->status;
    if (s == 401 || s == 403) throw AuthError("HTTP " + std::to_string(s) + ": " + res->body);
    if (s == 408 || s == 429 || s >= 500) throw TransportError("HTTP " + std::to_string(s) + ": " + res->body);
    if (s < 200 || s >= 300) throw GatewayError("HTTP " + std::to_string(s) + ": " + res->body);
}

httplib::Result post_json(const EndpointConfig& cfg, const std::string& path, const httplib::Headers& headers,
                          const std::string& body) {
    httplib::Client cli(cfg.base_url);
    cli.set_connection_timeout(cfg.timeout_seconds, 0);
    cli.set_read_timeout(cfg.timeout_seconds, 0);
    cli.set_write_timeout(cfg.timeout_seconds, 0);
    return cli.Post(path, headers, body, "application/json");
}

class LiveBackend : public ModelBackend {
public:
    explicit LiveBackend(EndpointConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.path.empty()) cfg_.path = default_path(cfg_.provider);
    }

    ChatResponse complete(const ChatRequest& req) override {
        httplib::Headers headers;
        if (cfg_.provider == Provider::openai) {
            headers.emplace("Authorization", "Bearer " + api_key(cfg_));
        } else {
            headers.emplace("x-api-key", api_key(cfg_));
            headers.emplace("anthropic-version", "2023-06-01");
        }
        auto res = post_json(cfg_, cfg_.path, headers, build_request_body(cfg_, req));
        check_status(res);
        return parse_response_body(cfg_, res->body, req.n_samples);
    }

    bool native_multi_sample() const override { return cfg_.provider == Provider::openai; }
    std::string describe() const override { return to_string(cfg_.provider) + ":" + cfg_.model_name; }

private:
    EndpointConfig cfg_;
};

}  // namespace

std::string build_request_body(const EndpointConfig& cfg, const ChatRequest& req) {
    json body;
    body["model"] = cfg.model_name;
    body["temperature"] = req.temperature;
    body["max_tokens"] = req.max_output_tokens;
    if (cfg.provider == Provider::openai) {
        body["messages"] = json::array({{{"role", "system"}, {"content", req.system_text}},
                                        {{"role", "user"}, {"content", req.user_text}}});
        body["n"] = req.n_samples;
        if (req.seed) body["seed"] = *req.seed & 0x7FFFFFFFFFFFFFFFULL;
    } else {
        body["system"] = req.system_text;
        body["messages"] = json::array({{{"role", "user"}, {"content", req.user_text}}});
    }
    return body.dump();
}

ChatResponse parse_response_body(const EndpointConfig& cfg, const std::string& body, int n_samples) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw GatewayError(std::string("malformed provider response: ") + e.what());
    }
    ChatResponse out;
    out.model_id = cfg.model_name;
    try {
        if (cfg.provider == Provider::openai) {
            const auto& choices = j.at("choices");
            for (const auto& c : choices) {
                const auto& m = c.at("message");
                if (m.contains("refusal") && m["refusal"].is_string()) throw RefusalError(m["refusal"].get<std::string>());
                out.samples.push_back(m.at("content").is_string() ? m["content"].get<std::string>() : "");
            }
            const auto& u = j.at("usage");
            const std::int64_t in = u.at("prompt_tokens").get<std::int64_t>();
            const std::int64_t total_out = u.at("completion_tokens").get<std::int64_t>();
            // per-choice output counts are not reported; split evenly, remainder on the first
            const auto n = static_cast<std::int64_t>(out.samples.size());
            for (std::int64_t i = 0; i < n; ++i)
                out.usage.push_back({i == 0 ? in : 0, total_out / n + (i == 0 ? total_out % n : 0)});
        } else {
            std::string text;
            for (const auto& block : j.at("content"))
                if (block.value("type", "") == "text") text += block.at("text").get<std::string>();
            if (j.value("stop_reason", "") == "refusal") throw RefusalError(text);
            out.samples.push_back(text);
            const auto& u = j.at("usage");
            out.usage.push_back({u.at("input_tokens").get<std::int64_t>(), u.at("output_tokens").get<std::int64_t>()});
        }
    } catch (const json::exception& e) {
        throw GatewayError(std::string("unexpected provider response shape: ") + e.what());
    }
    if (static_cast<int>(out.samples.size()) != n_samples)
        throw GatewayError("provider returned " + std::to_string(out.samples.size()) + " samples, expected " +
                           std::to_string(n_samples));
    return out;
}

std::shared_ptr<ModelBackend> make_live_backend(const EndpointConfig& cfg) {
    if (cfg.base_url.empty()) throw GatewayError("live endpoint needs a base_url");
    if (cfg.model_name.empty()) throw GatewayError("live endpoint needs a model name");
    return std::make_shared<LiveBackend>(cfg);
}

}  // namespace icd::gateway

namespace icd::retrieval {

HttpEmbedder::HttpEmbedder(gateway::EndpointConfig cfg, int dimension) : cfg_(std::move(cfg)), dim_(dimension) {
    if (cfg_.path.empty()) cfg_.path = "/v1/embeddings";
    if (dim_ < 1) throw RetrievalError("embedding dimension must be >= 1");
}

std::string HttpEmbedder::id() const { return "http:" + cfg_.model_name + "-" + std::to_string(dim_); }

Embedding HttpEmbedder::embed(const std::string& text) const {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        Embedding e(static_cast<std::size_t>(dim_), 0.0);
        e[0] = 1.0;
        return e;
    }
    nlohmann::json body{{"model", cfg_.model_name}, {"input", text}};
    httplib::Headers headers{{"Authorization", "Bearer " + gateway::api_key(cfg_)}};
    auto res = gateway::post_json(cfg_, cfg_.path, headers, body.dump());
    gateway::check_status(res);
    Embedding v;
    try {
        v = nlohmann::json::parse(res->body).at("data").at(0).at("embedding").get<Embedding>();
    } catch (const nlohmann::json::exception& e) {
        throw RetrievalError(std::string("unexpected embedding response: ") + e.what());
    }
    if (static_cast<int>(v.size()) != dim_)
        throw RetrievalError("embedding service returned dimension " + std::to_string(v.size()) + ", expected " +
                             std::to_string(dim_));
    normalize(v);
    return v;
}

}  // namespace icd::retrieval
