#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
// <resolv.h> (pulled in by httplib) defines `_res`, which clashes with
// parameter names in Eigen.
#ifdef _res
#undef _res
#endif
#include <spdlog/spdlog.h>

#include "utd/error.hpp"
#include "utd/hashing.hpp"
#include "utd/json_io.hpp"
#include "utd/prompts.hpp"

namespace utd {

/// Connection and policy settings for one inference endpoint.
struct EndpointConfig {
    std::string kind = "http";  // "http" or "stub"
    std::string base_url = "http://localhost:8000/v1";
    std::string api_key;
    std::string model;
    double timeout_s = 120.0;
    int max_retries = 5;  // total attempts per request
    int max_in_flight = 4;
    double temperature = 0.0;
    int backoff_ms = 500;  // first retry delay, doubled per attempt
    std::string api = "chat";  // chat | completions (text LLM only)
    int max_tokens = 512;
    int batch_size = 32;  // embedding inputs per request
    std::optional<std::string> stub_response;
    std::size_t stub_dim = 256;

    void check() const {
        if (kind != "http" && kind != "stub")
            fail(ErrorKind::Schema, "endpoint kind must be http or stub", kind);
        if (max_in_flight < 1)
            fail(ErrorKind::Schema, "max_in_flight must be >= 1");
        if (max_retries < 1)
            fail(ErrorKind::Schema, "max_retries must be >= 1");
        if (temperature != 0.0)
            fail(ErrorKind::Schema, "pipeline calls run at temperature 0");
        if (api != "chat" && api != "completions")
            fail(ErrorKind::Schema, "api must be chat or completions", api);
        if (batch_size < 1 || stub_dim < 1)
            fail(ErrorKind::Schema, "batch_size and stub_dim must be positive");
    }

    /// Applies `UTD_BASE_URL` / `UTD_API_KEY`, then overrides from a config
    /// section `{base_url, model, timeout_s, max_retries, max_in_flight, ...}`.
    static EndpointConfig from_json(const json& section, std::string default_model) {
        EndpointConfig cfg;
        cfg.model = std::move(default_model);
        if (const char* url = std::getenv("UTD_BASE_URL"); url && *url)
            cfg.base_url = url;
        if (const char* key = std::getenv("UTD_API_KEY"); key && *key)
            cfg.api_key = key;
        if (!section.is_object())
            return cfg;
        cfg.kind = section.value("kind", cfg.kind);
        cfg.base_url = section.value("base_url", cfg.base_url);
        cfg.model = section.value("model", cfg.model);
        cfg.timeout_s = section.value("timeout_s", cfg.timeout_s);
        cfg.max_retries = section.value("max_retries", cfg.max_retries);
        cfg.max_in_flight = section.value("max_in_flight", cfg.max_in_flight);
        cfg.temperature = section.value("temperature", cfg.temperature);
        cfg.backoff_ms = section.value("backoff_ms", cfg.backoff_ms);
        cfg.api = section.value("api", cfg.api);
        cfg.max_tokens = section.value("max_tokens", cfg.max_tokens);
        cfg.batch_size = section.value("batch_size", cfg.batch_size);
        cfg.stub_dim = section.value("stub_dim", cfg.stub_dim);
        if (section.contains("stub_response"))
            cfg.stub_response = section.at("stub_response").get<std::string>();
        if (section.contains("api_key_env")) {
            auto var = section.at("api_key_env").get<std::string>();
            if (const char* key = std::getenv(var.c_str()))
                cfg.api_key = key;
        }
        cfg.check();
        return cfg;
    }

    /// Non-secret fields, for provenance records.
    json describe() const {
        return json{{"kind", kind}, {"base_url", kind == "stub" ? "" : base_url}, {"model", model},
                    {"api", api}, {"temperature", temperature}};
    }
};

/// Failure reaching an endpoint. `retryable` is false for client errors
/// that a retry cannot fix.
class TransportError : public Error {
public:
    TransportError(std::string message, bool retryable)
        : Error(ErrorKind::Endpoint, std::move(message)), retryable_(retryable) {}
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

/// POSTs a JSON body to a route relative to the endpoint base URL.
class Transport {
public:
    virtual ~Transport() = default;
    virtual json post(const std::string& route, const json& body) = 0;
};

class HttpTransport final : public Transport {
public:
    explicit HttpTransport(EndpointConfig cfg) : cfg_(std::move(cfg)) {
        auto scheme = cfg_.base_url.find("://");
        auto path_start = cfg_.base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        origin_ = cfg_.base_url.substr(0, path_start);
        if (path_start != std::string::npos)
            prefix_ = cfg_.base_url.substr(path_start);
        while (!prefix_.empty() && prefix_.back() == '/')
            prefix_.pop_back();
    }

    json post(const std::string& route, const json& body) override {
        httplib::Client client(origin_);
        auto secs = static_cast<time_t>(cfg_.timeout_s);
        client.set_connection_timeout(secs, 0);
        client.set_read_timeout(secs, 0);
        client.set_write_timeout(secs, 0);
        if (!cfg_.api_key.empty())
            client.set_bearer_token_auth(cfg_.api_key);
        auto res = client.Post(prefix_ + route, body.dump(), "application/json");
        if (!res)
            throw TransportError("request to " + origin_ + prefix_ + route + " failed: " +
                                     httplib::to_string(res.error()),
                                 true);
        if (res->status != 200) {
            bool retryable = res->status == 408 || res->status == 429 || res->status >= 500;
            throw TransportError("HTTP " + std::to_string(res->status) + " from " + route + ": " +
                                     res->body.substr(0, 200),
                                 retryable);
        }
        try {
            return json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw TransportError(std::string("unparseable response body: ") + e.what(), true);
        }
    }

private:
    EndpointConfig cfg_;
    std::string origin_;
    std::string prefix_;
};

/// Deterministic bag-of-words embedding used by the stub endpoint. Inputs in
/// "Instruct: ...\nQuery: ..." form weight instruction tokens at 0.1 so
/// instruction variants differ slightly while the query text dominates.
/// Tokens are lowercase ASCII alphanumeric runs hashed with FNV-1a into
/// `dim` signed buckets. Not normalized.
inline std::vector<float> stub_embedding(std::string_view input, std::size_t dim) {
    std::vector<double> acc(dim, 0.0);
    auto add_tokens = [&](std::string_view text, double weight) {
        std::string token;
        auto flush = [&] {
            if (token.empty())
                return;
            auto h = fnv1a64(token);
            acc[h % dim] += ((h >> 40) & 1U) ? -weight : weight;
            token.clear();
        };
        for (char ch : text) {
            auto c = static_cast<unsigned char>(ch);
            if (std::isalnum(c))
                token.push_back(static_cast<char>(std::tolower(c)));
            else
                flush();
        }
        flush();
    };
    constexpr std::string_view instruct = "Instruct: ", query = "\nQuery: ";
    auto q = input.find(query);
    if (input.rfind(instruct, 0) == 0 && q != std::string_view::npos) {
        add_tokens(input.substr(instruct.size(), q - instruct.size()), 0.1);
        add_tokens(input.substr(q + query.size()), 1.0);
    } else {
        add_tokens(input, 1.0);
    }
    return std::vector<float>(acc.begin(), acc.end());
}

/// In-process endpoint: chat routes echo (or return a fixed response),
/// embedding routes return `stub_embedding`. Counts requests.
class StubTransport final : public Transport {
public:
    explicit StubTransport(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

    json post(const std::string& route, const json& body) override {
        ++calls_;
        if (route == "/embeddings") {
            json data = json::array();
            const auto& input = body.at("input");
            for (std::size_t i = 0; i < input.size(); ++i)
                data.push_back({{"index", i},
                                {"embedding", stub_embedding(input[i].get<std::string>(), cfg_.stub_dim)}});
            return json{{"data", std::move(data)}, {"model", cfg_.model}};
        }
        if (route == "/chat/completions") {
            std::string reply = cfg_.stub_response.value_or(last_user_text(body.at("messages")));
            return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}}};
        }
        if (route == "/completions") {
            std::string reply = cfg_.stub_response.value_or(body.at("prompt").get<std::string>());
            return json{{"choices", {{{"text", reply}}}}};
        }
        throw TransportError("stub has no route " + route, false);
    }

    std::size_t calls() const { return calls_.load(); }

private:
    static std::string last_user_text(const json& messages) {
        for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
            if (it->value("role", "") != "user")
                continue;
            const auto& content = it->at("content");
            if (content.is_string())
                return content.get<std::string>();
            for (const auto& part : content)
                if (part.value("type", "") == "text")
                    return part.value("text", "");
        }
        return {};
    }

    EndpointConfig cfg_;
    std::atomic<std::size_t> calls_{0};
};

/// Adapter for tests: routes every request through a callable.
class FunctionTransport final : public Transport {
public:
    using Handler = std::function<json(const std::string&, const json&)>;
    explicit FunctionTransport(Handler h) : handler_(std::move(h)) {}
    json post(const std::string& route, const json& body) override {
        ++calls_;
        return handler_(route, body);
    }
    std::size_t calls() const { return calls_.load(); }

private:
    Handler handler_;
    std::atomic<std::size_t> calls_{0};
};

inline std::shared_ptr<Transport> make_transport(const EndpointConfig& cfg) {
    if (cfg.kind == "stub")
        return std::make_shared<StubTransport>(cfg);
    return std::make_shared<HttpTransport>(cfg);
}

/// Sends with exponential backoff: waits backoff_ms, 2*backoff_ms, ...
/// between attempts; gives up after `max_retries` attempts.
inline json post_with_retry(Transport& transport, const EndpointConfig& cfg, const std::string& route,
                            const json& body) {
    std::string last;
    for (int attempt = 1; attempt <= cfg.max_retries; ++attempt) {
        try {
            return transport.post(route, body);
        } catch (const TransportError& e) {
            last = e.what();
            if (!e.retryable())
                break;
            if (attempt < cfg.max_retries) {
                auto delay = std::chrono::milliseconds(
                    static_cast<long long>(cfg.backoff_ms) * (1LL << std::min(attempt - 1, 20)));
                spdlog::warn("endpoint attempt {}/{} failed ({}); retrying in {} ms", attempt,
                             cfg.max_retries, last, delay.count());
                std::this_thread::sleep_for(delay);
            }
        }
    }
    fail(ErrorKind::Endpoint, "giving up after retries: " + last, cfg.model);
}

class ChatClient {
public:
    ChatClient(EndpointConfig cfg, std::shared_ptr<Transport> transport)
        : cfg_(std::move(cfg)), transport_(std::move(transport)) {}

    const EndpointConfig& config() const { return cfg_; }

    std::string chat(const std::vector<ChatTurn>& turns) {
        json messages = json::array();
        for (const auto& t : turns)
            messages.push_back({{"role", t.role}, {"content", t.content}});
        return chat_messages(std::move(messages));
    }

    std::string chat_with_image(std::string_view prompt, std::string_view mime, std::string_view image) {
        json content = json::array();
        content.push_back({{"type", "text"}, {"text", prompt}});
        content.push_back({{"type", "image_url"},
                           {"image_url",
                            {{"url", "data:" + std::string(mime) + ";base64," + base64_encode(image)}}}});
        return chat_messages(json::array({{{"role", "user"}, {"content", std::move(content)}}}));
    }

    std::string complete(std::string_view prompt) {
        json body{{"model", cfg_.model}, {"prompt", prompt}, {"temperature", cfg_.temperature},
                  {"max_tokens", cfg_.max_tokens}};
        auto res = post_with_retry(*transport_, cfg_, "/completions", body);
        try {
            return res.at("choices").at(0).at("text").get<std::string>();
        } catch (const json::exception& e) {
            fail(ErrorKind::Endpoint, std::string("malformed completions response: ") + e.what());
        }
    }

private:
    std::string chat_messages(json messages) {
        json body{{"model", cfg_.model}, {"messages", std::move(messages)},
                  {"temperature", cfg_.temperature}, {"max_tokens", cfg_.max_tokens}};
        auto res = post_with_retry(*transport_, cfg_, "/chat/completions", body);
        try {
            return res.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            fail(ErrorKind::Endpoint, std::string("malformed chat response: ") + e.what());
        }
    }

    EndpointConfig cfg_;
    std::shared_ptr<Transport> transport_;
};

/// Raw embeddings endpoint: one request per call, vectors returned in input
/// order.
class EmbeddingClient {
public:
    EmbeddingClient(EndpointConfig cfg, std::shared_ptr<Transport> transport)
        : cfg_(std::move(cfg)), transport_(std::move(transport)) {}

    const EndpointConfig& config() const { return cfg_; }

    std::vector<std::vector<float>> embed(const std::vector<std::string>& inputs) {
        json body{{"model", cfg_.model}, {"input", inputs}};
        auto res = post_with_retry(*transport_, cfg_, "/embeddings", body);
        std::vector<std::vector<float>> out(inputs.size());
        std::vector<bool> seen(inputs.size(), false);
        try {
            const auto& data = res.at("data");
            for (std::size_t i = 0; i < data.size(); ++i) {
                std::size_t idx = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
                if (idx >= inputs.size() || seen[idx])
                    fail(ErrorKind::Endpoint, "embedding response index out of range or repeated");
                seen[idx] = true;
                out[idx] = data[i].at("embedding").get<std::vector<float>>();
            }
        } catch (const json::exception& e) {
            fail(ErrorKind::Endpoint, std::string("malformed embeddings response: ") + e.what());
        }
        if (std::find(seen.begin(), seen.end(), false) != seen.end())
            fail(ErrorKind::Endpoint, "embedding response is missing inputs");
        return out;
    }

private:
    EndpointConfig cfg_;
    std::shared_ptr<Transport> transport_;
};

} // namespace utd
