#pragma once
// OpenAI-compatible chat-completions backend. One POST per invocation;
// transport-level failures (connect, timeout) are retried with exponential
// backoff up to the binding's request_retries, bad statuses surface
// immediately, and parse-level problems are never retried here; re-asking is
// the orchestrator's job.

#include <chrono>
#include <cstdlib>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>

#include <httplib.h>

#include "echotrust/backends.hpp"

namespace echotrust {

inline constexpr const char* kApiKeyEnvVar = "ECHOTRUST_API_KEY";

class HttpBackend : public Backend {
public:
    explicit HttpBackend(BackendBinding binding, int max_inflight = 8)
        : binding_(std::move(binding)), inflight_(max_inflight) {
        if (binding_.kind != BackendKind::http || !binding_.valid()) {
            throw BackendError(BackendError::Kind::bad_binding,
                               "http backend requires kind=http with endpoint_url and model_name");
        }
        split_endpoint(*binding_.endpoint_url, base_url_, path_prefix_);
    }

    std::string id() const override {
        std::string id = "http:" + *binding_.model_name;
        if (binding_.adapter_id) id += "+" + *binding_.adapter_id;
        return id;
    }

    std::string invoke(Role role, const EvaluationSample& sample, const std::string& context,
                       int) const override {
        const auto messages = build_role_prompt(binding_.prompt_template_id, role, sample, context);
        const std::string body = request_body(messages).dump();

        std::counting_semaphore<>& gate = inflight_;
        gate.acquire();
        struct Release {
            std::counting_semaphore<>& gate;
            ~Release() { gate.release(); }
        } release{gate};

        int backoff_ms = 100;
        for (int attempt = 0;; ++attempt) {
            try {
                return post_once(body);
            } catch (const BackendError& e) {
                const bool retryable = e.kind == BackendError::Kind::timeout ||
                                       e.kind == BackendError::Kind::transport;
                if (!retryable || attempt >= binding_.request_retries) throw;
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
                backoff_ms = std::min(backoff_ms * 2, 2000);
            }
        }
    }

    // Cheap reachability probe used by the CLI before starting a run.
    bool reachable() const {
        httplib::Client client(base_url_);
        client.set_connection_timeout(0, 500 * 1000);
        auto res = client.Get(path_prefix_.empty() ? "/" : (path_prefix_ + "/").c_str());
        return res != nullptr;
    }

private:
    static void split_endpoint(const std::string& url, std::string& base, std::string& prefix) {
        std::size_t scheme = url.find("://");
        std::size_t path = scheme == std::string::npos ? url.find('/') : url.find('/', scheme + 3);
        if (path == std::string::npos) {
            base = url;
            prefix.clear();
        } else {
            base = url.substr(0, path);
            prefix = url.substr(path);
            while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
        }
    }

    json request_body(const std::vector<RoleMessage>& messages) const {
        json body;
        // LoRA-style role adapters are addressed through the model field when
        // present; the server resolves them against its shared backbone.
        body["model"] = binding_.adapter_id ? *binding_.adapter_id : *binding_.model_name;
        json out_messages = json::array();
        for (const auto& message : messages) {
            json m;
            m["role"] = message.role == RoleMessage::Kind::system ? "system" : "user";
            if (message.media.empty()) {
                m["content"] = message.text;
            } else {
                json parts = json::array();
                parts.push_back({{"type", "text"}, {"text", message.text}});
                for (const auto& media : message.media) {
                    if (media.frame_hints && !media.frame_hints->empty()) {
                        for (int frame : *media.frame_hints) {
                            parts.push_back(
                                {{"type", "image_url"},
                                 {"image_url", {{"url", media.uri + "#frame=" + std::to_string(frame)}}}});
                        }
                    } else {
                        parts.push_back({{"type", "image_url"}, {"image_url", {{"url", media.uri}}}});
                    }
                }
                m["content"] = std::move(parts);
            }
            out_messages.push_back(std::move(m));
        }
        body["messages"] = std::move(out_messages);
        body["temperature"] = binding_.temperature;
        body["max_tokens"] = binding_.max_output_tokens;
        return body;
    }

    std::string post_once(const std::string& body) const {
        httplib::Client client(base_url_);
        const time_t timeout_s = binding_.timeout_ms / 1000;
        const time_t timeout_us = (binding_.timeout_ms % 1000) * 1000;
        client.set_connection_timeout(timeout_s, timeout_us);
        client.set_read_timeout(timeout_s, timeout_us);
        client.set_write_timeout(timeout_s, timeout_us);
        httplib::Headers headers;
        if (const char* key = std::getenv(kApiKeyEnvVar); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        auto res = client.Post((path_prefix_ + "/chat/completions").c_str(), headers, body,
                               "application/json");
        if (!res) {
            const auto err = res.error();
            if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                err == httplib::Error::Write) {
                throw BackendError(BackendError::Kind::timeout,
                                   "request timed out: " + httplib::to_string(err));
            }
            throw BackendError(BackendError::Kind::transport,
                               "transport error: " + httplib::to_string(err));
        }
        if (res->status < 200 || res->status >= 300) {
            throw BackendError(BackendError::Kind::bad_status,
                               "server returned status " + std::to_string(res->status), res->status);
        }
        json parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("choices") || !parsed["choices"].is_array() ||
            parsed["choices"].empty() || !parsed["choices"][0].contains("message") ||
            !parsed["choices"][0]["message"].contains("content") ||
            !parsed["choices"][0]["message"]["content"].is_string()) {
            throw BackendError(BackendError::Kind::transport,
                               "malformed chat-completions response body");
        }
        return parsed["choices"][0]["message"]["content"].get<std::string>();
    }

    BackendBinding binding_;
    std::string base_url_;
    std::string path_prefix_;
    mutable std::counting_semaphore<> inflight_;
};

inline std::shared_ptr<const Backend> make_http_backend(const BackendBinding& binding,
                                                        int max_inflight = 8) {
    return std::make_shared<HttpBackend>(binding, max_inflight);
}

}  // namespace echotrust
