#pragma once
// Engine configuration: a JSON document with flag overrides layered on top.
// Serialization is total in both directions so a persisted config snapshot
// reproduces the run. Credentials never appear here; the HTTP backend reads
// its key from the environment.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "echotrust/backends.hpp"
#include "echotrust/orchestrator.hpp"
#include "echotrust/protocol.hpp"

namespace echotrust {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& message) : std::runtime_error(message) {}
};

struct EngineConfig {
    PipelineConfig pipeline;
    BackendBinding actor;
    BackendBinding verifier;
    BackendBinding retry;
    StochasticBehavior stochastic;
    std::optional<std::filesystem::path> script_path;
    std::filesystem::path dataset;
    std::filesystem::path out = "out";
    int workers = 1;
    std::optional<std::size_t> limit;
    std::optional<std::filesystem::path> ids_file;
    std::uint64_t seed = 0;
    std::optional<std::string> run_id;
    int verbosity = 0;
};

namespace detail {

template <typename T>
void read_field(const json& doc, const char* key, T& out) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("bad value for config field: ") + key);
    }
}

template <typename T>
void read_optional(const json& doc, const char* key, std::optional<T>& out) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("bad value for config field: ") + key);
    }
}

inline void read_policy(const json& doc, PolicyConfig& policy) {
    read_field(doc, "tau_support", policy.tau_support);
    read_field(doc, "delta_accept", policy.delta_accept);
    read_field(doc, "tau_abstain_support", policy.tau_abstain_support);
    read_field(doc, "tau_abstain_conf", policy.tau_abstain_conf);
    read_field(doc, "honor_recommendation", policy.honor_recommendation);
    read_field(doc, "max_retries", policy.max_retries);
    if (!policy.valid()) throw ConfigError("policy thresholds out of range");
}

inline void read_binding(const json& doc, BackendBinding& binding) {
    if (auto it = doc.find("kind"); it != doc.end() && !it->is_null()) {
        auto kind = backend_kind_from_string(it->get<std::string>());
        if (!kind) throw ConfigError("unknown backend kind: " + it->get<std::string>());
        binding.kind = *kind;
    }
    read_optional(doc, "endpoint_url", binding.endpoint_url);
    read_optional(doc, "model_name", binding.model_name);
    read_optional(doc, "adapter_id", binding.adapter_id);
    read_field(doc, "temperature", binding.temperature);
    read_field(doc, "max_output_tokens", binding.max_output_tokens);
    read_field(doc, "timeout_ms", binding.timeout_ms);
    read_field(doc, "request_retries", binding.request_retries);
    read_field(doc, "prompt_template_id", binding.prompt_template_id);
    if (!binding.valid()) throw ConfigError("invalid backend binding");
}

inline void read_stochastic(const json& doc, StochasticBehavior& behavior) {
    read_field(doc, "actor_accuracy", behavior.actor_accuracy);
    read_field(doc, "verifier_error_detect", behavior.verifier_error_detect);
    read_field(doc, "verifier_false_alarm", behavior.verifier_false_alarm);
    read_field(doc, "retry_fix_rate", behavior.retry_fix_rate);
    read_field(doc, "retry_break_rate", behavior.retry_break_rate);
    if (!behavior.valid()) throw ConfigError("stochastic probabilities out of range");
}

}  // namespace detail

inline EngineConfig engine_config_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    EngineConfig config;

    if (auto it = doc.find("policy"); it != doc.end() && !it->is_null()) {
        detail::read_policy(*it, config.pipeline.policy);
    }
    if (auto it = doc.find("pipeline"); it != doc.end() && !it->is_null()) {
        detail::read_field(*it, "parse_reask_limit", config.pipeline.parse_reask_limit);
        if (auto mode = it->find("failure_mode"); mode != it->end() && !mode->is_null()) {
            auto parsed = failure_mode_from_string(mode->get<std::string>());
            if (!parsed) throw ConfigError("unknown failure_mode: " + mode->get<std::string>());
            config.pipeline.failure_mode = *parsed;
        }
        if (!config.pipeline.valid()) throw ConfigError("invalid pipeline settings");
    }
    if (auto it = doc.find("backend"); it != doc.end() && !it->is_null()) {
        detail::read_binding(*it, config.actor);
        config.verifier = config.actor;
        config.retry = config.actor;
    }
    if (auto it = doc.find("backends"); it != doc.end() && !it->is_null()) {
        if (auto role = it->find("actor"); role != it->end()) detail::read_binding(*role, config.actor);
        if (auto role = it->find("verifier"); role != it->end()) {
            detail::read_binding(*role, config.verifier);
        }
        if (auto role = it->find("retry"); role != it->end()) detail::read_binding(*role, config.retry);
    }
    if (auto it = doc.find("stochastic"); it != doc.end() && !it->is_null()) {
        detail::read_stochastic(*it, config.stochastic);
    }

    std::optional<std::string> script;
    detail::read_optional(doc, "script", script);
    if (script) config.script_path = *script;
    std::string dataset;
    detail::read_field(doc, "dataset", dataset);
    if (!dataset.empty()) config.dataset = dataset;
    std::string out;
    detail::read_field(doc, "out", out);
    if (!out.empty()) config.out = out;
    detail::read_field(doc, "workers", config.workers);
    detail::read_optional(doc, "limit", config.limit);
    std::optional<std::string> ids;
    detail::read_optional(doc, "ids", ids);
    if (ids) config.ids_file = *ids;
    detail::read_field(doc, "seed", config.seed);
    detail::read_optional(doc, "run_id", config.run_id);
    detail::read_field(doc, "verbosity", config.verbosity);

    if (config.workers < 1) throw ConfigError("workers must be >= 1");
    if (config.verbosity < 0) throw ConfigError("verbosity must be >= 0");
    return config;
}

inline json binding_to_json(const BackendBinding& binding) {
    auto opt = [](const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); };
    json doc;
    doc["kind"] = to_string(binding.kind);
    doc["endpoint_url"] = opt(binding.endpoint_url);
    doc["model_name"] = opt(binding.model_name);
    doc["adapter_id"] = opt(binding.adapter_id);
    doc["temperature"] = binding.temperature;
    doc["max_output_tokens"] = binding.max_output_tokens;
    doc["timeout_ms"] = binding.timeout_ms;
    doc["request_retries"] = binding.request_retries;
    doc["prompt_template_id"] = binding.prompt_template_id;
    return doc;
}

inline json engine_config_to_json(const EngineConfig& config) {
    json doc;
    doc["policy"] = {{"tau_support", config.pipeline.policy.tau_support},
                     {"delta_accept", config.pipeline.policy.delta_accept},
                     {"tau_abstain_support", config.pipeline.policy.tau_abstain_support},
                     {"tau_abstain_conf", config.pipeline.policy.tau_abstain_conf},
                     {"honor_recommendation", config.pipeline.policy.honor_recommendation},
                     {"max_retries", config.pipeline.policy.max_retries}};
    doc["pipeline"] = {{"parse_reask_limit", config.pipeline.parse_reask_limit},
                       {"failure_mode", to_string(config.pipeline.failure_mode)}};
    doc["backends"] = {{"actor", binding_to_json(config.actor)},
                       {"verifier", binding_to_json(config.verifier)},
                       {"retry", binding_to_json(config.retry)}};
    doc["stochastic"] = {{"actor_accuracy", config.stochastic.actor_accuracy},
                         {"verifier_error_detect", config.stochastic.verifier_error_detect},
                         {"verifier_false_alarm", config.stochastic.verifier_false_alarm},
                         {"retry_fix_rate", config.stochastic.retry_fix_rate},
                         {"retry_break_rate", config.stochastic.retry_break_rate}};
    doc["script"] = config.script_path ? json(config.script_path->string()) : json(nullptr);
    doc["dataset"] = config.dataset.string();
    doc["out"] = config.out.string();
    doc["workers"] = config.workers;
    doc["limit"] = config.limit ? json(*config.limit) : json(nullptr);
    doc["ids"] = config.ids_file ? json(config.ids_file->string()) : json(nullptr);
    doc["seed"] = config.seed;
    doc["run_id"] = config.run_id ? json(*config.run_id) : json(nullptr);
    doc["verbosity"] = config.verbosity;
    return doc;
}

inline EngineConfig load_engine_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    json doc = json::parse(buffer.str(), nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    return engine_config_from_json(doc);
}

// Script file format: {"<sample_id>": {"<role>": {"<attempt>": "reply", ...}}}
inline ScriptedBehavior load_script(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open script file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    json doc = json::parse(buffer.str(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw ConfigError("script file is not a JSON object: " + path.string());
    }
    ScriptedBehavior behavior;
    for (const auto& [sample_id, roles] : doc.items()) {
        if (!roles.is_object()) throw ConfigError("script roles must be objects");
        for (const auto& [role_name, attempts] : roles.items()) {
            Role role;
            if (role_name == "actor") {
                role = Role::actor;
            } else if (role_name == "verifier") {
                role = Role::verifier;
            } else if (role_name == "retry") {
                role = Role::retry;
            } else {
                throw ConfigError("unknown role in script: " + role_name);
            }
            if (!attempts.is_object()) throw ConfigError("script attempts must be objects");
            for (const auto& [attempt, text] : attempts.items()) {
                if (!text.is_string()) throw ConfigError("script replies must be strings");
                int attempt_no = 0;
                try {
                    attempt_no = std::stoi(attempt);
                } catch (const std::exception&) {
                    throw ConfigError("script attempt keys must be integers: " + attempt);
                }
                behavior.set(sample_id, role, attempt_no, text.get<std::string>());
            }
        }
    }
    return behavior;
}

inline json script_to_json(const ScriptedBehavior& behavior) {
    json doc = json::object();
    for (const auto& [key, text] : behavior.responses) {
        const auto first = key.find('\x1f');
        const auto second = key.find('\x1f', first + 1);
        const std::string sample_id = key.substr(0, first);
        const std::string role = key.substr(first + 1, second - first - 1);
        const std::string attempt = key.substr(second + 1);
        doc[sample_id][role][attempt] = text;
    }
    return doc;
}

}  // namespace echotrust
