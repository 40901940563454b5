#pragma once
// Uniform invocation layer for role models. A backend turns (role, sample,
// conditioning context) into raw completion text; everything downstream of
// that text is the protocol module's problem.
//
// Two in-process kinds live here: scripted (replay a fixed map of responses)
// and stochastic (synthesize responses from configured outcome probabilities,
// deterministically in the seed). The HTTP kind lives in http_backend.hpp to
// keep the heavy client header out of ordinary translation units.

#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "echotrust/protocol.hpp"
#include "echotrust/rng.hpp"
#include "echotrust/types.hpp"

namespace echotrust {

// ---------------------------------------------------------------------------
// Bindings and errors

enum class BackendKind { http, scripted, stochastic };

inline const char* to_string(BackendKind k) {
    switch (k) {
        case BackendKind::http: return "http";
        case BackendKind::scripted: return "scripted";
        case BackendKind::stochastic: return "stochastic";
    }
    return "?";
}

inline std::optional<BackendKind> backend_kind_from_string(const std::string& s) {
    if (s == "http") return BackendKind::http;
    if (s == "scripted") return BackendKind::scripted;
    if (s == "stochastic") return BackendKind::stochastic;
    return std::nullopt;
}

// One role's model identity and request parameters. The adapter_id names the
// role-specific fine-tuned adapter on the serving side; the engine treats it
// as an opaque routing key.
struct BackendBinding {
    BackendKind kind = BackendKind::stochastic;
    std::optional<std::string> endpoint_url;
    std::optional<std::string> model_name;
    std::optional<std::string> adapter_id;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    int timeout_ms = 30000;
    int request_retries = 2;
    std::string prompt_template_id = "default";

    bool valid() const {
        if (temperature < 0.0 || max_output_tokens <= 0 || timeout_ms <= 0 || request_retries < 0)
            return false;
        if (kind == BackendKind::http && (!endpoint_url || !model_name)) return false;
        return true;
    }
};

class BackendError : public std::runtime_error {
public:
    enum class Kind { timeout, transport, bad_status, script_missing, unknown_template, bad_binding };

    BackendError(Kind kind, std::string message, int status = 0)
        : std::runtime_error(std::move(message)), kind(kind), status(status) {}

    Kind kind;
    int status;  // HTTP status for Kind::bad_status
};

class Backend {
public:
    virtual ~Backend() = default;

    // Identity string recorded in audit trails.
    virtual std::string id() const = 0;

    // `attempt` is the per-(sample, role) invocation index within one pipeline
    // run; re-asks and the second verification pass keep counting up. Must be
    // safe for concurrent use.
    virtual std::string invoke(Role role, const EvaluationSample& sample,
                               const std::string& context, int attempt) const = 0;
};

// ---------------------------------------------------------------------------
// Prompt templates

namespace detail {

inline constexpr const char* kActorDocSchema =
    R"({"answer": "<label>", "confidence": <0..1>, "abstain_suggested": <bool>, "evidence": [{"item_id": "<id>", "description": "<text>", "structure_tag": "<text|null>", "temporal_ref": "<text|null>", "polarity": "supports|contradicts|neutral", "strength": <0..1>}], "visibility": {"view_compatibility": "compatible|incompatible|unknown", "observed_view": "<text|null>", "structure_visibility": {"<structure>": "visible|partial|not_visible|unknown"}}, "rationale": "<text|null>"})";

inline constexpr const char* kVerifierDocSchema =
    R"({"verdict": "supported|insufficient|contradicted", "support_score": <0..1>, "assessments": [{"item_id": "<id>", "judgment": "confirmed|weak|contradicted|unverifiable", "note": "<text|null>"}], "missing_support": ["<text>"], "inconsistencies": ["<text>"], "recommendation": "keep|retry|abstain"})";

inline std::string media_line(const MediaRef& media) {
    std::string line = "Media: " + media.uri;
    if (media.frame_hints && !media.frame_hints->empty()) {
        line += " [frames";
        for (std::size_t i = 0; i < media.frame_hints->size(); ++i) {
            line += (i == 0 ? " " : ",") + std::to_string((*media.frame_hints)[i]);
        }
        line += "]";
    }
    return line;
}

inline std::string question_block(const EvaluationSample& sample) {
    std::string out = "Question: " + sample.question + "\nOptions:\n";
    for (const auto& option : sample.options) {
        out += option.label + ". " + option.text + "\n";
    }
    out += media_line(sample.media);
    return out;
}

}  // namespace detail

// Deterministic message list for one role invocation. The context block (the
// rendered prior states, plus any corrective re-ask instruction) is appended
// to the user message when non-empty.
inline std::vector<RoleMessage> build_role_prompt(const std::string& template_id, Role role,
                                                  const EvaluationSample& sample,
                                                  const std::string& context) {
    if (template_id != "default") {
        throw BackendError(BackendError::Kind::unknown_template,
                           "unknown prompt template '" + template_id + "'");
    }
    std::string system_text;
    switch (role) {
        case Role::actor:
            system_text =
                "You answer multiple-choice questions about echocardiography videos. "
                "Ground your answer in observations from the referenced video: report the "
                "evidence items you relied on, per-structure visibility, and whether the view "
                "can answer the question at all. If the evidence is insufficient, set "
                "abstain_suggested to true. Respond with exactly one JSON object matching:\n" +
                std::string(detail::kActorDocSchema);
            break;
        case Role::verifier:
            system_text =
                "You audit the answer given under PRIOR_ANSWER_STATE. Do not answer the "
                "question yourself: judge whether the recorded evidence substantiates the "
                "answer, and report missing support, inconsistencies, and conflicts with the "
                "video. Respond with exactly one JSON object matching:\n" +
                std::string(detail::kVerifierDocSchema);
            break;
        case Role::retry:
            system_text =
                "Re-answer the question. Your earlier answer is under PRIOR_ANSWER_STATE and "
                "the auditor's critique under VERIFIER_FEEDBACK; address every gap it raises. "
                "Keep the earlier answer when it still holds. Respond with exactly one JSON "
                "object matching:\n" +
                std::string(detail::kActorDocSchema);
            break;
    }
    std::string user_text = detail::question_block(sample);
    if (!context.empty()) {
        user_text += "\n\n" + context;
    }
    RoleMessage system_msg{RoleMessage::Kind::system, std::move(system_text), {}};
    RoleMessage user_msg{RoleMessage::Kind::user, std::move(user_text), {sample.media}};
    return {std::move(system_msg), std::move(user_msg)};
}

// ---------------------------------------------------------------------------
// Scripted backend

// Fully specified replay map: every (sample, role, attempt) a run will request
// must be present, anything else is an error by design.
struct ScriptedBehavior {
    std::map<std::string, std::string> responses;

    static std::string key(const std::string& sample_id, Role role, int attempt) {
        return sample_id + "\x1f" + to_string(role) + "\x1f" + std::to_string(attempt);
    }

    void set(const std::string& sample_id, Role role, int attempt, std::string text) {
        responses[key(sample_id, role, attempt)] = std::move(text);
    }

    const std::string* find(const std::string& sample_id, Role role, int attempt) const {
        auto it = responses.find(key(sample_id, role, attempt));
        return it == responses.end() ? nullptr : &it->second;
    }
};

class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(ScriptedBehavior behavior) : behavior_(std::move(behavior)) {}

    std::string id() const override { return "scripted"; }

    std::string invoke(Role role, const EvaluationSample& sample, const std::string&,
                       int attempt) const override {
        const std::string* text = behavior_.find(sample.sample_id, role, attempt);
        if (!text) {
            throw BackendError(BackendError::Kind::script_missing,
                               "no scripted response for (" + sample.sample_id + ", " +
                                   to_string(role) + ", attempt " + std::to_string(attempt) + ")");
        }
        return *text;
    }

private:
    ScriptedBehavior behavior_;
};

// ---------------------------------------------------------------------------
// Stochastic backend

// Outcome probabilities for simulated runs. Generation is a deterministic
// function of (seed, sample_id, role, attempt); gold answers must be present
// on every sample, since the simulated verifier needs the ground truth to
// decide whether to flag.
struct StochasticBehavior {
    std::uint64_t seed = 0;
    double actor_accuracy = 0.8;        // P(actor emits the gold label)
    double verifier_error_detect = 0.8; // P(flag | audited answer wrong)
    double verifier_false_alarm = 0.1;  // P(flag | audited answer correct)
    double retry_fix_rate = 0.6;        // P(retry lands on gold | actor was wrong)
    double retry_break_rate = 0.1;      // P(retry leaves gold | actor was right)

    bool valid() const {
        return in_unit_range(actor_accuracy) && in_unit_range(verifier_error_detect) &&
               in_unit_range(verifier_false_alarm) && in_unit_range(retry_fix_rate) &&
               in_unit_range(retry_break_rate);
    }
};

// Synthesized documents use fixed values so tests can rely on them: answers
// come with confidence 0.8 over one supporting evidence item; supporting
// verifications are supported/0.8/keep, flagging ones insufficient/0.2/retry.
// A wrong answer is drawn uniformly among the non-gold options.
class StochasticBackend : public Backend {
public:
    explicit StochasticBackend(StochasticBehavior behavior) : behavior_(behavior) {}

    std::string id() const override {
        return "stochastic(seed=" + std::to_string(behavior_.seed) + ")";
    }

    std::string invoke(Role role, const EvaluationSample& sample, const std::string& context,
                       int attempt) const override {
        if (!sample.gold_answer) {
            throw BackendError(BackendError::Kind::bad_binding,
                               "stochastic backend needs gold answers (sample '" +
                                   sample.sample_id + "' has none)");
        }
        auto rng = detail::rng_for(behavior_.seed, sample.sample_id, static_cast<int>(role), attempt);
        switch (role) {
            case Role::actor:
                return synthesize_answer_doc(pick_answer(sample, behavior_.actor_accuracy, rng));
            case Role::retry:
                return synthesize_answer_doc(pick_retry_answer(sample, context, rng));
            case Role::verifier:
                return synthesize_verifier_doc(sample, context, rng);
        }
        throw BackendError(BackendError::Kind::bad_binding, "unknown role");
    }

private:
    static std::string prior_answer_from(const std::string& context) {
        std::size_t pos = context.find(kPriorAnswerHeader);
        if (pos == std::string::npos) return {};
        std::size_t start = context.find('\n', pos);
        if (start == std::string::npos) return {};
        std::size_t end = context.find('\n', start + 1);
        std::string doc = context.substr(start + 1, end == std::string::npos ? std::string::npos
                                                                             : end - start - 1);
        json parsed = json::parse(doc, nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("answer") ||
            !parsed["answer"].is_string()) {
            return {};
        }
        return parsed["answer"].get<std::string>();
    }

    static std::string wrong_answer(const EvaluationSample& sample, detail::DeterministicRng& rng) {
        std::vector<std::string> wrong;
        for (const auto& option : sample.options) {
            if (option.label != *sample.gold_answer) wrong.push_back(option.label);
        }
        if (wrong.empty()) return *sample.gold_answer;
        return wrong[rng.next_below(wrong.size())];
    }

    static std::string pick_answer(const EvaluationSample& sample, double p_correct,
                                   detail::DeterministicRng& rng) {
        const bool correct = rng.next_unit() < p_correct;
        return correct ? *sample.gold_answer : wrong_answer(sample, rng);
    }

    std::string pick_retry_answer(const EvaluationSample& sample, const std::string& context,
                                  detail::DeterministicRng& rng) const {
        const std::string prior = prior_answer_from(context);
        const bool prior_correct = prior == *sample.gold_answer;
        if (prior_correct) {
            // Re-reasoning occasionally corrupts a correct answer.
            return rng.next_unit() < behavior_.retry_break_rate ? wrong_answer(sample, rng) : prior;
        }
        // ...and fixes a wrong one at the configured rate; otherwise it stands by it.
        return rng.next_unit() < behavior_.retry_fix_rate ? *sample.gold_answer : prior;
    }

    static std::string synthesize_answer_doc(const std::string& answer) {
        ActorState state;
        state.answer = answer;
        state.confidence = 0.8;
        state.evidence.push_back(
            {"e1", "synthetic observation consistent with option " + answer, std::nullopt,
             std::nullopt, Polarity::supports, 0.8});
        state.visibility.view_compatibility = ViewCompatibility::compatible;
        return serialize_state(state);
    }

    std::string synthesize_verifier_doc(const EvaluationSample& sample, const std::string& context,
                                        detail::DeterministicRng& rng) const {
        const std::string audited = prior_answer_from(context);
        const bool audited_correct = audited == *sample.gold_answer;
        const double flag_probability =
            audited_correct ? behavior_.verifier_false_alarm : behavior_.verifier_error_detect;
        const bool flag = rng.next_unit() < flag_probability;

        // Assess every evidence item the audited document carried.
        std::vector<std::string> item_ids;
        std::size_t pos = context.find(kPriorAnswerHeader);
        if (pos != std::string::npos) {
            std::size_t start = context.find('\n', pos);
            std::size_t end = start == std::string::npos ? std::string::npos
                                                         : context.find('\n', start + 1);
            if (start != std::string::npos) {
                json doc = json::parse(
                    context.substr(start + 1,
                                   end == std::string::npos ? std::string::npos : end - start - 1),
                    nullptr, false);
                if (!doc.is_discarded() && doc.is_object() && doc.contains("evidence") &&
                    doc["evidence"].is_array()) {
                    for (const auto& item : doc["evidence"]) {
                        if (item.is_object() && item.contains("item_id") &&
                            item["item_id"].is_string()) {
                            item_ids.push_back(item["item_id"].get<std::string>());
                        }
                    }
                }
            }
        }

        VerifierState state;
        state.verdict = flag ? Verdict::insufficient : Verdict::supported;
        state.support_score = flag ? 0.2 : 0.8;
        for (const auto& id : item_ids) {
            state.assessments.push_back({id, flag ? Judgment::weak : Judgment::confirmed, std::nullopt});
        }
        if (flag) {
            state.missing_support.push_back("insufficient visual support for the stated answer");
        }
        state.recommendation = flag ? Recommendation::retry : Recommendation::keep;
        return serialize_state(state);
    }

    StochasticBehavior behavior_;
};

// Builds in-process backends. HTTP bindings are constructed in
// http_backend.hpp so that only the CLI pays for the client header.
inline std::shared_ptr<const Backend> make_backend(const BackendBinding& binding,
                                                   const std::optional<ScriptedBehavior>& script,
                                                   const std::optional<StochasticBehavior>& stochastic) {
    if (!binding.valid()) {
        throw BackendError(BackendError::Kind::bad_binding, "invalid backend binding");
    }
    switch (binding.kind) {
        case BackendKind::scripted:
            if (!script) {
                throw BackendError(BackendError::Kind::bad_binding,
                                   "scripted binding requires a script");
            }
            return std::make_shared<ScriptedBackend>(*script);
        case BackendKind::stochastic: {
            StochasticBehavior behavior = stochastic.value_or(StochasticBehavior{});
            if (!behavior.valid()) {
                throw BackendError(BackendError::Kind::bad_binding,
                                   "stochastic probabilities out of range");
            }
            return std::make_shared<StochasticBackend>(behavior);
        }
        case BackendKind::http:
            throw BackendError(BackendError::Kind::bad_binding,
                               "http backends are built by make_http_backend");
    }
    throw BackendError(BackendError::Kind::bad_binding, "unknown backend kind");
}

}  // namespace echotrust
