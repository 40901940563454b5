#pragma once
// Builders for role-specific supervision records. Each record pairs a prompt
// rendering (context) with the canonical serialization of a gold state
// (target) plus the character span a trainer should supervise. The builders
// format; they do not label.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "echotrust/backends.hpp"
#include "echotrust/protocol.hpp"
#include "echotrust/types.hpp"

namespace echotrust {

struct SupervisionRecord {
    Role role = Role::actor;
    std::string sample_id;
    MediaRef media;
    std::string context_text;
    std::string target_text;
    std::size_t span_start = 0;  // == context_text.size()
    std::size_t span_end = 0;    // == context_text.size() + target_text.size()

    bool operator==(const SupervisionRecord&) const = default;
};

class TrainDataError : public std::runtime_error {
public:
    TrainDataError(std::string message, std::vector<ValidationError> errors = {})
        : std::runtime_error(std::move(message)), errors(std::move(errors)) {}

    std::vector<ValidationError> errors;
};

namespace detail {

// Deterministic plain-text rendering of a prompt message list.
inline std::string flatten_messages(const std::vector<RoleMessage>& messages) {
    std::string out;
    for (const auto& message : messages) {
        out += message.role == RoleMessage::Kind::system ? "[system]\n" : "[user]\n";
        out += message.text;
        if (out.empty() || out.back() != '\n') out += '\n';
        out += '\n';
    }
    return out;
}

inline void require_valid(std::vector<ValidationError> errors, const char* what) {
    if (errors.empty()) return;
    std::string message = std::string(what) + ": " + errors.front().message;
    throw TrainDataError(std::move(message), std::move(errors));
}

inline SupervisionRecord assemble(Role role, const EvaluationSample& sample, std::string context,
                                  std::string target) {
    SupervisionRecord record;
    record.role = role;
    record.sample_id = sample.sample_id;
    record.media = sample.media;
    record.context_text = std::move(context);
    record.target_text = std::move(target);
    record.span_start = record.context_text.size();
    record.span_end = record.span_start + record.target_text.size();
    return record;
}

}  // namespace detail

inline SupervisionRecord build_actor_record(const EvaluationSample& sample,
                                            const ActorState& gold_state) {
    detail::require_valid(validate_sample(sample), "invalid sample");
    detail::require_valid(validate_actor_state(gold_state, sample), "invalid gold actor state");
    const auto messages = build_role_prompt("default", Role::actor, sample, "");
    return detail::assemble(Role::actor, sample, detail::flatten_messages(messages),
                            serialize_state(gold_state));
}

inline SupervisionRecord build_verifier_record(const EvaluationSample& sample,
                                               const ActorState& audited,
                                               const VerifierState& gold_state) {
    detail::require_valid(validate_sample(sample), "invalid sample");
    detail::require_valid(validate_actor_state(audited, sample), "invalid audited actor state");
    detail::require_valid(validate_verifier_state(gold_state, audited),
                          "invalid gold verifier state");
    const auto messages = build_role_prompt("default", Role::verifier, sample,
                                            render_conditioning_context(audited));
    return detail::assemble(Role::verifier, sample, detail::flatten_messages(messages),
                            serialize_state(gold_state));
}

inline SupervisionRecord build_retry_record(const EvaluationSample& sample,
                                            const ActorState& prior,
                                            const VerifierState& feedback,
                                            const RetryState& gold_state) {
    detail::require_valid(validate_sample(sample), "invalid sample");
    detail::require_valid(validate_actor_state(prior, sample), "invalid prior actor state");
    detail::require_valid(validate_verifier_state(feedback, prior), "invalid verifier feedback");
    detail::require_valid(validate_retry_state(gold_state, sample), "invalid gold retry state");
    const auto messages = build_role_prompt("default", Role::retry, sample,
                                            render_conditioning_context(prior, feedback));
    return detail::assemble(Role::retry, sample, detail::flatten_messages(messages),
                            serialize_state(gold_state));
}

inline json supervision_record_to_json(const SupervisionRecord& record) {
    json doc;
    doc["role"] = to_string(record.role);
    doc["sample_id"] = record.sample_id;
    json media;
    media["uri"] = record.media.uri;
    media["frame_hints"] = record.media.frame_hints ? json(*record.media.frame_hints) : json(nullptr);
    doc["media"] = std::move(media);
    doc["context_text"] = record.context_text;
    doc["target_text"] = record.target_text;
    doc["supervised_span"] = {{"start", record.span_start}, {"end", record.span_end}};
    return doc;
}

namespace detail {

// Export-time re-validation is sample-independent: targets are parsed against
// a permissive 8-option sample, which checks schema, label shape, and state
// invariants without needing the original options.
inline const EvaluationSample& widest_sample() {
    static const EvaluationSample sample = [] {
        EvaluationSample s;
        s.sample_id = "export-check";
        s.media.uri = "about:blank";
        s.question = "?";
        for (std::size_t i = 0; i < 8; ++i) {
            s.options.push_back({option_label_for_index(i), "option " + option_label_for_index(i)});
        }
        return s;
    }();
    return sample;
}

inline void revalidate_target(const SupervisionRecord& record) {
    if (record.span_start != record.context_text.size() ||
        record.span_end != record.span_start + record.target_text.size()) {
        throw TrainDataError("supervised span does not cover the target for " + record.sample_id);
    }
    bool ok = false;
    switch (record.role) {
        case Role::actor:
            ok = parse_actor_output(record.target_text, widest_sample()).ok();
            break;
        case Role::retry:
            ok = parse_retry_output(record.target_text, widest_sample()).ok();
            break;
        case Role::verifier: {
            // A verifier target must satisfy its own invariants; the audited
            // evidence list is not part of the record, so dangling item_ids
            // are a build-time check, ignored here.
            auto doc = detail::try_parse_json(detail::trimmed(record.target_text));
            if (!doc) break;
            std::vector<std::string> map_errors;
            auto state = detail::map_verifier_doc(*doc, false, map_errors);
            if (!state) break;
            auto errors = validate_verifier_state(*state, std::vector<EvidenceItem>{});
            ok = std::all_of(errors.begin(), errors.end(), [](const ValidationError& e) {
                return e.code == ValidationCode::DanglingEvidenceRef;
            });
            break;
        }
    }
    if (!ok) {
        throw TrainDataError("target_text does not parse to a valid " +
                             std::string(to_string(record.role)) + " state for " +
                             record.sample_id);
    }
}

}  // namespace detail

inline std::size_t export_records(const std::vector<SupervisionRecord>& records,
                                  const std::filesystem::path& path) {
    for (const auto& record : records) detail::revalidate_target(record);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TrainDataError("cannot open export file: " + path.string());
    for (const auto& record : records) {
        out << supervision_record_to_json(record).dump() << "\n";
    }
    return records.size();
}

}  // namespace echotrust
