#pragma once
// Wire format for reasoning states and the repair pipeline from raw backend
// text to validated states.
//
// The format is JSON with a fixed schema and a fixed key order, so that two
// field-equal states always serialize to identical bytes. Parsing is total:
// any input yields a ParseOutcome, never an exception. A parse gets exactly
// one in-parser repair pass (strip code fences, extract the outermost braces,
// coerce numeric strings); re-asking the backend is the orchestrator's job.

#include <charconv>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "echotrust/types.hpp"

namespace echotrust {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Messages sent to backends

struct RoleMessage {
    enum class Kind { system, user };
    Kind role = Kind::user;
    std::string text;
    std::vector<MediaRef> media;
};

// ---------------------------------------------------------------------------
// Canonical serialization

namespace detail {

inline json evidence_to_json(const std::vector<EvidenceItem>& evidence) {
    json arr = json::array();
    for (const auto& e : evidence) {
        json item;
        item["item_id"] = e.item_id;
        item["description"] = e.description;
        item["structure_tag"] = e.structure_tag ? json(*e.structure_tag) : json(nullptr);
        item["temporal_ref"] = e.temporal_ref ? json(*e.temporal_ref) : json(nullptr);
        item["polarity"] = to_string(e.polarity);
        item["strength"] = e.strength;
        arr.push_back(std::move(item));
    }
    return arr;
}

inline json visibility_to_json(const VisibilityReport& v) {
    json out;
    out["view_compatibility"] = to_string(v.view_compatibility);
    out["observed_view"] = v.observed_view ? json(*v.observed_view) : json(nullptr);
    json sv = json::object();
    for (const auto& [name, vis] : v.structure_visibility) {
        sv[name] = to_string(vis);
    }
    out["structure_visibility"] = std::move(sv);
    return out;
}

inline json answer_doc_to_json(const std::string& answer, double confidence,
                               bool abstain_suggested, const std::vector<EvidenceItem>& evidence,
                               const VisibilityReport& visibility,
                               const std::optional<std::string>& rationale) {
    json out;
    out["answer"] = answer;
    out["confidence"] = confidence;
    out["abstain_suggested"] = abstain_suggested;
    out["evidence"] = evidence_to_json(evidence);
    out["visibility"] = visibility_to_json(visibility);
    out["rationale"] = rationale ? json(*rationale) : json(nullptr);
    return out;
}

}  // namespace detail

inline json state_to_json(const ActorState& s) {
    return detail::answer_doc_to_json(s.answer, s.confidence, s.abstain_suggested, s.evidence,
                                      s.visibility, s.rationale);
}

// Retry states share the actor document schema; the revision note travels in
// the "rationale" slot and "abstain_suggested" is pinned to false.
inline json state_to_json(const RetryState& s) {
    return detail::answer_doc_to_json(s.answer, s.confidence, false, s.evidence, s.visibility,
                                      s.revision_note);
}

inline json state_to_json(const VerifierState& s) {
    json out;
    out["verdict"] = to_string(s.verdict);
    out["support_score"] = s.support_score;
    json assessments = json::array();
    for (const auto& a : s.assessments) {
        json item;
        item["item_id"] = a.item_id;
        item["judgment"] = to_string(a.judgment);
        item["note"] = a.note ? json(*a.note) : json(nullptr);
        assessments.push_back(std::move(item));
    }
    out["assessments"] = std::move(assessments);
    out["missing_support"] = s.missing_support;
    out["inconsistencies"] = s.inconsistencies;
    out["recommendation"] = to_string(s.recommendation);
    return out;
}

inline std::string serialize_state(const ActorState& s) { return state_to_json(s).dump(); }
inline std::string serialize_state(const RetryState& s) { return state_to_json(s).dump(); }
inline std::string serialize_state(const VerifierState& s) { return state_to_json(s).dump(); }

// ---------------------------------------------------------------------------
// Parsing

enum class ParseFailureReason { no_json_found, schema_violation, validation_failed };

inline const char* to_string(ParseFailureReason r) {
    switch (r) {
        case ParseFailureReason::no_json_found: return "no_json_found";
        case ParseFailureReason::schema_violation: return "schema_violation";
        case ParseFailureReason::validation_failed: return "validation_failed";
    }
    return "?";
}

template <typename State>
struct ParseOutcome {
    std::optional<State> state;
    bool repair_applied = false;
    std::optional<ParseFailureReason> failure_reason;
    std::string failure_detail;

    bool ok() const { return state.has_value(); }
};

namespace detail {

inline std::string trimmed(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::optional<json> try_parse_json(const std::string& text) {
    json parsed = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) return std::nullopt;
    return parsed;
}

// Body of the first ``` fenced block, tolerating a language tag after the fence.
inline std::optional<std::string> strip_code_fence(const std::string& text) {
    std::size_t open = text.find("```");
    if (open == std::string::npos) return std::nullopt;
    std::size_t body = text.find('\n', open + 3);
    if (body == std::string::npos) return std::nullopt;
    std::size_t close = text.find("```", body + 1);
    if (close == std::string::npos) return std::nullopt;
    return text.substr(body + 1, close - body - 1);
}

// First balanced {...} region, skipping over string literals and escapes.
inline std::optional<std::string> extract_outer_braces(const std::string& text) {
    std::size_t start = text.find('{');
    if (start == std::string::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return text.substr(start, i - start + 1);
        }
    }
    return std::nullopt;
}

// Mapping errors are collected as human-readable strings; any entry means the
// document violated the schema.
struct Mapper {
    const json& doc;
    bool coerce_numbers;
    std::vector<std::string>& errors;

    const json* field(const std::string& key) const {
        auto it = doc.find(key);
        if (it == doc.end()) {
            errors.push_back("missing key '" + key + "'");
            return nullptr;
        }
        return &*it;
    }

    std::optional<std::string> get_string(const std::string& key) const {
        const json* f = field(key);
        if (!f) return std::nullopt;
        if (!f->is_string()) {
            errors.push_back("key '" + key + "' is not a string");
            return std::nullopt;
        }
        return f->get<std::string>();
    }

    std::optional<std::string> get_nullable_string(const std::string& key) const {
        const json* f = field(key);
        if (!f || f->is_null()) return std::nullopt;
        if (!f->is_string()) {
            errors.push_back("key '" + key + "' is not a string or null");
            return std::nullopt;
        }
        return f->get<std::string>();
    }

    std::optional<bool> get_bool(const std::string& key) const {
        const json* f = field(key);
        if (!f) return std::nullopt;
        if (!f->is_boolean()) {
            errors.push_back("key '" + key + "' is not a boolean");
            return std::nullopt;
        }
        return f->get<bool>();
    }

    std::optional<double> number_from(const json& value, const std::string& key) const {
        if (value.is_number()) return value.get<double>();
        if (coerce_numbers && value.is_string()) {
            const std::string s = trimmed(value.get<std::string>());
            double out = 0.0;
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
            if (ec == std::errc() && ptr == s.data() + s.size()) return out;
        }
        errors.push_back("key '" + key + "' is not a number");
        return std::nullopt;
    }

    std::optional<double> get_number(const std::string& key) const {
        const json* f = field(key);
        if (!f) return std::nullopt;
        return number_from(*f, key);
    }

    template <typename E>
    std::optional<E> get_enum(const std::string& key) const {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        auto e = enum_from_string<E>(*s);
        if (!e) errors.push_back("key '" + key + "' has unknown value '" + *s + "'");
        return e;
    }
};

// Values within 1e-3 of the unit interval are clamped; anything farther out is
// left alone for validation to reject.
inline double clamp_unit_tolerant(double v) {
    constexpr double slack = 1e-3;
    if (v < 0.0 && v >= -slack) return 0.0;
    if (v > 1.0 && v <= 1.0 + slack) return 1.0;
    return v;
}

inline std::optional<std::vector<EvidenceItem>> map_evidence(const json& doc, bool coerce,
                                                             std::vector<std::string>& errors) {
    auto it = doc.find("evidence");
    if (it == doc.end() || !it->is_array()) {
        errors.push_back("missing or non-array key 'evidence'");
        return std::nullopt;
    }
    std::vector<EvidenceItem> out;
    for (const auto& entry : *it) {
        if (!entry.is_object()) {
            errors.push_back("evidence entries must be objects");
            return std::nullopt;
        }
        Mapper m{entry, coerce, errors};
        EvidenceItem item;
        auto id = m.get_string("item_id");
        auto description = m.get_string("description");
        item.structure_tag = m.get_nullable_string("structure_tag");
        item.temporal_ref = m.get_nullable_string("temporal_ref");
        auto polarity = m.get_enum<Polarity>("polarity");
        auto strength = m.get_number("strength");
        if (!id || !description || !polarity || !strength) return std::nullopt;
        item.item_id = *id;
        item.description = *description;
        item.polarity = *polarity;
        item.strength = clamp_unit_tolerant(*strength);
        out.push_back(std::move(item));
    }
    return out;
}

inline std::optional<VisibilityReport> map_visibility(const json& doc,
                                                      std::vector<std::string>& errors) {
    auto it = doc.find("visibility");
    if (it == doc.end() || !it->is_object()) {
        errors.push_back("missing or non-object key 'visibility'");
        return std::nullopt;
    }
    Mapper m{*it, false, errors};
    VisibilityReport report;
    auto compat = m.get_enum<ViewCompatibility>("view_compatibility");
    if (!compat) return std::nullopt;
    report.view_compatibility = *compat;
    report.observed_view = m.get_nullable_string("observed_view");
    auto sv = it->find("structure_visibility");
    if (sv == it->end() || !sv->is_object()) {
        errors.push_back("missing or non-object key 'structure_visibility'");
        return std::nullopt;
    }
    for (const auto& [name, value] : sv->items()) {
        if (name.empty()) {
            errors.push_back("structure_visibility keys must be non-empty");
            return std::nullopt;
        }
        if (!value.is_string()) {
            errors.push_back("structure_visibility values must be strings");
            return std::nullopt;
        }
        auto vis = enum_from_string<StructureVisibility>(value.template get<std::string>());
        if (!vis) {
            errors.push_back("unknown structure visibility '" + value.template get<std::string>() + "'");
            return std::nullopt;
        }
        report.structure_visibility[name] = *vis;
    }
    return report;
}

struct AnswerDocParts {
    std::string answer;
    double confidence = 0.0;
    bool abstain_suggested = false;
    std::vector<EvidenceItem> evidence;
    VisibilityReport visibility;
    std::optional<std::string> rationale;
};

inline std::optional<AnswerDocParts> map_answer_doc(const json& doc,
                                                    const EvaluationSample& sample, bool coerce,
                                                    std::vector<std::string>& errors) {
    if (!doc.is_object()) {
        errors.push_back("document is not a JSON object");
        return std::nullopt;
    }
    Mapper m{doc, coerce, errors};
    AnswerDocParts parts;
    auto answer = m.get_string("answer");
    auto confidence = m.get_number("confidence");
    auto abstain = m.get_bool("abstain_suggested");
    auto evidence = map_evidence(doc, coerce, errors);
    auto visibility = map_visibility(doc, errors);
    parts.rationale = m.get_nullable_string("rationale");
    if (!answer || !confidence || !abstain || !evidence || !visibility) return std::nullopt;
    // Free-text answers resolve to labels here; unresolvable text is kept
    // verbatim so validation reports AnswerNotInOptions.
    parts.answer = resolve_answer_label(*answer, sample).value_or(trimmed(*answer));
    parts.confidence = clamp_unit_tolerant(*confidence);
    parts.abstain_suggested = *abstain;
    parts.evidence = std::move(*evidence);
    parts.visibility = std::move(*visibility);
    return parts;
}

inline std::optional<VerifierState> map_verifier_doc(const json& doc, bool coerce,
                                                     std::vector<std::string>& errors) {
    if (!doc.is_object()) {
        errors.push_back("document is not a JSON object");
        return std::nullopt;
    }
    Mapper m{doc, coerce, errors};
    VerifierState state;
    auto verdict = m.get_enum<Verdict>("verdict");
    auto score = m.get_number("support_score");
    auto recommendation = m.get_enum<Recommendation>("recommendation");
    auto strings_at = [&](const std::string& key) -> std::optional<std::vector<std::string>> {
        auto it = doc.find(key);
        if (it == doc.end() || !it->is_array()) {
            errors.push_back("missing or non-array key '" + key + "'");
            return std::nullopt;
        }
        std::vector<std::string> out;
        for (const auto& v : *it) {
            if (!v.is_string()) {
                errors.push_back("entries of '" + key + "' must be strings");
                return std::nullopt;
            }
            out.push_back(v.template get<std::string>());
        }
        return out;
    };
    auto missing = strings_at("missing_support");
    auto inconsistencies = strings_at("inconsistencies");
    auto assessments_it = doc.find("assessments");
    if (assessments_it == doc.end() || !assessments_it->is_array()) {
        errors.push_back("missing or non-array key 'assessments'");
        return std::nullopt;
    }
    std::vector<EvidenceAssessment> assessments;
    for (const auto& entry : *assessments_it) {
        if (!entry.is_object()) {
            errors.push_back("assessments entries must be objects");
            return std::nullopt;
        }
        Mapper am{entry, coerce, errors};
        EvidenceAssessment a;
        auto id = am.get_string("item_id");
        auto judgment = am.get_enum<Judgment>("judgment");
        a.note = am.get_nullable_string("note");
        if (!id || !judgment) return std::nullopt;
        a.item_id = *id;
        a.judgment = *judgment;
        assessments.push_back(std::move(a));
    }
    if (!verdict || !score || !recommendation || !missing || !inconsistencies) return std::nullopt;
    state.verdict = *verdict;
    state.support_score = clamp_unit_tolerant(*score);
    state.assessments = std::move(assessments);
    state.missing_support = std::move(*missing);
    state.inconsistencies = std::move(*inconsistencies);
    state.recommendation = *recommendation;
    return state;
}

// Shared parse driver: one strict attempt over the whole text, then one repair
// pass over extracted candidates with numeric coercion enabled.
template <typename State, typename MapFn, typename ValidateFn>
ParseOutcome<State> parse_state(const std::string& raw, MapFn&& map_doc, ValidateFn&& validate) {
    ParseOutcome<State> outcome;
    // Track the deepest stage any attempt reached, for the final failure reason.
    int best_stage = 0;  // 0 = no json, 1 = schema fails, 2 = validation fails
    std::string detail;

    auto attempt = [&](const json& doc, bool coerce) -> std::optional<State> {
        std::vector<std::string> map_errors;
        auto state = map_doc(doc, coerce, map_errors);
        if (!state) {
            if (best_stage < 1) {
                best_stage = 1;
                detail = map_errors.empty() ? "schema mapping failed" : map_errors.front();
            }
            return std::nullopt;
        }
        auto validation_errors = validate(*state);
        if (!validation_errors.empty()) {
            best_stage = 2;
            detail = validation_errors.front().message;
            return std::nullopt;
        }
        return state;
    };

    if (auto doc = try_parse_json(trimmed(raw))) {
        if (auto state = attempt(*doc, /*coerce=*/false)) {
            outcome.state = std::move(state);
            return outcome;
        }
    }

    // Single repair pass: fenced body first, then the outermost brace region,
    // both mapped with numeric-string coercion.
    std::vector<std::string> candidates;
    if (auto fenced = strip_code_fence(raw)) candidates.push_back(std::move(*fenced));
    if (auto braces = extract_outer_braces(raw)) candidates.push_back(std::move(*braces));
    for (const auto& candidate : candidates) {
        auto doc = try_parse_json(trimmed(candidate));
        if (!doc) continue;
        if (auto state = attempt(*doc, /*coerce=*/true)) {
            outcome.state = std::move(state);
            outcome.repair_applied = true;
            return outcome;
        }
    }

    switch (best_stage) {
        case 0:
            outcome.failure_reason = ParseFailureReason::no_json_found;
            outcome.failure_detail = "no JSON document found in backend output";
            break;
        case 1:
            outcome.failure_reason = ParseFailureReason::schema_violation;
            outcome.failure_detail = detail;
            break;
        default:
            outcome.failure_reason = ParseFailureReason::validation_failed;
            outcome.failure_detail = detail;
            break;
    }
    return outcome;
}

}  // namespace detail

inline ParseOutcome<ActorState> parse_actor_output(const std::string& raw,
                                                   const EvaluationSample& sample) {
    return detail::parse_state<ActorState>(
        raw,
        [&](const json& doc, bool coerce, std::vector<std::string>& errors) -> std::optional<ActorState> {
            auto parts = detail::map_answer_doc(doc, sample, coerce, errors);
            if (!parts) return std::nullopt;
            ActorState state;
            state.answer = std::move(parts->answer);
            state.evidence = std::move(parts->evidence);
            state.visibility = std::move(parts->visibility);
            state.confidence = parts->confidence;
            state.rationale = std::move(parts->rationale);
            state.abstain_suggested = parts->abstain_suggested;
            return state;
        },
        [&](const ActorState& state) { return validate_actor_state(state, sample); });
}

inline ParseOutcome<RetryState> parse_retry_output(const std::string& raw,
                                                   const EvaluationSample& sample) {
    return detail::parse_state<RetryState>(
        raw,
        [&](const json& doc, bool coerce, std::vector<std::string>& errors) -> std::optional<RetryState> {
            auto parts = detail::map_answer_doc(doc, sample, coerce, errors);
            if (!parts) return std::nullopt;
            RetryState state;
            state.answer = std::move(parts->answer);
            state.evidence = std::move(parts->evidence);
            state.visibility = std::move(parts->visibility);
            state.confidence = parts->confidence;
            state.revision_note = std::move(parts->rationale);
            return state;
        },
        [&](const RetryState& state) { return validate_retry_state(state, sample); });
}

inline ParseOutcome<VerifierState> parse_verifier_output(
    const std::string& raw, const std::vector<EvidenceItem>& audited_evidence) {
    return detail::parse_state<VerifierState>(
        raw,
        [&](const json& doc, bool coerce, std::vector<std::string>& errors) {
            return detail::map_verifier_doc(doc, coerce, errors);
        },
        [&](const VerifierState& state) {
            return validate_verifier_state(state, audited_evidence);
        });
}

inline ParseOutcome<VerifierState> parse_verifier_output(const std::string& raw,
                                                         const ActorState& audited) {
    return parse_verifier_output(raw, audited.evidence);
}

inline ParseOutcome<VerifierState> parse_verifier_output(const std::string& raw,
                                                         const RetryState& audited) {
    return parse_verifier_output(raw, audited.evidence);
}

// ---------------------------------------------------------------------------
// Conditioning context for verifier and retry prompts

inline constexpr const char* kPriorAnswerHeader = "PRIOR_ANSWER_STATE:";
inline constexpr const char* kVerifierFeedbackHeader = "VERIFIER_FEEDBACK:";

namespace detail {

inline std::string render_context(const std::string& prior_doc,
                                  const std::optional<VerifierState>& feedback) {
    std::string out;
    out += kPriorAnswerHeader;
    out += '\n';
    out += prior_doc;
    out += '\n';
    if (feedback) {
        out += kVerifierFeedbackHeader;
        out += '\n';
        out += serialize_state(*feedback);
        out += '\n';
    }
    return out;
}

}  // namespace detail

inline std::string render_conditioning_context(const ActorState& prior,
                                               const std::optional<VerifierState>& feedback = {}) {
    return detail::render_context(serialize_state(prior), feedback);
}

inline std::string render_conditioning_context(const RetryState& prior,
                                               const std::optional<VerifierState>& feedback = {}) {
    return detail::render_context(serialize_state(prior), feedback);
}

}  // namespace echotrust
