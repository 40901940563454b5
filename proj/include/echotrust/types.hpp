#pragma once
// Structured reasoning-state types exchanged by every stage of the
// actor-verifier loop, plus their validation rules.
//
// All types here are immutable value objects after construction: they can be
// copied freely and shared across threads without synchronization.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace echotrust {

// ---------------------------------------------------------------------------
// Enumerations

enum class Role { actor, verifier, retry };

enum class Polarity { supports, contradicts, neutral };

enum class StructureVisibility { visible, partial, not_visible, unknown };

enum class ViewCompatibility { compatible, incompatible, unknown };

enum class Verdict { supported, insufficient, contradicted };

enum class Judgment { confirmed, weak, contradicted, unverifiable };

enum class Recommendation { keep, retry, abstain };

enum class Provenance { kept_actor, switched_to_retry, abstained };

enum class StageName { actor, verify1, retry, verify2, decide };

inline const char* to_string(Role r) {
    switch (r) {
        case Role::actor: return "actor";
        case Role::verifier: return "verifier";
        case Role::retry: return "retry";
    }
    return "?";
}

inline const char* to_string(Polarity p) {
    switch (p) {
        case Polarity::supports: return "supports";
        case Polarity::contradicts: return "contradicts";
        case Polarity::neutral: return "neutral";
    }
    return "?";
}

inline const char* to_string(StructureVisibility v) {
    switch (v) {
        case StructureVisibility::visible: return "visible";
        case StructureVisibility::partial: return "partial";
        case StructureVisibility::not_visible: return "not_visible";
        case StructureVisibility::unknown: return "unknown";
    }
    return "?";
}

inline const char* to_string(ViewCompatibility v) {
    switch (v) {
        case ViewCompatibility::compatible: return "compatible";
        case ViewCompatibility::incompatible: return "incompatible";
        case ViewCompatibility::unknown: return "unknown";
    }
    return "?";
}

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::supported: return "supported";
        case Verdict::insufficient: return "insufficient";
        case Verdict::contradicted: return "contradicted";
    }
    return "?";
}

inline const char* to_string(Judgment j) {
    switch (j) {
        case Judgment::confirmed: return "confirmed";
        case Judgment::weak: return "weak";
        case Judgment::contradicted: return "contradicted";
        case Judgment::unverifiable: return "unverifiable";
    }
    return "?";
}

inline const char* to_string(Recommendation r) {
    switch (r) {
        case Recommendation::keep: return "keep";
        case Recommendation::retry: return "retry";
        case Recommendation::abstain: return "abstain";
    }
    return "?";
}

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::kept_actor: return "kept_actor";
        case Provenance::switched_to_retry: return "switched_to_retry";
        case Provenance::abstained: return "abstained";
    }
    return "?";
}

inline const char* to_string(StageName s) {
    switch (s) {
        case StageName::actor: return "actor";
        case StageName::verify1: return "verify1";
        case StageName::retry: return "retry";
        case StageName::verify2: return "verify2";
        case StageName::decide: return "decide";
    }
    return "?";
}

template <typename E>
std::optional<E> enum_from_string(const std::string&);

template <>
inline std::optional<Polarity> enum_from_string<Polarity>(const std::string& s) {
    if (s == "supports") return Polarity::supports;
    if (s == "contradicts") return Polarity::contradicts;
    if (s == "neutral") return Polarity::neutral;
    return std::nullopt;
}

template <>
inline std::optional<StructureVisibility> enum_from_string<StructureVisibility>(const std::string& s) {
    if (s == "visible") return StructureVisibility::visible;
    if (s == "partial") return StructureVisibility::partial;
    if (s == "not_visible") return StructureVisibility::not_visible;
    if (s == "unknown") return StructureVisibility::unknown;
    return std::nullopt;
}

template <>
inline std::optional<ViewCompatibility> enum_from_string<ViewCompatibility>(const std::string& s) {
    if (s == "compatible") return ViewCompatibility::compatible;
    if (s == "incompatible") return ViewCompatibility::incompatible;
    if (s == "unknown") return ViewCompatibility::unknown;
    return std::nullopt;
}

template <>
inline std::optional<Verdict> enum_from_string<Verdict>(const std::string& s) {
    if (s == "supported") return Verdict::supported;
    if (s == "insufficient") return Verdict::insufficient;
    if (s == "contradicted") return Verdict::contradicted;
    return std::nullopt;
}

template <>
inline std::optional<Judgment> enum_from_string<Judgment>(const std::string& s) {
    if (s == "confirmed") return Judgment::confirmed;
    if (s == "weak") return Judgment::weak;
    if (s == "contradicted") return Judgment::contradicted;
    if (s == "unverifiable") return Judgment::unverifiable;
    return std::nullopt;
}

template <>
inline std::optional<Recommendation> enum_from_string<Recommendation>(const std::string& s) {
    if (s == "keep") return Recommendation::keep;
    if (s == "retry") return Recommendation::retry;
    if (s == "abstain") return Recommendation::abstain;
    return std::nullopt;
}

template <>
inline std::optional<Provenance> enum_from_string<Provenance>(const std::string& s) {
    if (s == "kept_actor") return Provenance::kept_actor;
    if (s == "switched_to_retry") return Provenance::switched_to_retry;
    if (s == "abstained") return Provenance::abstained;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Input side: samples and media references

// Opaque pointer to an echo video or frame bundle. The engine never decodes
// media; it forwards the reference to backends untouched.
struct MediaRef {
    std::string uri;
    std::optional<std::vector<int>> frame_hints;

    bool operator==(const MediaRef&) const = default;
};

struct AnswerOption {
    std::string label;  // "A".."H"
    std::string text;

    bool operator==(const AnswerOption&) const = default;
};

struct EvaluationSample {
    std::string sample_id;
    MediaRef media;
    std::string question;
    std::vector<AnswerOption> options;  // 2..8, labels contiguous from "A"
    std::optional<std::string> gold_answer;
    std::optional<std::string> view_label;
    std::optional<std::string> queried_structure;
    std::optional<std::string> split;

    bool operator==(const EvaluationSample&) const = default;
};

inline std::string option_label_for_index(std::size_t i) {
    return std::string(1, static_cast<char>('A' + i));
}

inline bool sample_has_label(const EvaluationSample& sample, const std::string& label) {
    return std::any_of(sample.options.begin(), sample.options.end(),
                       [&](const AnswerOption& o) { return o.label == label; });
}

// Resolves free-form backend answer text to an option label: single-letter
// labels (any case) first, then exact option-text match, then case-insensitive
// option-text match. Returns nullopt when nothing matches.
inline std::optional<std::string> resolve_answer_label(const std::string& text,
                                                       const EvaluationSample& sample) {
    auto trim = [](const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return std::string();
        std::size_t e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    };
    const std::string t = trim(text);
    if (t.size() == 1 && std::isalpha(static_cast<unsigned char>(t[0]))) {
        std::string label(1, static_cast<char>(std::toupper(static_cast<unsigned char>(t[0]))));
        if (sample_has_label(sample, label)) return label;
        return std::nullopt;
    }
    for (const auto& o : sample.options) {
        if (o.text == t) return o.label;
    }
    auto lower = [](std::string s) {
        std::transform(s.begin(), s.end(), s.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        return s;
    };
    const std::string tl = lower(t);
    for (const auto& o : sample.options) {
        if (lower(o.text) == tl) return o.label;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Reasoning states

struct EvidenceItem {
    std::string item_id;
    std::string description;
    std::optional<std::string> structure_tag;
    std::optional<std::string> temporal_ref;  // e.g. "systole", "frames 12-40"
    Polarity polarity = Polarity::neutral;
    double strength = 0.0;  // [0,1]

    bool operator==(const EvidenceItem&) const = default;
};

struct VisibilityReport {
    // std::map keeps structure names sorted, which fixes serialization order.
    std::map<std::string, StructureVisibility> structure_visibility;
    ViewCompatibility view_compatibility = ViewCompatibility::unknown;
    std::optional<std::string> observed_view;

    bool operator==(const VisibilityReport&) const = default;
};

struct ActorState {
    std::string answer;  // option label
    std::vector<EvidenceItem> evidence;
    VisibilityReport visibility;
    double confidence = 0.0;  // [0,1]
    std::optional<std::string> rationale;
    bool abstain_suggested = false;

    bool operator==(const ActorState&) const = default;
};

struct RetryState {
    std::string answer;
    std::vector<EvidenceItem> evidence;
    VisibilityReport visibility;
    double confidence = 0.0;
    std::optional<std::string> revision_note;

    bool operator==(const RetryState&) const = default;
};

struct EvidenceAssessment {
    std::string item_id;  // must resolve into the audited state's evidence
    Judgment judgment = Judgment::unverifiable;
    std::optional<std::string> note;

    bool operator==(const EvidenceAssessment&) const = default;
};

struct VerifierState {
    Verdict verdict = Verdict::insufficient;
    double support_score = 0.0;  // [0,1]
    std::vector<EvidenceAssessment> assessments;
    std::vector<std::string> missing_support;
    std::vector<std::string> inconsistencies;
    Recommendation recommendation = Recommendation::keep;

    bool operator==(const VerifierState&) const = default;
};

// ---------------------------------------------------------------------------
// Decisions and audit trails

struct StageAttempt {
    std::string raw_text;  // backend output, byte-exact
    bool parse_ok = false;
    bool repair_applied = false;
    std::string parse_failure;  // empty when parse_ok
    double duration_ms = 0.0;   // excluded from determinism contracts
};

struct StageRecord {
    StageName name = StageName::actor;
    std::string backend_id;
    std::vector<StageAttempt> attempts;
    bool ok = false;
    std::string failure;      // declared failure when the stage did not produce a state
    std::string parsed_json;  // canonical serialization of the parsed state, or
                              // the decision summary for the decide stage
    // Summary columns pulled out of the parsed state for cheap inspection.
    std::optional<std::string> answer;
    std::optional<std::string> verdict;
    std::optional<double> support_score;
    std::optional<double> confidence;
};

struct AuditTrail {
    std::string sample_id;
    std::vector<StageRecord> stages;  // actor, verify1, [retry, verify2,] decide
    int intervention = 0;             // z
    bool accepted = false;            // posterior acceptance outcome (false when no retry ran)
};

// Stage order must match actor . verify1 . (retry . verify2)? . decide. A
// failed stage may truncate the middle of the run, but the decide stage (when
// present) is always last.
inline bool audit_stage_order_ok(const AuditTrail& audit) {
    static const std::vector<StageName> full = {StageName::actor, StageName::verify1,
                                                StageName::retry, StageName::verify2};
    const auto& s = audit.stages;
    if (s.empty()) return false;
    std::size_t n = s.size();
    if (s.back().name == StageName::decide) --n;
    for (std::size_t i = 0; i < n; ++i) {
        if (s[i].name != full[i]) return false;
    }
    const std::size_t expected = audit.intervention == 1 ? 4 : 2;
    if (n > expected) return false;
    // A strict prefix of the expected loop is acceptable only when the last
    // loop stage failed.
    return n == expected || (n > 0 && !s[n - 1].ok);
}

struct FinalDecision {
    std::optional<std::string> answer;  // nullopt == abstain
    Provenance provenance = Provenance::kept_actor;
    double final_support_score = 0.0;
    AuditTrail audit;

    bool abstained() const { return !answer.has_value(); }
};

// ---------------------------------------------------------------------------
// Validation

enum class ValidationCode {
    // sample-level
    OptionCountOutOfRange,
    OptionLabelsNotContiguous,
    GoldAnswerNotInOptions,
    EmptyMediaUri,
    FrameHintsNotIncreasing,
    // actor/retry state
    AnswerNotInOptions,
    ConfidenceOutOfRange,
    EmptyEvidenceWithoutAbstain,
    EvidenceStrengthOutOfRange,
    EmptyEvidenceDescription,
    DuplicateEvidenceId,
    // verifier state
    DanglingEvidenceRef,
    ScoreOutOfRange,
    VerdictInconsistencyClash,
};

inline const char* to_string(ValidationCode c) {
    switch (c) {
        case ValidationCode::OptionCountOutOfRange: return "OptionCountOutOfRange";
        case ValidationCode::OptionLabelsNotContiguous: return "OptionLabelsNotContiguous";
        case ValidationCode::GoldAnswerNotInOptions: return "GoldAnswerNotInOptions";
        case ValidationCode::EmptyMediaUri: return "EmptyMediaUri";
        case ValidationCode::FrameHintsNotIncreasing: return "FrameHintsNotIncreasing";
        case ValidationCode::AnswerNotInOptions: return "AnswerNotInOptions";
        case ValidationCode::ConfidenceOutOfRange: return "ConfidenceOutOfRange";
        case ValidationCode::EmptyEvidenceWithoutAbstain: return "EmptyEvidenceWithoutAbstain";
        case ValidationCode::EvidenceStrengthOutOfRange: return "EvidenceStrengthOutOfRange";
        case ValidationCode::EmptyEvidenceDescription: return "EmptyEvidenceDescription";
        case ValidationCode::DuplicateEvidenceId: return "DuplicateEvidenceId";
        case ValidationCode::DanglingEvidenceRef: return "DanglingEvidenceRef";
        case ValidationCode::ScoreOutOfRange: return "ScoreOutOfRange";
        case ValidationCode::VerdictInconsistencyClash: return "VerdictInconsistencyClash";
    }
    return "?";
}

struct ValidationError {
    ValidationCode code;
    std::string message;
};

inline bool has_code(const std::vector<ValidationError>& errors, ValidationCode code) {
    return std::any_of(errors.begin(), errors.end(),
                       [&](const ValidationError& e) { return e.code == code; });
}

inline bool in_unit_range(double v) { return v >= 0.0 && v <= 1.0; }

inline std::vector<ValidationError> validate_sample(const EvaluationSample& sample) {
    std::vector<ValidationError> errors;
    if (sample.options.size() < 2 || sample.options.size() > 8) {
        errors.push_back({ValidationCode::OptionCountOutOfRange,
                          "expected 2..8 options, got " + std::to_string(sample.options.size())});
    }
    for (std::size_t i = 0; i < sample.options.size(); ++i) {
        if (sample.options[i].label != option_label_for_index(i)) {
            errors.push_back({ValidationCode::OptionLabelsNotContiguous,
                              "option " + std::to_string(i) + " labeled '" +
                                  sample.options[i].label + "', expected '" +
                                  option_label_for_index(i) + "'"});
            break;
        }
    }
    if (sample.gold_answer && !sample_has_label(sample, *sample.gold_answer)) {
        errors.push_back({ValidationCode::GoldAnswerNotInOptions,
                          "gold answer '" + *sample.gold_answer + "' is not an option label"});
    }
    if (sample.media.uri.empty()) {
        errors.push_back({ValidationCode::EmptyMediaUri, "media uri is empty"});
    }
    if (sample.media.frame_hints) {
        const auto& h = *sample.media.frame_hints;
        for (std::size_t i = 0; i < h.size(); ++i) {
            if (h[i] < 0 || (i > 0 && h[i] <= h[i - 1])) {
                errors.push_back({ValidationCode::FrameHintsNotIncreasing,
                                  "frame hints must be non-negative and strictly increasing"});
                break;
            }
        }
    }
    return errors;
}

namespace detail {

inline void validate_evidence_list(const std::vector<EvidenceItem>& evidence,
                                   std::vector<ValidationError>& errors) {
    std::vector<std::string> seen;
    for (const auto& item : evidence) {
        if (item.description.empty()) {
            errors.push_back({ValidationCode::EmptyEvidenceDescription,
                              "evidence item '" + item.item_id + "' has empty description"});
        }
        if (!in_unit_range(item.strength)) {
            errors.push_back({ValidationCode::EvidenceStrengthOutOfRange,
                              "evidence item '" + item.item_id + "' strength out of [0,1]"});
        }
        if (std::find(seen.begin(), seen.end(), item.item_id) != seen.end()) {
            errors.push_back({ValidationCode::DuplicateEvidenceId,
                              "duplicate evidence item id '" + item.item_id + "'"});
        }
        seen.push_back(item.item_id);
    }
}

}  // namespace detail

inline std::vector<ValidationError> validate_actor_state(const ActorState& state,
                                                         const EvaluationSample& sample) {
    std::vector<ValidationError> errors;
    if (!sample_has_label(sample, state.answer)) {
        errors.push_back({ValidationCode::AnswerNotInOptions,
                          "answer '" + state.answer + "' is not an option label"});
    }
    if (!in_unit_range(state.confidence)) {
        errors.push_back({ValidationCode::ConfidenceOutOfRange,
                          "confidence " + std::to_string(state.confidence) + " out of [0,1]"});
    }
    if (state.evidence.empty() && !state.abstain_suggested) {
        errors.push_back({ValidationCode::EmptyEvidenceWithoutAbstain,
                          "an answer without evidence must suggest abstention"});
    }
    detail::validate_evidence_list(state.evidence, errors);
    return errors;
}

inline std::vector<ValidationError> validate_retry_state(const RetryState& state,
                                                         const EvaluationSample& sample) {
    std::vector<ValidationError> errors;
    if (!sample_has_label(sample, state.answer)) {
        errors.push_back({ValidationCode::AnswerNotInOptions,
                          "answer '" + state.answer + "' is not an option label"});
    }
    if (!in_unit_range(state.confidence)) {
        errors.push_back({ValidationCode::ConfidenceOutOfRange,
                          "confidence " + std::to_string(state.confidence) + " out of [0,1]"});
    }
    if (state.evidence.empty()) {
        errors.push_back({ValidationCode::EmptyEvidenceWithoutAbstain,
                          "retry answers must carry evidence"});
    }
    detail::validate_evidence_list(state.evidence, errors);
    return errors;
}

// Verifier states are validated against the evidence list of whichever state
// they audited (actor or retry).
inline std::vector<ValidationError> validate_verifier_state(
    const VerifierState& state, const std::vector<EvidenceItem>& audited_evidence) {
    std::vector<ValidationError> errors;
    if (!in_unit_range(state.support_score)) {
        errors.push_back({ValidationCode::ScoreOutOfRange,
                          "support score " + std::to_string(state.support_score) + " out of [0,1]"});
    }
    for (const auto& a : state.assessments) {
        bool found = std::any_of(audited_evidence.begin(), audited_evidence.end(),
                                 [&](const EvidenceItem& e) { return e.item_id == a.item_id; });
        if (!found) {
            errors.push_back({ValidationCode::DanglingEvidenceRef,
                              "assessment references unknown evidence item '" + a.item_id + "'"});
        }
    }
    if (state.verdict == Verdict::supported) {
        bool any_contradicted =
            std::any_of(state.assessments.begin(), state.assessments.end(),
                        [](const EvidenceAssessment& a) { return a.judgment == Judgment::contradicted; });
        bool any_weak =
            std::any_of(state.assessments.begin(), state.assessments.end(),
                        [](const EvidenceAssessment& a) { return a.judgment == Judgment::weak; });
        // A supported verdict tolerates inconsistencies only when they are
        // acknowledged as weak findings; contradicted findings clash outright.
        if (any_contradicted || (!state.inconsistencies.empty() && !any_weak)) {
            errors.push_back({ValidationCode::VerdictInconsistencyClash,
                              "verdict 'supported' conflicts with the recorded findings"});
        }
    }
    return errors;
}

inline std::vector<ValidationError> validate_verifier_state(const VerifierState& state,
                                                            const ActorState& audited) {
    return validate_verifier_state(state, audited.evidence);
}

inline std::vector<ValidationError> validate_verifier_state(const VerifierState& state,
                                                            const RetryState& audited) {
    return validate_verifier_state(state, audited.evidence);
}

}  // namespace echotrust
