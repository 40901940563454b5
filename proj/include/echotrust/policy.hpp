#pragma once
// Deterministic decision rules of the loop: when to trigger re-reasoning,
// whether to accept a revised answer, and when to abstain outright.
//
// All three rules are pure functions over validated states. Every returned
// decision carries the reason codes of the clauses that fired, and those codes
// end up verbatim in the audit trail.

#include <string>
#include <vector>

#include "echotrust/types.hpp"

namespace echotrust {

struct PolicyConfig {
    double tau_support = 0.5;          // intervention threshold on support_score
    double delta_accept = 0.05;        // margin a revision must win by on equal verdicts
    double tau_abstain_support = 0.3;  // abstain when support AND confidence drop below
    double tau_abstain_conf = 0.3;     //   their respective thresholds
    bool honor_recommendation = true;  // follow explicit retry/abstain recommendations
    int max_retries = 1;               // loop shape is fixed; only 0 or 1 is legal

    bool valid() const {
        return in_unit_range(tau_support) && delta_accept >= 0.0 &&
               in_unit_range(tau_abstain_support) && in_unit_range(tau_abstain_conf) &&
               max_retries >= 0 && max_retries <= 1;
    }
};

// Reason codes, stable strings for audit logs.
inline constexpr const char* kReasonVerdictNotSupported = "verdict_not_supported";
inline constexpr const char* kReasonSupportBelowThreshold = "support_below_threshold";
inline constexpr const char* kReasonRecommendationRetry = "recommendation_retry";
inline constexpr const char* kReasonActorSelfDoubt = "actor_self_doubt";
inline constexpr const char* kReasonVerdictUpgrade = "verdict_upgrade";
inline constexpr const char* kReasonScoreMargin = "score_margin";
inline constexpr const char* kReasonVerdictDowngrade = "verdict_downgrade";
inline constexpr const char* kReasonMarginNotMet = "margin_not_met";
inline constexpr const char* kReasonVerdictContradicted = "verdict_contradicted";
inline constexpr const char* kReasonLowSupportAndConfidence = "low_support_and_confidence";
inline constexpr const char* kReasonRecommendationAbstain = "recommendation_abstain";

struct InterventionDecision {
    int z = 0;  // 1 = re-reasoning required
    std::vector<std::string> reasons;
};

struct AcceptanceDecision {
    bool accept = false;
    std::vector<std::string> reasons;
};

struct AbstainDecision {
    bool abstain = false;
    std::vector<std::string> reasons;
};

// Intervention rule: re-reasoning triggers when the verifier's judgment is not
// an adequate justification of the answer. Reason codes list every clause
// that fired. With max_retries = 0 the loop has no retry budget and the rule
// never intervenes.
inline InterventionDecision decide_intervention(const ActorState& actor,
                                                const VerifierState& verifier,
                                                const PolicyConfig& cfg) {
    InterventionDecision decision;
    if (cfg.max_retries == 0) return decision;
    if (verifier.verdict == Verdict::insufficient || verifier.verdict == Verdict::contradicted) {
        decision.reasons.push_back(kReasonVerdictNotSupported);
    }
    if (verifier.support_score < cfg.tau_support) {
        decision.reasons.push_back(kReasonSupportBelowThreshold);
    }
    if (cfg.honor_recommendation && verifier.recommendation == Recommendation::retry) {
        decision.reasons.push_back(kReasonRecommendationRetry);
    }
    if (cfg.honor_recommendation && actor.abstain_suggested &&
        verifier.verdict != Verdict::supported) {
        decision.reasons.push_back(kReasonActorSelfDoubt);
    }
    decision.z = decision.reasons.empty() ? 0 : 1;
    return decision;
}

// contradicted < insufficient < supported
inline int verdict_rank(Verdict v) {
    switch (v) {
        case Verdict::contradicted: return 0;
        case Verdict::insufficient: return 1;
        case Verdict::supported: return 2;
    }
    return 0;
}

// Posterior acceptance: the revision wins only on a verdict upgrade, or on an
// equal verdict with a support-score gain of at least delta_accept. Ties keep
// the original answer, so re-reasoning cannot introduce drift for free.
inline AcceptanceDecision posterior_accept(const VerifierState& revised,
                                           const VerifierState& original,
                                           const PolicyConfig& cfg) {
    AcceptanceDecision decision;
    const int revised_rank = verdict_rank(revised.verdict);
    const int original_rank = verdict_rank(original.verdict);
    if (revised_rank > original_rank) {
        decision.accept = true;
        decision.reasons.push_back(kReasonVerdictUpgrade);
    } else if (revised_rank < original_rank) {
        decision.reasons.push_back(kReasonVerdictDowngrade);
    } else if (revised.support_score >= original.support_score + cfg.delta_accept) {
        decision.accept = true;
        decision.reasons.push_back(kReasonScoreMargin);
    } else {
        decision.reasons.push_back(kReasonMarginNotMet);
    }
    return decision;
}

// Abstention rule over the verifier state of whichever answer was accepted.
inline AbstainDecision decide_abstain(const VerifierState& final_verifier, double final_confidence,
                                      const PolicyConfig& cfg) {
    AbstainDecision decision;
    if (final_verifier.verdict == Verdict::contradicted) {
        decision.reasons.push_back(kReasonVerdictContradicted);
    }
    if (final_verifier.support_score < cfg.tau_abstain_support &&
        final_confidence < cfg.tau_abstain_conf) {
        decision.reasons.push_back(kReasonLowSupportAndConfidence);
    }
    if (cfg.honor_recommendation && final_verifier.recommendation == Recommendation::abstain) {
        decision.reasons.push_back(kReasonRecommendationAbstain);
    }
    decision.abstain = !decision.reasons.empty();
    return decision;
}

}  // namespace echotrust
