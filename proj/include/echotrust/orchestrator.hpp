#pragma once
// Runs the answer/verify/revise loop for one sample and assembles the audit
// trail. The pipeline is deterministic given the backends: policy rules are
// pure, stage order is fixed, and every backend call is keyed by a
// per-(sample, role) attempt counter so replay scripts and counter-based
// stochastic backends see the exact same sequence.

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "echotrust/backends.hpp"
#include "echotrust/policy.hpp"
#include "echotrust/protocol.hpp"
#include "echotrust/types.hpp"

namespace echotrust {

// What to do when a stage still has no valid state after all re-asks.
enum class FailureMode { fallback_to_actor, abstain_on_failure };

inline const char* to_string(FailureMode m) {
    return m == FailureMode::fallback_to_actor ? "fallback_to_actor" : "abstain_on_failure";
}

inline std::optional<FailureMode> failure_mode_from_string(const std::string& s) {
    if (s == "fallback_to_actor") return FailureMode::fallback_to_actor;
    if (s == "abstain_on_failure") return FailureMode::abstain_on_failure;
    return std::nullopt;
}

struct PipelineConfig {
    PolicyConfig policy;
    int parse_reask_limit = 1;  // extra attempts after an unparseable reply
    FailureMode failure_mode = FailureMode::fallback_to_actor;

    bool valid() const { return policy.valid() && parse_reask_limit >= 0; }
};

inline constexpr const char* kParseRetryInstruction =
    "Your previous reply could not be parsed. Respond with exactly one JSON object matching "
    "the required schema and nothing else.";

class Pipeline {
public:
    Pipeline(PipelineConfig config, std::shared_ptr<const Backend> actor,
             std::shared_ptr<const Backend> verifier, std::shared_ptr<const Backend> retry)
        : config_(std::move(config)),
          actor_(std::move(actor)),
          verifier_(std::move(verifier)),
          retry_(std::move(retry)) {
        if (!config_.valid() || !actor_ || !verifier_ || !retry_) {
            throw std::invalid_argument("pipeline requires a valid config and three backends");
        }
    }

    const PipelineConfig& config() const { return config_; }

    FinalDecision run(const EvaluationSample& sample) const {
        AuditTrail audit;
        audit.sample_id = sample.sample_id;
        // Attempt counters span the whole sample so the two verifier calls of
        // an intervened run never share a key.
        int actor_attempts = 0;
        int verifier_attempts = 0;
        int retry_attempts = 0;

        DecideSummary summary;

        auto actor_state = run_stage<ActorState>(
            audit, StageName::actor, Role::actor, *actor_, sample, "", actor_attempts,
            [&](const std::string& raw) { return parse_actor_output(raw, sample); });
        if (!actor_state) {
            summary.degraded_stages.push_back("actor");
            summary.abstained = true;
            summary.abstain_reasons.push_back("stage_failure:actor");
            return finish(audit, std::nullopt, Provenance::abstained, 0.0, summary);
        }

        const std::string verify1_context = render_conditioning_context(*actor_state);
        auto verify1_state = run_stage<VerifierState>(
            audit, StageName::verify1, Role::verifier, *verifier_, sample, verify1_context,
            verifier_attempts,
            [&](const std::string& raw) { return parse_verifier_output(raw, *actor_state); });
        if (!verify1_state) {
            summary.degraded_stages.push_back("verify1");
            if (config_.failure_mode == FailureMode::abstain_on_failure) {
                summary.abstained = true;
                summary.abstain_reasons.push_back("stage_failure:verify1");
                return finish(audit, std::nullopt, Provenance::abstained, 0.0, summary);
            }
            // Unverified fallback: keep the actor answer with zero support and
            // skip the abstention rule, which needs a verifier state.
            return finish(audit, actor_state->answer, Provenance::kept_actor, 0.0, summary);
        }

        const InterventionDecision intervention =
            decide_intervention(*actor_state, *verify1_state, config_.policy);
        audit.intervention = intervention.z;
        summary.z = intervention.z;
        summary.intervention_reasons = intervention.reasons;

        std::optional<RetryState> retry_state;
        std::optional<VerifierState> verify2_state;
        bool use_retry = false;

        if (intervention.z == 1) {
            const std::string retry_context =
                render_conditioning_context(*actor_state, *verify1_state);
            retry_state = run_stage<RetryState>(
                audit, StageName::retry, Role::retry, *retry_, sample, retry_context,
                retry_attempts,
                [&](const std::string& raw) { return parse_retry_output(raw, sample); });
            if (!retry_state) {
                summary.degraded_stages.push_back("retry");
                if (config_.failure_mode == FailureMode::abstain_on_failure) {
                    summary.abstained = true;
                    summary.abstain_reasons.push_back("stage_failure:retry");
                    return finish(audit, std::nullopt, Provenance::abstained,
                                  verify1_state->support_score, summary);
                }
            } else {
                const std::string verify2_context = render_conditioning_context(*retry_state);
                verify2_state = run_stage<VerifierState>(
                    audit, StageName::verify2, Role::verifier, *verifier_, sample, verify2_context,
                    verifier_attempts, [&](const std::string& raw) {
                        return parse_verifier_output(raw, *retry_state);
                    });
                if (!verify2_state) {
                    summary.degraded_stages.push_back("verify2");
                    if (config_.failure_mode == FailureMode::abstain_on_failure) {
                        summary.abstained = true;
                        summary.abstain_reasons.push_back("stage_failure:verify2");
                        return finish(audit, std::nullopt, Provenance::abstained,
                                      verify1_state->support_score, summary);
                    }
                } else {
                    const AcceptanceDecision acceptance =
                        posterior_accept(*verify2_state, *verify1_state, config_.policy);
                    use_retry = acceptance.accept;
                    summary.accepted = acceptance.accept;
                    summary.accept_reasons = acceptance.reasons;
                }
            }
        }
        audit.accepted = use_retry;

        const VerifierState& final_verifier = use_retry ? *verify2_state : *verify1_state;
        const std::string& final_answer = use_retry ? retry_state->answer : actor_state->answer;
        const double final_confidence =
            use_retry ? retry_state->confidence : actor_state->confidence;

        const AbstainDecision abstain =
            decide_abstain(final_verifier, final_confidence, config_.policy);
        if (abstain.abstain) {
            summary.abstained = true;
            summary.abstain_reasons = abstain.reasons;
            return finish(audit, std::nullopt, Provenance::abstained,
                          final_verifier.support_score, summary);
        }
        return finish(audit, final_answer,
                      use_retry ? Provenance::switched_to_retry : Provenance::kept_actor,
                      final_verifier.support_score, summary);
    }

private:
    struct DecideSummary {
        int z = 0;
        std::vector<std::string> intervention_reasons;
        bool accepted = false;
        std::vector<std::string> accept_reasons;
        bool abstained = false;
        std::vector<std::string> abstain_reasons;
        std::vector<std::string> degraded_stages;
    };

    template <typename State, typename ParseFn>
    std::optional<State> run_stage(AuditTrail& audit, StageName stage, Role role,
                                   const Backend& backend, const EvaluationSample& sample,
                                   const std::string& context, int& attempt_counter,
                                   ParseFn&& parse) const {
        StageRecord record;
        record.name = stage;
        record.backend_id = backend.id();
        std::optional<State> state;
        for (int ask = 0; ask <= config_.parse_reask_limit; ++ask) {
            const std::string attempt_context =
                ask == 0 ? context
                         : (context.empty() ? std::string(kParseRetryInstruction)
                                            : context + "\n" + kParseRetryInstruction);
            StageAttempt attempt;
            const auto start = std::chrono::steady_clock::now();
            try {
                attempt.raw_text = backend.invoke(role, sample, attempt_context, attempt_counter++);
            } catch (const BackendError& e) {
                attempt.parse_failure = std::string("backend_error:") + e.what();
                attempt.duration_ms = elapsed_ms(start);
                record.attempts.push_back(std::move(attempt));
                record.failure = record.attempts.back().parse_failure;
                audit.stages.push_back(std::move(record));
                return std::nullopt;  // transport retries already happened inside the backend
            }
            auto outcome = parse(attempt.raw_text);
            attempt.parse_ok = outcome.ok();
            attempt.repair_applied = outcome.repair_applied;
            if (!outcome.ok()) {
                attempt.parse_failure = std::string(to_string(*outcome.failure_reason)) +
                                        (outcome.failure_detail.empty()
                                             ? ""
                                             : ":" + outcome.failure_detail);
            }
            attempt.duration_ms = elapsed_ms(start);
            record.attempts.push_back(std::move(attempt));
            if (outcome.ok()) {
                state = std::move(outcome.state);
                break;
            }
        }
        if (state) {
            record.ok = true;
            record.parsed_json = serialize_state(*state);
            fill_summary(record, *state);
        } else {
            record.failure = record.attempts.back().parse_failure;
        }
        audit.stages.push_back(std::move(record));
        return state;
    }

    static void fill_summary(StageRecord& record, const ActorState& s) {
        record.answer = s.answer;
        record.confidence = s.confidence;
    }
    static void fill_summary(StageRecord& record, const RetryState& s) {
        record.answer = s.answer;
        record.confidence = s.confidence;
    }
    static void fill_summary(StageRecord& record, const VerifierState& s) {
        record.verdict = to_string(s.verdict);
        record.support_score = s.support_score;
    }

    static double elapsed_ms(std::chrono::steady_clock::time_point start) {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    }

    FinalDecision finish(AuditTrail& audit, std::optional<std::string> answer,
                         Provenance provenance, double final_support_score,
                         const DecideSummary& summary) const {
        StageRecord decide;
        decide.name = StageName::decide;
        decide.backend_id = "policy";
        decide.ok = true;
        json doc;
        doc["z"] = summary.z;
        doc["intervention_reasons"] = summary.intervention_reasons;
        doc["accepted"] = summary.accepted;
        doc["accept_reasons"] = summary.accept_reasons;
        doc["abstained"] = summary.abstained;
        doc["abstain_reasons"] = summary.abstain_reasons;
        doc["degraded_stages"] = summary.degraded_stages;
        decide.parsed_json = doc.dump();
        audit.stages.push_back(std::move(decide));

        FinalDecision decision;
        decision.answer = std::move(answer);
        decision.provenance = provenance;
        decision.final_support_score = final_support_score;
        decision.audit = std::move(audit);
        return decision;
    }

    PipelineConfig config_;
    std::shared_ptr<const Backend> actor_;
    std::shared_ptr<const Backend> verifier_;
    std::shared_ptr<const Backend> retry_;
};

}  // namespace echotrust
