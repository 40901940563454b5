// Acceptance gate for the loop engine. Each test is one criterion and prints
// a single pass/fail line so the binary's output doubles as a checklist:
//   1 intervention and switch accounting reproduced exactly end to end
//   2 loop invariants over randomized scripted runs
//   3 policy decisions match an independent clause-by-clause oracle
//   4 canonical codec round-trips losslessly, golden bytes stable
//   5 stochastic simulation lands on the enumerated expectation
//   6 worker counts do not change results; interrupted runs resume exactly
//   7 dataset validation reports the constructed corpus shape

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "echotrust/config.hpp"
#include "echotrust/harness.hpp"
#include "echotrust/metrics.hpp"
#include "echotrust/simulate.hpp"
#include "support/accounting_fixture.hpp"
#include "support/helpers.hpp"

using namespace echotrust;
using namespace testsupport;

namespace {

// Prints the criterion verdict even when an ASSERT bails out of the body.
struct CriterionLine {
    int index;
    const char* label;
    ~CriterionLine() {
        std::printf("acceptance %d/7 (%s): %s\n", index, label,
                    ::testing::Test::HasFailure() ? "FAIL" : "PASS");
        std::fflush(stdout);
    }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args, const std::filesystem::path& dir) {
    static int counter = 0;
    const auto out_path = dir / ("stdout." + std::to_string(counter) + ".txt");
    const auto err_path = dir / ("stderr." + std::to_string(counter) + ".txt");
    ++counter;
    const std::string command = std::string(ECHOTRUST_CLI_PATH) + " " + args + " >" +
                                out_path.string() + " 2>" + err_path.string();
    const int raw = std::system(command.c_str());
    CliResult result;
    if (raw != -1 && WIFEXITED(raw)) result.exit_code = WEXITSTATUS(raw);
    result.out = read_file(out_path);
    result.err = read_file(err_path);
    return result;
}

}  // namespace

TEST(Acceptance, SwitchAccountingReproducedEndToEnd) {
    CriterionLine line{1, "intervention and switch accounting"};
    const auto start = std::chrono::steady_clock::now();

    auto dir = temp_dir("acceptance1");
    auto files = write_accounting_files(dir);
    auto run = run_cli("run --config " + files.config.string() + " --format csv", dir);
    ASSERT_EQ(run.exit_code, 0) << run.err;
    EXPECT_NE(run.out.find("actor_accuracy,0.6200"), std::string::npos);
    EXPECT_NE(run.out.find("final_accuracy,0.7600"), std::string::npos);

    const auto run_dir = files.out / files.run_id;
    auto metrics = run_cli("metrics " + run_dir.string() + " --format json", dir);
    ASSERT_EQ(metrics.exit_code, 0) << metrics.err;
    auto doc = json::parse(metrics.out);
    EXPECT_DOUBLE_EQ(doc["accuracy"]["actor_accuracy"].get<double>(), 0.62);
    EXPECT_DOUBLE_EQ(doc["accuracy"]["final_accuracy"].get<double>(), 0.76);
    EXPECT_EQ(doc["accounting_identity"], true);

    auto log = load_run_log(run_dir);
    const auto accuracy = compute_accuracy(log);
    const auto sq = compute_switch_quality(log);
    std::string error;
    check_accounting_metrics(accuracy, sq, AccountingExpected{}, error);
    EXPECT_EQ(error, "");
    EXPECT_TRUE(verify_accounting_identity(sq, accuracy));

    EXPECT_LT(seconds_since(start), 5.0);
}

TEST(Acceptance, RandomizedRunsKeepTheLoopInvariants) {
    CriterionLine line{2, "randomized loop invariants"};
    constexpr int kRuns = 1000;
    const std::array<std::string, 4> labels{"A", "B", "C", "D"};
    const std::array<Verdict, 3> verdicts{Verdict::supported, Verdict::insufficient,
                                          Verdict::contradicted};
    const std::array<Recommendation, 3> recs{Recommendation::keep, Recommendation::retry,
                                             Recommendation::abstain};

    std::mt19937 rng(20250817);
    auto unit = [&rng] { return (rng() % 21) / 20.0; };

    struct Planned {
        std::string actor_answer;
        std::string retry_answer;
        bool retry_reask = false;
    };
    std::vector<DatasetRecord> records;
    std::vector<Planned> planned;
    ScriptedBehavior script;
    for (int i = 0; i < kRuns; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "r%04d", i);
        DatasetRecord record;
        record.sample = make_sample(id);
        records.push_back(record);

        Planned plan;
        plan.actor_answer = labels[rng() % 4];
        plan.retry_answer = labels[rng() % 4];
        plan.retry_reask = rng() % 100 < 30;
        planned.push_back(plan);

        ActorState actor = make_actor_state(plan.actor_answer, unit());
        actor.abstain_suggested = rng() % 100 < 15;
        script.set(id, Role::actor, 0, serialize_state(actor));

        script.set(id, Role::verifier, 0,
                   serialize_state(make_verifier_state(verdicts[rng() % 3], unit(), recs[rng() % 3])));
        script.set(id, Role::verifier, 1,
                   serialize_state(make_verifier_state(verdicts[rng() % 3], unit(), recs[rng() % 3])));

        RetryState retry = make_retry_state(plan.retry_answer, unit());
        if (plan.retry_reask) {
            script.set(id, Role::retry, 0, "thinking about the request again");
            script.set(id, Role::retry, 1, serialize_state(retry));
        } else {
            script.set(id, Role::retry, 0, serialize_state(retry));
        }
    }

    auto base = std::make_shared<ScriptedBackend>(script);
    auto actor_calls = std::make_shared<CountingBackend>(base);
    auto verifier_calls = std::make_shared<CountingBackend>(base);
    auto retry_calls = std::make_shared<CountingBackend>(base);
    Pipeline pipeline(PipelineConfig{}, actor_calls, verifier_calls, retry_calls);

    int violations = 0;
    for (int i = 0; i < kRuns; ++i) {
        const auto& sample = records[i].sample;
        const FinalDecision decision = pipeline.run(sample);
        const int z = decision.audit.intervention;

        // (a) the outcome is the actor answer, the retry answer, or abstention
        if (decision.answer) {
            if (*decision.answer != planned[i].actor_answer &&
                *decision.answer != planned[i].retry_answer) {
                ++violations;
            }
        } else if (decision.provenance != Provenance::abstained) {
            ++violations;
        }

        // (b) a switched outcome is exactly a posterior-accepted revision
        if (decision.provenance == Provenance::switched_to_retry &&
            !(decision.audit.accepted && z == 1 &&
              *decision.answer == planned[i].retry_answer)) {
            ++violations;
        }
        if (decision.provenance != Provenance::abstained &&
            decision.audit.accepted !=
                (decision.provenance == Provenance::switched_to_retry)) {
            ++violations;
        }

        // (c) no intervention means no retry-loop backend traffic
        const auto retries = retry_calls->count_for(sample.sample_id, Role::retry);
        const auto verifies = verifier_calls->count_for(sample.sample_id, Role::verifier);
        if (z == 0 && (retries != 0 || verifies != 1)) ++violations;
        if (z == 1) {
            const std::size_t expected_retries = planned[i].retry_reask ? 2 : 1;
            if (retries != expected_retries || verifies != 2) ++violations;
        }

        if (!audit_stage_order_ok(decision.audit)) ++violations;
    }
    EXPECT_EQ(violations, 0);

    // (d) the aggregated switch-quality chain holds over the same runs
    auto fresh = std::make_shared<ScriptedBackend>(script);
    Pipeline replay(PipelineConfig{}, fresh, fresh, fresh);
    auto log = run_evaluation(records, replay, RunOptions{});
    EXPECT_TRUE(switch_quality_chain_ok(compute_switch_quality(log)));
}

TEST(Acceptance, PolicyMatchesAnIndependentOracle) {
    CriterionLine line{3, "policy oracle equivalence"};
    const auto start = std::chrono::steady_clock::now();
    const std::array<Verdict, 3> verdicts{Verdict::contradicted, Verdict::insufficient,
                                          Verdict::supported};
    const std::array<Recommendation, 3> recs{Recommendation::keep, Recommendation::retry,
                                             Recommendation::abstain};

    int mismatches = 0;

    // Intervention: clause list rebuilt from scratch, compared reason by reason.
    for (Verdict verdict : verdicts) {
        for (int score_step = 0; score_step <= 20; ++score_step) {
            const double score = score_step / 20.0;
            for (Recommendation rec : recs) {
                for (int doubt = 0; doubt <= 1; ++doubt) {
                    for (int honor = 0; honor <= 1; ++honor) {
                        for (int budget = 0; budget <= 1; ++budget) {
                            PolicyConfig cfg;
                            cfg.honor_recommendation = honor == 1;
                            cfg.max_retries = budget;
                            ActorState actor = make_actor_state("A", 0.5);
                            actor.abstain_suggested = doubt == 1;
                            VerifierState verifier = make_verifier_state(verdict, score, rec);

                            std::vector<std::string> expected;
                            if (budget != 0) {
                                if (verdict != Verdict::supported) {
                                    expected.push_back("verdict_not_supported");
                                }
                                if (score < cfg.tau_support) {
                                    expected.push_back("support_below_threshold");
                                }
                                if (cfg.honor_recommendation && rec == Recommendation::retry) {
                                    expected.push_back("recommendation_retry");
                                }
                                if (cfg.honor_recommendation && doubt == 1 &&
                                    verdict != Verdict::supported) {
                                    expected.push_back("actor_self_doubt");
                                }
                            }
                            const auto got = decide_intervention(actor, verifier, cfg);
                            if (got.z != (expected.empty() ? 0 : 1) || got.reasons != expected) {
                                ++mismatches;
                            }
                        }
                    }
                }
            }
        }
    }

    // Posterior acceptance: independent rank table and margin rule.
    const std::map<Verdict, int> rank{{Verdict::contradicted, 0},
                                      {Verdict::insufficient, 1},
                                      {Verdict::supported, 2}};
    const std::array<double, 3> deltas{0.0, 0.05, 0.1};
    for (Verdict revised_verdict : verdicts) {
        for (Verdict original_verdict : verdicts) {
            for (int revised_step = 0; revised_step <= 20; ++revised_step) {
                for (int original_step = 0; original_step <= 20; ++original_step) {
                    const double revised_score = revised_step / 20.0;
                    const double original_score = original_step / 20.0;
                    for (double delta : deltas) {
                        PolicyConfig cfg;
                        cfg.delta_accept = delta;
                        const auto got = posterior_accept(
                            make_verifier_state(revised_verdict, revised_score),
                            make_verifier_state(original_verdict, original_score), cfg);

                        bool accept = false;
                        std::string reason;
                        if (rank.at(revised_verdict) > rank.at(original_verdict)) {
                            accept = true;
                            reason = "verdict_upgrade";
                        } else if (rank.at(revised_verdict) < rank.at(original_verdict)) {
                            reason = "verdict_downgrade";
                        } else if (revised_score >= original_score + delta) {
                            accept = true;
                            reason = "score_margin";
                        } else {
                            reason = "margin_not_met";
                        }
                        if (got.accept != accept || got.reasons.size() != 1 ||
                            got.reasons[0] != reason) {
                            ++mismatches;
                        }
                    }
                }
            }
        }
    }

    EXPECT_EQ(mismatches, 0);
    EXPECT_LT(seconds_since(start), 10.0);
}

TEST(Acceptance, CodecRoundTripsWithoutRepair) {
    CriterionLine line{4, "codec round-trip"};
    const auto sample = make_sample();
    std::size_t failures = 0;
    constexpr int kPerKind = 4000;

    for (int i = 0; i < kPerKind; ++i) {
        detail::DeterministicRng rng(90000 + i);
        const ActorState state = random_actor_state(rng, sample);
        const auto outcome = parse_actor_output(serialize_state(state), sample);
        if (!outcome.ok() || outcome.repair_applied || !(*outcome.state == state)) ++failures;
    }
    for (int i = 0; i < kPerKind; ++i) {
        detail::DeterministicRng rng(190000 + i);
        const RetryState state = random_retry_state(rng, sample);
        const auto outcome = parse_retry_output(serialize_state(state), sample);
        if (!outcome.ok() || outcome.repair_applied || !(*outcome.state == state)) ++failures;
    }
    for (int i = 0; i < kPerKind; ++i) {
        detail::DeterministicRng rng(290000 + i);
        const ActorState audited = random_actor_state(rng, sample);
        const VerifierState state = random_verifier_state(rng, audited.evidence);
        const auto outcome = parse_verifier_output(serialize_state(state), audited);
        if (!outcome.ok() || outcome.repair_applied || !(*outcome.state == state)) ++failures;
    }
    EXPECT_EQ(failures, 0u);

    const std::filesystem::path golden(ECHOTRUST_GOLDEN_DIR);
    auto chomp = [](std::string text) {
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        return text;
    };
    EXPECT_EQ(serialize_state(make_actor_state()), chomp(read_file(golden / "actor_state.json")));
    EXPECT_EQ(serialize_state(make_retry_state()), chomp(read_file(golden / "retry_state.json")));
    EXPECT_EQ(serialize_state(make_verifier_state(Verdict::insufficient, 0.2,
                                                  Recommendation::retry)),
              chomp(read_file(golden / "verifier_state.json")));
}

TEST(Acceptance, SimulationLandsOnTheEnumeratedExpectation) {
    CriterionLine line{5, "simulation matches enumerated expectation"};
    const auto start = std::chrono::steady_clock::now();

    StochasticBehavior behavior;
    behavior.seed = 2026;
    behavior.actor_accuracy = 0.62;
    behavior.verifier_error_detect = 0.7;
    behavior.verifier_false_alarm = 0.1;
    behavior.retry_fix_rate = 0.6;
    behavior.retry_break_rate = 0.1;

    // Independent oracle: walk every branch of the outcome lattice and apply
    // the real policy to the exact verifier states the stochastic backend
    // synthesizes (flagged: insufficient/0.2/retry, clean: supported/0.8/keep).
    VerifierState flagged;
    flagged.verdict = Verdict::insufficient;
    flagged.support_score = 0.2;
    flagged.recommendation = Recommendation::retry;
    VerifierState clean;
    clean.verdict = Verdict::supported;
    clean.support_score = 0.8;
    clean.recommendation = Recommendation::keep;
    const ActorState synthetic_actor = make_actor_state("A", 0.8);
    const PolicyConfig policy;

    double expected = 0.0;
    double abstain_mass = 0.0;
    for (int actor_ok = 0; actor_ok <= 1; ++actor_ok) {
        const double p_actor = actor_ok ? behavior.actor_accuracy : 1.0 - behavior.actor_accuracy;
        for (int flag1 = 0; flag1 <= 1; ++flag1) {
            const double p_flag1 =
                actor_ok ? (flag1 ? behavior.verifier_false_alarm
                                  : 1.0 - behavior.verifier_false_alarm)
                         : (flag1 ? behavior.verifier_error_detect
                                  : 1.0 - behavior.verifier_error_detect);
            const VerifierState& verify1 = flag1 ? flagged : clean;
            const int z = decide_intervention(synthetic_actor, verify1, policy).z;
            if (z == 0) {
                if (decide_abstain(verify1, 0.8, policy).abstain) {
                    abstain_mass += p_actor * p_flag1;
                } else {
                    expected += p_actor * p_flag1 * actor_ok;
                }
                continue;
            }
            for (int retry_ok = 0; retry_ok <= 1; ++retry_ok) {
                const double p_retry =
                    actor_ok ? (retry_ok ? 1.0 - behavior.retry_break_rate
                                         : behavior.retry_break_rate)
                             : (retry_ok ? behavior.retry_fix_rate
                                         : 1.0 - behavior.retry_fix_rate);
                for (int flag2 = 0; flag2 <= 1; ++flag2) {
                    const double p_flag2 =
                        retry_ok ? (flag2 ? behavior.verifier_false_alarm
                                          : 1.0 - behavior.verifier_false_alarm)
                                 : (flag2 ? behavior.verifier_error_detect
                                          : 1.0 - behavior.verifier_error_detect);
                    const VerifierState& verify2 = flag2 ? flagged : clean;
                    const bool accepted = posterior_accept(verify2, verify1, policy).accept;
                    const VerifierState& final_verifier = accepted ? verify2 : verify1;
                    const int final_ok = accepted ? retry_ok : actor_ok;
                    const double mass = p_actor * p_flag1 * p_retry * p_flag2;
                    if (decide_abstain(final_verifier, 0.8, policy).abstain) {
                        abstain_mass += mass;
                    } else {
                        expected += mass * final_ok;
                    }
                }
            }
        }
    }
    EXPECT_DOUBLE_EQ(abstain_mass, 0.0);
    EXPECT_NEAR(expected_outcomes(behavior).final_accuracy, expected, 1e-12);

    constexpr std::size_t kSamples = 100000;
    auto records = make_synthetic_dataset(kSamples, 77);
    auto backend = std::make_shared<StochasticBackend>(behavior);
    Pipeline pipeline(PipelineConfig{}, backend, backend, backend);
    auto log = run_evaluation(records, pipeline, RunOptions{});
    const double empirical = compute_accuracy(log).final_accuracy;

    const double sigma = std::sqrt(expected * (1.0 - expected) / kSamples);
    EXPECT_NEAR(empirical, expected, 3.0 * sigma);
    EXPECT_LT(seconds_since(start), 60.0);
}

TEST(Acceptance, WorkerCountIsIrrelevantAndRunsResumeExactly) {
    CriterionLine line{6, "determinism and resume"};

    StochasticBehavior behavior;
    behavior.seed = 31;
    behavior.actor_accuracy = 0.62;
    behavior.verifier_error_detect = 0.7;
    auto records = make_synthetic_dataset(100, 13);
    auto backend = std::make_shared<StochasticBackend>(behavior);
    Pipeline pipeline(PipelineConfig{}, backend, backend, backend);

    RunOptions serial;
    serial.workers = 1;
    RunOptions parallel;
    parallel.workers = 8;
    auto serial_log = run_evaluation(records, pipeline, serial);
    auto parallel_log = run_evaluation(records, pipeline, parallel);
    EXPECT_EQ(serial_log.records, parallel_log.records);

    auto dir = temp_dir("acceptance6");
    RunOptions persisted;
    persisted.workers = 1;
    persisted.out_dir = dir;
    persisted.run_id = "reference";
    persisted.config_snapshot = json{{"seed", 31}};
    auto reference = run_evaluation(records, pipeline, persisted);

    RunOptions resumable = persisted;
    resumable.run_id = "interrupted";
    auto interrupting = std::make_shared<InterruptingBackend>(backend, 40);
    Pipeline doomed(PipelineConfig{}, interrupting, backend, backend);
    EXPECT_THROW(run_evaluation(records, doomed, resumable), std::runtime_error);
    EXPECT_EQ(load_run_log(dir / "interrupted").records.size(), 40u);

    auto resumed = run_evaluation(records, pipeline, resumable);
    ASSERT_EQ(resumed.records.size(), 100u);
    std::set<std::string> ids;
    for (const auto& record : resumed.records) ids.insert(record.sample_id);
    EXPECT_EQ(ids.size(), 100u);
    EXPECT_EQ(resumed.records, reference.records);
}

TEST(Acceptance, DatasetReportMatchesTheConstructedCorpus) {
    CriterionLine line{7, "dataset report counts"};

    auto records = make_synthetic_dataset(622, 4, 48, 14);
    for (const auto& record : records) {
        EXPECT_TRUE(validate_sample(record.sample).empty());
    }
    const DatasetReport report = validate_dataset(records);
    EXPECT_EQ(report.records, 622u);
    EXPECT_EQ(report.unique_videos, 622u);
    EXPECT_TRUE(report.duplicate_videos.empty());
    EXPECT_EQ(report.distinct_view_labels, 48u);
    EXPECT_EQ(report.distinct_structures, 14u);
    EXPECT_EQ(report.option_count_histogram, (std::map<std::size_t, std::size_t>{{4, 622}}));
    EXPECT_FALSE(report.unique_patients.has_value());

    auto dir = temp_dir("acceptance7");
    write_dataset(records, dir / "corpus.jsonl");
    EXPECT_EQ(load_dataset(dir / "corpus.jsonl"), records);
}
