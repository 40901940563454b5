#pragma once
// A 100-sample scripted fixture whose per-sample outcomes realize the target
// intervention/switch accounting exactly:
//   actor correct 62, keep 65, intervene 35, retry backend calls 51 (16
//   parse re-asks), answer changed 34, accepted switches 27 split 20/6/1
//   into wrong->correct / correct->wrong / wrong->wrong, final correct 76.
//
// Group layout over sample index i (gold is always label A):
//   [ 0,56)  actor A, verify supported            keep, correct
//   [56,65)  actor B, verify supported            keep, wrong
//   [65,85)  actor B, flagged, retry A, accepted  wrong->correct (16 re-asks)
//   [85,91)  actor A, flagged, retry B, accepted  correct->wrong
//   [91,92)  actor B, flagged, retry C, accepted  wrong->wrong
//   [92,99)  actor B, flagged, retry C, rejected  stays wrong
//   [99]     actor B, flagged, retry B, rejected  unchanged

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "echotrust/config.hpp"
#include "echotrust/harness.hpp"
#include "echotrust/metrics.hpp"
#include "echotrust/protocol.hpp"

#include "support/helpers.hpp"

namespace testsupport {

struct AccountingExpected {
    std::size_t total = 100;
    std::size_t actor_correct = 62;
    std::size_t final_correct = 76;
    std::size_t keep_actor = 65;
    std::size_t retry_actor = 35;
    std::size_t retry_attempted = 51;
    std::size_t retry_answer_changed = 34;
    std::size_t switch_applied = 27;
    std::size_t wrong_to_correct = 20;
    std::size_t correct_to_wrong = 6;
    std::size_t wrong_to_wrong = 1;
};

struct AccountingFixture {
    std::vector<DatasetRecord> records;
    ScriptedBehavior script;
    AccountingExpected expected;
};

inline AccountingFixture make_accounting_fixture() {
    AccountingFixture fixture;
    for (int i = 0; i < 100; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "s%03d", i);
        EvaluationSample sample = make_sample(id);
        sample.media.uri = "fixture://video/" + std::to_string(i);
        DatasetRecord record;
        record.sample = sample;
        fixture.records.push_back(record);

        const bool actor_right = i < 56 || (85 <= i && i < 91);
        const bool flagged = i >= 65;
        const std::string actor_answer = actor_right ? "A" : "B";

        ActorState actor = make_actor_state(actor_answer, 0.8);
        fixture.script.set(id, Role::actor, 0, serialize_state(actor));

        VerifierState verify1 = flagged
                                    ? make_verifier_state(Verdict::insufficient, 0.2,
                                                          Recommendation::retry)
                                    : make_verifier_state(Verdict::supported, 0.9,
                                                          Recommendation::keep);
        fixture.script.set(id, Role::verifier, 0, serialize_state(verify1));
        if (!flagged) continue;

        std::string retry_answer;
        bool accepted;
        if (i < 85) {
            retry_answer = "A";  // fixed
            accepted = true;
        } else if (i < 91) {
            retry_answer = "B";  // broken
            accepted = true;
        } else if (i < 92) {
            retry_answer = "C";  // changed, still wrong
            accepted = true;
        } else if (i < 99) {
            retry_answer = "C";  // changed but rejected
            accepted = false;
        } else {
            retry_answer = "B";  // unchanged, rejected
            accepted = false;
        }

        RetryState retry = make_retry_state(retry_answer, 0.75);
        const bool reask = 65 <= i && i < 81;  // garbage first attempt, 16 samples
        if (reask) {
            fixture.script.set(id, Role::retry, 0, "on reflection the answer might change");
            fixture.script.set(id, Role::retry, 1, serialize_state(retry));
        } else {
            fixture.script.set(id, Role::retry, 0, serialize_state(retry));
        }

        VerifierState verify2 = accepted ? make_verifier_state(Verdict::supported, 0.8,
                                                               Recommendation::keep)
                                         : make_verifier_state(Verdict::insufficient, 0.2,
                                                               Recommendation::retry);
        fixture.script.set(id, Role::verifier, 1, serialize_state(verify2));
    }
    return fixture;
}

struct AccountingFiles {
    std::filesystem::path dataset;
    std::filesystem::path script;
    std::filesystem::path config;
    std::filesystem::path out;
    std::string run_id = "accounting";
};

inline AccountingFiles write_accounting_files(const std::filesystem::path& dir) {
    const AccountingFixture fixture = make_accounting_fixture();
    AccountingFiles files;
    files.dataset = dir / "dataset.jsonl";
    files.script = dir / "script.json";
    files.config = dir / "config.json";
    files.out = dir / "out";
    write_dataset(fixture.records, files.dataset);
    write_file(files.script, script_to_json(fixture.script).dump(2) + "\n");
    json config;
    config["backend"] = {{"kind", "scripted"}};
    config["script"] = files.script.string();
    config["dataset"] = files.dataset.string();
    config["out"] = files.out.string();
    config["workers"] = 1;
    config["run_id"] = files.run_id;
    write_file(files.config, config.dump(2) + "\n");
    return files;
}

inline void check_accounting_metrics(const AccuracySummary& accuracy, const SwitchQuality& sq,
                                 const AccountingExpected& expected, std::string& error) {
    auto check = [&](const char* name, std::size_t got, std::size_t want) {
        if (got != want && error.empty()) {
            error = std::string(name) + " = " + std::to_string(got) + ", expected " +
                    std::to_string(want);
        }
    };
    check("total", accuracy.total, expected.total);
    check("actor_correct", accuracy.actor_correct, expected.actor_correct);
    check("final_correct", accuracy.final_correct, expected.final_correct);
    check("keep_actor", sq.keep_actor, expected.keep_actor);
    check("retry_actor", sq.retry_actor, expected.retry_actor);
    check("retry_attempted", sq.retry_attempted, expected.retry_attempted);
    check("retry_answer_changed", sq.retry_answer_changed, expected.retry_answer_changed);
    check("switch_applied", sq.switch_applied, expected.switch_applied);
    check("wrong_to_correct", sq.wrong_to_correct, expected.wrong_to_correct);
    check("correct_to_wrong", sq.correct_to_wrong, expected.correct_to_wrong);
    check("wrong_to_wrong", sq.wrong_to_wrong, expected.wrong_to_wrong);
}

}  // namespace testsupport
