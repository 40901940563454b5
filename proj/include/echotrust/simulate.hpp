#pragma once
// Synthetic dataset generation and the analytic expectations for runs driven
// by the stochastic backend under the default policy. The formulas follow the
// loop branch by branch; large simulated runs should land within sampling
// noise of them.

#include <cstdio>
#include <string>
#include <vector>

#include "echotrust/backends.hpp"
#include "echotrust/harness.hpp"
#include "echotrust/rng.hpp"

namespace echotrust {

// Four-option samples with deterministically drawn gold labels. Views and
// structures cycle through pools of the requested sizes.
inline std::vector<DatasetRecord> make_synthetic_dataset(std::size_t n, std::uint64_t seed,
                                                         std::size_t n_views = 4,
                                                         std::size_t n_structures = 4) {
    std::vector<DatasetRecord> records;
    records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        DatasetRecord record;
        EvaluationSample& sample = record.sample;
        char id[32];
        std::snprintf(id, sizeof id, "sim-%06zu", i);
        sample.sample_id = id;
        sample.media.uri = "synthetic://video/" + std::to_string(i);
        sample.question = "Synthetic case " + std::to_string(i) + ": which finding is present?";
        for (std::size_t k = 0; k < 4; ++k) {
            sample.options.push_back(
                {option_label_for_index(k), "finding " + std::to_string(k + 1)});
        }
        detail::DeterministicRng rng = detail::rng_for(seed, sample.sample_id, 99, 0);
        sample.gold_answer = option_label_for_index(rng.next_below(4));
        if (n_views > 0) sample.view_label = "view-" + std::to_string(i % n_views);
        if (n_structures > 0) {
            sample.queried_structure = "structure-" + std::to_string(i % n_structures);
        }
        sample.split = "test";
        records.push_back(std::move(record));
    }
    return records;
}

// Per-sample event probabilities for the loop over the stochastic backend,
// assuming the default PolicyConfig: a flagged first verify always intervenes,
// a supporting second verify is a verdict upgrade and is accepted, and an
// equally insufficient one is rejected. No branch abstains.
struct SimulationExpectation {
    double actor_accuracy = 0.0;
    double final_accuracy = 0.0;
    double net_gain = 0.0;           // final minus actor accuracy
    double intervention_rate = 0.0;  // P(z = 1)
    double switch_rate = 0.0;        // P(accepted revision with a changed answer)
    double wrong_to_correct = 0.0;
    double correct_to_wrong = 0.0;
    double wrong_to_wrong = 0.0;
};

inline SimulationExpectation expected_outcomes(const StochasticBehavior& behavior) {
    const double p = behavior.actor_accuracy;
    const double det = behavior.verifier_error_detect;
    const double fa = behavior.verifier_false_alarm;
    const double fix = behavior.retry_fix_rate;
    const double brk = behavior.retry_break_rate;

    SimulationExpectation e;
    e.actor_accuracy = p;
    e.intervention_rate = p * fa + (1.0 - p) * det;

    // Correct actor, flagged: a broken revision is accepted only when the
    // second verify misses it; an unbroken one keeps the answer either way.
    const double correct_branch = (1.0 - fa) + fa * ((1.0 - brk) + brk * det);
    // Wrong actor, flagged: a fixed revision lands unless falsely flagged; an
    // unfixed one repeats the same wrong answer.
    const double wrong_branch = det * fix * (1.0 - fa);
    e.final_accuracy = p * correct_branch + (1.0 - p) * wrong_branch;
    e.net_gain = e.final_accuracy - p;

    e.correct_to_wrong = p * fa * brk * (1.0 - det);
    e.wrong_to_correct = (1.0 - p) * det * fix * (1.0 - fa);
    e.wrong_to_wrong = 0.0;  // an unfixed revision repeats the answer, so no switch
    e.switch_rate = e.wrong_to_correct + e.correct_to_wrong + e.wrong_to_wrong;
    return e;
}

inline json expectation_to_json(const SimulationExpectation& e) {
    json doc;
    doc["actor_accuracy"] = e.actor_accuracy;
    doc["final_accuracy"] = e.final_accuracy;
    doc["net_gain"] = e.net_gain;
    doc["intervention_rate"] = e.intervention_rate;
    doc["switch_rate"] = e.switch_rate;
    doc["wrong_to_correct"] = e.wrong_to_correct;
    doc["correct_to_wrong"] = e.correct_to_wrong;
    doc["wrong_to_wrong"] = e.wrong_to_wrong;
    return doc;
}

}  // namespace echotrust
