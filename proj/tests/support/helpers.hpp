#pragma once
// Shared fixtures and utilities for the test suite.

#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "echotrust/backends.hpp"
#include "echotrust/rng.hpp"
#include "echotrust/types.hpp"

namespace testsupport {

using namespace echotrust;

inline EvaluationSample make_sample(const std::string& id = "s1", std::size_t n_options = 4) {
    EvaluationSample sample;
    sample.sample_id = id;
    sample.media.uri = "fixture://video/" + id;
    sample.question = "Which finding is present?";
    static const char* texts[] = {"normal wall motion", "reduced ejection fraction",
                                  "pericardial effusion", "dilated left atrium",
                                  "mitral regurgitation", "aortic stenosis",
                                  "septal hypertrophy",  "apical thrombus"};
    for (std::size_t i = 0; i < n_options; ++i) {
        sample.options.push_back({option_label_for_index(i), texts[i]});
    }
    sample.gold_answer = "A";
    sample.view_label = "A4C";
    sample.queried_structure = "left ventricle";
    return sample;
}

inline ActorState make_actor_state(const std::string& answer = "A", double confidence = 0.8) {
    ActorState state;
    state.answer = answer;
    state.confidence = confidence;
    EvidenceItem item;
    item.item_id = "e1";
    item.description = "wall motion visible across the septum";
    item.polarity = Polarity::supports;
    item.strength = 0.8;
    state.evidence.push_back(item);
    state.visibility.view_compatibility = ViewCompatibility::compatible;
    state.visibility.observed_view = "A4C";
    return state;
}

inline RetryState make_retry_state(const std::string& answer = "A", double confidence = 0.7) {
    RetryState state;
    state.answer = answer;
    state.confidence = confidence;
    EvidenceItem item;
    item.item_id = "e1";
    item.description = "revised reading of the septal segment";
    item.polarity = Polarity::supports;
    item.strength = 0.7;
    state.evidence.push_back(item);
    state.visibility.view_compatibility = ViewCompatibility::compatible;
    state.revision_note = "re-examined after feedback";
    return state;
}

inline VerifierState make_verifier_state(Verdict verdict = Verdict::supported,
                                         double support_score = 0.8,
                                         Recommendation recommendation = Recommendation::keep) {
    VerifierState state;
    state.verdict = verdict;
    state.support_score = support_score;
    state.recommendation = recommendation;
    EvidenceAssessment assessment;
    assessment.item_id = "e1";
    assessment.judgment = verdict == Verdict::supported ? Judgment::confirmed : Judgment::weak;
    state.assessments.push_back(assessment);
    if (verdict != Verdict::supported) {
        state.missing_support.push_back("apex not visualized");
    }
    return state;
}

// Unique writable directory per call, cleaned up by the OS, not the test.
inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("echotrust-" + tag + "-" + std::to_string(::getpid()) + "-" +
                      std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// ---------------------------------------------------------------------------
// Backend decorators

struct InvocationRecord {
    std::string sample_id;
    Role role;
    int attempt;
};

class CountingBackend : public Backend {
public:
    explicit CountingBackend(std::shared_ptr<const Backend> inner) : inner_(std::move(inner)) {}

    std::string id() const override { return inner_->id(); }

    std::string invoke(Role role, const EvaluationSample& sample, const std::string& context,
                       int attempt) const override {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            calls_.push_back({sample.sample_id, role, attempt});
        }
        return inner_->invoke(role, sample, context, attempt);
    }

    std::vector<InvocationRecord> calls() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return calls_;
    }

    std::size_t count_for(const std::string& sample_id, Role role) const {
        std::lock_guard<std::mutex> lock(mutex_);
        std::size_t n = 0;
        for (const auto& call : calls_) {
            if (call.sample_id == sample_id && call.role == role) ++n;
        }
        return n;
    }

private:
    std::shared_ptr<const Backend> inner_;
    mutable std::mutex mutex_;
    mutable std::vector<InvocationRecord> calls_;
};

// Throws a plain runtime_error (not a BackendError) once more than
// `max_samples` distinct sample_ids have been seen, simulating a hard
// interruption of the run.
class InterruptingBackend : public Backend {
public:
    InterruptingBackend(std::shared_ptr<const Backend> inner, std::size_t max_samples)
        : inner_(std::move(inner)), max_samples_(max_samples) {}

    std::string id() const override { return inner_->id(); }

    std::string invoke(Role role, const EvaluationSample& sample, const std::string& context,
                       int attempt) const override {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            seen_.insert(sample.sample_id);
            if (seen_.size() > max_samples_) {
                throw std::runtime_error("interrupted for test purposes");
            }
        }
        return inner_->invoke(role, sample, context, attempt);
    }

private:
    std::shared_ptr<const Backend> inner_;
    std::size_t max_samples_;
    mutable std::mutex mutex_;
    mutable std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Random state generators for codec and property tests

inline std::string random_word(detail::DeterministicRng& rng) {
    static const char* words[] = {"septum",   "apex",    "valve",  "atrium", "ventricle",
                                  "effusion", "gradient", "motion", "flow",   "thrombus"};
    return words[rng.next_below(10)];
}

inline std::optional<std::string> maybe_word(detail::DeterministicRng& rng) {
    if (rng.next_below(2) == 0) return std::nullopt;
    return random_word(rng);
}

inline std::vector<EvidenceItem> random_evidence(detail::DeterministicRng& rng) {
    std::vector<EvidenceItem> evidence;
    const std::size_t n = 1 + rng.next_below(3);
    for (std::size_t i = 0; i < n; ++i) {
        EvidenceItem item;
        item.item_id = "e" + std::to_string(i + 1);
        item.description = random_word(rng) + " observed in " + random_word(rng);
        item.structure_tag = maybe_word(rng);
        item.temporal_ref = maybe_word(rng);
        item.polarity = static_cast<Polarity>(rng.next_below(3));
        item.strength = rng.next_unit();
        evidence.push_back(std::move(item));
    }
    return evidence;
}

inline VisibilityReport random_visibility(detail::DeterministicRng& rng) {
    VisibilityReport report;
    report.view_compatibility = static_cast<ViewCompatibility>(rng.next_below(3));
    report.observed_view = maybe_word(rng);
    const std::size_t n = rng.next_below(3);
    for (std::size_t i = 0; i < n; ++i) {
        report.structure_visibility[random_word(rng)] =
            static_cast<StructureVisibility>(rng.next_below(4));
    }
    return report;
}

inline ActorState random_actor_state(detail::DeterministicRng& rng,
                                     const EvaluationSample& sample) {
    ActorState state;
    state.answer = sample.options[rng.next_below(sample.options.size())].label;
    state.evidence = random_evidence(rng);
    state.visibility = random_visibility(rng);
    state.confidence = rng.next_unit();
    state.rationale = maybe_word(rng);
    state.abstain_suggested = rng.next_below(4) == 0;
    return state;
}

inline RetryState random_retry_state(detail::DeterministicRng& rng,
                                     const EvaluationSample& sample) {
    RetryState state;
    state.answer = sample.options[rng.next_below(sample.options.size())].label;
    state.evidence = random_evidence(rng);
    state.visibility = random_visibility(rng);
    state.confidence = rng.next_unit();
    state.revision_note = maybe_word(rng);
    return state;
}

inline VerifierState random_verifier_state(detail::DeterministicRng& rng,
                                           const std::vector<EvidenceItem>& evidence) {
    VerifierState state;
    state.verdict = static_cast<Verdict>(rng.next_below(3));
    state.support_score = rng.next_unit();
    state.recommendation = static_cast<Recommendation>(rng.next_below(3));
    for (const auto& item : evidence) {
        if (rng.next_below(3) == 0) continue;
        EvidenceAssessment assessment;
        assessment.item_id = item.item_id;
        if (state.verdict == Verdict::supported) {
            // Avoid the supported-with-contradictions clash.
            static const Judgment allowed[] = {Judgment::confirmed, Judgment::weak,
                                               Judgment::unverifiable};
            assessment.judgment = allowed[rng.next_below(3)];
        } else {
            assessment.judgment = static_cast<Judgment>(rng.next_below(4));
        }
        if (rng.next_below(3) == 0) assessment.note = random_word(rng);
        state.assessments.push_back(std::move(assessment));
    }
    if (state.verdict != Verdict::supported && rng.next_below(2) == 0) {
        state.missing_support.push_back(random_word(rng) + " not shown");
    }
    if (state.verdict != Verdict::supported && rng.next_below(3) == 0) {
        state.inconsistencies.push_back("conflicting " + random_word(rng));
    }
    return state;
}

}  // namespace testsupport
