#pragma once
// Dataset ingestion and the evaluation runner. Datasets are JSONL, one record
// per line; runs persist incrementally under out_dir/run_id/ (append-only
// run.jsonl, one audit file per sample, config.json) so an interrupted run can
// resume by skipping sample_ids that already made it to disk.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "echotrust/orchestrator.hpp"
#include "echotrust/protocol.hpp"
#include "echotrust/rng.hpp"
#include "echotrust/types.hpp"

namespace echotrust {

// ---------------------------------------------------------------------------
// Dataset records

struct DatasetRecord {
    EvaluationSample sample;
    std::optional<std::string> report_context;

    bool operator==(const DatasetRecord&) const = default;
};

class DatasetError : public std::runtime_error {
public:
    enum class Kind { malformed_line, invalid_record };

    DatasetError(Kind kind, int line, const std::string& reason)
        : std::runtime_error((kind == Kind::malformed_line ? "malformed line " : "invalid record at line ") +
                             std::to_string(line) + ": " + reason),
          kind(kind),
          line(line) {}

    Kind kind;
    int line;
};

namespace detail {

inline std::optional<std::string> optional_text(const json& doc, const char* key, int line) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) {
        throw DatasetError(DatasetError::Kind::invalid_record, line,
                           std::string(key) + " must be a string");
    }
    std::string value = it->get<std::string>();
    if (value.empty()) return std::nullopt;
    return value;
}

inline DatasetRecord record_from_line(const json& doc, int line) {
    if (!doc.is_object()) {
        throw DatasetError(DatasetError::Kind::malformed_line, line, "not a JSON object");
    }
    DatasetRecord record;
    EvaluationSample& sample = record.sample;

    auto require_string = [&](const char* key) {
        auto it = doc.find(key);
        if (it == doc.end() || !it->is_string() || it->get<std::string>().empty()) {
            throw DatasetError(DatasetError::Kind::invalid_record, line,
                               std::string("missing or empty field: ") + key);
        }
        return it->get<std::string>();
    };

    sample.sample_id = require_string("sample_id");
    sample.media.uri = require_string("video");
    sample.question = require_string("question");

    auto options = doc.find("options");
    if (options == doc.end() || !options->is_array()) {
        throw DatasetError(DatasetError::Kind::invalid_record, line, "options must be an array");
    }
    for (std::size_t i = 0; i < options->size(); ++i) {
        const auto& opt = (*options)[i];
        if (!opt.is_string()) {
            throw DatasetError(DatasetError::Kind::invalid_record, line,
                               "options must be strings");
        }
        sample.options.push_back({option_label_for_index(i), opt.get<std::string>()});
    }

    if (auto answer = optional_text(doc, "answer", line)) {
        auto label = resolve_answer_label(*answer, sample);
        if (!label) {
            throw DatasetError(DatasetError::Kind::invalid_record, line,
                               "answer does not match any option: " + *answer);
        }
        sample.gold_answer = *label;
    }

    sample.view_label = optional_text(doc, "view", line);
    sample.queried_structure = optional_text(doc, "structure", line);
    record.report_context = optional_text(doc, "report_context", line);

    if (auto split = optional_text(doc, "split", line)) {
        if (*split != "train" && *split != "val" && *split != "test") {
            throw DatasetError(DatasetError::Kind::invalid_record, line,
                               "split must be train, val, or test");
        }
        sample.split = split;
    }

    if (auto errors = validate_sample(sample); !errors.empty()) {
        throw DatasetError(DatasetError::Kind::invalid_record, line, errors.front().message);
    }
    return record;
}

}  // namespace detail

inline std::vector<DatasetRecord> parse_dataset(std::istream& in) {
    std::vector<DatasetRecord> records;
    std::set<std::string> seen_ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded()) {
            throw DatasetError(DatasetError::Kind::malformed_line, line_no, "invalid JSON");
        }
        DatasetRecord record = detail::record_from_line(doc, line_no);
        if (!seen_ids.insert(record.sample.sample_id).second) {
            throw DatasetError(DatasetError::Kind::invalid_record, line_no,
                               "duplicate sample_id: " + record.sample.sample_id);
        }
        records.push_back(std::move(record));
    }
    return records;
}

inline std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DatasetError(DatasetError::Kind::malformed_line, 0,
                           "cannot open dataset: " + path.string());
    }
    return parse_dataset(in);
}

inline json dataset_record_to_json(const DatasetRecord& record) {
    const EvaluationSample& sample = record.sample;
    json doc;
    doc["sample_id"] = sample.sample_id;
    doc["video"] = sample.media.uri;
    doc["question"] = sample.question;
    json options = json::array();
    for (const auto& option : sample.options) options.push_back(option.text);
    doc["options"] = std::move(options);
    if (sample.gold_answer) doc["answer"] = *sample.gold_answer;
    if (sample.view_label) doc["view"] = *sample.view_label;
    if (sample.queried_structure) doc["structure"] = *sample.queried_structure;
    if (record.report_context) doc["report_context"] = *record.report_context;
    if (sample.split) doc["split"] = *sample.split;
    return doc;
}

inline void write_dataset(const std::vector<DatasetRecord>& records,
                          const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DatasetError(DatasetError::Kind::malformed_line, 0,
                           "cannot open dataset for writing: " + path.string());
    }
    for (const auto& record : records) {
        out << dataset_record_to_json(record).dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Dataset validation report

struct DatasetReport {
    std::size_t records = 0;
    std::size_t unique_videos = 0;
    std::optional<std::size_t> unique_patients;  // dataset schema has no patient field yet
    std::size_t distinct_view_labels = 0;
    std::size_t distinct_structures = 0;
    std::vector<std::string> duplicate_videos;         // video uris referenced more than once
    std::map<std::size_t, std::size_t> option_count_histogram;

    bool operator==(const DatasetReport&) const = default;
};

inline DatasetReport validate_dataset(const std::vector<DatasetRecord>& records) {
    DatasetReport report;
    report.records = records.size();
    std::map<std::string, std::size_t> video_counts;
    std::set<std::string> views;
    std::set<std::string> structures;
    for (const auto& record : records) {
        ++video_counts[record.sample.media.uri];
        if (record.sample.view_label) views.insert(*record.sample.view_label);
        if (record.sample.queried_structure) structures.insert(*record.sample.queried_structure);
        ++report.option_count_histogram[record.sample.options.size()];
    }
    report.unique_videos = video_counts.size();
    report.distinct_view_labels = views.size();
    report.distinct_structures = structures.size();
    for (const auto& [uri, count] : video_counts) {
        if (count > 1) report.duplicate_videos.push_back(uri);
    }
    return report;
}

inline json dataset_report_to_json(const DatasetReport& report) {
    json doc;
    doc["records"] = report.records;
    doc["unique_videos"] = report.unique_videos;
    doc["unique_patients"] =
        report.unique_patients ? json(*report.unique_patients) : json(nullptr);
    doc["distinct_view_labels"] = report.distinct_view_labels;
    doc["distinct_structures"] = report.distinct_structures;
    doc["duplicate_videos"] = report.duplicate_videos;
    json histogram = json::object();
    for (const auto& [options, count] : report.option_count_histogram) {
        histogram[std::to_string(options)] = count;
    }
    doc["option_count_histogram"] = std::move(histogram);
    return doc;
}

// ---------------------------------------------------------------------------
// Run records

struct RunRecord {
    std::size_t index = 0;  // position in the input dataset
    std::string sample_id;
    std::optional<std::string> gold_answer;
    std::optional<std::string> actor_answer;
    std::optional<std::string> final_answer;  // nullopt == abstained
    Provenance outcome = Provenance::kept_actor;
    double final_support_score = 0.0;
    std::optional<double> final_confidence;  // confidence of the accepted state
    std::optional<bool> actor_correct;       // defined iff gold present
    std::optional<bool> final_correct;       // abstentions count as incorrect
    int z = 0;
    bool retry_attempted = false;
    int retry_attempts = 0;  // backend calls in the retry stage, re-asks included
    bool retry_parse_ok = false;
    std::optional<bool> retry_answer_changed;  // defined when retry parsed
    bool switch_applied = false;               // revision accepted and answer changed
    bool degraded = false;                     // some stage failed and a fallback applied
    std::string audit_ref;                     // relative path of the audit file, if persisted

    bool operator==(const RunRecord&) const = default;
};

inline RunRecord make_run_record(std::size_t index, const EvaluationSample& sample,
                                 const FinalDecision& decision) {
    RunRecord record;
    record.index = index;
    record.sample_id = sample.sample_id;
    record.gold_answer = sample.gold_answer;
    record.final_answer = decision.answer;
    record.outcome = decision.provenance;
    record.final_support_score = decision.final_support_score;
    record.z = decision.audit.intervention;

    const StageRecord* retry_stage = nullptr;
    const StageRecord* actor_stage = nullptr;
    for (const auto& stage : decision.audit.stages) {
        if (stage.name == StageName::actor) actor_stage = &stage;
        if (stage.name == StageName::retry) retry_stage = &stage;
        if (stage.name != StageName::decide && !stage.ok) record.degraded = true;
    }
    if (actor_stage && actor_stage->ok) record.actor_answer = actor_stage->answer;
    if (retry_stage) {
        record.retry_attempted = true;
        record.retry_attempts = static_cast<int>(retry_stage->attempts.size());
        record.retry_parse_ok = retry_stage->ok;
        if (retry_stage->ok && record.actor_answer) {
            record.retry_answer_changed = retry_stage->answer != record.actor_answer;
        }
    }
    record.switch_applied =
        decision.audit.accepted && record.retry_answer_changed.value_or(false);

    if (decision.audit.accepted && retry_stage && retry_stage->ok) {
        record.final_confidence = retry_stage->confidence;
    } else if (actor_stage && actor_stage->ok) {
        record.final_confidence = actor_stage->confidence;
    }

    if (record.gold_answer) {
        record.actor_correct = record.actor_answer == record.gold_answer;
        record.final_correct = record.final_answer == record.gold_answer;
    }
    return record;
}

inline json run_record_to_json(const RunRecord& r) {
    auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
    json doc;
    doc["index"] = r.index;
    doc["sample_id"] = r.sample_id;
    doc["gold_answer"] = opt(r.gold_answer);
    doc["actor_answer"] = opt(r.actor_answer);
    doc["final_answer"] = opt(r.final_answer);
    doc["outcome"] = to_string(r.outcome);
    doc["final_support_score"] = r.final_support_score;
    doc["final_confidence"] = opt(r.final_confidence);
    doc["actor_correct"] = opt(r.actor_correct);
    doc["final_correct"] = opt(r.final_correct);
    doc["z"] = r.z;
    doc["retry_attempted"] = r.retry_attempted;
    doc["retry_attempts"] = r.retry_attempts;
    doc["retry_parse_ok"] = r.retry_parse_ok;
    doc["retry_answer_changed"] = opt(r.retry_answer_changed);
    doc["switch_applied"] = r.switch_applied;
    doc["degraded"] = r.degraded;
    doc["audit_ref"] = r.audit_ref;
    return doc;
}

class RunError : public std::runtime_error {
public:
    explicit RunError(const std::string& message) : std::runtime_error(message) {}
};

inline RunRecord run_record_from_json(const json& doc) {
    if (!doc.is_object()) throw RunError("run record is not an object");
    RunRecord r;
    try {
        auto opt_string = [&](const char* key) -> std::optional<std::string> {
            if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
            return doc[key].get<std::string>();
        };
        auto opt_bool = [&](const char* key) -> std::optional<bool> {
            if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
            return doc[key].get<bool>();
        };
        r.index = doc.at("index").get<std::size_t>();
        r.sample_id = doc.at("sample_id").get<std::string>();
        r.gold_answer = opt_string("gold_answer");
        r.actor_answer = opt_string("actor_answer");
        r.final_answer = opt_string("final_answer");
        std::string outcome = doc.at("outcome").get<std::string>();
        if (outcome == "kept_actor") {
            r.outcome = Provenance::kept_actor;
        } else if (outcome == "switched_to_retry") {
            r.outcome = Provenance::switched_to_retry;
        } else if (outcome == "abstained") {
            r.outcome = Provenance::abstained;
        } else {
            throw RunError("unknown outcome: " + outcome);
        }
        r.final_support_score = doc.at("final_support_score").get<double>();
        if (!doc.at("final_confidence").is_null()) {
            r.final_confidence = doc["final_confidence"].get<double>();
        }
        r.actor_correct = opt_bool("actor_correct");
        r.final_correct = opt_bool("final_correct");
        r.z = doc.at("z").get<int>();
        r.retry_attempted = doc.at("retry_attempted").get<bool>();
        r.retry_attempts = doc.at("retry_attempts").get<int>();
        r.retry_parse_ok = doc.at("retry_parse_ok").get<bool>();
        r.retry_answer_changed = opt_bool("retry_answer_changed");
        r.switch_applied = doc.at("switch_applied").get<bool>();
        r.degraded = doc.at("degraded").get<bool>();
        r.audit_ref = doc.value("audit_ref", std::string());
    } catch (const json::exception& e) {
        throw RunError(std::string("bad run record: ") + e.what());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Audit trail serialization

inline json audit_to_json(const AuditTrail& audit) {
    json doc;
    doc["sample_id"] = audit.sample_id;
    doc["intervention"] = audit.intervention;
    doc["accepted"] = audit.accepted;
    json stages = json::array();
    for (const auto& stage : audit.stages) {
        json s;
        s["name"] = to_string(stage.name);
        s["backend_id"] = stage.backend_id;
        s["ok"] = stage.ok;
        s["failure"] = stage.failure;
        s["parsed_json"] = stage.parsed_json;
        s["answer"] = stage.answer ? json(*stage.answer) : json(nullptr);
        s["verdict"] = stage.verdict ? json(*stage.verdict) : json(nullptr);
        s["support_score"] = stage.support_score ? json(*stage.support_score) : json(nullptr);
        s["confidence"] = stage.confidence ? json(*stage.confidence) : json(nullptr);
        json attempts = json::array();
        for (const auto& attempt : stage.attempts) {
            attempts.push_back({{"raw_text", attempt.raw_text},
                                {"parse_ok", attempt.parse_ok},
                                {"repair_applied", attempt.repair_applied},
                                {"parse_failure", attempt.parse_failure},
                                {"duration_ms", attempt.duration_ms}});
        }
        s["attempts"] = std::move(attempts);
        stages.push_back(std::move(s));
    }
    doc["stages"] = std::move(stages);
    return doc;
}

// ---------------------------------------------------------------------------
// Evaluation runner

struct RunLog {
    std::string run_id;
    json config_snapshot = json::object();
    std::vector<RunRecord> records;  // sorted by input index
};

struct RunOptions {
    int workers = 1;
    std::optional<std::filesystem::path> out_dir;  // nullopt: in-memory run, no persistence
    std::string run_id = "run";
    json config_snapshot = json::object();
    int verbosity = 0;
};

namespace detail {

inline std::string sanitize_component(const std::string& id) {
    std::string out;
    bool changed = false;
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
        out.push_back(ok ? c : '_');
        changed |= !ok;
    }
    if (changed) {
        char buf[20];
        std::snprintf(buf, sizeof buf, "-%08llx",
                      static_cast<unsigned long long>(fnv1a64(id) & 0xffffffffull));
        out += buf;
    }
    return out;
}

// Reads persisted records, tolerating one partial trailing line left by a
// crash mid-write. Any other malformed line is an error.
inline std::vector<RunRecord> read_persisted_records(const std::filesystem::path& file) {
    std::vector<RunRecord> records;
    std::ifstream in(file, std::ios::binary);
    if (!in) return records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded()) {
            if (in.eof()) break;  // partial trailing line, dropped on resume
            throw RunError("corrupt run log line in " + file.string());
        }
        records.push_back(run_record_from_json(doc));
    }
    return records;
}

}  // namespace detail

inline RunLog run_evaluation(const std::vector<DatasetRecord>& records, const Pipeline& pipeline,
                             const RunOptions& options) {
    if (options.workers < 1) throw RunError("workers must be >= 1");

    RunLog log;
    log.run_id = options.run_id;
    log.config_snapshot = options.config_snapshot;

    std::filesystem::path run_dir;
    std::ofstream run_file;
    std::set<std::string> done_ids;
    if (options.out_dir) {
        run_dir = *options.out_dir / options.run_id;
        std::filesystem::create_directories(run_dir / "audits");
        const auto config_path = run_dir / "config.json";
        const std::string config_text = options.config_snapshot.dump(2) + "\n";
        if (std::filesystem::exists(config_path)) {
            std::ifstream existing(config_path, std::ios::binary);
            std::stringstream buffer;
            buffer << existing.rdbuf();
            if (buffer.str() != config_text) {
                throw RunError("run directory " + run_dir.string() +
                               " was created with a different config");
            }
        } else {
            std::ofstream out(config_path, std::ios::binary);
            out << config_text;
        }
        for (auto& record : detail::read_persisted_records(run_dir / "run.jsonl")) {
            if (!done_ids.insert(record.sample_id).second) {
                throw RunError("duplicate sample_id in persisted run log: " + record.sample_id);
            }
            log.records.push_back(std::move(record));
        }
        // Reopen in truncating-append fashion: rewrite the intact records so a
        // partial trailing line never corrupts the file twice.
        std::ofstream rewrite(run_dir / "run.jsonl", std::ios::binary | std::ios::trunc);
        for (const auto& record : log.records) {
            rewrite << run_record_to_json(record).dump() << "\n";
        }
        rewrite.close();
        run_file.open(run_dir / "run.jsonl", std::ios::binary | std::ios::app);
        if (!run_file) throw RunError("cannot open run log for writing in " + run_dir.string());
    }

    struct Todo {
        std::size_t index;
        const DatasetRecord* record;
    };
    std::vector<Todo> todo;
    std::set<std::string> input_ids;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!input_ids.insert(records[i].sample.sample_id).second) {
            throw RunError("duplicate sample_id in input records: " + records[i].sample.sample_id);
        }
        if (done_ids.count(records[i].sample.sample_id)) continue;
        todo.push_back({i, &records[i]});
    }

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> completed{0};
    std::mutex write_mutex;
    std::exception_ptr failure;
    std::atomic<bool> stop{false};

    auto worker = [&]() {
        while (!stop.load()) {
            const std::size_t slot = next.fetch_add(1);
            if (slot >= todo.size()) break;
            const Todo& item = todo[slot];
            try {
                FinalDecision decision = pipeline.run(item.record->sample);
                RunRecord record = make_run_record(item.index, item.record->sample, decision);
                std::lock_guard<std::mutex> lock(write_mutex);
                if (options.out_dir) {
                    const std::string audit_name =
                        detail::sanitize_component(record.sample_id) + ".json";
                    record.audit_ref = "audits/" + audit_name;
                    std::ofstream audit_file(run_dir / "audits" / audit_name, std::ios::binary);
                    audit_file << audit_to_json(decision.audit).dump(2) << "\n";
                    run_file << run_record_to_json(record).dump() << "\n";
                    run_file.flush();
                }
                log.records.push_back(std::move(record));
                const std::size_t done = completed.fetch_add(1) + 1;
                if (options.verbosity >= 1) {
                    std::cerr << "[" << options.run_id << "] " << item.record->sample.sample_id
                              << " done (" << done + done_ids.size() << "/"
                              << records.size() << ")\n";
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(write_mutex);
                if (!failure) failure = std::current_exception();
                stop.store(true);
                break;
            }
        }
    };

    const std::size_t thread_count =
        std::min<std::size_t>(static_cast<std::size_t>(options.workers), std::max<std::size_t>(todo.size(), 1));
    std::vector<std::thread> threads;
    threads.reserve(thread_count);
    for (std::size_t i = 0; i < thread_count; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);

    std::stable_sort(log.records.begin(), log.records.end(),
                     [](const RunRecord& a, const RunRecord& b) { return a.index < b.index; });
    return log;
}

// Loads a persisted run directory back into a RunLog (records sorted by index).
inline RunLog load_run_log(const std::filesystem::path& run_dir) {
    if (!std::filesystem::exists(run_dir / "run.jsonl")) {
        throw RunError("no run log found under " + run_dir.string());
    }
    RunLog log;
    log.run_id = run_dir.filename().string();
    if (std::filesystem::exists(run_dir / "config.json")) {
        std::ifstream in(run_dir / "config.json", std::ios::binary);
        std::stringstream buffer;
        buffer << in.rdbuf();
        json doc = json::parse(buffer.str(), nullptr, false);
        if (!doc.is_discarded()) log.config_snapshot = std::move(doc);
    }
    log.records = detail::read_persisted_records(run_dir / "run.jsonl");
    std::stable_sort(log.records.begin(), log.records.end(),
                     [](const RunRecord& a, const RunRecord& b) { return a.index < b.index; });
    return log;
}

}  // namespace echotrust
