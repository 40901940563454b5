#pragma once
// Pure aggregations over a RunLog: accuracy, intervention/switch-quality
// accounting, selective-prediction metrics with calibration error, and report
// emission in json, csv, and text.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "echotrust/harness.hpp"

namespace echotrust {

class MetricsError : public std::runtime_error {
public:
    enum class Kind { empty_log, missing_gold };

    MetricsError(Kind kind, const std::string& message)
        : std::runtime_error(message), kind(kind) {}

    Kind kind;
};

namespace detail {

inline void require_gold(const std::vector<RunRecord>& records) {
    if (records.empty()) {
        throw MetricsError(MetricsError::Kind::empty_log, "run log is empty");
    }
    for (const auto& record : records) {
        if (!record.gold_answer) {
            throw MetricsError(MetricsError::Kind::missing_gold,
                               "record without gold answer: " + record.sample_id);
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Accuracy

struct AccuracySummary {
    std::size_t total = 0;
    std::size_t actor_correct = 0;
    std::size_t final_correct = 0;  // abstentions count as incorrect
    double actor_accuracy = 0.0;
    double final_accuracy = 0.0;

    bool operator==(const AccuracySummary&) const = default;
};

inline AccuracySummary compute_accuracy(const RunLog& log) {
    detail::require_gold(log.records);
    AccuracySummary summary;
    summary.total = log.records.size();
    for (const auto& record : log.records) {
        if (record.actor_correct.value_or(false)) ++summary.actor_correct;
        if (record.final_correct.value_or(false)) ++summary.final_correct;
    }
    summary.actor_accuracy = static_cast<double>(summary.actor_correct) / summary.total;
    summary.final_accuracy = static_cast<double>(summary.final_correct) / summary.total;
    return summary;
}

// ---------------------------------------------------------------------------
// Switch quality

struct SwitchQuality {
    std::size_t total = 0;
    std::size_t keep_actor = 0;   // z = 0
    std::size_t retry_actor = 0;  // z = 1
    std::size_t retry_attempted = 0;  // backend calls in retry stages, re-asks included
    std::size_t retry_answer_changed = 0;
    std::size_t switch_applied = 0;
    std::size_t wrong_to_correct = 0;
    std::size_t correct_to_wrong = 0;
    std::size_t wrong_to_wrong = 0;
    std::size_t correct_to_correct = 0;  // reported separately from the three rows above

    bool operator==(const SwitchQuality&) const = default;
};

inline SwitchQuality compute_switch_quality(const RunLog& log) {
    detail::require_gold(log.records);
    SwitchQuality sq;
    sq.total = log.records.size();
    for (const auto& record : log.records) {
        if (record.z == 1) {
            ++sq.retry_actor;
        } else {
            ++sq.keep_actor;
        }
        sq.retry_attempted += static_cast<std::size_t>(record.retry_attempts);
        if (record.retry_answer_changed.value_or(false)) ++sq.retry_answer_changed;
        if (!record.switch_applied) continue;
        ++sq.switch_applied;
        const bool actor_ok = record.actor_correct.value_or(false);
        // An abstention after an accepted switch classifies as landing wrong.
        const bool landed_ok = record.outcome != Provenance::abstained &&
                               record.final_answer == record.gold_answer;
        if (!actor_ok && landed_ok) {
            ++sq.wrong_to_correct;
        } else if (actor_ok && !landed_ok) {
            ++sq.correct_to_wrong;
        } else if (!actor_ok && !landed_ok) {
            ++sq.wrong_to_wrong;
        } else {
            ++sq.correct_to_correct;
        }
    }
    return sq;
}

inline bool switch_quality_chain_ok(const SwitchQuality& sq) {
    return sq.keep_actor + sq.retry_actor == sq.total &&
           sq.wrong_to_correct + sq.correct_to_wrong + sq.wrong_to_wrong <= sq.switch_applied &&
           sq.switch_applied <= sq.retry_answer_changed &&
           sq.retry_answer_changed <= sq.retry_attempted;
}

// Integer form of: final_accuracy = actor_accuracy + (w→c − c→w)/total.
// Meaningful only on abstention-free logs.
inline bool verify_accounting_identity(const SwitchQuality& sq, const AccuracySummary& acc) {
    if (sq.total != acc.total) return false;
    const long long actor = static_cast<long long>(acc.actor_correct);
    const long long fin = static_cast<long long>(acc.final_correct);
    const long long wc = static_cast<long long>(sq.wrong_to_correct);
    const long long cw = static_cast<long long>(sq.correct_to_wrong);
    return fin == actor + wc - cw;
}

// ---------------------------------------------------------------------------
// Selective prediction and calibration

struct SelectiveMetrics {
    double coverage = 0.0;            // fraction of records answered
    double selective_accuracy = 0.0;  // accuracy among answered; 0 when none answered
    double overall_accuracy = 0.0;    // abstentions count as incorrect
    double ece = 0.0;                 // expected calibration error over final confidence

    bool operator==(const SelectiveMetrics&) const = default;
};

inline constexpr int kEceBins = 10;

inline SelectiveMetrics compute_selective(const RunLog& log, int bins = kEceBins) {
    SelectiveMetrics metrics;
    if (log.records.empty()) return metrics;

    std::size_t answered = 0;
    std::size_t answered_correct = 0;
    std::size_t overall_correct = 0;
    std::vector<double> bin_conf(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> bin_acc(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> bin_count(static_cast<std::size_t>(bins), 0);
    std::size_t calibrated = 0;

    for (const auto& record : log.records) {
        const bool is_answered = record.outcome != Provenance::abstained;
        const bool correct = record.final_correct.value_or(false);
        if (correct) ++overall_correct;
        if (!is_answered) continue;
        ++answered;
        if (correct) ++answered_correct;
        if (record.gold_answer && record.final_confidence) {
            const double conf = std::clamp(*record.final_confidence, 0.0, 1.0);
            const int bin = std::min(bins - 1, static_cast<int>(conf * bins));
            bin_conf[static_cast<std::size_t>(bin)] += conf;
            bin_acc[static_cast<std::size_t>(bin)] += correct ? 1.0 : 0.0;
            ++bin_count[static_cast<std::size_t>(bin)];
            ++calibrated;
        }
    }

    metrics.coverage = static_cast<double>(answered) / log.records.size();
    metrics.selective_accuracy =
        answered == 0 ? 0.0 : static_cast<double>(answered_correct) / answered;
    metrics.overall_accuracy = static_cast<double>(overall_correct) / log.records.size();
    if (calibrated > 0) {
        double ece = 0.0;
        for (int b = 0; b < bins; ++b) {
            const auto i = static_cast<std::size_t>(b);
            if (bin_count[i] == 0) continue;
            const double weight = static_cast<double>(bin_count[i]) / calibrated;
            const double avg_conf = bin_conf[i] / bin_count[i];
            const double avg_acc = bin_acc[i] / bin_count[i];
            ece += weight * std::abs(avg_conf - avg_acc);
        }
        metrics.ece = ece;
    }
    return metrics;
}

// ---------------------------------------------------------------------------
// Report assembly and emission

struct MetricsReport {
    std::optional<AccuracySummary> accuracy;     // absent when the log has no gold answers
    std::optional<SwitchQuality> switch_quality;
    SelectiveMetrics selective;
    bool accounting_identity_checked = false;
    bool accounting_identity_holds = false;
};

inline MetricsReport compute_all(const RunLog& log) {
    if (log.records.empty()) {
        throw MetricsError(MetricsError::Kind::empty_log, "run log is empty");
    }
    MetricsReport report;
    const bool has_gold = std::all_of(log.records.begin(), log.records.end(),
                                      [](const RunRecord& r) { return r.gold_answer.has_value(); });
    if (has_gold) {
        report.accuracy = compute_accuracy(log);
        report.switch_quality = compute_switch_quality(log);
        const bool no_abstentions =
            std::none_of(log.records.begin(), log.records.end(), [](const RunRecord& r) {
                return r.outcome == Provenance::abstained;
            });
        if (no_abstentions) {
            report.accounting_identity_checked = true;
            report.accounting_identity_holds =
                verify_accounting_identity(*report.switch_quality, *report.accuracy);
        }
    }
    report.selective = compute_selective(log);
    return report;
}

namespace detail {

inline std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace detail

inline json report_to_json(const MetricsReport& report) {
    json doc;
    if (report.accuracy) {
        doc["accuracy"] = {{"total", report.accuracy->total},
                           {"actor_correct", report.accuracy->actor_correct},
                           {"final_correct", report.accuracy->final_correct},
                           {"actor_accuracy", report.accuracy->actor_accuracy},
                           {"final_accuracy", report.accuracy->final_accuracy}};
    } else {
        doc["accuracy"] = nullptr;
    }
    if (report.switch_quality) {
        const auto& sq = *report.switch_quality;
        doc["switch_quality"] = {{"total", sq.total},
                                 {"keep_actor", sq.keep_actor},
                                 {"retry_actor", sq.retry_actor},
                                 {"retry_attempted", sq.retry_attempted},
                                 {"retry_answer_changed", sq.retry_answer_changed},
                                 {"switch_applied", sq.switch_applied},
                                 {"wrong_to_correct", sq.wrong_to_correct},
                                 {"correct_to_wrong", sq.correct_to_wrong},
                                 {"wrong_to_wrong", sq.wrong_to_wrong},
                                 {"correct_to_correct", sq.correct_to_correct}};
    } else {
        doc["switch_quality"] = nullptr;
    }
    doc["selective"] = {{"coverage", report.selective.coverage},
                        {"selective_accuracy", report.selective.selective_accuracy},
                        {"overall_accuracy", report.selective.overall_accuracy},
                        {"ece", report.selective.ece}};
    doc["accounting_identity"] =
        report.accounting_identity_checked
            ? json(report.accounting_identity_holds)
            : json(nullptr);
    return doc;
}

enum class ReportFormat { json, csv, text };

inline std::optional<ReportFormat> report_format_from_string(const std::string& s) {
    if (s == "json") return ReportFormat::json;
    if (s == "csv") return ReportFormat::csv;
    if (s == "text") return ReportFormat::text;
    return std::nullopt;
}

inline std::string emit_report(const MetricsReport& report, ReportFormat format) {
    if (format == ReportFormat::json) {
        return report_to_json(report).dump(2) + "\n";
    }

    std::vector<std::pair<std::string, std::string>> rows;
    if (report.accuracy) {
        rows.emplace_back("actor_accuracy", detail::fixed4(report.accuracy->actor_accuracy));
        rows.emplace_back("final_accuracy", detail::fixed4(report.accuracy->final_accuracy));
    }
    if (report.switch_quality) {
        const auto& sq = *report.switch_quality;
        rows.emplace_back("total_samples", std::to_string(sq.total));
        rows.emplace_back("keep_actor", std::to_string(sq.keep_actor));
        rows.emplace_back("retry_actor", std::to_string(sq.retry_actor));
        rows.emplace_back("retry_attempted", std::to_string(sq.retry_attempted));
        rows.emplace_back("retry_answer_changed", std::to_string(sq.retry_answer_changed));
        rows.emplace_back("switch_applied", std::to_string(sq.switch_applied));
        rows.emplace_back("wrong_to_correct", std::to_string(sq.wrong_to_correct));
        rows.emplace_back("correct_to_wrong", std::to_string(sq.correct_to_wrong));
        rows.emplace_back("wrong_to_wrong", std::to_string(sq.wrong_to_wrong));
        rows.emplace_back("correct_to_correct", std::to_string(sq.correct_to_correct));
    }
    rows.emplace_back("coverage", detail::fixed4(report.selective.coverage));
    rows.emplace_back("selective_accuracy", detail::fixed4(report.selective.selective_accuracy));
    rows.emplace_back("overall_accuracy", detail::fixed4(report.selective.overall_accuracy));
    rows.emplace_back("ece", detail::fixed4(report.selective.ece));
    if (report.accounting_identity_checked) {
        rows.emplace_back("accounting_identity",
                          report.accounting_identity_holds ? "true" : "false");
    }

    std::string out;
    if (format == ReportFormat::csv) {
        out = "metric,value\n";
        for (const auto& [name, value] : rows) out += name + "," + value + "\n";
        return out;
    }

    // Text layout mirrors the result tables: a model-accuracy block, an
    // intervention/switch block, and a selective-prediction block.
    std::size_t width = 0;
    for (const auto& [name, value] : rows) width = std::max(width, name.size());
    auto row = [&](const std::string& name, const std::string& value) {
        return name + std::string(width - name.size() + 2, ' ') + value + "\n";
    };
    if (report.accuracy) {
        out += "== Accuracy ==\n";
        out += row("actor_accuracy", detail::fixed4(report.accuracy->actor_accuracy));
        out += row("final_accuracy", detail::fixed4(report.accuracy->final_accuracy));
    }
    if (report.switch_quality) {
        const auto& sq = *report.switch_quality;
        out += "== Intervention and switch quality ==\n";
        out += row("total_samples", std::to_string(sq.total));
        out += row("keep_actor", std::to_string(sq.keep_actor));
        out += row("retry_actor", std::to_string(sq.retry_actor));
        out += row("retry_attempted", std::to_string(sq.retry_attempted));
        out += row("retry_answer_changed", std::to_string(sq.retry_answer_changed));
        out += row("switch_applied", std::to_string(sq.switch_applied));
        out += row("wrong_to_correct", std::to_string(sq.wrong_to_correct));
        out += row("correct_to_wrong", std::to_string(sq.correct_to_wrong));
        out += row("wrong_to_wrong", std::to_string(sq.wrong_to_wrong));
        out += row("correct_to_correct", std::to_string(sq.correct_to_correct));
    }
    out += "== Selective prediction ==\n";
    out += row("coverage", detail::fixed4(report.selective.coverage));
    out += row("selective_accuracy", detail::fixed4(report.selective.selective_accuracy));
    out += row("overall_accuracy", detail::fixed4(report.selective.overall_accuracy));
    out += row("ece", detail::fixed4(report.selective.ece));
    if (report.accounting_identity_checked) {
        out += row("accounting_identity", report.accounting_identity_holds ? "true" : "false");
    }
    return out;
}

inline void write_reports(const MetricsReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::array<std::pair<ReportFormat, const char*>, 3> outputs = {
        {{ReportFormat::json, "metrics.json"},
         {ReportFormat::csv, "metrics.csv"},
         {ReportFormat::text, "metrics.txt"}}};
    for (const auto& [format, name] : outputs) {
        std::ofstream out(dir / name, std::ios::binary);
        out << emit_report(report, format);
    }
}

}  // namespace echotrust
