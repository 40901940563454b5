// Command-line entry point. Subcommands cover the engine's workflows:
//   run                  evaluate a dataset through the loop
//   simulate             synthetic run against the stochastic backend
//   metrics              recompute reports from a persisted run
//   validate-dataset     print a dataset report
//   build-train-data     materialize supervision records from gold states
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 backend
// unreachable before any sample ran.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "echotrust/config.hpp"
#include "echotrust/harness.hpp"
#include "echotrust/http_backend.hpp"
#include "echotrust/metrics.hpp"
#include "echotrust/simulate.hpp"
#include "echotrust/traindata.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitBackendUnreachable = 4;

struct CommonFlags {
    std::string config_path;
    std::string dataset;
    std::string out;
    std::string ids;
    std::string backend_kind;
    std::string endpoint_url;
    std::string model_name;
    std::string script;
    std::string run_id;
    std::string format = "text";
    int workers = 0;
    long long limit = -1;
    long long seed = -1;
    int verbosity = 0;
};

void add_common_options(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    cmd->add_option("--dataset", flags.dataset, "dataset JSONL path");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--workers", flags.workers, "concurrent pipelines");
    cmd->add_option("--limit", flags.limit, "process only the first N records");
    cmd->add_option("--ids", flags.ids, "file with one sample_id per line to keep");
    cmd->add_option("--seed", flags.seed, "seed for stochastic backends");
    cmd->add_option("--backend-kind", flags.backend_kind, "http, scripted, or stochastic")
        ->check(CLI::IsMember({"http", "scripted", "stochastic"}));
    cmd->add_option("--endpoint-url", flags.endpoint_url, "http backend endpoint");
    cmd->add_option("--model", flags.model_name, "http backend model name");
    cmd->add_option("--script", flags.script, "scripted backend replies (JSON)");
    cmd->add_option("--run-id", flags.run_id, "run directory name (default: config hash)");
    cmd->add_option("--format", flags.format, "report format on stdout")
        ->check(CLI::IsMember({"json", "csv", "text"}));
    cmd->add_flag("-v,--verbose", flags.verbosity, "progress logging to stderr");
}

echotrust::EngineConfig resolve_config(const CommonFlags& flags) {
    echotrust::EngineConfig config;
    if (!flags.config_path.empty()) {
        config = echotrust::load_engine_config(flags.config_path);
    }
    if (!flags.dataset.empty()) config.dataset = flags.dataset;
    if (!flags.out.empty()) config.out = flags.out;
    if (!flags.ids.empty()) config.ids_file = flags.ids;
    if (flags.workers > 0) config.workers = flags.workers;
    if (flags.limit >= 0) config.limit = static_cast<std::size_t>(flags.limit);
    if (flags.seed >= 0) config.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.script.empty()) config.script_path = flags.script;
    if (!flags.run_id.empty()) config.run_id = flags.run_id;
    if (flags.verbosity > 0) config.verbosity = flags.verbosity;
    if (!flags.backend_kind.empty()) {
        auto kind = echotrust::backend_kind_from_string(flags.backend_kind);
        for (auto* binding : {&config.actor, &config.verifier, &config.retry}) {
            binding->kind = *kind;
        }
    }
    if (!flags.endpoint_url.empty()) {
        for (auto* binding : {&config.actor, &config.verifier, &config.retry}) {
            binding->endpoint_url = flags.endpoint_url;
        }
    }
    if (!flags.model_name.empty()) {
        for (auto* binding : {&config.actor, &config.verifier, &config.retry}) {
            binding->model_name = flags.model_name;
        }
    }
    if (config.workers < 1) throw echotrust::ConfigError("workers must be >= 1");
    return config;
}

struct RoleBackends {
    std::shared_ptr<const echotrust::Backend> actor;
    std::shared_ptr<const echotrust::Backend> verifier;
    std::shared_ptr<const echotrust::Backend> retry;
};

RoleBackends build_backends(const echotrust::EngineConfig& config) {
    std::optional<echotrust::ScriptedBehavior> script;
    const bool any_scripted = config.actor.kind == echotrust::BackendKind::scripted ||
                              config.verifier.kind == echotrust::BackendKind::scripted ||
                              config.retry.kind == echotrust::BackendKind::scripted;
    if (any_scripted) {
        if (!config.script_path) {
            throw echotrust::ConfigError("scripted backends require a script file");
        }
        script = echotrust::load_script(*config.script_path);
    }
    echotrust::StochasticBehavior stochastic = config.stochastic;
    stochastic.seed = config.seed;

    auto build = [&](const echotrust::BackendBinding& binding)
        -> std::shared_ptr<const echotrust::Backend> {
        if (binding.kind == echotrust::BackendKind::http) {
            return echotrust::make_http_backend(binding);
        }
        return echotrust::make_backend(binding, script, stochastic);
    };
    return {build(config.actor), build(config.verifier), build(config.retry)};
}

// One reachability probe per distinct http endpoint, before any sample runs.
bool http_backends_reachable(const echotrust::EngineConfig& config) {
    std::vector<std::string> checked;
    for (const auto* binding : {&config.actor, &config.verifier, &config.retry}) {
        if (binding->kind != echotrust::BackendKind::http) continue;
        const std::string& url = *binding->endpoint_url;
        if (std::find(checked.begin(), checked.end(), url) != checked.end()) continue;
        checked.push_back(url);
        echotrust::HttpBackend probe(*binding);
        if (!probe.reachable()) {
            std::cerr << "backend unreachable: " << url << "\n";
            return false;
        }
    }
    return true;
}

std::string default_run_id(const echotrust::json& config_snapshot,
                           const std::filesystem::path& dataset) {
    const std::string key = config_snapshot.dump() + "\x1f" + dataset.string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "run-%016llx",
                  static_cast<unsigned long long>(echotrust::detail::fnv1a64(key)));
    return buf;
}

std::vector<echotrust::DatasetRecord> apply_filters(std::vector<echotrust::DatasetRecord> records,
                                                    const echotrust::EngineConfig& config) {
    if (config.ids_file) {
        std::ifstream in(*config.ids_file);
        if (!in) {
            throw echotrust::DatasetError(echotrust::DatasetError::Kind::malformed_line, 0,
                                          "cannot open ids file: " + config.ids_file->string());
        }
        std::set<std::string> keep;
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (!line.empty()) keep.insert(line);
        }
        std::erase_if(records, [&](const echotrust::DatasetRecord& r) {
            return keep.count(r.sample.sample_id) == 0;
        });
    }
    if (config.limit && records.size() > *config.limit) {
        records.resize(*config.limit);
    }
    return records;
}

echotrust::ReportFormat parse_format(const std::string& format) {
    return *echotrust::report_format_from_string(format);
}

int cmd_run(const CommonFlags& flags) {
    echotrust::EngineConfig config = resolve_config(flags);
    if (config.dataset.empty()) {
        std::cerr << "run: no dataset given\n";
        return kExitConfig;
    }

    std::vector<echotrust::DatasetRecord> records;
    try {
        records = apply_filters(echotrust::load_dataset(config.dataset), config);
    } catch (const echotrust::DatasetError& e) {
        std::cerr << "dataset error: " << e.what() << "\n";
        return kExitData;
    }
    if (records.empty()) {
        std::cerr << "dataset error: no records to evaluate\n";
        return kExitData;
    }

    RoleBackends backends = build_backends(config);
    if (!http_backends_reachable(config)) return kExitBackendUnreachable;

    echotrust::Pipeline pipeline(config.pipeline, backends.actor, backends.verifier,
                                 backends.retry);
    echotrust::RunOptions options;
    options.workers = config.workers;
    options.out_dir = config.out;
    options.config_snapshot = echotrust::engine_config_to_json(config);
    options.run_id = config.run_id.value_or(
        default_run_id(options.config_snapshot, config.dataset));
    options.verbosity = config.verbosity;

    echotrust::RunLog log = echotrust::run_evaluation(records, pipeline, options);
    echotrust::MetricsReport report = echotrust::compute_all(log);
    echotrust::write_reports(report, config.out / options.run_id);
    std::cout << echotrust::emit_report(report, parse_format(flags.format));
    if (flags.verbosity > 0) {
        std::cerr << "run " << options.run_id << ": " << log.records.size()
                  << " records under " << (config.out / options.run_id).string() << "\n";
    }
    return kExitOk;
}

int cmd_simulate(const CommonFlags& flags, long long n_samples) {
    echotrust::EngineConfig config = resolve_config(flags);
    for (auto* binding : {&config.actor, &config.verifier, &config.retry}) {
        binding->kind = echotrust::BackendKind::stochastic;
    }
    if (n_samples <= 0) throw echotrust::ConfigError("n-samples must be >= 1");

    const auto records =
        echotrust::make_synthetic_dataset(static_cast<std::size_t>(n_samples), config.seed);
    RoleBackends backends = build_backends(config);
    echotrust::Pipeline pipeline(config.pipeline, backends.actor, backends.verifier,
                                 backends.retry);

    echotrust::RunOptions options;
    options.workers = config.workers;
    options.config_snapshot = echotrust::engine_config_to_json(config);
    options.run_id = flags.run_id.empty()
                         ? default_run_id(options.config_snapshot, "synthetic")
                         : flags.run_id;
    options.verbosity = config.verbosity;
    if (!flags.out.empty()) options.out_dir = config.out;

    echotrust::RunLog log = echotrust::run_evaluation(records, pipeline, options);
    echotrust::MetricsReport report = echotrust::compute_all(log);
    echotrust::StochasticBehavior behavior = config.stochastic;
    behavior.seed = config.seed;
    const echotrust::SimulationExpectation analytic = echotrust::expected_outcomes(behavior);

    const auto format = parse_format(flags.format);
    if (format == echotrust::ReportFormat::json) {
        echotrust::json doc;
        doc["empirical"] = echotrust::report_to_json(report);
        doc["analytic"] = echotrust::expectation_to_json(analytic);
        std::cout << doc.dump(2) << "\n";
    } else {
        std::cout << echotrust::emit_report(report, format);
        std::cout << "== Analytic expectation ==\n"
                  << echotrust::expectation_to_json(analytic).dump(2) << "\n";
    }
    if (options.out_dir) {
        const auto dir = *options.out_dir / options.run_id;
        echotrust::write_reports(report, dir);
        std::ofstream out(dir / "analytic.json", std::ios::binary);
        out << echotrust::expectation_to_json(analytic).dump(2) << "\n";
    }
    return kExitOk;
}

int cmd_metrics(const std::string& run_dir, const std::string& format) {
    echotrust::RunLog log = echotrust::load_run_log(run_dir);
    echotrust::MetricsReport report = echotrust::compute_all(log);
    echotrust::write_reports(report, run_dir);
    std::cout << echotrust::emit_report(report, parse_format(format));
    return kExitOk;
}

int cmd_validate_dataset(const std::string& path, const std::string& format) {
    const auto records = echotrust::load_dataset(path);
    const echotrust::DatasetReport report = echotrust::validate_dataset(records);
    const echotrust::json doc = echotrust::dataset_report_to_json(report);
    if (format == "json") {
        std::cout << doc.dump(2) << "\n";
    } else {
        for (const auto& [key, value] : doc.items()) {
            std::cout << key << "  " << value.dump() << "\n";
        }
    }
    return kExitOk;
}

// Input lines: {"sample": <dataset record>, "actor_state": {...},
// "verifier_state": {...}, "retry_state": {...}} with the latter two optional.
int cmd_build_train_data(const std::string& input_path, const std::string& out_dir) {
    std::ifstream in(input_path, std::ios::binary);
    if (!in) {
        std::cerr << "data error: cannot open " << input_path << "\n";
        return kExitData;
    }
    std::vector<echotrust::SupervisionRecord> actor_records;
    std::vector<echotrust::SupervisionRecord> verifier_records;
    std::vector<echotrust::SupervisionRecord> retry_records;
    std::string line;
    int line_no = 0;
    try {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            echotrust::json doc = echotrust::json::parse(line, nullptr, false);
            if (doc.is_discarded() || !doc.is_object() || !doc.contains("sample")) {
                throw echotrust::TrainDataError("line " + std::to_string(line_no) +
                                                ": expected an object with a sample field");
            }
            const echotrust::DatasetRecord record =
                echotrust::detail::record_from_line(doc["sample"], line_no);
            const echotrust::EvaluationSample& sample = record.sample;

            auto parse_actor = [&](const char* key) {
                auto outcome = echotrust::parse_actor_output(doc[key].dump(), sample);
                if (!outcome.ok()) {
                    throw echotrust::TrainDataError("line " + std::to_string(line_no) + ": " +
                                                    key + ": " + outcome.failure_detail);
                }
                return *outcome.state;
            };

            if (!doc.contains("actor_state")) {
                throw echotrust::TrainDataError("line " + std::to_string(line_no) +
                                                ": actor_state is required");
            }
            const echotrust::ActorState actor = parse_actor("actor_state");
            actor_records.push_back(echotrust::build_actor_record(sample, actor));

            std::optional<echotrust::VerifierState> verifier;
            if (doc.contains("verifier_state")) {
                auto outcome =
                    echotrust::parse_verifier_output(doc["verifier_state"].dump(), actor);
                if (!outcome.ok()) {
                    throw echotrust::TrainDataError("line " + std::to_string(line_no) +
                                                    ": verifier_state: " + outcome.failure_detail);
                }
                verifier = *outcome.state;
                verifier_records.push_back(
                    echotrust::build_verifier_record(sample, actor, *verifier));
            }
            if (doc.contains("retry_state")) {
                if (!verifier) {
                    throw echotrust::TrainDataError("line " + std::to_string(line_no) +
                                                    ": retry_state requires verifier_state");
                }
                auto outcome = echotrust::parse_retry_output(doc["retry_state"].dump(), sample);
                if (!outcome.ok()) {
                    throw echotrust::TrainDataError("line " + std::to_string(line_no) +
                                                    ": retry_state: " + outcome.failure_detail);
                }
                retry_records.push_back(
                    echotrust::build_retry_record(sample, actor, *verifier, *outcome.state));
            }
        }
        std::filesystem::create_directories(out_dir);
        const std::filesystem::path dir(out_dir);
        const auto actor_written =
            echotrust::export_records(actor_records, dir / "train_actor.jsonl");
        const auto verifier_written =
            echotrust::export_records(verifier_records, dir / "train_verifier.jsonl");
        const auto retry_written =
            echotrust::export_records(retry_records, dir / "train_retry.jsonl");
        std::cout << "actor " << actor_written << "\nverifier " << verifier_written << "\nretry "
                  << retry_written << "\n";
    } catch (const echotrust::TrainDataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const echotrust::DatasetError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Evidence-audited actor-verifier evaluation engine"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    CLI::App* run = app.add_subcommand("run", "evaluate a dataset through the loop");
    add_common_options(run, run_flags);

    CommonFlags sim_flags;
    long long n_samples = 1000;
    CLI::App* simulate = app.add_subcommand("simulate", "synthetic stochastic-backend run");
    add_common_options(simulate, sim_flags);
    simulate->add_option("--n-samples", n_samples, "number of synthetic samples");

    std::string metrics_dir;
    std::string metrics_format = "text";
    CLI::App* metrics = app.add_subcommand("metrics", "recompute reports from a persisted run");
    metrics->add_option("run_dir", metrics_dir, "run directory")->required();
    metrics->add_option("--format", metrics_format, "report format")
        ->check(CLI::IsMember({"json", "csv", "text"}));

    std::string validate_path;
    std::string validate_format = "text";
    CLI::App* validate = app.add_subcommand("validate-dataset", "print a dataset report");
    validate->add_option("dataset", validate_path, "dataset JSONL path")->required();
    validate->add_option("--format", validate_format, "report format")
        ->check(CLI::IsMember({"json", "text"}));

    std::string train_input;
    std::string train_out = "train";
    CLI::App* train = app.add_subcommand("build-train-data", "materialize supervision records");
    train->add_option("input", train_input, "gold-state JSONL path")->required();
    train->add_option("--out", train_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(run_flags);
        if (simulate->parsed()) return cmd_simulate(sim_flags, n_samples);
        if (metrics->parsed()) return cmd_metrics(metrics_dir, metrics_format);
        if (validate->parsed()) return cmd_validate_dataset(validate_path, validate_format);
        if (train->parsed()) return cmd_build_train_data(train_input, train_out);
    } catch (const echotrust::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const echotrust::DatasetError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const echotrust::RunError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const echotrust::MetricsError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const echotrust::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
