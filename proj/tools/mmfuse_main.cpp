// Command line front end: synthesize datasets, validate manifests, run
// ablation experiments, and re-render reports from saved records.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmfuse/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// 0 ok, 2 bad configuration, 3 bad data, 4 a whole cell failed, 1 anything else.
constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCellFailed = 4;

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw mmfuse::ConfigError("cannot open " + path.string());
    json j;
    in >> j;
    return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw mmfuse::DataError("cannot write " + path.string());
    out << text;
}

int cmd_synth(const fs::path& config_path, const fs::path& out_dir,
              const std::optional<std::uint64_t>& seed) {
    mmfuse::SynthSpec spec;
    try {
        json j = read_json_file(config_path);
        // Accept a full experiment config too, so one file can drive both
        // `synth` and `run`.
        if (j.contains("dataset") && j.at("dataset").contains("synth")) {
            j = j.at("dataset").at("synth");
        }
        spec = mmfuse::synth_spec_from_json(j);
    } catch (const json::exception& e) {
        throw mmfuse::ConfigError(std::string("synth config parse: ") + e.what());
    }
    if (seed) spec.seed = *seed;
    const mmfuse::Dataset ds = mmfuse::synth_generate(spec);
    mmfuse::save_dataset(ds, out_dir);
    const auto report = mmfuse::validate_manifest(ds);
    std::cout << mmfuse::validation_report_to_json(report).dump(2) << "\n";
    return kExitOk;
}

int cmd_validate(const fs::path& manifest_path) {
    const mmfuse::Dataset ds = mmfuse::load_dataset(manifest_path);
    const auto report = mmfuse::validate_manifest(ds);
    std::cout << mmfuse::validation_report_to_json(report).dump(2) << "\n";
    return kExitOk;
}

int cmd_run(const fs::path& config_path, const std::optional<fs::path>& out_dir,
            const std::optional<std::size_t>& runs, const std::optional<std::uint64_t>& seed,
            const std::optional<std::size_t>& threads, const std::string& format) {
    mmfuse::ExperimentConfig cfg = mmfuse::load_config(config_path);
    if (runs) cfg.n_runs = *runs;
    if (seed) cfg.base_seed = *seed;
    if (threads) cfg.threads = *threads;
    if (cfg.manifest_path && cfg.manifest_path->is_relative()) {
        // Paths in the config resolve against the config file, not the cwd.
        cfg.manifest_path = config_path.parent_path() / *cfg.manifest_path;
    }

    const mmfuse::ExperimentResult result = mmfuse::run_experiment(cfg);
    const json records = mmfuse::records_to_json(result.records);
    const json report = mmfuse::emit_report_json(result);
    const std::string markdown = mmfuse::emit_report_markdown(result.records);

    if (out_dir) {
        fs::create_directories(*out_dir);
        write_text_file(*out_dir / "records.json", records.dump() + "\n");
        write_text_file(*out_dir / "report.json", report.dump(2) + "\n");
        write_text_file(*out_dir / "report.md", markdown);
    }
    if (format == "json") std::cout << report.dump(2) << "\n";
    else std::cout << markdown;

    return result.any_cell_all_failed ? kExitCellFailed : kExitOk;
}

int cmd_report(const fs::path& records_path, const std::optional<fs::path>& out_file,
               const std::string& format, const std::string& metric) {
    json j;
    try {
        j = read_json_file(records_path);
    } catch (const json::exception& e) {
        throw mmfuse::FormatError(std::string("records parse: ") + e.what());
    }
    const auto records = mmfuse::records_from_json(j);
    std::string text;
    if (format == "json") {
        json out;
        const auto cells = mmfuse::aggregate_records(records);
        json cell_arr = json::array();
        for (const auto& c : cells) {
            json metrics = json::object();
            for (const auto& [name, ms] : c.metrics) {
                metrics[name] = {{"mean", ms.first}, {"std", ms.second}};
            }
            cell_arr.push_back({{"technique", c.technique},
                                {"subset", c.subset},
                                {"n_ok", c.n_ok},
                                {"metrics", std::move(metrics)}});
        }
        out["cells"] = std::move(cell_arr);
        if (!metric.empty()) {
            out["verdict"] =
                mmfuse::ablation_verdict_to_json(mmfuse::ablation_verdict(records, metric));
        }
        text = out.dump(2) + "\n";
    } else {
        text = mmfuse::emit_report_markdown(records);
    }
    if (out_file) write_text_file(*out_file, text);
    else std::cout << text;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal fusion benchmark"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, records_path, out_path, format = "md", metric;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> runs, threads;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config_path, "synthesis spec (json)")->required();
    synth->add_option("--out", out_path, "output directory")->required();
    synth->add_option("--seed", seed, "override the spec seed");

    auto* validate = app.add_subcommand("validate", "check a dataset manifest");
    validate->add_option("--manifest", manifest_path, "manifest.json path")->required();

    auto* run = app.add_subcommand("run", "run an ablation experiment");
    run->add_option("--config", config_path, "experiment config (json)")->required();
    run->add_option("--out", out_path, "directory for records and reports");
    run->add_option("--runs", runs, "override the number of runs");
    run->add_option("--seed", seed, "override the base seed");
    run->add_option("--threads", threads, "override the worker thread count");
    run->add_option("--format", format, "stdout format: md or json")
        ->check(CLI::IsMember({"md", "json"}));

    auto* report = app.add_subcommand("report", "render a report from saved records");
    report->add_option("--records", records_path, "records.json path")->required();
    report->add_option("--out", out_path, "output file (stdout if omitted)");
    report->add_option("--format", format, "output format: md or json")
        ->check(CLI::IsMember({"md", "json"}));
    report->add_option("--metric", metric, "metric for the json verdict section");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(config_path, out_path, seed);
        if (validate->parsed()) return cmd_validate(manifest_path);
        if (run->parsed()) {
            return cmd_run(config_path,
                           out_path.empty() ? std::nullopt : std::optional<fs::path>(out_path),
                           runs, seed, threads, format);
        }
        if (report->parsed()) {
            return cmd_report(records_path,
                              out_path.empty() ? std::nullopt : std::optional<fs::path>(out_path),
                              format, metric);
        }
    } catch (const mmfuse::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mmfuse::SpecError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mmfuse::SplitError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mmfuse::Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return kExitUnexpected;
    }
    return kExitUnexpected;
}
