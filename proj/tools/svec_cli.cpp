#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "svec/micro_model.hpp"
#include "svec/orchestrator.hpp"

namespace {

struct ManifestArgs {
    std::string manifest_path;
    int jobs = 0;
    long long seed = -1;
    std::string output_dir;
};

void add_manifest_options(CLI::App* cmd, ManifestArgs& args) {
    cmd->add_option("--manifest", args.manifest_path, "experiment manifest (JSON)")->required();
    cmd->add_option("--jobs", args.jobs, "override manifest.jobs");
    cmd->add_option("--seed", args.seed, "override manifest.seed");
    cmd->add_option("--output-dir", args.output_dir, "override manifest.output_dir");
}

svec::ExperimentManifest load_with_overrides(const ManifestArgs& args,
                                             svec::ExperimentKind expected) {
    svec::ExperimentManifest m = svec::ExperimentManifest::from_json_file(args.manifest_path);
    if (m.experiment != expected) {
        throw svec::ValidationError(std::string("manifest.experiment is '") +
                                    svec::experiment_kind_name(m.experiment) +
                                    "' but this command runs '" +
                                    svec::experiment_kind_name(expected) + "'");
    }
    if (args.jobs > 0) m.jobs = args.jobs;
    if (args.seed >= 0) m.seed = static_cast<uint64_t>(args.seed);
    if (!args.output_dir.empty()) m.output_dir = args.output_dir;
    return m;
}

int run_stage(const svec::ExperimentManifest& manifest, const std::string& key_filter = "") {
    const svec::WorkPlan work = svec::plan(manifest);
    std::cout << "plan: " << work.item_keys.size() << " item(s) for stage "
              << svec::experiment_kind_name(work.stage) << "\n";
    svec::RunOptions options;
    options.log = &std::cout;
    options.key_filter = key_filter;
    const svec::RunResult result = svec::run(manifest, options);
    std::cout << "done: executed=" << result.executed << " skipped=" << result.skipped
              << " failed=" << result.failed << " wall=" << result.wall_seconds << "s\n";
    return result.failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"persona-vector steering toolkit"};
    app.require_subcommand(0, 1);

    bool print_schema = false;
    app.add_flag("--print-schema", print_schema, "print the manifest JSON schema and exit");

    // gen-weights
    auto* gen_weights = app.add_subcommand("gen-weights", "write micro-model weights");
    std::string gw_out = "weights.svbb";
    long long gw_seed = 0;
    std::string gw_init = "random";
    int gw_layers = 4;
    int gw_hidden = 64;
    gen_weights->add_option("--out", gw_out, "output path");
    gen_weights->add_option("--seed", gw_seed, "weight init seed")->required();
    gen_weights->add_option("--init", gw_init, "random | trait-fixture")
        ->check(CLI::IsMember({"random", "trait-fixture"}));
    gen_weights->add_option("--layers", gw_layers, "transformer blocks (default 4)");
    gen_weights->add_option("--hidden", gw_hidden, "hidden dim, multiple of 16 (default 64)");

    // stage commands
    ManifestArgs extract_args, generate_args, score_args, analyze_args, report_args, plan_args;
    auto* extract_cmd = app.add_subcommand("extract-vectors", "build corpora and persona vectors");
    add_manifest_options(extract_cmd, extract_args);
    auto* generate_cmd = app.add_subcommand("generate-answers", "generate the steered answer pool");
    add_manifest_options(generate_cmd, generate_args);
    std::string gen_trait, gen_direction;
    double gen_alpha = -1.0;
    int gen_layer = -2;
    generate_cmd->add_option("--trait", gen_trait, "restrict to one trait");
    generate_cmd->add_option("--direction", gen_direction, "pos | neg | none")
        ->check(CLI::IsMember({"pos", "neg", "none"}));
    generate_cmd->add_option("--alpha", gen_alpha, "override coefficient magnitude");
    generate_cmd->add_option("--layer", gen_layer, "override intervention layer");
    auto* score_cmd = app.add_subcommand("score-pool", "score the answer pool (score_a/score_b)");
    add_manifest_options(score_cmd, score_args);
    auto* analyze_cmd = app.add_subcommand("analyze", "compute analysis outputs");
    add_manifest_options(analyze_cmd, analyze_args);
    auto* report_cmd = app.add_subcommand("report", "render the markdown report to stdout");
    add_manifest_options(report_cmd, report_args);
    auto* plan_cmd = app.add_subcommand("plan", "print work counts without executing");
    add_manifest_options(plan_cmd, plan_args);

    // import-asap
    auto* import_cmd = app.add_subcommand("import-asap", "convert the benchmark TSV to the "
                                                         "canonical corpus file");
    std::string asap_tsv, asap_out, asap_sets_file;
    bool asap_lenient = false;
    import_cmd->add_option("--tsv", asap_tsv, "benchmark TSV path")->required();
    import_cmd->add_option("--out", asap_out, "canonical corpus output path")->required();
    import_cmd->add_option("--sets-file", asap_sets_file, "prompt set table override (JSON)");
    import_cmd->add_flag("--lenient", asap_lenient,
                         "skip malformed rows (reported with line numbers) instead of failing");

    CLI11_PARSE(app, argc, argv);

    try {
        if (print_schema) {
            std::cout << svec::manifest_schema();
            return 0;
        }
        if (gen_weights->parsed()) {
            const svec::MicroModel model =
                gw_init == "trait-fixture"
                    ? svec::MicroModel::trait_fixture(static_cast<uint64_t>(gw_seed), gw_layers,
                                                      gw_hidden)
                    : svec::MicroModel::random_init(static_cast<uint64_t>(gw_seed), gw_layers,
                                                    gw_hidden);
            model.save(gw_out);
            std::cout << "wrote " << gw_out << " (" << model.descriptor().model_id << ", "
                      << model.descriptor().n_layers << " layers, hidden "
                      << model.descriptor().hidden_dim << ")\n";
            return 0;
        }
        if (plan_cmd->parsed()) {
            svec::ExperimentManifest m =
                svec::ExperimentManifest::from_json_file(plan_args.manifest_path);
            if (plan_args.jobs > 0) m.jobs = plan_args.jobs;
            if (plan_args.seed >= 0) m.seed = static_cast<uint64_t>(plan_args.seed);
            if (!plan_args.output_dir.empty()) m.output_dir = plan_args.output_dir;
            const svec::WorkPlan work = svec::plan(m);
            std::cout << svec::experiment_kind_name(work.stage) << ": " << work.item_keys.size()
                      << " item(s)\n";
            return 0;
        }
        if (extract_cmd->parsed()) {
            return run_stage(load_with_overrides(extract_args, svec::ExperimentKind::extract));
        }
        if (generate_cmd->parsed()) {
            svec::ExperimentManifest m =
                load_with_overrides(generate_args, svec::ExperimentKind::generate);
            if (gen_alpha >= 0.0) m.magnitude = gen_alpha;
            if (gen_layer >= -1) m.layer = gen_layer;
            if (!gen_trait.empty()) m.traits = {gen_trait};
            std::string filter;
            if (!gen_direction.empty()) {
                filter = gen_direction == "none"
                             ? "/baseline/"
                             : "/" + (gen_trait.empty() ? m.traits.at(0) : gen_trait) + "_" +
                                   gen_direction + "/";
            }
            return run_stage(m, filter);
        }
        if (score_cmd->parsed()) {
            svec::ExperimentManifest m =
                svec::ExperimentManifest::from_json_file(score_args.manifest_path);
            if (m.experiment != svec::ExperimentKind::score_a &&
                m.experiment != svec::ExperimentKind::score_b) {
                throw svec::ValidationError(
                    "score-pool requires manifest.experiment score_a or score_b");
            }
            if (score_args.jobs > 0) m.jobs = score_args.jobs;
            if (score_args.seed >= 0) m.seed = static_cast<uint64_t>(score_args.seed);
            if (!score_args.output_dir.empty()) m.output_dir = score_args.output_dir;
            return run_stage(m);
        }
        if (analyze_cmd->parsed()) {
            return run_stage(load_with_overrides(analyze_args, svec::ExperimentKind::analyze));
        }
        if (report_cmd->parsed()) {
            svec::ExperimentManifest m =
                svec::ExperimentManifest::from_json_file(report_args.manifest_path);
            if (!report_args.output_dir.empty()) m.output_dir = report_args.output_dir;
            std::cout << svec::render_run_report(m);
            return 0;
        }
        if (import_cmd->parsed()) {
            const svec::PromptSetTable table = asap_sets_file.empty()
                                                   ? svec::PromptSetTable::builtin()
                                                   : svec::PromptSetTable::from_json(asap_sets_file);
            const auto by_set = svec::load_asap(asap_tsv, table, asap_lenient, &std::cerr);
            svec::save_student_answers(asap_out, by_set);
            size_t rows = 0;
            for (const auto& [id, list] : by_set) rows += list.size();
            std::cout << "wrote " << asap_out << " (" << rows << " rows, " << by_set.size()
                      << " sets)\n";
            return 0;
        }
        std::cout << app.help();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
