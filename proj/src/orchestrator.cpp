#include "svec/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

#include "svec/micro_model.hpp"
#include "svec/util.hpp"

namespace svec {

using nlohmann::json;

const char* experiment_kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::extract: return "extract";
        case ExperimentKind::generate: return "generate";
        case ExperimentKind::score_a: return "score_a";
        case ExperimentKind::score_b: return "score_b";
        case ExperimentKind::analyze: return "analyze";
    }
    return "generate";
}

ExperimentKind experiment_kind_from_name(std::string_view name) {
    if (name == "extract") return ExperimentKind::extract;
    if (name == "generate") return ExperimentKind::generate;
    if (name == "score_a") return ExperimentKind::score_a;
    if (name == "score_b") return ExperimentKind::score_b;
    if (name == "analyze") return ExperimentKind::analyze;
    throw ValidationError("manifest.experiment: unknown stage '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

void check_known_keys(const json& obj, const std::set<std::string>& known,
                      const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (known.find(it.key()) == known.end()) {
            throw ValidationError(where + ": unknown field '" + it.key() + "'");
        }
    }
}

}  // namespace

ExperimentManifest ExperimentManifest::from_json_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open manifest: " + path.string());
    json doc;
    try {
        doc = json::parse(is, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ValidationError("manifest parse error in " + path.string() + ": " + e.what());
    }
    check_known_keys(doc, {"experiment", "backbone_weights", "traits", "traits_file",
                           "sets_file", "magnitude", "layer", "sets", "samples_per_cell",
                           "questions_per_trait", "seed", "output_dir", "scorer",
                           "answers_pool", "jobs", "max_new_tokens", "gen_temperature",
                           "retry_cap", "filter_threshold"},
                     "manifest");
    ExperimentManifest m;
    m.experiment = experiment_kind_from_name(doc.at("experiment").get<std::string>());
    m.backbone_weights = doc.value("backbone_weights", std::string());
    m.traits = doc.value("traits", std::vector<std::string>());
    m.traits_file = doc.value("traits_file", std::string());
    m.sets_file = doc.value("sets_file", std::string());
    m.magnitude = doc.value("magnitude", 2.0);
    m.layer = doc.value("layer", -1);
    m.sets = doc.value("sets", std::vector<int>());
    m.samples_per_cell = doc.value("samples_per_cell", 10);
    m.questions_per_trait = doc.value("questions_per_trait", 0);
    m.seed = doc.value("seed", static_cast<uint64_t>(0));
    m.output_dir = doc.at("output_dir").get<std::string>();
    if (doc.contains("scorer")) {
        const json& s = doc.at("scorer");
        check_known_keys(s, {"kind", "endpoint", "judge_model", "credential_env"},
                         "manifest.scorer");
        m.scorer.kind = s.value("kind", m.scorer.kind);
        m.scorer.endpoint = s.value("endpoint", m.scorer.endpoint);
        m.scorer.judge_model = s.value("judge_model", m.scorer.judge_model);
        m.scorer.credential_env = s.value("credential_env", m.scorer.credential_env);
    }
    m.answers_pool = doc.value("answers_pool", std::vector<std::string>());
    m.jobs = doc.value("jobs", 1);
    m.max_new_tokens = doc.value("max_new_tokens", 48);
    m.gen_temperature = doc.value("gen_temperature", 0.8);
    m.retry_cap = doc.value("retry_cap", 2);
    m.filter_threshold = doc.value("filter_threshold", 50);
    return m;
}

json ExperimentManifest::to_json() const {
    json doc;
    doc["experiment"] = experiment_kind_name(experiment);
    doc["backbone_weights"] = backbone_weights;
    doc["traits"] = traits;
    doc["traits_file"] = traits_file;
    doc["sets_file"] = sets_file;
    doc["magnitude"] = magnitude;
    doc["layer"] = layer;
    doc["sets"] = sets;
    doc["samples_per_cell"] = samples_per_cell;
    doc["questions_per_trait"] = questions_per_trait;
    doc["seed"] = seed;
    doc["output_dir"] = output_dir;
    doc["scorer"] = {{"kind", scorer.kind},
                     {"endpoint", scorer.endpoint},
                     {"judge_model", scorer.judge_model},
                     {"credential_env", scorer.credential_env}};
    doc["answers_pool"] = answers_pool;
    doc["jobs"] = jobs;
    doc["max_new_tokens"] = max_new_tokens;
    doc["gen_temperature"] = gen_temperature;
    doc["retry_cap"] = retry_cap;
    doc["filter_threshold"] = filter_threshold;
    return doc;
}

void ExperimentManifest::validate() const {
    if (output_dir.empty()) throw ValidationError("manifest.output_dir: required");
    if (magnitude < 0.0) throw ValidationError("manifest.magnitude: must be nonnegative");
    if (jobs < 1) throw ValidationError("manifest.jobs: must be >= 1");
    if (samples_per_cell < 1) throw ValidationError("manifest.samples_per_cell: must be >= 1");
    if (max_new_tokens < 1) throw ValidationError("manifest.max_new_tokens: must be >= 1");
    if (gen_temperature < 0.0) throw ValidationError("manifest.gen_temperature: must be >= 0");
    if (retry_cap < 0) throw ValidationError("manifest.retry_cap: must be >= 0");
    if (filter_threshold < 0 || filter_threshold > 100) {
        throw ValidationError("manifest.filter_threshold: must be in 0..100");
    }
    if (questions_per_trait < 0) {
        throw ValidationError("manifest.questions_per_trait: must be >= 0");
    }
    std::set<int> seen_sets;
    for (int s : sets) {
        if (s < 1 || s > 10) throw ValidationError("manifest.sets: set ids must be in 1..10");
        if (!seen_sets.insert(s).second) {
            throw ValidationError("manifest.sets: duplicate set id " + std::to_string(s));
        }
    }
    const bool needs_model = experiment == ExperimentKind::extract ||
                             experiment == ExperimentKind::generate ||
                             (experiment == ExperimentKind::score_b &&
                              scorer.kind == "self_steered");
    if (needs_model && backbone_weights.empty()) {
        throw ValidationError("manifest.backbone_weights: required for this stage");
    }
    const bool needs_traits =
        experiment != ExperimentKind::score_a;  // scorer/config enumeration
    if (needs_traits && traits.empty()) {
        throw ValidationError("manifest.traits: at least one trait required for this stage");
    }
    if (experiment == ExperimentKind::generate && sets.empty()) {
        throw ValidationError("manifest.sets: at least one set required for generate");
    }
    if (experiment == ExperimentKind::score_b && scorer.kind != "scripted" &&
        scorer.kind != "self_steered") {
        throw ValidationError("manifest.scorer.kind: score_b requires 'scripted' or "
                              "'self_steered'");
    }
    if (experiment == ExperimentKind::score_a && scorer.kind != "external" &&
        scorer.kind != "scripted") {
        throw ValidationError("manifest.scorer.kind: score_a requires 'external'");
    }
}

std::string ExperimentManifest::hash() const {
    json doc = to_json();
    doc.erase("jobs");
    doc.erase("retry_cap");
    return hex16(fnv1a(doc.dump()));
}

std::string manifest_schema() {
    json doc;
    doc["experiment"] = "one of: extract | generate | score_a | score_b | analyze";
    doc["backbone_weights"] = "path to a SVEC-BB weights file (stages that run the model)";
    doc["traits"] = json::array({"trait names resolved against the built-in set or traits_file"});
    doc["traits_file"] = "optional JSON file replacing the built-in trait specs";
    doc["sets_file"] = "optional JSON file replacing the built-in prompt set table";
    doc["magnitude"] = "steering coefficient magnitude |alpha| (default 2.0)";
    doc["layer"] = "intervention layer; -1 selects floor(n_layers/2)";
    doc["sets"] = json::array({"prompt set ids (1..10) used by generate"});
    doc["samples_per_cell"] = "answers per (configuration, set) cell (default 10)";
    doc["questions_per_trait"] = "0 = all elicit questions; otherwise first K";
    doc["seed"] = "run seed; per-item seeds derive from fnv1a(seed bytes + item key)";
    doc["output_dir"] = "run directory (stores, ledgers, analysis outputs)";
    doc["scorer"] = {{"kind", "external | scripted | self_steered"},
                     {"endpoint", "http://host:port/path or scripted://<seed>"},
                     {"judge_model", "model name sent on the wire"},
                     {"credential_env", "env var holding the API key (default JUDGE_API_KEY)"}};
    doc["answers_pool"] =
        json::array({"answer store files/dirs for scoring stages; default <output_dir>/answers"});
    doc["jobs"] = "max concurrent work items (excluded from the manifest hash)";
    doc["max_new_tokens"] = "generation budget per response";
    doc["gen_temperature"] = "sampling temperature for corpus/answer generation";
    doc["retry_cap"] = "per-item retries before the item is recorded as failed";
    doc["filter_threshold"] = "judge filtering threshold (default 50, inclusive)";
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace {

std::vector<TraitSpec> resolve_traits(const ExperimentManifest& m) {
    std::vector<TraitSpec> all =
        m.traits_file.empty() ? builtin_traits() : load_traits_json(m.traits_file);
    std::vector<TraitSpec> out;
    for (const std::string& name : m.traits) {
        bool found = false;
        for (auto& spec : all) {
            if (spec.name == name) {
                TraitSpec t = spec;
                if (m.questions_per_trait > 0 &&
                    static_cast<size_t>(m.questions_per_trait) < t.elicit_questions.size()) {
                    t.elicit_questions.resize(static_cast<size_t>(m.questions_per_trait));
                }
                out.push_back(std::move(t));
                found = true;
                break;
            }
        }
        if (!found) throw ValidationError("manifest.traits: unknown trait '" + name + "'");
    }
    return out;
}

PromptSetTable resolve_sets(const ExperimentManifest& m) {
    return m.sets_file.empty() ? PromptSetTable::builtin() : PromptSetTable::from_json(m.sets_file);
}

std::vector<std::string> config_order_for(const ExperimentManifest& m) {
    const std::vector<TraitSpec> traits = resolve_traits(m);
    const auto configs = enumerate_configurations(traits, m.magnitude, std::max(m.layer, 0));
    std::vector<std::string> out;
    out.reserve(configs.size());
    for (const auto& c : configs) out.push_back(configuration_id(c));
    return out;
}

std::vector<std::filesystem::path> pool_sources(const ExperimentManifest& m) {
    std::vector<std::filesystem::path> out;
    if (m.answers_pool.empty()) {
        out.push_back(std::filesystem::path(m.output_dir) / "answers");
    } else {
        for (const auto& p : m.answers_pool) out.push_back(p);
    }
    return out;
}

std::string sanitize_filename(const std::string& s) {
    std::string out;
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '-' || c == '_';
        out.push_back(ok ? c : '_');
    }
    return out;
}

std::vector<int> sorted_sets(const ExperimentManifest& m) {
    std::vector<int> sets = m.sets;
    std::sort(sets.begin(), sets.end());
    return sets;
}

}  // namespace

std::vector<AnswerRecord> load_answer_pool(const std::vector<std::filesystem::path>& sources,
                                           const std::vector<std::string>& config_order) {
    std::vector<std::filesystem::path> files;
    for (const auto& src : sources) {
        if (std::filesystem::is_directory(src)) {
            std::vector<std::filesystem::path> inner;
            for (const auto& e : std::filesystem::directory_iterator(src)) {
                if (e.path().extension() == ".ldjson") inner.push_back(e.path());
            }
            std::sort(inner.begin(), inner.end());
            files.insert(files.end(), inner.begin(), inner.end());
        } else if (std::filesystem::exists(src)) {
            files.push_back(src);
        } else {
            throw ValidationError("answer pool source does not exist: " + src.string());
        }
    }
    std::map<std::string, AnswerRecord> by_id;  // duplicate keys: last record wins
    for (const auto& f : files) {
        for (auto& rec : load_answers(f)) by_id[rec.answer_id] = std::move(rec);
    }
    std::map<std::string, size_t> config_rank;
    for (size_t i = 0; i < config_order.size(); ++i) config_rank[config_order[i]] = i;
    std::vector<AnswerRecord> out;
    out.reserve(by_id.size());
    for (auto& [id, rec] : by_id) out.push_back(std::move(rec));
    std::sort(out.begin(), out.end(), [&](const AnswerRecord& a, const AnswerRecord& b) {
        const size_t ra = config_rank.count(a.generator_config)
                              ? config_rank[a.generator_config]
                              : config_order.size();
        const size_t rb = config_rank.count(b.generator_config)
                              ? config_rank[b.generator_config]
                              : config_order.size();
        if (ra != rb) return ra < rb;
        if (a.generator_config != b.generator_config) return a.generator_config < b.generator_config;
        if (a.set_id != b.set_id) return a.set_id < b.set_id;
        if (a.sample_index != b.sample_index) return a.sample_index < b.sample_index;
        return a.answer_id < b.answer_id;
    });
    return out;
}

std::vector<Judgment> load_judgment_store(const std::filesystem::path& dir) {
    std::vector<Judgment> out;
    if (!std::filesystem::is_directory(dir)) return out;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() == ".ldjson") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::map<std::string, Judgment> by_key;  // (scorer, answer): last record wins
    for (const auto& f : files) {
        for (auto& j : load_judgments(f)) {
            by_key[j.scorer + "\x1f" + j.answer_id] = std::move(j);
        }
    }
    out.reserve(by_key.size());
    for (auto& [k, j] : by_key) out.push_back(std::move(j));
    return out;
}

// ---------------------------------------------------------------------------
// Plan
// ---------------------------------------------------------------------------

namespace {

std::string analyze_inputs_hash(const ExperimentManifest& m) {
    const auto pool = load_answer_pool(pool_sources(m), config_order_for(m));
    const auto judgments =
        load_judgment_store(std::filesystem::path(m.output_dir) / "judgments");
    uint64_t h = kFnvOffset;
    for (const auto& a : pool) h = fnv1a(answer_to_json_line(a), h);
    for (const auto& j : judgments) h = fnv1a(judgment_to_json_line(j), h);
    return hex16(h);
}

}  // namespace

WorkPlan plan(const ExperimentManifest& manifest) {
    manifest.validate();
    WorkPlan p;
    p.stage = manifest.experiment;
    switch (manifest.experiment) {
        case ExperimentKind::extract: {
            for (const auto& t : resolve_traits(manifest)) {
                p.item_keys.push_back("extract/" + t.name);
            }
            break;
        }
        case ExperimentKind::generate: {
            const std::vector<std::string> configs = config_order_for(manifest);
            for (const auto& cfg : configs) {
                for (int set_id : sorted_sets(manifest)) {
                    for (int i = 0; i < manifest.samples_per_cell; ++i) {
                        p.item_keys.push_back("generate/" + cfg + "/s" + std::to_string(set_id) +
                                              "/i" + std::to_string(i));
                    }
                }
            }
            break;
        }
        case ExperimentKind::score_a: {
            const std::vector<std::string> order =
                manifest.traits.empty() ? std::vector<std::string>{} : config_order_for(manifest);
            const auto pool = load_answer_pool(pool_sources(manifest), order);
            if (pool.empty()) throw ValidationError("score_a: empty answer pool");
            for (const auto& a : pool) p.item_keys.push_back("score_a/" + a.answer_id);
            break;
        }
        case ExperimentKind::score_b: {
            const std::vector<std::string> configs = config_order_for(manifest);
            const auto pool = load_answer_pool(pool_sources(manifest), configs);
            if (pool.empty()) throw ValidationError("score_b: empty answer pool");
            for (const auto& scorer : configs) {
                for (const auto& a : pool) {
                    p.item_keys.push_back("score_b/" + scorer + "/" + a.answer_id);
                }
            }
            break;
        }
        case ExperimentKind::analyze: {
            p.item_keys.push_back("analyze/" + analyze_inputs_hash(manifest));
            break;
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

RunLedger RunLedger::open(const std::filesystem::path& path, const std::string& manifest_hash,
                          const std::string& stage) {
    RunLedger ledger;
    ledger.path_ = path;
    if (std::filesystem::exists(path)) {
        std::ifstream is(path);
        std::string line;
        if (!std::getline(is, line)) throw FormatError("empty ledger: " + path.string());
        json header = json::parse(line);
        const std::string have = header.at("manifest_hash").get<std::string>();
        if (have != manifest_hash) {
            throw LedgerMismatchError("ledger " + path.string() + " belongs to manifest " + have +
                                      ", refusing to mix with manifest " + manifest_hash);
        }
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            ledger.keys_.insert(json::parse(line).at("key").get<std::string>());
        }
    } else {
        std::filesystem::create_directories(path.parent_path());
        std::ofstream os(path);
        if (!os) throw FormatError("cannot create ledger: " + path.string());
        json header;
        header["v"] = 1;
        header["manifest_hash"] = manifest_hash;
        header["stage"] = stage;
        os << header.dump() << "\n";
    }
    return ledger;
}

void RunLedger::append(const std::string& key) {
    std::ofstream os(path_, std::ios::app);
    if (!os) throw FormatError("cannot append to ledger: " + path_.string());
    json j;
    j["key"] = key;
    os << j.dump() << "\n";
    os.flush();
    if (!os) throw FormatError("ledger write failed: " + path_.string());
    keys_.insert(key);
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

namespace {

// Serialized append-only shard writer; flushes before the ledger entry.
class ShardWriter {
public:
    explicit ShardWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    void append(const std::string& shard, const std::string& line) {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = streams_.find(shard);
        if (it == streams_.end()) {
            auto os = std::make_unique<std::ofstream>(dir_ / (shard + ".ldjson"), std::ios::app);
            if (!*os) throw FormatError("cannot open shard: " + (dir_ / shard).string());
            it = streams_.emplace(shard, std::move(os)).first;
        }
        *it->second << line << "\n";
        it->second->flush();
        if (!*it->second) throw FormatError("shard write failed: " + shard);
    }

private:
    std::filesystem::path dir_;
    std::mutex mu_;
    std::map<std::string, std::unique_ptr<std::ofstream>> streams_;
};

struct AnalysisArtifacts {
    std::string model_id;
    std::string external_scorer;
    bool has_effects = false;
    EffectSizeTable effects;
    std::vector<SignificanceRow> significance;
    bool has_domains = false;
    DomainSensitivity domains;
    MeanAbsDelta mad;
    std::vector<QuadrantPoint> quadrants;
    std::optional<double> length_r;
    bool has_matrix = false;
    InteractionMatrix matrix;
    bool has_leniency = false;
    LeniencySummary leniency;
    std::vector<BiasRangeRow> bias_ranges;
};

AnalysisArtifacts compute_analysis_artifacts(const ExperimentManifest& m) {
    AnalysisArtifacts art;
    const std::vector<std::string> configs = config_order_for(m);
    const PromptSetTable table = resolve_sets(m);
    const auto answers = load_answer_pool(pool_sources(m), configs);
    const auto judgments = load_judgment_store(std::filesystem::path(m.output_dir) / "judgments");
    if (answers.empty()) throw ValidationError("analyze: empty answer pool");
    if (judgments.empty()) throw ValidationError("analyze: no judgments found");
    art.model_id = answers.front().model_id;

    const std::set<std::string> config_set(configs.begin(), configs.end());
    std::vector<Judgment> external, steered;
    std::set<std::string> external_scorers;
    for (const auto& j : judgments) {
        if (config_set.count(j.scorer)) {
            steered.push_back(j);
        } else {
            external.push_back(j);
            external_scorers.insert(j.scorer);
        }
    }

    if (!external.empty()) {
        // Single external judge expected; the store loader already dropped
        // duplicates, and mixed judges are rejected by the builders.
        art.external_scorer = *external_scorers.begin();
        std::vector<Judgment> judge_only;
        for (const auto& j : external) {
            if (j.scorer == art.external_scorer) judge_only.push_back(j);
        }
        art.effects = build_effect_table(answers, judge_only, configs);
        art.has_effects = true;
        art.significance = significance_vs_baseline(answers, judge_only, configs);
        art.mad = mean_abs_delta(art.effects);
        try {
            art.domains = domain_sensitivity(art.effects, table);
            art.has_domains = true;
        } catch (const Error&) {
        }
        try {
            art.quadrants = perturbation_quadrants(art.effects);
        } catch (const Error&) {
        }
        try {
            art.length_r = length_quality_correlation(answers, judge_only);
        } catch (const Error&) {
        }
    }
    if (!steered.empty()) {
        art.matrix = build_interaction_matrix(answers, steered, configs);
        art.has_matrix = true;
        try {
            art.leniency = leniency_summary(art.matrix);
            art.has_leniency = true;
        } catch (const Error&) {
        }
        try {
            art.bias_ranges = bias_ranges_by_topic(answers, steered, configs, table);
        } catch (const Error&) {
        }
    }
    return art;
}

std::string report_from_artifacts(const AnalysisArtifacts& art) {
    ReportInputs inputs;
    inputs.model_id = art.model_id;
    if (art.has_effects) {
        inputs.effects = &art.effects;
        inputs.significance = &art.significance;
        inputs.mean_abs = &art.mad;
        if (!art.quadrants.empty()) inputs.quadrants = &art.quadrants;
        inputs.length_quality_r = art.length_r;
    }
    if (art.has_domains) inputs.domains = &art.domains;
    if (art.has_matrix) inputs.matrix = &art.matrix;
    if (art.has_leniency) inputs.leniency = &art.leniency;
    if (!art.bias_ranges.empty()) inputs.bias_ranges = &art.bias_ranges;
    return render_report_markdown(inputs);
}

void write_analysis_outputs(const std::filesystem::path& dir, const AnalysisArtifacts& art) {
    std::filesystem::create_directories(dir);
    if (art.has_effects) {
        write_effect_table_csv(dir / "effect_sizes.csv", art.effects);
        write_effect_table_ldjson(dir / "effect_sizes.ldjson", art.effects);
        write_significance_csv(dir / "significance.csv", art.significance);
        write_significance_ldjson(dir / "significance.ldjson", art.significance);
        write_quadrants_csv(dir / "quadrants.csv", art.quadrants);
        write_quadrants_ldjson(dir / "quadrants.ldjson", art.quadrants);
        const DomainSensitivity ds = art.has_domains ? art.domains : DomainSensitivity{};
        write_domain_sensitivity_csv(dir / "domain_sensitivity.csv", ds, art.mad);
        write_domain_sensitivity_ldjson(dir / "domain_sensitivity.ldjson", ds, art.mad);
        std::ofstream lq(dir / "length_quality.csv");
        lq << "metric,value\n";
        lq << "length_quality_r,";
        if (art.length_r.has_value()) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.10g", *art.length_r);
            lq << buf;
        } else {
            lq << "nan";
        }
        lq << "\n";
        nlohmann::json lqj;
        lqj["v"] = 1;
        lqj["length_quality_r"] =
            art.length_r.has_value() ? nlohmann::json(*art.length_r) : nlohmann::json();
        std::ofstream lqs(dir / "length_quality.ldjson");
        lqs << lqj.dump() << "\n";
    }
    if (art.has_matrix) {
        write_interaction_matrix_csv(dir / "interaction_matrix.csv", art.matrix);
        write_interaction_matrix_ldjson(dir / "interaction_matrix.ldjson", art.matrix);
        if (art.has_leniency) {
            write_leniency_csv(dir / "leniency.csv", art.leniency);
            write_leniency_ldjson(dir / "leniency.ldjson", art.leniency);
        }
        if (!art.bias_ranges.empty()) {
            write_bias_ranges_csv(dir / "bias_ranges.csv", art.bias_ranges);
            write_bias_ranges_ldjson(dir / "bias_ranges.ldjson", art.bias_ranges);
        }
    }
    std::ofstream report(dir / "report.md");
    report << report_from_artifacts(art);
}

// Deterministic fixture scorer for desk-scale Experiment B runs.
Judgment scripted_scorer_judgment(const ExperimentManifest& m, const std::string& scorer_id,
                                  const AnswerRecord& answer, const PromptSet& set) {
    uint64_t h = derive_seed(m.seed, "scripted_scorer/" + scorer_id + "/" + answer.answer_id);
    h = mix64(fnv1a(answer.text, h));
    Judgment j;
    j.answer_id = answer.answer_id;
    j.scorer = scorer_id;
    j.raw = set.score_min +
            static_cast<int>(h % static_cast<uint64_t>(set.score_max - set.score_min + 1));
    j.normalized = normalize_score(j.raw, set).normalized;
    j.parse_attempts = 1;
    j.scored = true;
    return j;
}

struct StageContext {
    std::unique_ptr<MicroModel> model;
    std::vector<TraitSpec> traits;
    std::vector<SteeringConfig> configs;
    std::vector<std::string> config_ids;
    std::unique_ptr<PromptSetTable> table;
    std::unique_ptr<VectorStore> vectors;
    std::unique_ptr<JudgeClient> judge;
    std::vector<AnswerRecord> pool;
    std::map<std::string, const AnswerRecord*> pool_by_id;
    int layer = 0;
};

}  // namespace

RunResult run(const ExperimentManifest& manifest, const RunOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    manifest.validate();
    const std::filesystem::path out_dir(manifest.output_dir);
    std::filesystem::create_directories(out_dir);

    const WorkPlan work = plan(manifest);
    const std::string stage = experiment_kind_name(manifest.experiment);
    RunLedger ledger =
        RunLedger::open(out_dir / ("ledger_" + stage + ".jsonl"), manifest.hash(), stage);

    std::vector<std::string> pending;
    size_t filtered = 0;
    for (const auto& key : work.item_keys) {
        if (!options.key_filter.empty() && key.find(options.key_filter) == std::string::npos) {
            ++filtered;
            continue;
        }
        if (!ledger.contains(key)) pending.push_back(key);
    }
    RunResult result;
    result.planned = work.item_keys.size();
    result.skipped = work.item_keys.size() - pending.size() - filtered;
    if (options.max_items > 0 && pending.size() > options.max_items) {
        pending.resize(options.max_items);
    }

    // Stage setup.
    StageContext ctx;
    const bool needs_model = manifest.experiment == ExperimentKind::extract ||
                             manifest.experiment == ExperimentKind::generate ||
                             (manifest.experiment == ExperimentKind::score_b &&
                              manifest.scorer.kind == "self_steered");
    if (needs_model) {
        ctx.model = std::make_unique<MicroModel>(MicroModel::load(manifest.backbone_weights));
        ctx.layer = manifest.layer >= 0 ? manifest.layer : midpoint_layer(ctx.model->descriptor());
        if (ctx.layer >= ctx.model->descriptor().n_layers) {
            throw ValidationError("manifest.layer: out of range for backbone");
        }
    }
    if (manifest.experiment != ExperimentKind::score_a) {
        ctx.traits = resolve_traits(manifest);
        ctx.configs = enumerate_configurations(ctx.traits, manifest.magnitude, ctx.layer);
        for (const auto& c : ctx.configs) ctx.config_ids.push_back(configuration_id(c));
    }
    ctx.table = std::make_unique<PromptSetTable>(resolve_sets(manifest));
    if (manifest.experiment == ExperimentKind::generate ||
        (manifest.experiment == ExperimentKind::score_b &&
         manifest.scorer.kind == "self_steered")) {
        ctx.vectors = std::make_unique<VectorStore>(out_dir / "vectors");
    }
    if (manifest.experiment == ExperimentKind::extract ||
        manifest.experiment == ExperimentKind::score_a) {
        JudgeClientConfig jc;
        jc.endpoint = manifest.scorer.endpoint;
        jc.judge_model = manifest.scorer.judge_model;
        jc.credential_env = manifest.scorer.credential_env;
        jc.cache_dir = out_dir / "judge_cache";
        ctx.judge = JudgeClient::from_config(jc, options.log);
    }
    if (manifest.experiment == ExperimentKind::score_a ||
        manifest.experiment == ExperimentKind::score_b) {
        ctx.pool = load_answer_pool(pool_sources(manifest), ctx.config_ids);
        for (const auto& a : ctx.pool) ctx.pool_by_id[a.answer_id] = &a;
    }

    ShardWriter answers_out(out_dir / "answers");
    ShardWriter judgments_out(out_dir / "judgments");
    std::filesystem::create_directories(out_dir / "vectors");
    std::filesystem::create_directories(out_dir / "corpora");

    std::mutex ledger_mu;
    std::mutex failures_mu;
    std::vector<std::string> failures;
    std::atomic<size_t> unscored{0};

    auto execute_item = [&](const std::string& key) {
        if (manifest.experiment == ExperimentKind::extract) {
            const std::string trait_name = key.substr(std::string("extract/").size());
            const TraitSpec* spec = nullptr;
            for (const auto& t : ctx.traits) {
                if (t.name == trait_name) spec = &t;
            }
            if (spec == nullptr) throw ValidationError("extract: unknown trait in key " + key);
            CorpusGenConfig cg;
            cg.max_new_tokens = manifest.max_new_tokens;
            cg.temperature = manifest.gen_temperature;
            cg.seed = manifest.seed;
            cg.allow_eos = false;  // fixed-length responses keep pooling spans non-empty
            std::vector<ContrastiveRecord> records =
                build_contrastive_corpus(*ctx.model, *spec, cg);
            score_corpus(*ctx.judge, records, *spec);
            for (auto& rec : records) {
                rec.kept = rec.trait_score.value_or(0) >= manifest.filter_threshold &&
                           rec.coherence_score.value_or(0) >= manifest.filter_threshold;
            }
            save_corpus(out_dir / "corpora" / (trait_name + ".ldjson"), records);
            const auto kept = filter_corpus(records, manifest.filter_threshold);
            // all layers come out of the single corpus pass; only the
            // requested layer is persisted
            std::set<int> all_layers;
            for (int l = 0; l < ctx.model->descriptor().n_layers; ++l) all_layers.insert(l);
            const auto by_layer = extract_from_records(*ctx.model, kept, all_layers,
                                                       PoolingMode::response_average);
            const PersonaVector& v = by_layer.at(ctx.layer);
            save_vector(out_dir / "vectors" /
                            (trait_name + "_l" + std::to_string(ctx.layer) + ".svpv"),
                        v, "manifest:" + manifest.hash());
            return;
        }
        if (manifest.experiment == ExperimentKind::generate) {
            // key: generate/<config>/s<set>/i<sample>
            std::string rest = key.substr(std::string("generate/").size());
            const size_t p1 = rest.rfind("/i");
            const int sample = std::stoi(rest.substr(p1 + 2));
            rest = rest.substr(0, p1);
            const size_t p2 = rest.rfind("/s");
            const int set_id = std::stoi(rest.substr(p2 + 2));
            const std::string config_id = rest.substr(0, p2);
            const SteeringConfig* config = nullptr;
            for (size_t i = 0; i < ctx.configs.size(); ++i) {
                if (ctx.config_ids[i] == config_id) config = &ctx.configs[i];
            }
            if (config == nullptr) throw ValidationError("generate: unknown config in " + key);

            const PromptSet& set = ctx.table->get(set_id);
            const std::string model_id = ctx.model->descriptor().model_id;
            std::vector<InterventionHandle> handles;
            if (config->direction != SteerDirection::unsteered) {
                const PersonaVector& v =
                    ctx.vectors->get(config->trait, config->layer, model_id);
                handles.push_back(make_intervention(v, *config, model_id));
            }
            GenerationConfig gen;
            gen.max_new_tokens = manifest.max_new_tokens;
            gen.temperature = manifest.gen_temperature;
            gen.seed = derive_seed(manifest.seed, key);
            gen.suppress_tokens = {tok::kBos, tok::kSep};
            const TokenSequence prompt = make_prompt_sequence(build_generation_prompt(set));
            const TokenSequence full = ctx.model->generate(prompt, gen, handles);

            AnswerRecord rec;
            rec.answer_id = make_answer_id(model_id, config_id, set_id, sample);
            rec.set_id = set_id;
            rec.generator_config = config_id;
            rec.model_id = model_id;
            rec.sample_index = sample;
            int visible = 0;
            for (size_t p = full.spans.response_begin; p < full.spans.response_end; ++p) {
                if (!full.special[p]) ++visible;
            }
            rec.response_token_count = visible;
            std::span<const TokenId> resp(full.tokens.data() + full.spans.response_begin,
                                          full.spans.response_end - full.spans.response_begin);
            rec.text = tok::decode_bytes(resp);
            answers_out.append(config_id, answer_to_json_line(rec));
            return;
        }
        if (manifest.experiment == ExperimentKind::score_a) {
            const std::string answer_id = key.substr(std::string("score_a/").size());
            const auto it = ctx.pool_by_id.find(answer_id);
            if (it == ctx.pool_by_id.end()) {
                throw ValidationError("score_a: answer not in pool: " + answer_id);
            }
            const Judgment j = score_with_external_judge(*ctx.judge, *it->second,
                                                         ctx.table->get(it->second->set_id));
            if (!j.scored) ++unscored;
            judgments_out.append(sanitize_filename(manifest.scorer.judge_model),
                                 judgment_to_json_line(j));
            return;
        }
        if (manifest.experiment == ExperimentKind::score_b) {
            // key: score_b/<scorer>/<answer_id>
            const std::string rest = key.substr(std::string("score_b/").size());
            const size_t slash = rest.find('/');
            const std::string scorer_id = rest.substr(0, slash);
            const std::string answer_id = rest.substr(slash + 1);
            const auto it = ctx.pool_by_id.find(answer_id);
            if (it == ctx.pool_by_id.end()) {
                throw ValidationError("score_b: answer not in pool: " + answer_id);
            }
            const AnswerRecord& answer = *it->second;
            const PromptSet& set = ctx.table->get(answer.set_id);
            Judgment j;
            if (manifest.scorer.kind == "scripted") {
                j = scripted_scorer_judgment(manifest, scorer_id, answer, set);
            } else {
                const SteeringConfig* config = nullptr;
                for (size_t i = 0; i < ctx.configs.size(); ++i) {
                    if (ctx.config_ids[i] == scorer_id) config = &ctx.configs[i];
                }
                if (config == nullptr) {
                    throw ValidationError("score_b: unknown scorer in " + key);
                }
                ScorerConfig sc;
                sc.kind = ScorerKind::self_steered;
                sc.steering = *config;
                sc.rubric_mode = RubricMode::rubric_range;
                j = score_with_self_steered(*ctx.model, *ctx.vectors, sc, answer, set);
            }
            if (!j.scored) ++unscored;
            judgments_out.append(scorer_id, judgment_to_json_line(j));
            return;
        }
        // analyze
        const AnalysisArtifacts art = compute_analysis_artifacts(manifest);
        write_analysis_outputs(out_dir / "analysis", art);
    };

    std::atomic<size_t> next{0};
    std::atomic<size_t> executed{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= pending.size()) return;
            const std::string& key = pending[i];
            bool done = false;
            std::string last_error;
            for (int attempt = 0; attempt <= manifest.retry_cap && !done; ++attempt) {
                try {
                    execute_item(key);
                    done = true;
                } catch (const std::exception& e) {
                    last_error = e.what();
                }
            }
            if (done) {
                std::lock_guard<std::mutex> lk(ledger_mu);
                ledger.append(key);
                ++executed;
            } else {
                std::lock_guard<std::mutex> lk(failures_mu);
                failures.push_back(key + ": " + last_error);
            }
        }
    };

    const int jobs = options.jobs_override > 0 ? options.jobs_override : manifest.jobs;
    const size_t n_threads =
        std::min<size_t>(static_cast<size_t>(std::max(1, jobs)), pending.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    result.executed = executed.load();
    result.unscored = unscored.load();
    result.failed = failures.size();
    result.failures = std::move(failures);
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.log != nullptr) {
        *options.log << "[run] stage=" << stage << " planned=" << result.planned
                     << " executed=" << result.executed << " skipped=" << result.skipped
                     << " failed=" << result.failed << " unscored=" << result.unscored
                     << " wall=" << result.wall_seconds << "s\n";
        for (const auto& f : result.failures) *options.log << "[run] FAILED " << f << "\n";
    }
    return result;
}

std::string render_run_report(const ExperimentManifest& manifest) {
    return report_from_artifacts(compute_analysis_artifacts(manifest));
}

}  // namespace svec
