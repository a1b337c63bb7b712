#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svec/analysis.hpp"
#include "svec/backbone.hpp"
#include "svec/corpus.hpp"
#include "svec/extraction.hpp"
#include "svec/scoring.hpp"
#include "svec/steering.hpp"

namespace svec {

enum class ExperimentKind { extract, generate, score_a, score_b, analyze };

const char* experiment_kind_name(ExperimentKind k);
ExperimentKind experiment_kind_from_name(std::string_view name);

struct ManifestScorerSpec {
    // "scripted" (deterministic fixture scorer), "external" (HTTP or
    // scripted:// judge endpoint) or "self_steered".
    std::string kind = "external";
    std::string endpoint = "scripted://0";
    std::string judge_model = "external-judge";
    std::string credential_env = "JUDGE_API_KEY";
};

// Declarative description of one experiment stage. The content hash covers
// every work-defining field (jobs and retry_cap are execution knobs and are
// excluded), and ledgers refuse to mix manifests with different hashes.
struct ExperimentManifest {
    ExperimentKind experiment = ExperimentKind::generate;
    std::string backbone_weights;
    std::vector<std::string> traits;
    std::string traits_file;  // optional override of the built-in trait set
    std::string sets_file;    // optional override of the built-in set table
    double magnitude = 2.0;
    int layer = -1;  // -1 resolves to the backbone's midpoint layer
    std::vector<int> sets;
    int samples_per_cell = 10;
    int questions_per_trait = 0;  // 0 = full question list
    uint64_t seed = 0;
    std::string output_dir;
    ManifestScorerSpec scorer;
    std::vector<std::string> answers_pool;  // defaults to <output_dir>/answers
    int jobs = 1;
    int max_new_tokens = 48;
    double gen_temperature = 0.8;
    int retry_cap = 2;
    int filter_threshold = 50;

    static ExperimentManifest from_json_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void validate() const;
    std::string hash() const;
};

// The manifest JSON schema as a help document.
std::string manifest_schema();

struct WorkPlan {
    ExperimentKind stage = ExperimentKind::generate;
    std::vector<std::string> item_keys;  // canonical execution order
};

// Deterministic enumeration of work items. For scoring stages this reads the
// answer pool to enumerate ids.
WorkPlan plan(const ExperimentManifest& manifest);

// Append-only completion log. First line records the manifest hash; a hash
// mismatch on reopen refuses to mix outputs.
class RunLedger {
public:
    static RunLedger open(const std::filesystem::path& path, const std::string& manifest_hash,
                          const std::string& stage);

    bool contains(const std::string& key) const { return keys_.count(key) > 0; }
    size_t size() const { return keys_.size(); }
    void append(const std::string& key);

private:
    RunLedger() = default;
    std::filesystem::path path_;
    std::set<std::string> keys_;
};

struct RunOptions {
    int jobs_override = 0;     // 0 = use manifest.jobs
    size_t max_items = 0;      // 0 = unlimited; testing hook emulating interrupts
    std::string key_filter;    // run only items whose key contains this substring
    std::ostream* log = nullptr;
};

struct RunResult {
    size_t planned = 0;
    size_t executed = 0;
    size_t skipped = 0;   // already in the ledger
    size_t failed = 0;
    size_t unscored = 0;  // scoring stages: judgments recorded without a score
    std::vector<std::string> failures;  // "key: message"
    double wall_seconds = 0.0;
};

// Executes the manifest's stage with bounded parallelism. Every item's
// output is persisted and flushed before its ledger entry, so interrupted
// runs resume with exactly the remaining items.
RunResult run(const ExperimentManifest& manifest, const RunOptions& options = {});

// Store readers shared by the scoring/analyze stages: load every line-
// delimited shard, drop duplicate keys (last record wins), canonical order.
std::vector<AnswerRecord> load_answer_pool(const std::vector<std::filesystem::path>& sources,
                                           const std::vector<std::string>& config_order);
std::vector<Judgment> load_judgment_store(const std::filesystem::path& dir);

// Renders the markdown report from a completed run directory.
std::string render_run_report(const ExperimentManifest& manifest);

}  // namespace svec
