#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "svec/backbone.hpp"

namespace svec {

// A trait with its opposite, five instruction variants per direction, and
// the elicitation question set (K defaults to 20).
struct TraitSpec {
    std::string name;
    std::string opposite;
    std::vector<std::string> positive_instructions;
    std::vector<std::string> negative_instructions;
    std::vector<std::string> elicit_questions;

    void validate() const;
};

// The seven default traits with five instruction variants per direction and
// twenty elicitation questions each. Shipped as configuration; replaceable
// via load_traits_json.
std::vector<TraitSpec> builtin_traits();
std::vector<TraitSpec> load_traits_json(const std::filesystem::path& path);

enum class Direction { positive, negative };

inline const char* direction_name(Direction d) {
    return d == Direction::positive ? "positive" : "negative";
}

struct ContrastiveRecord {
    std::string trait;
    Direction direction = Direction::positive;
    int question_index = 0;
    int instruction_index = 0;
    // Full sequence: instruction+question prompt span followed by the
    // generated response span.
    TokenSequence sequence;
    std::optional<int> trait_score;      // 0-100, filled by the scoring module
    std::optional<int> coherence_score;  // 0-100
    bool kept = false;

    std::string prompt_text() const;
    std::string response_text() const;
};

enum class PoolingMode { prompt_average, response_average, prompt_last };

const char* pooling_mode_name(PoolingMode m);
PoolingMode pooling_mode_from_name(std::string_view name);

// Mean-difference direction in hidden-state space for one (trait, layer).
struct PersonaVector {
    std::string trait;
    int layer = 0;
    std::vector<float> components;
    PoolingMode pooling = PoolingMode::response_average;
    int n_positive = 0;
    int n_negative = 0;
    std::string backbone_id;
};

struct CorpusGenConfig {
    int max_new_tokens = 48;
    double temperature = 0.8;
    uint64_t seed = 0;
    bool allow_eos = true;  // fixture corpora disable EOS for fixed-length responses
};

// Generates 2 x 5 x K unscored records: both directions, every instruction
// variant, every question. Deterministic under a fixed seed (one derived
// seed per record).
std::vector<ContrastiveRecord> build_contrastive_corpus(const Backbone& backbone,
                                                        const TraitSpec& trait,
                                                        const CorpusGenConfig& config);

// Keeps records with both scores >= threshold (inclusive), preserving input
// order. Throws UnscoredRecordError if any record lacks scores.
std::vector<ContrastiveRecord> filter_corpus(const std::vector<ContrastiveRecord>& records,
                                             int threshold = 50);

// Pools one trace down to a single vector. Template/special positions are
// excluded; prompt_last selects the last non-special prompt position.
std::vector<float> pool_activations(const ActivationTrace& trace, const TokenSequence& seq,
                                    PoolingMode mode);

// Mean over positive pooled vectors minus mean over negative pooled vectors,
// compensated summation in input order, no renormalization.
PersonaVector extract_vector(const std::vector<std::vector<float>>& positives,
                             const std::vector<std::vector<float>>& negatives,
                             const std::string& trait, int layer, PoolingMode mode,
                             const std::string& backbone_id);

// Re-runs each kept record through the backbone with taps at the requested
// layers and extracts one vector per layer in a single pass over the corpus.
std::map<int, PersonaVector> extract_from_records(const Backbone& backbone,
                                                  const std::vector<ContrastiveRecord>& kept,
                                                  const std::set<int>& layers, PoolingMode mode);

// SVEC-PV binary plus a JSON metadata sidecar at <path>.meta.json.
// Round-trips are bit-exact for components and all struct fields.
void save_vector(const std::filesystem::path& path, const PersonaVector& v,
                 const std::string& timestamp = "");
PersonaVector load_vector(const std::filesystem::path& path);

// Line-delimited persistence for contrastive corpora.
void save_corpus(const std::filesystem::path& path,
                 const std::vector<ContrastiveRecord>& records);
std::vector<ContrastiveRecord> load_corpus(const std::filesystem::path& path);

}  // namespace svec
