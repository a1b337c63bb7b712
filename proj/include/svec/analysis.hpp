#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "svec/corpus.hpp"
#include "svec/scoring.hpp"

namespace svec {

// ---------------------------------------------------------------------------
// Scalar statistics
// ---------------------------------------------------------------------------

// Eq.-style mean difference: mean(steered) - mean(base).
double effect_size(std::span<const double> steered_scores, std::span<const double> base_scores);

// Scoring shift of one scorer relative to the unsteered scorer on the same
// answers: mean(scorer) - mean(unsteered).
double interaction_effect(std::span<const double> scorer_scores,
                          std::span<const double> unsteered_scores);

// max - min over per-scorer deltas; at least two required.
double bias_range(std::span<const double> deltas);

enum class MwuMethod { exact, normal_approx_tie_corrected };
const char* mwu_method_name(MwuMethod m);

struct SignificanceResult {
    double u_statistic = 0.0;  // U of the first sample, midrank-based
    double p_value = 1.0;      // two-sided
    MwuMethod method = MwuMethod::exact;
    size_t n1 = 0;
    size_t n2 = 0;
};

// Mann-Whitney U via midranks. Exact two-sided p by enumeration of the
// permutation distribution (DP over rank assignments) when n1*n2 <= 10,000;
// otherwise the normal approximation with tie and continuity corrections.
SignificanceResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

// Product-moment correlation; requires equal lengths >= 2 and nonzero
// variance on both sides.
double pearson_r(std::span<const double> x, std::span<const double> y);

enum class Quadrant { lower_left, lower_right, upper_left, upper_right, boundary };
const char* quadrant_name(Quadrant q);

// Strict sign tests on (delta_pos, delta_neg); zero on either axis is
// labeled boundary.
Quadrant classify_quadrant(double delta_pos, double delta_neg);

// ---------------------------------------------------------------------------
// Aggregates over answer/judgment stores
// ---------------------------------------------------------------------------

struct EffectCell {
    std::string config;         // ConfigurationId
    std::optional<int> set_id;  // nullopt = overall
    double delta = 0.0;
    size_t n_pairs = 0;     // pairs entering the mean after pairwise exclusion
    size_t n_excluded = 0;  // pairs dropped because either side was unscored
};

struct EffectSizeTable {
    std::vector<EffectCell> entries;

    const EffectCell* find(const std::string& config, std::optional<int> set_id) const;
};

// Pairs steered answers with the corresponding baseline answer by
// (set_id, sample_index); pairs with either side unscored are excluded and
// counted. Baseline cells are exactly zero.
EffectSizeTable build_effect_table(const std::vector<AnswerRecord>& answers,
                                   const std::vector<Judgment>& judgments,
                                   const std::vector<std::string>& config_order);

struct SignificanceRow {
    std::string config;
    SignificanceResult result;
};

// Per steered configuration: MWU of its scored values against the baseline
// configuration's scored values.
std::vector<SignificanceRow> significance_vs_baseline(
    const std::vector<AnswerRecord>& answers, const std::vector<Judgment>& judgments,
    const std::vector<std::string>& config_order);

struct InteractionMatrix {
    std::vector<std::string> scorers;   // row ids, canonical order
    std::vector<std::string> learners;  // column ids, canonical order
    std::vector<double> mean_score;     // row-major raw means
    std::vector<double> delta;          // row-major deltas vs the unsteered-scorer row
    std::vector<size_t> count;          // per-cell sample size after pairwise exclusion

    size_t index(size_t row, size_t col) const { return row * learners.size() + col; }
    bool complete() const;
};

// Cell (j, s): answers of learner s scored by both scorer j and the
// baseline scorer; delta is the difference of means on that common set.
InteractionMatrix build_interaction_matrix(const std::vector<AnswerRecord>& answers,
                                           const std::vector<Judgment>& judgments,
                                           const std::vector<std::string>& config_order);

struct LeniencyEntry {
    std::string scorer;
    double mean_delta = 0.0;  // mean over learner columns
    double mean_score = 0.0;  // mean raw score over the pool
    size_t n = 0;
};

struct LeniencySummary {
    std::vector<LeniencyEntry> per_scorer;  // canonical row order, baseline included
    std::string most_lenient;
    double most_lenient_delta = 0.0;
    std::string most_harsh;
    double most_harsh_delta = 0.0;
    double mean_abs_delta = 0.0;  // over steered scorer rows only
    double baseline_mean = 0.0;   // unsteered scorer's mean score
};

// Requires a complete matrix. Extremes are over steered rows, ties broken
// by canonical row order.
LeniencySummary leniency_summary(const InteractionMatrix& matrix);

struct BiasRangeRow {
    int set_id = 0;
    std::string topic;
    double range = 0.0;
    size_t n_scorers = 0;
};

// Per topic: max - min of the steered scorers' deltas on that set's answers.
std::vector<BiasRangeRow> bias_ranges_by_topic(const std::vector<AnswerRecord>& answers,
                                               const std::vector<Judgment>& judgments,
                                               const std::vector<std::string>& config_order,
                                               const PromptSetTable& sets);

struct DomainSensitivity {
    double mean_abs_ela = 0.0;
    double mean_abs_science = 0.0;
    double ratio = 0.0;  // ELA / science
    bool infinite_ratio = false;
};

// Means of |delta| over steered per-set cells, grouped by the set's domain.
DomainSensitivity domain_sensitivity(const EffectSizeTable& table, const PromptSetTable& sets);

// Reported both ways because the aggregation grain is ambiguous: the mean
// of |delta| over steered configs, and over steered (config, set) cells.
struct MeanAbsDelta {
    double over_configs = 0.0;
    double over_cells = 0.0;
    size_t n_configs = 0;
    size_t n_cells = 0;
};
MeanAbsDelta mean_abs_delta(const EffectSizeTable& table);

struct QuadrantPoint {
    std::string trait;
    double delta_pos = 0.0;
    double delta_neg = 0.0;
    Quadrant quadrant = Quadrant::boundary;
};

// Scatter data per trait from the overall effect cells; both directions must
// be present for every trait.
std::vector<QuadrantPoint> perturbation_quadrants(const EffectSizeTable& table);

// Pearson over (response token count, normalized score) for one scorer's
// scored judgments.
double length_quality_correlation(const std::vector<AnswerRecord>& answers,
                                  const std::vector<Judgment>& judgments);

struct ConsistencyRow {
    std::string model_a;
    std::string model_b;
    std::string variant;  // "scorer_bias" or "cells"
    double r = 0.0;
    size_t n = 0;
};

// Pairwise cross-model correlation of scoring shifts, emitted for both the
// per-scorer bias vectors and the full steered delta cells.
std::vector<ConsistencyRow> cross_model_consistency(
    const std::vector<std::pair<std::string, InteractionMatrix>>& matrices);

// ---------------------------------------------------------------------------
// Emission: CSV / line-delimited records with fixed headers, plus a
// markdown report.
// ---------------------------------------------------------------------------

void write_effect_table_csv(const std::filesystem::path& path, const EffectSizeTable& table);
void write_effect_table_ldjson(const std::filesystem::path& path, const EffectSizeTable& table);
void write_significance_csv(const std::filesystem::path& path,
                            const std::vector<SignificanceRow>& rows);
void write_significance_ldjson(const std::filesystem::path& path,
                               const std::vector<SignificanceRow>& rows);
void write_interaction_matrix_csv(const std::filesystem::path& path,
                                  const InteractionMatrix& matrix);
void write_interaction_matrix_ldjson(const std::filesystem::path& path,
                                     const InteractionMatrix& matrix);
void write_leniency_csv(const std::filesystem::path& path, const LeniencySummary& summary);
void write_leniency_ldjson(const std::filesystem::path& path, const LeniencySummary& summary);
void write_bias_ranges_csv(const std::filesystem::path& path,
                           const std::vector<BiasRangeRow>& rows);
void write_bias_ranges_ldjson(const std::filesystem::path& path,
                              const std::vector<BiasRangeRow>& rows);
void write_domain_sensitivity_csv(const std::filesystem::path& path,
                                  const DomainSensitivity& ds, const MeanAbsDelta& mad);
void write_domain_sensitivity_ldjson(const std::filesystem::path& path,
                                     const DomainSensitivity& ds, const MeanAbsDelta& mad);
void write_quadrants_csv(const std::filesystem::path& path,
                         const std::vector<QuadrantPoint>& points);
void write_quadrants_ldjson(const std::filesystem::path& path,
                            const std::vector<QuadrantPoint>& points);
void write_consistency_csv(const std::filesystem::path& path,
                           const std::vector<ConsistencyRow>& rows);
void write_consistency_ldjson(const std::filesystem::path& path,
                              const std::vector<ConsistencyRow>& rows);

struct ReportInputs {
    const EffectSizeTable* effects = nullptr;
    const std::vector<SignificanceRow>* significance = nullptr;
    const DomainSensitivity* domains = nullptr;
    const MeanAbsDelta* mean_abs = nullptr;
    const std::vector<QuadrantPoint>* quadrants = nullptr;
    std::optional<double> length_quality_r;
    const InteractionMatrix* matrix = nullptr;
    const LeniencySummary* leniency = nullptr;
    const std::vector<BiasRangeRow>* bias_ranges = nullptr;
    std::string model_id;
};

std::string render_report_markdown(const ReportInputs& inputs);

}  // namespace svec
