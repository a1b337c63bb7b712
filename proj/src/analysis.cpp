#include "svec/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "svec/errors.hpp"

namespace svec {

namespace {

double mean_of(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

}  // namespace

double effect_size(std::span<const double> steered_scores, std::span<const double> base_scores) {
    if (steered_scores.empty()) throw EmptyInputError("effect_size: empty steered list");
    if (base_scores.empty()) throw EmptyInputError("effect_size: empty base list");
    return mean_of(steered_scores) - mean_of(base_scores);
}

double interaction_effect(std::span<const double> scorer_scores,
                          std::span<const double> unsteered_scores) {
    if (scorer_scores.empty() || unsteered_scores.empty()) {
        throw EmptyInputError("interaction_effect: empty overlap after exclusion");
    }
    return mean_of(scorer_scores) - mean_of(unsteered_scores);
}

double bias_range(std::span<const double> deltas) {
    if (deltas.size() < 2) throw EmptyInputError("bias_range: fewer than 2 scorer deltas");
    const auto [lo, hi] = std::minmax_element(deltas.begin(), deltas.end());
    return *hi - *lo;
}

const char* mwu_method_name(MwuMethod m) {
    return m == MwuMethod::exact ? "exact" : "normal_approx_tie_corrected";
}

SignificanceResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
    const size_t n1 = a.size();
    const size_t n2 = b.size();
    if (n1 == 0 || n2 == 0) throw EmptyInputError("mann_whitney_u: empty sample");
    const size_t n = n1 + n2;

    // Pooled midranks; doubled so that all rank arithmetic stays integral.
    struct Item {
        double value;
        bool in_a;
    };
    std::vector<Item> pooled;
    pooled.reserve(n);
    for (double v : a) pooled.push_back({v, true});
    for (double v : b) pooled.push_back({v, false});
    std::sort(pooled.begin(), pooled.end(),
              [](const Item& x, const Item& y) { return x.value < y.value; });

    std::vector<long long> rank2(n, 0);  // 2 * midrank, 1-based ranks
    std::vector<size_t> tie_sizes;
    {
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && pooled[j + 1].value == pooled[i].value) ++j;
            // positions i..j share midrank (i+1 + j+1)/2.
            const long long r2 = static_cast<long long>(i + 1 + j + 1);
            for (size_t k = i; k <= j; ++k) rank2[k] = r2;
            tie_sizes.push_back(j - i + 1);
            i = j + 1;
        }
    }

    long long r1_2 = 0;  // 2 * rank sum of sample a
    for (size_t k = 0; k < n; ++k) {
        if (pooled[k].in_a) r1_2 += rank2[k];
    }
    const long long u1_2 = r1_2 - static_cast<long long>(n1) * static_cast<long long>(n1 + 1);
    const double u1 = static_cast<double>(u1_2) / 2.0;

    SignificanceResult out;
    out.n1 = n1;
    out.n2 = n2;
    out.u_statistic = u1;

    const long long mu2 = static_cast<long long>(n1) * static_cast<long long>(n2);  // 2 * mean U
    if (n1 * n2 <= 10000) {
        out.method = MwuMethod::exact;
        // DP over the permutation distribution: ways[k] counts size-k subsets
        // of the pooled doubled ranks by doubled rank sum. Rows are stored
        // against per-k offset ranges [min_sum2, max_sum2], which keeps the
        // state bounded by ~n1^2 * n even for very unbalanced samples.
        std::vector<long long> sorted_r2 = rank2;
        std::sort(sorted_r2.begin(), sorted_r2.end());
        std::vector<long long> min_sum2(n1 + 1, 0), max_sum2(n1 + 1, 0);
        for (size_t k = 1; k <= n1; ++k) {
            min_sum2[k] = min_sum2[k - 1] + sorted_r2[k - 1];
            max_sum2[k] = max_sum2[k - 1] + sorted_r2[n - k];
        }
        std::vector<std::vector<double>> ways(n1 + 1);
        for (size_t k = 0; k <= n1; ++k) {
            ways[k].assign(static_cast<size_t>(max_sum2[k] - min_sum2[k]) + 1, 0.0);
        }
        ways[0][0] = 1.0;
        for (size_t item = 0; item < n; ++item) {
            const long long r = sorted_r2[item];
            const size_t kcap = std::min(item + 1, n1);
            for (size_t k = kcap; k >= 1; --k) {
                const auto& prev = ways[k - 1];
                auto& cur = ways[k];
                for (size_t i = 0; i < prev.size(); ++i) {
                    if (prev[i] == 0.0) continue;
                    const long long s = min_sum2[k - 1] + static_cast<long long>(i) + r;
                    cur[static_cast<size_t>(s - min_sum2[k])] += prev[i];
                }
            }
        }
        const long long dev_obs = std::llabs(u1_2 - mu2);
        double extreme = 0.0;
        double total = 0.0;
        const long long base = static_cast<long long>(n1) * static_cast<long long>(n1 + 1);
        for (size_t i = 0; i < ways[n1].size(); ++i) {
            const double w = ways[n1][i];
            if (w == 0.0) continue;
            total += w;
            const long long u2 = min_sum2[n1] + static_cast<long long>(i) - base;
            if (std::llabs(u2 - mu2) >= dev_obs) extreme += w;
        }
        out.p_value = extreme / total;
    } else {
        out.method = MwuMethod::normal_approx_tie_corrected;
        const double nn1 = static_cast<double>(n1);
        const double nn2 = static_cast<double>(n2);
        const double nn = static_cast<double>(n);
        double tie_term = 0.0;
        for (size_t t : tie_sizes) {
            const double td = static_cast<double>(t);
            tie_term += td * td * td - td;
        }
        const double var =
            (nn1 * nn2 / 12.0) * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
        if (var <= 0.0) {
            out.p_value = 1.0;
            return out;
        }
        const double mu = nn1 * nn2 / 2.0;
        double z = (std::abs(u1 - mu) - 0.5) / std::sqrt(var);
        if (z < 0.0) z = 0.0;
        out.p_value = std::erfc(z / std::sqrt(2.0));
        out.p_value = std::clamp(out.p_value, 0.0, 1.0);
    }
    return out;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DimensionMismatchError("pearson_r: length mismatch");
    if (x.size() < 2) throw EmptyInputError("pearson_r: need at least 2 points");
    const double mx = mean_of(x);
    const double my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson_r: zero variance");
    return sxy / std::sqrt(sxx * syy);
}

const char* quadrant_name(Quadrant q) {
    switch (q) {
        case Quadrant::lower_left: return "lower_left";
        case Quadrant::lower_right: return "lower_right";
        case Quadrant::upper_left: return "upper_left";
        case Quadrant::upper_right: return "upper_right";
        case Quadrant::boundary: return "boundary";
    }
    return "boundary";
}

Quadrant classify_quadrant(double delta_pos, double delta_neg) {
    if (delta_pos == 0.0 || delta_neg == 0.0) return Quadrant::boundary;
    if (delta_pos < 0.0) {
        return delta_neg < 0.0 ? Quadrant::lower_left : Quadrant::upper_left;
    }
    return delta_neg < 0.0 ? Quadrant::lower_right : Quadrant::upper_right;
}

// ---------------------------------------------------------------------------
// Store-level builders
// ---------------------------------------------------------------------------

namespace {

// answer_id -> normalized for scored judgments of one scorer.
std::map<std::string, double> scored_map(const std::vector<Judgment>& judgments,
                                         const std::string& scorer) {
    std::map<std::string, double> out;
    for (const auto& j : judgments) {
        if (j.scorer == scorer && j.scored) out.emplace(j.answer_id, j.normalized);
    }
    return out;
}

std::string single_scorer(const std::vector<Judgment>& judgments) {
    if (judgments.empty()) throw EmptyInputError("no judgments");
    const std::string& scorer = judgments.front().scorer;
    for (const auto& j : judgments) {
        if (j.scorer != scorer) {
            throw ValidationError("expected judgments from a single scorer, found '" + scorer +
                                  "' and '" + j.scorer + "'");
        }
    }
    return scorer;
}

// Canonically ordered answers per configuration.
std::map<std::string, std::vector<const AnswerRecord*>> answers_by_config(
    const std::vector<AnswerRecord>& answers) {
    std::map<std::string, std::vector<const AnswerRecord*>> out;
    for (const auto& a : answers) out[a.generator_config].push_back(&a);
    for (auto& [cfg, list] : out) {
        std::sort(list.begin(), list.end(), [](const AnswerRecord* x, const AnswerRecord* y) {
            if (x->set_id != y->set_id) return x->set_id < y->set_id;
            if (x->sample_index != y->sample_index) return x->sample_index < y->sample_index;
            return x->answer_id < y->answer_id;
        });
    }
    return out;
}

}  // namespace

const EffectCell* EffectSizeTable::find(const std::string& config,
                                        std::optional<int> set_id) const {
    for (const auto& e : entries) {
        if (e.config == config && e.set_id == set_id) return &e;
    }
    return nullptr;
}

EffectSizeTable build_effect_table(const std::vector<AnswerRecord>& answers,
                                   const std::vector<Judgment>& judgments,
                                   const std::vector<std::string>& config_order) {
    const std::string scorer = single_scorer(judgments);
    const std::map<std::string, double> scores = scored_map(judgments, scorer);
    const auto by_config = answers_by_config(answers);
    if (by_config.find("baseline") == by_config.end()) {
        throw ValidationError("effect table: no baseline answers in pool");
    }

    // (model, set, sample) -> baseline answer.
    std::map<std::string, const AnswerRecord*> base_by_key;
    for (const AnswerRecord* a : by_config.at("baseline")) {
        base_by_key[a->model_id + "|" + std::to_string(a->set_id) + "|" +
                    std::to_string(a->sample_index)] = a;
    }

    EffectSizeTable table;
    for (const std::string& cfg : config_order) {
        auto it = by_config.find(cfg);
        if (it == by_config.end()) continue;
        std::vector<double> steered_all, base_all;
        std::map<int, std::pair<std::vector<double>, std::vector<double>>> per_set;
        size_t excluded_all = 0;
        std::map<int, size_t> excluded_per_set;
        for (const AnswerRecord* a : it->second) {
            const auto base_it = base_by_key.find(a->model_id + "|" + std::to_string(a->set_id) +
                                                  "|" + std::to_string(a->sample_index));
            const auto sa = scores.find(a->answer_id);
            const auto sb = base_it == base_by_key.end()
                                ? scores.end()
                                : scores.find(base_it->second->answer_id);
            if (sa == scores.end() || sb == scores.end()) {
                ++excluded_all;
                ++excluded_per_set[a->set_id];
                continue;
            }
            steered_all.push_back(sa->second);
            base_all.push_back(sb->second);
            per_set[a->set_id].first.push_back(sa->second);
            per_set[a->set_id].second.push_back(sb->second);
        }
        if (!steered_all.empty()) {
            EffectCell cell;
            cell.config = cfg;
            cell.set_id = std::nullopt;
            cell.delta = effect_size(steered_all, base_all);
            cell.n_pairs = steered_all.size();
            cell.n_excluded = excluded_all;
            table.entries.push_back(std::move(cell));
        }
        for (const auto& [set_id, lists] : per_set) {
            EffectCell cell;
            cell.config = cfg;
            cell.set_id = set_id;
            cell.delta = effect_size(lists.first, lists.second);
            cell.n_pairs = lists.first.size();
            cell.n_excluded = excluded_per_set[set_id];
            table.entries.push_back(std::move(cell));
        }
    }
    return table;
}

std::vector<SignificanceRow> significance_vs_baseline(
    const std::vector<AnswerRecord>& answers, const std::vector<Judgment>& judgments,
    const std::vector<std::string>& config_order) {
    const std::string scorer = single_scorer(judgments);
    const std::map<std::string, double> scores = scored_map(judgments, scorer);
    const auto by_config = answers_by_config(answers);
    auto scored_values = [&](const std::string& cfg) {
        std::vector<double> out;
        auto it = by_config.find(cfg);
        if (it == by_config.end()) return out;
        for (const AnswerRecord* a : it->second) {
            auto s = scores.find(a->answer_id);
            if (s != scores.end()) out.push_back(s->second);
        }
        return out;
    };
    const std::vector<double> base = scored_values("baseline");
    std::vector<SignificanceRow> rows;
    for (const std::string& cfg : config_order) {
        if (cfg == "baseline") continue;
        const std::vector<double> steered = scored_values(cfg);
        if (steered.empty() || base.empty()) continue;
        rows.push_back({cfg, mann_whitney_u(steered, base)});
    }
    return rows;
}

bool InteractionMatrix::complete() const {
    if (scorers.empty() || learners.empty()) return false;
    for (size_t c : count) {
        if (c == 0) return false;
    }
    return true;
}

InteractionMatrix build_interaction_matrix(const std::vector<AnswerRecord>& answers,
                                           const std::vector<Judgment>& judgments,
                                           const std::vector<std::string>& config_order) {
    InteractionMatrix m;
    m.scorers = config_order;
    m.learners = config_order;
    const size_t n = config_order.size();
    m.mean_score.assign(n * n, 0.0);
    m.delta.assign(n * n, 0.0);
    m.count.assign(n * n, 0);

    std::map<std::string, std::map<std::string, double>> by_scorer;
    for (const auto& j : judgments) {
        if (j.scored) by_scorer[j.scorer].emplace(j.answer_id, j.normalized);
    }
    if (by_scorer.find("baseline") == by_scorer.end()) {
        throw ValidationError("interaction matrix: no scored judgments from the baseline scorer");
    }
    const auto& base_scores = by_scorer.at("baseline");
    const auto by_config = answers_by_config(answers);

    for (size_t row = 0; row < n; ++row) {
        const auto scorer_it = by_scorer.find(config_order[row]);
        for (size_t col = 0; col < n; ++col) {
            const auto learner_it = by_config.find(config_order[col]);
            if (scorer_it == by_scorer.end() || learner_it == by_config.end()) continue;
            std::vector<double> mine, base;
            for (const AnswerRecord* a : learner_it->second) {
                const auto s1 = scorer_it->second.find(a->answer_id);
                const auto s2 = base_scores.find(a->answer_id);
                if (s1 == scorer_it->second.end() || s2 == base_scores.end()) continue;
                mine.push_back(s1->second);
                base.push_back(s2->second);
            }
            const size_t idx = m.index(row, col);
            m.count[idx] = mine.size();
            if (!mine.empty()) {
                m.mean_score[idx] = mean_of(mine);
                m.delta[idx] = interaction_effect(mine, base);
            }
        }
    }
    return m;
}

LeniencySummary leniency_summary(const InteractionMatrix& matrix) {
    if (!matrix.complete()) {
        throw ValidationError("leniency_summary: incomplete interaction matrix");
    }
    LeniencySummary out;
    size_t baseline_row = matrix.scorers.size();
    for (size_t r = 0; r < matrix.scorers.size(); ++r) {
        if (matrix.scorers[r] == "baseline") baseline_row = r;
        LeniencyEntry e;
        e.scorer = matrix.scorers[r];
        double dsum = 0.0;
        double ssum = 0.0;
        size_t count = 0;
        for (size_t c = 0; c < matrix.learners.size(); ++c) {
            const size_t idx = matrix.index(r, c);
            dsum += matrix.delta[idx];
            ssum += matrix.mean_score[idx] * static_cast<double>(matrix.count[idx]);
            count += matrix.count[idx];
        }
        e.mean_delta = dsum / static_cast<double>(matrix.learners.size());
        e.mean_score = ssum / static_cast<double>(count);
        e.n = count;
        out.per_scorer.push_back(std::move(e));
    }
    if (baseline_row == matrix.scorers.size()) {
        throw ValidationError("leniency_summary: no baseline scorer row");
    }
    out.baseline_mean = out.per_scorer[baseline_row].mean_score;

    bool first = true;
    double abs_sum = 0.0;
    size_t steered = 0;
    for (size_t r = 0; r < out.per_scorer.size(); ++r) {
        if (r == baseline_row) continue;
        const auto& e = out.per_scorer[r];
        abs_sum += std::abs(e.mean_delta);
        ++steered;
        if (first || e.mean_delta > out.most_lenient_delta) {
            out.most_lenient = e.scorer;
            out.most_lenient_delta = e.mean_delta;
        }
        if (first || e.mean_delta < out.most_harsh_delta) {
            out.most_harsh = e.scorer;
            out.most_harsh_delta = e.mean_delta;
        }
        first = false;
    }
    if (steered == 0) throw ValidationError("leniency_summary: no steered scorer rows");
    out.mean_abs_delta = abs_sum / static_cast<double>(steered);
    return out;
}

std::vector<BiasRangeRow> bias_ranges_by_topic(const std::vector<AnswerRecord>& answers,
                                               const std::vector<Judgment>& judgments,
                                               const std::vector<std::string>& config_order,
                                               const PromptSetTable& sets) {
    std::map<std::string, std::map<std::string, double>> by_scorer;
    for (const auto& j : judgments) {
        if (j.scored) by_scorer[j.scorer].emplace(j.answer_id, j.normalized);
    }
    if (by_scorer.find("baseline") == by_scorer.end()) {
        throw ValidationError("bias ranges: no scored judgments from the baseline scorer");
    }
    const auto& base_scores = by_scorer.at("baseline");

    std::map<int, std::vector<const AnswerRecord*>> by_set;
    for (const auto& a : answers) by_set[a.set_id].push_back(&a);

    std::vector<BiasRangeRow> rows;
    for (const auto& [set_id, set_answers] : by_set) {
        std::vector<double> deltas;
        for (const std::string& cfg : config_order) {
            if (cfg == "baseline") continue;
            const auto scorer_it = by_scorer.find(cfg);
            if (scorer_it == by_scorer.end()) continue;
            std::vector<double> mine, base;
            for (const AnswerRecord* a : set_answers) {
                const auto s1 = scorer_it->second.find(a->answer_id);
                const auto s2 = base_scores.find(a->answer_id);
                if (s1 == scorer_it->second.end() || s2 == base_scores.end()) continue;
                mine.push_back(s1->second);
                base.push_back(s2->second);
            }
            if (!mine.empty()) deltas.push_back(interaction_effect(mine, base));
        }
        BiasRangeRow row;
        row.set_id = set_id;
        row.topic = sets.get(set_id).topic_label;
        row.range = bias_range(deltas);
        row.n_scorers = deltas.size();
        rows.push_back(std::move(row));
    }
    return rows;
}

DomainSensitivity domain_sensitivity(const EffectSizeTable& table, const PromptSetTable& sets) {
    std::vector<double> ela, science;
    for (const auto& cell : table.entries) {
        if (!cell.set_id.has_value() || cell.config == "baseline") continue;
        const TaskDomain d = sets.get(*cell.set_id).domain;
        (d == TaskDomain::ela ? ela : science).push_back(std::abs(cell.delta));
    }
    if (ela.empty()) throw EmptyInputError("domain_sensitivity: no ELA cells");
    if (science.empty()) throw EmptyInputError("domain_sensitivity: no science cells");
    DomainSensitivity out;
    out.mean_abs_ela = mean_of(ela);
    out.mean_abs_science = mean_of(science);
    if (out.mean_abs_science == 0.0) {
        out.infinite_ratio = true;
        out.ratio = std::numeric_limits<double>::infinity();
    } else {
        out.ratio = out.mean_abs_ela / out.mean_abs_science;
    }
    return out;
}

MeanAbsDelta mean_abs_delta(const EffectSizeTable& table) {
    MeanAbsDelta out;
    double config_sum = 0.0, cell_sum = 0.0;
    for (const auto& cell : table.entries) {
        if (cell.config == "baseline") continue;
        if (cell.set_id.has_value()) {
            cell_sum += std::abs(cell.delta);
            ++out.n_cells;
        } else {
            config_sum += std::abs(cell.delta);
            ++out.n_configs;
        }
    }
    if (out.n_configs > 0) out.over_configs = config_sum / static_cast<double>(out.n_configs);
    if (out.n_cells > 0) out.over_cells = cell_sum / static_cast<double>(out.n_cells);
    return out;
}

std::vector<QuadrantPoint> perturbation_quadrants(const EffectSizeTable& table) {
    std::vector<std::string> trait_order;
    std::map<std::string, std::pair<std::optional<double>, std::optional<double>>> by_trait;
    for (const auto& cell : table.entries) {
        if (cell.set_id.has_value() || cell.config == "baseline") continue;
        const auto pos_tag = cell.config.rfind("_pos");
        const auto neg_tag = cell.config.rfind("_neg");
        if (pos_tag != std::string::npos && pos_tag == cell.config.size() - 4) {
            const std::string trait = cell.config.substr(0, pos_tag);
            if (by_trait.find(trait) == by_trait.end()) trait_order.push_back(trait);
            by_trait[trait].first = cell.delta;
        } else if (neg_tag != std::string::npos && neg_tag == cell.config.size() - 4) {
            const std::string trait = cell.config.substr(0, neg_tag);
            if (by_trait.find(trait) == by_trait.end()) trait_order.push_back(trait);
            by_trait[trait].second = cell.delta;
        }
    }
    std::vector<QuadrantPoint> out;
    for (const std::string& trait : trait_order) {
        const auto& [dpos, dneg] = by_trait.at(trait);
        if (!dpos.has_value() || !dneg.has_value()) {
            throw EmptyInputError("perturbation_quadrants: missing direction for trait '" +
                                  trait + "'");
        }
        QuadrantPoint p;
        p.trait = trait;
        p.delta_pos = *dpos;
        p.delta_neg = *dneg;
        p.quadrant = classify_quadrant(*dpos, *dneg);
        out.push_back(std::move(p));
    }
    return out;
}

double length_quality_correlation(const std::vector<AnswerRecord>& answers,
                                  const std::vector<Judgment>& judgments) {
    if (answers.size() < 2) throw EmptyInputError("length_quality_correlation: need >= 2 answers");
    const std::string scorer = single_scorer(judgments);
    const std::map<std::string, double> scores = scored_map(judgments, scorer);
    std::vector<double> lengths, values;
    for (const auto& a : answers) {
        const auto it = scores.find(a.answer_id);
        if (it == scores.end()) continue;
        lengths.push_back(static_cast<double>(a.response_token_count));
        values.push_back(it->second);
    }
    return pearson_r(lengths, values);
}

std::vector<ConsistencyRow> cross_model_consistency(
    const std::vector<std::pair<std::string, InteractionMatrix>>& matrices) {
    std::vector<ConsistencyRow> rows;
    for (size_t i = 0; i < matrices.size(); ++i) {
        for (size_t j = i + 1; j < matrices.size(); ++j) {
            const auto& [name_a, ma] = matrices[i];
            const auto& [name_b, mb] = matrices[j];
            const LeniencySummary sa = leniency_summary(ma);
            const LeniencySummary sb = leniency_summary(mb);

            // Variant 1: per-scorer bias vectors over shared steered scorers.
            std::vector<double> xa, xb;
            for (const auto& ea : sa.per_scorer) {
                if (ea.scorer == "baseline") continue;
                for (const auto& eb : sb.per_scorer) {
                    if (eb.scorer == ea.scorer) {
                        xa.push_back(ea.mean_delta);
                        xb.push_back(eb.mean_delta);
                        break;
                    }
                }
            }
            ConsistencyRow bias_row{name_a, name_b, "scorer_bias",
                                    std::numeric_limits<double>::quiet_NaN(), xa.size()};
            if (xa.size() >= 2) {
                try {
                    bias_row.r = pearson_r(xa, xb);
                } catch (const Error&) {
                }
            }
            rows.push_back(bias_row);

            // Variant 2: all steered (scorer, learner) delta cells shared by
            // both matrices.
            std::vector<double> ca, cb;
            for (size_t ra = 0; ra < ma.scorers.size(); ++ra) {
                if (ma.scorers[ra] == "baseline") continue;
                for (size_t caix = 0; caix < ma.learners.size(); ++caix) {
                    // Locate the same (scorer, learner) cell in mb.
                    size_t rb = mb.scorers.size(), cbix = mb.learners.size();
                    for (size_t r = 0; r < mb.scorers.size(); ++r) {
                        if (mb.scorers[r] == ma.scorers[ra]) rb = r;
                    }
                    for (size_t c = 0; c < mb.learners.size(); ++c) {
                        if (mb.learners[c] == ma.learners[caix]) cbix = c;
                    }
                    if (rb == mb.scorers.size() || cbix == mb.learners.size()) continue;
                    ca.push_back(ma.delta[ma.index(ra, caix)]);
                    cb.push_back(mb.delta[mb.index(rb, cbix)]);
                }
            }
            ConsistencyRow cell_row{name_a, name_b, "cells",
                                    std::numeric_limits<double>::quiet_NaN(), ca.size()};
            if (ca.size() >= 2) {
                try {
                    cell_row.r = pearson_r(ca, cb);
                } catch (const Error&) {
                }
            }
            rows.push_back(cell_row);
        }
    }
    return rows;
}

}  // namespace svec
