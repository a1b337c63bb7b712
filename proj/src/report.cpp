#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "svec/analysis.hpp"
#include "svec/errors.hpp"

namespace svec {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path.string());
    return os;
}

// Minimal CSV quoting: fields with commas or quotes get quoted.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

}  // namespace

void write_effect_table_csv(const std::filesystem::path& path, const EffectSizeTable& table) {
    auto os = open_out(path);
    os << "config,set_id,delta,n_pairs,n_excluded\n";
    for (const auto& e : table.entries) {
        os << csv_field(e.config) << ","
           << (e.set_id ? std::to_string(*e.set_id) : std::string("all")) << "," << fmt(e.delta)
           << "," << e.n_pairs << "," << e.n_excluded << "\n";
    }
}

void write_effect_table_ldjson(const std::filesystem::path& path, const EffectSizeTable& table) {
    auto os = open_out(path);
    for (const auto& e : table.entries) {
        json j;
        j["v"] = 1;
        j["config"] = e.config;
        if (e.set_id) j["set_id"] = *e.set_id; else j["set_id"] = nullptr;
        j["delta"] = e.delta;
        j["n_pairs"] = e.n_pairs;
        j["n_excluded"] = e.n_excluded;
        os << j.dump() << "\n";
    }
}

void write_significance_csv(const std::filesystem::path& path,
                            const std::vector<SignificanceRow>& rows) {
    auto os = open_out(path);
    os << "config,u_statistic,p_value,method,n1,n2\n";
    for (const auto& row : rows) {
        os << csv_field(row.config) << "," << fmt(row.result.u_statistic) << ","
           << fmt(row.result.p_value) << "," << mwu_method_name(row.result.method) << ","
           << row.result.n1 << "," << row.result.n2 << "\n";
    }
}

void write_significance_ldjson(const std::filesystem::path& path,
                               const std::vector<SignificanceRow>& rows) {
    auto os = open_out(path);
    for (const auto& row : rows) {
        json j;
        j["v"] = 1;
        j["config"] = row.config;
        j["u_statistic"] = row.result.u_statistic;
        j["p_value"] = row.result.p_value;
        j["method"] = mwu_method_name(row.result.method);
        j["n1"] = row.result.n1;
        j["n2"] = row.result.n2;
        os << j.dump() << "\n";
    }
}

void write_interaction_matrix_csv(const std::filesystem::path& path,
                                  const InteractionMatrix& matrix) {
    auto os = open_out(path);
    os << "scorer";
    for (const auto& learner : matrix.learners) os << "," << csv_field(learner);
    os << "\n";
    for (size_t r = 0; r < matrix.scorers.size(); ++r) {
        os << csv_field(matrix.scorers[r]);
        for (size_t c = 0; c < matrix.learners.size(); ++c) {
            os << "," << fmt(matrix.delta[matrix.index(r, c)]);
        }
        os << "\n";
    }
}

void write_interaction_matrix_ldjson(const std::filesystem::path& path,
                                     const InteractionMatrix& matrix) {
    auto os = open_out(path);
    for (size_t r = 0; r < matrix.scorers.size(); ++r) {
        for (size_t c = 0; c < matrix.learners.size(); ++c) {
            const size_t idx = matrix.index(r, c);
            json j;
            j["v"] = 1;
            j["scorer"] = matrix.scorers[r];
            j["learner"] = matrix.learners[c];
            j["delta"] = matrix.delta[idx];
            j["mean_score"] = matrix.mean_score[idx];
            j["count"] = matrix.count[idx];
            os << j.dump() << "\n";
        }
    }
}

void write_leniency_csv(const std::filesystem::path& path, const LeniencySummary& summary) {
    auto os = open_out(path);
    os << "scorer,mean_delta,mean_score,n\n";
    for (const auto& e : summary.per_scorer) {
        os << csv_field(e.scorer) << "," << fmt(e.mean_delta) << "," << fmt(e.mean_score) << ","
           << e.n << "\n";
    }
    os << "# baseline_mean," << fmt(summary.baseline_mean) << "\n";
    os << "# most_lenient," << csv_field(summary.most_lenient) << ","
       << fmt(summary.most_lenient_delta) << "\n";
    os << "# most_harsh," << csv_field(summary.most_harsh) << "," << fmt(summary.most_harsh_delta)
       << "\n";
    os << "# mean_abs_delta," << fmt(summary.mean_abs_delta) << "\n";
}

void write_leniency_ldjson(const std::filesystem::path& path, const LeniencySummary& summary) {
    auto os = open_out(path);
    for (const auto& e : summary.per_scorer) {
        json j;
        j["v"] = 1;
        j["scorer"] = e.scorer;
        j["mean_delta"] = e.mean_delta;
        j["mean_score"] = e.mean_score;
        j["n"] = e.n;
        os << j.dump() << "\n";
    }
    json s;
    s["v"] = 1;
    s["summary"] = {{"baseline_mean", summary.baseline_mean},
                    {"most_lenient", summary.most_lenient},
                    {"most_lenient_delta", summary.most_lenient_delta},
                    {"most_harsh", summary.most_harsh},
                    {"most_harsh_delta", summary.most_harsh_delta},
                    {"mean_abs_delta", summary.mean_abs_delta}};
    os << s.dump() << "\n";
}

void write_bias_ranges_csv(const std::filesystem::path& path,
                           const std::vector<BiasRangeRow>& rows) {
    auto os = open_out(path);
    os << "set_id,topic,range,n_scorers\n";
    for (const auto& row : rows) {
        os << row.set_id << "," << csv_field(row.topic) << "," << fmt(row.range) << ","
           << row.n_scorers << "\n";
    }
}

void write_bias_ranges_ldjson(const std::filesystem::path& path,
                              const std::vector<BiasRangeRow>& rows) {
    auto os = open_out(path);
    for (const auto& row : rows) {
        json j;
        j["v"] = 1;
        j["set_id"] = row.set_id;
        j["topic"] = row.topic;
        j["range"] = row.range;
        j["n_scorers"] = row.n_scorers;
        os << j.dump() << "\n";
    }
}

void write_domain_sensitivity_csv(const std::filesystem::path& path, const DomainSensitivity& ds,
                                  const MeanAbsDelta& mad) {
    auto os = open_out(path);
    os << "metric,value\n";
    os << "mean_abs_delta_ela," << fmt(ds.mean_abs_ela) << "\n";
    os << "mean_abs_delta_science," << fmt(ds.mean_abs_science) << "\n";
    os << "ratio_ela_over_science," << fmt(ds.ratio) << "\n";
    os << "infinite_ratio," << (ds.infinite_ratio ? "true" : "false") << "\n";
    os << "mean_abs_delta_over_configs," << fmt(mad.over_configs) << "\n";
    os << "mean_abs_delta_over_cells," << fmt(mad.over_cells) << "\n";
    os << "n_configs," << mad.n_configs << "\n";
    os << "n_cells," << mad.n_cells << "\n";
}

void write_domain_sensitivity_ldjson(const std::filesystem::path& path,
                                     const DomainSensitivity& ds, const MeanAbsDelta& mad) {
    auto os = open_out(path);
    json j;
    j["v"] = 1;
    j["mean_abs_delta_ela"] = ds.mean_abs_ela;
    j["mean_abs_delta_science"] = ds.mean_abs_science;
    j["ratio_ela_over_science"] = ds.infinite_ratio ? json("inf") : json(ds.ratio);
    j["infinite_ratio"] = ds.infinite_ratio;
    j["mean_abs_delta_over_configs"] = mad.over_configs;
    j["mean_abs_delta_over_cells"] = mad.over_cells;
    j["n_configs"] = mad.n_configs;
    j["n_cells"] = mad.n_cells;
    os << j.dump() << "\n";
}

void write_quadrants_csv(const std::filesystem::path& path,
                         const std::vector<QuadrantPoint>& points) {
    auto os = open_out(path);
    os << "trait,delta_pos,delta_neg,quadrant\n";
    for (const auto& p : points) {
        os << csv_field(p.trait) << "," << fmt(p.delta_pos) << "," << fmt(p.delta_neg) << ","
           << quadrant_name(p.quadrant) << "\n";
    }
}

void write_quadrants_ldjson(const std::filesystem::path& path,
                            const std::vector<QuadrantPoint>& points) {
    auto os = open_out(path);
    for (const auto& p : points) {
        json j;
        j["v"] = 1;
        j["trait"] = p.trait;
        j["delta_pos"] = p.delta_pos;
        j["delta_neg"] = p.delta_neg;
        j["quadrant"] = quadrant_name(p.quadrant);
        os << j.dump() << "\n";
    }
}

void write_consistency_csv(const std::filesystem::path& path,
                           const std::vector<ConsistencyRow>& rows) {
    auto os = open_out(path);
    os << "model_a,model_b,variant,r,n\n";
    for (const auto& row : rows) {
        os << csv_field(row.model_a) << "," << csv_field(row.model_b) << ","
           << csv_field(row.variant) << "," << fmt(row.r) << "," << row.n << "\n";
    }
}

void write_consistency_ldjson(const std::filesystem::path& path,
                              const std::vector<ConsistencyRow>& rows) {
    auto os = open_out(path);
    for (const auto& row : rows) {
        json j;
        j["v"] = 1;
        j["model_a"] = row.model_a;
        j["model_b"] = row.model_b;
        j["variant"] = row.variant;
        j["r"] = std::isnan(row.r) ? json() : json(row.r);
        j["n"] = row.n;
        os << j.dump() << "\n";
    }
}

std::string render_report_markdown(const ReportInputs& inputs) {
    std::ostringstream os;
    os << "# Steering evaluation report\n\n";
    if (!inputs.model_id.empty()) os << "Backbone: `" << inputs.model_id << "`\n\n";

    if (inputs.effects != nullptr) {
        os << "## Answer-quality effect sizes (steered minus baseline)\n\n";
        os << "| config | delta | pairs | excluded |\n";
        os << "|---|---:|---:|---:|\n";
        for (const auto& e : inputs.effects->entries) {
            if (e.set_id.has_value()) continue;
            os << "| " << e.config << " | " << fmt(e.delta) << " | " << e.n_pairs << " | "
               << e.n_excluded << " |\n";
        }
        os << "\n";
    }
    if (inputs.significance != nullptr && !inputs.significance->empty()) {
        os << "## Significance vs baseline (Mann-Whitney U, two-sided)\n\n";
        os << "| config | U | p | method | n1 | n2 |\n";
        os << "|---|---:|---:|---|---:|---:|\n";
        for (const auto& row : *inputs.significance) {
            os << "| " << row.config << " | " << fmt(row.result.u_statistic) << " | "
               << fmt(row.result.p_value) << " | " << mwu_method_name(row.result.method) << " | "
               << row.result.n1 << " | " << row.result.n2 << " |\n";
        }
        os << "\n";
    }
    if (inputs.domains != nullptr) {
        os << "## Domain sensitivity\n\n";
        os << "mean |delta| ELA: " << fmt(inputs.domains->mean_abs_ela) << ", science: "
           << fmt(inputs.domains->mean_abs_science) << ", ratio: " << fmt(inputs.domains->ratio);
        if (inputs.domains->infinite_ratio) os << " (science mean is zero)";
        os << "\n\n";
    }
    if (inputs.mean_abs != nullptr) {
        os << "Mean |delta| over steered configs: " << fmt(inputs.mean_abs->over_configs) << " ("
           << inputs.mean_abs->n_configs << " configs); over (config, set) cells: "
           << fmt(inputs.mean_abs->over_cells) << " (" << inputs.mean_abs->n_cells
           << " cells).\n\n";
    }
    if (inputs.quadrants != nullptr && !inputs.quadrants->empty()) {
        os << "## Perturbation quadrants (delta_pos vs delta_neg)\n\n";
        os << "| trait | delta_pos | delta_neg | quadrant |\n";
        os << "|---|---:|---:|---|\n";
        for (const auto& p : *inputs.quadrants) {
            os << "| " << p.trait << " | " << fmt(p.delta_pos) << " | " << fmt(p.delta_neg)
               << " | " << quadrant_name(p.quadrant) << " |\n";
        }
        os << "\n";
    }
    if (inputs.length_quality_r.has_value()) {
        os << "Length-quality correlation (response tokens vs normalized score): "
           << fmt(*inputs.length_quality_r) << "\n\n";
    }
    if (inputs.leniency != nullptr) {
        const auto& s = *inputs.leniency;
        os << "## Scorer leniency under persona steering\n\n";
        os << "| base mean | most lenient | most harsh | mean abs bias |\n";
        os << "|---:|---|---|---:|\n";
        os << "| " << fmt(s.baseline_mean) << " | " << s.most_lenient << " ("
           << fmt(s.most_lenient_delta) << ") | " << s.most_harsh << " ("
           << fmt(s.most_harsh_delta) << ") | " << fmt(s.mean_abs_delta) << " |\n\n";
        os << "| scorer | mean delta | mean score | n |\n";
        os << "|---|---:|---:|---:|\n";
        for (const auto& e : s.per_scorer) {
            os << "| " << e.scorer << " | " << fmt(e.mean_delta) << " | " << fmt(e.mean_score)
               << " | " << e.n << " |\n";
        }
        os << "\n";
    }
    if (inputs.matrix != nullptr) {
        os << "## Scorer-learner interaction matrix (delta vs unsteered scorer)\n\n";
        os << "| scorer \\\\ learner |";
        for (const auto& learner : inputs.matrix->learners) os << " " << learner << " |";
        os << "\n|---|";
        for (size_t c = 0; c < inputs.matrix->learners.size(); ++c) os << "---:|";
        os << "\n";
        for (size_t r = 0; r < inputs.matrix->scorers.size(); ++r) {
            os << "| " << inputs.matrix->scorers[r] << " |";
            for (size_t c = 0; c < inputs.matrix->learners.size(); ++c) {
                os << " " << fmt(inputs.matrix->delta[inputs.matrix->index(r, c)]) << " |";
            }
            os << "\n";
        }
        os << "\n";
    }
    if (inputs.bias_ranges != nullptr && !inputs.bias_ranges->empty()) {
        os << "## Topic susceptibility (bias range across steered scorers)\n\n";
        os << "| set | topic | range | scorers |\n";
        os << "|---:|---|---:|---:|\n";
        for (const auto& row : *inputs.bias_ranges) {
            os << "| " << row.set_id << " | " << row.topic << " | " << fmt(row.range) << " | "
               << row.n_scorers << " |\n";
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace svec
