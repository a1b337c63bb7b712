#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "svec/micro_model.hpp"
#include "svec/orchestrator.hpp"

using namespace svec;

namespace {

ExperimentManifest base_manifest(const std::filesystem::path& out_dir) {
    ExperimentManifest m;
    m.experiment = ExperimentKind::generate;
    m.traits = {"evil"};
    m.magnitude = 2.0;
    m.layer = -1;
    m.sets = {1};
    m.samples_per_cell = 1;
    m.seed = 11;
    m.output_dir = out_dir.string();
    m.scorer.kind = "external";
    m.scorer.endpoint = "scripted://5";
    m.scorer.judge_model = "scripted-judge";
    m.jobs = 1;
    m.max_new_tokens = 12;
    m.gen_temperature = 0.8;
    m.questions_per_trait = 2;
    return m;
}

std::filesystem::path write_weights(const std::filesystem::path& dir) {
    const auto path = dir / "weights.svbb";
    MicroModel::trait_fixture(svec::testing::kFixtureSeed).save(path);
    return path;
}

// A trimmed trait file keeps corpus generation fast.
std::filesystem::path write_tiny_traits(const std::filesystem::path& dir) {
    const auto path = dir / "traits.json";
    nlohmann::json doc;
    for (const char* name : {"evil", "humorous"}) {
        nlohmann::json t;
        t["name"] = name;
        t["opposite"] = std::string("not-") + name;
        t["positive_instructions"] = {"BE VERY X ONE", "BE VERY X TWO", "BE VERY X THREE",
                                      "BE VERY X FOUR", "BE VERY X FIVE"};
        t["negative_instructions"] = {"be mild one", "be mild two", "be mild three",
                                      "be mild four", "be mild five"};
        t["elicit_questions"] = {"say something", "say more"};
        doc["traits"].push_back(t);
    }
    std::ofstream os(path);
    os << doc.dump();
    return path;
}

}  // namespace

TEST_CASE("manifests round-trip through JSON with strict field checking") {
    const auto dir = svec::testing::fresh_temp_dir("manifest");
    ExperimentManifest m = base_manifest(dir / "run");
    m.backbone_weights = "w.svbb";

    const auto path = dir / "m.json";
    {
        std::ofstream os(path);
        os << m.to_json().dump(2);
    }
    const ExperimentManifest back = ExperimentManifest::from_json_file(path);
    CHECK(back.experiment == m.experiment);
    CHECK(back.traits == m.traits);
    CHECK(back.sets == m.sets);
    CHECK(back.seed == m.seed);
    CHECK(back.scorer.endpoint == m.scorer.endpoint);
    CHECK(back.hash() == m.hash());

    {
        std::ofstream os(path);
        os << R"({"experiment":"generate","output_dir":"x","unknown_knob":1})";
    }
    CHECK_THROWS_AS(ExperimentManifest::from_json_file(path), ValidationError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest validation gives field-level messages") {
    const auto dir = svec::testing::fresh_temp_dir("validate");
    ExperimentManifest m = base_manifest(dir);
    m.backbone_weights = "w.svbb";
    CHECK_NOTHROW(m.validate());

    SUBCASE("output_dir required") {
        m.output_dir.clear();
        CHECK_THROWS_WITH_AS(m.validate(), "manifest.output_dir: required", ValidationError);
    }
    SUBCASE("sets must be unique and in range") {
        m.sets = {1, 1};
        CHECK_THROWS_AS(m.validate(), ValidationError);
        m.sets = {11};
        CHECK_THROWS_AS(m.validate(), ValidationError);
    }
    SUBCASE("generate requires a model and traits") {
        m.backbone_weights.clear();
        CHECK_THROWS_AS(m.validate(), ValidationError);
        m.backbone_weights = "w.svbb";
        m.traits.clear();
        CHECK_THROWS_AS(m.validate(), ValidationError);
    }
    SUBCASE("score_b scorer kinds are restricted") {
        m.experiment = ExperimentKind::score_b;
        m.scorer.kind = "external";
        CHECK_THROWS_AS(m.validate(), ValidationError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest hash ignores execution knobs") {
    const auto dir = svec::testing::fresh_temp_dir("hash");
    ExperimentManifest m = base_manifest(dir);
    m.backbone_weights = "w.svbb";
    const std::string h = m.hash();
    ExperimentManifest jobs = m;
    jobs.jobs = 16;
    jobs.retry_cap = 9;
    CHECK(jobs.hash() == h);
    ExperimentManifest seed = m;
    seed.seed = 12;
    CHECK(seed.hash() != h);
    std::filesystem::remove_all(dir);
}

TEST_CASE("plan counts follow the experiment grid") {
    const auto dir = svec::testing::fresh_temp_dir("plan");
    ExperimentManifest m = base_manifest(dir / "run");
    m.backbone_weights = write_weights(dir).string();

    SUBCASE("the full study grid plans 1,500 generation items") {
        for (const auto& t : builtin_traits()) {
            if (m.traits.empty() || m.traits[0] != t.name) m.traits.push_back(t.name);
        }
        m.traits = {"evil", "apathetic", "hallucinating", "humorous",
                    "impolite", "optimistic", "sycophantic"};
        m.sets = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
        m.samples_per_cell = 10;
        const WorkPlan p = plan(m);
        CHECK(p.item_keys.size() == 1500);
        CHECK(p.item_keys.front() == "generate/baseline/s1/i0");
        CHECK(p.item_keys.back() == "generate/sycophantic_neg/s10/i9");
    }
    SUBCASE("one trait, one set, one sample plans three items") {
        const WorkPlan p = plan(m);
        CHECK(p.item_keys.size() == 3);
        CHECK(p.item_keys[0] == "generate/baseline/s1/i0");
        CHECK(p.item_keys[1] == "generate/evil_pos/s1/i0");
        CHECK(p.item_keys[2] == "generate/evil_neg/s1/i0");
    }
    SUBCASE("score_b plans scorers x pool") {
        // fabricate a 10-answer pool
        std::filesystem::create_directories(dir / "run" / "answers");
        std::vector<AnswerRecord> pool;
        for (int i = 0; i < 10; ++i) {
            AnswerRecord a;
            a.model_id = "m";
            a.generator_config = "baseline";
            a.set_id = 1;
            a.sample_index = i;
            a.answer_id = make_answer_id("m", "baseline", 1, i);
            a.text = "t";
            pool.push_back(a);
        }
        save_answers(dir / "run" / "answers" / "baseline.ldjson", pool);
        ExperimentManifest sb = m;
        sb.experiment = ExperimentKind::score_b;
        sb.scorer.kind = "scripted";
        const WorkPlan p = plan(sb);
        CHECK(p.item_keys.size() == 30);  // 3 scorer configs x 10 answers
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("extract stage produces corpora and vectors with ledger resume") {
    const auto dir = svec::testing::fresh_temp_dir("extract");
    ExperimentManifest m = base_manifest(dir / "run");
    m.experiment = ExperimentKind::extract;
    m.backbone_weights = write_weights(dir).string();
    m.traits_file = write_tiny_traits(dir).string();
    m.traits = {"evil", "humorous"};
    m.max_new_tokens = 8;

    const WorkPlan p = plan(m);
    CHECK(p.item_keys.size() == 2);

    const RunResult r1 = run(m);
    CHECK(r1.executed == 2);
    CHECK(r1.failed == 0);
    CHECK(std::filesystem::exists(dir / "run" / "corpora" / "evil.ldjson"));
    CHECK(std::filesystem::exists(dir / "run" / "corpora" / "humorous.ldjson"));
    CHECK(std::filesystem::exists(dir / "run" / "vectors" / "evil_l2.svpv"));
    CHECK(std::filesystem::exists(dir / "run" / "vectors" / "humorous_l2.svpv"));

    const auto corpus = load_corpus(dir / "run" / "corpora" / "evil.ldjson");
    CHECK(corpus.size() == 2 * 5 * 2);  // directions x variants x K

    // completed manifests re-run as no-ops
    const RunResult r2 = run(m);
    CHECK(r2.executed == 0);
    CHECK(r2.skipped == 2);
    CHECK(r2.failed == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("generate stage resumes losslessly after an interrupt") {
    const auto dir = svec::testing::fresh_temp_dir("resume");
    ExperimentManifest extract = base_manifest(dir / "run");
    extract.experiment = ExperimentKind::extract;
    extract.backbone_weights = write_weights(dir).string();
    extract.traits_file = write_tiny_traits(dir).string();
    extract.max_new_tokens = 8;
    REQUIRE(run(extract).failed == 0);

    ExperimentManifest gen = base_manifest(dir / "run");
    gen.backbone_weights = extract.backbone_weights;
    gen.traits_file = extract.traits_file;
    gen.sets = {1, 2};
    gen.samples_per_cell = 2;
    gen.max_new_tokens = 8;

    const WorkPlan p = plan(gen);
    const size_t total = p.item_keys.size();
    CHECK(total == 12);  // 3 configs x 2 sets x 2 samples

    RunOptions interrupt;
    interrupt.max_items = 5;
    const RunResult first = run(gen, interrupt);
    CHECK(first.executed == 5);

    const RunResult second = run(gen);
    CHECK(second.executed == total - 5);
    CHECK(second.skipped == 5);

    const auto pool = load_answer_pool({dir / "run" / "answers"}, {});
    CHECK(pool.size() == total);

    // a different manifest refuses to reuse the ledger
    ExperimentManifest other = gen;
    other.seed = 999;
    CHECK_THROWS_AS(run(other), LedgerMismatchError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("score stages fill every slot and analysis emits its files") {
    const auto dir = svec::testing::fresh_temp_dir("pipeline");
    const auto weights = write_weights(dir);
    const auto traits = write_tiny_traits(dir);

    ExperimentManifest extract = base_manifest(dir / "run");
    extract.experiment = ExperimentKind::extract;
    extract.backbone_weights = weights.string();
    extract.traits_file = traits.string();
    extract.traits = {"evil", "humorous"};
    extract.max_new_tokens = 8;
    REQUIRE(run(extract).failed == 0);

    ExperimentManifest gen = base_manifest(dir / "run");
    gen.backbone_weights = weights.string();
    gen.traits_file = traits.string();
    gen.traits = {"evil", "humorous"};
    gen.sets = {1, 2};
    gen.samples_per_cell = 2;
    gen.max_new_tokens = 8;
    REQUIRE(run(gen).failed == 0);
    const auto pool = load_answer_pool({dir / "run" / "answers"}, {});
    REQUIRE(pool.size() == 20);  // 5 configs x 2 sets x 2 samples

    // Experiment A scoring: scripted external judge scores every answer.
    ExperimentManifest score_a = gen;
    score_a.experiment = ExperimentKind::score_a;
    REQUIRE(run(score_a).failed == 0);
    {
        const auto judgments = load_judgment_store(dir / "run" / "judgments");
        CHECK(judgments.size() == pool.size());
        for (const auto& j : judgments) {
            CHECK(j.scorer == "scripted-judge");
            CHECK(j.scored);
            CHECK(j.normalized >= 0.0);
            CHECK(j.normalized <= 1.0);
        }
        // idempotent: nothing new on rerun
        const RunResult again = run(score_a);
        CHECK(again.executed == 0);
    }

    // Experiment B scoring: 5 scripted scorers x pool, every slot explicit.
    ExperimentManifest score_b = gen;
    score_b.experiment = ExperimentKind::score_b;
    score_b.scorer.kind = "scripted";
    const WorkPlan pb = plan(score_b);
    CHECK(pb.item_keys.size() == 5 * pool.size());
    REQUIRE(run(score_b).failed == 0);
    {
        const auto judgments = load_judgment_store(dir / "run" / "judgments");
        size_t config_scorer_judgments = 0;
        for (const auto& j : judgments) {
            if (j.scorer != "scripted-judge") ++config_scorer_judgments;
        }
        CHECK(config_scorer_judgments == 5 * pool.size());
    }

    // analyze writes the full set of outputs
    ExperimentManifest analyze = gen;
    analyze.experiment = ExperimentKind::analyze;
    REQUIRE(run(analyze).failed == 0);
    const auto adir = dir / "run" / "analysis";
    for (const char* name :
         {"effect_sizes.csv", "effect_sizes.ldjson", "significance.csv", "significance.ldjson",
          "quadrants.csv", "quadrants.ldjson", "domain_sensitivity.csv",
          "domain_sensitivity.ldjson", "length_quality.csv", "length_quality.ldjson",
          "interaction_matrix.csv", "interaction_matrix.ldjson", "leniency.csv",
          "leniency.ldjson", "bias_ranges.csv", "bias_ranges.ldjson", "report.md"}) {
        CHECK_MESSAGE(std::filesystem::exists(adir / name), name);
    }
    const std::string report = render_run_report(analyze);
    CHECK(report.find("effect sizes") != std::string::npos);
    CHECK(report.find("baseline") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("self-steered score_b marks unscorable slots explicitly") {
    const auto dir = svec::testing::fresh_temp_dir("selfb");
    const auto weights = write_weights(dir);
    const auto traits = write_tiny_traits(dir);

    ExperimentManifest extract = base_manifest(dir / "run");
    extract.experiment = ExperimentKind::extract;
    extract.backbone_weights = weights.string();
    extract.traits_file = traits.string();
    extract.traits = {"evil"};
    extract.max_new_tokens = 8;
    REQUIRE(run(extract).failed == 0);

    ExperimentManifest gen = base_manifest(dir / "run");
    gen.backbone_weights = weights.string();
    gen.traits_file = traits.string();
    gen.traits = {"evil"};
    gen.sets = {1};
    gen.samples_per_cell = 1;
    gen.max_new_tokens = 6;
    REQUIRE(run(gen).failed == 0);

    ExperimentManifest sb = gen;
    sb.experiment = ExperimentKind::score_b;
    sb.scorer.kind = "self_steered";
    const WorkPlan p = plan(sb);
    CHECK(p.item_keys.size() == 9);  // 3 scorers x 3 answers
    const RunResult r = run(sb);
    CHECK(r.failed == 0);

    const auto judgments = load_judgment_store(dir / "run" / "judgments");
    CHECK(judgments.size() == 9);
    for (const auto& j : judgments) {
        if (!j.scored) {
            CHECK_FALSE(j.error.empty());
            CHECK(j.parse_attempts == 2);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("answer pool loading dedupes and orders canonically") {
    const auto dir = svec::testing::fresh_temp_dir("pool");
    std::filesystem::create_directories(dir / "answers");
    AnswerRecord a;
    a.model_id = "m";
    a.generator_config = "evil_pos";
    a.set_id = 2;
    a.sample_index = 0;
    a.answer_id = make_answer_id("m", "evil_pos", 2, 0);
    a.text = "first";
    AnswerRecord b = a;
    b.text = "updated";
    AnswerRecord c;
    c.model_id = "m";
    c.generator_config = "baseline";
    c.set_id = 1;
    c.sample_index = 0;
    c.answer_id = make_answer_id("m", "baseline", 1, 0);
    c.text = "base";
    save_answers(dir / "answers" / "evil_pos.ldjson", {a, b});  // duplicate key, last wins
    save_answers(dir / "answers" / "baseline.ldjson", {c});

    const auto pool =
        load_answer_pool({dir / "answers"}, {"baseline", "evil_pos", "evil_neg"});
    REQUIRE(pool.size() == 2);
    CHECK(pool[0].generator_config == "baseline");
    CHECK(pool[1].generator_config == "evil_pos");
    CHECK(pool[1].text == "updated");

    CHECK_THROWS_AS(load_answer_pool({dir / "missing"}, {}), ValidationError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("the manifest schema names every field") {
    const std::string schema = manifest_schema();
    for (const char* field : {"experiment", "backbone_weights", "traits", "sets",
                              "samples_per_cell", "seed", "output_dir", "scorer",
                              "answers_pool", "jobs"}) {
        CHECK(schema.find(field) != std::string::npos);
    }
}
