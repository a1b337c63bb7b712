#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "rational_oracle.hpp"
#include "svec/extraction.hpp"
#include "svec/micro_model.hpp"
#include "svec/util.hpp"

using namespace svec;

namespace {

std::vector<std::vector<float>> random_pooled(Rng& rng, size_t n, size_t dim, double scale) {
    std::vector<std::vector<float>> out(n, std::vector<float>(dim));
    for (auto& v : out) {
        for (auto& x : v) x = static_cast<float>(rng.next_gaussian() * scale);
    }
    return out;
}

ActivationTrace trace_from(const std::vector<std::vector<float>>& rows) {
    ActivationTrace t;
    t.layer = 0;
    t.n_positions = rows.size();
    t.dim = rows.front().size();
    for (const auto& r : rows) t.data.insert(t.data.end(), r.begin(), r.end());
    return t;
}

TokenSequence seq_with_spans(size_t prompt_len, size_t response_len,
                             const std::vector<size_t>& special_positions = {}) {
    TokenSequence seq;
    seq.tokens.assign(prompt_len + response_len, 65);
    seq.special.assign(prompt_len + response_len, 0);
    for (size_t p : special_positions) seq.special[p] = 1;
    seq.spans = {0, prompt_len, prompt_len, prompt_len + response_len};
    return seq;
}

}  // namespace

TEST_CASE("trait spec validation enforces the variant count") {
    TraitSpec t = svec::testing::toy_style_trait();
    t.validate();
    TraitSpec bad = t;
    bad.positive_instructions.pop_back();
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = t;
    bad.opposite = bad.name;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = t;
    bad.elicit_questions.clear();
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("builtin traits cover the seven-trait study design") {
    const auto traits = builtin_traits();
    REQUIRE(traits.size() == 7);
    const std::vector<std::string> expected = {"evil",     "apathetic", "hallucinating",
                                               "humorous", "impolite",  "optimistic",
                                               "sycophantic"};
    for (size_t i = 0; i < traits.size(); ++i) {
        CHECK(traits[i].name == expected[i]);
        CHECK(traits[i].positive_instructions.size() == 5);
        CHECK(traits[i].negative_instructions.size() == 5);
        CHECK(traits[i].elicit_questions.size() == 20);
        traits[i].validate();
    }
}

TEST_CASE("contrastive corpus yields two x five x K records deterministically") {
    const MicroModel model = MicroModel::trait_fixture(svec::testing::kFixtureSeed);
    TraitSpec trait = svec::testing::toy_style_trait();
    trait.elicit_questions.resize(1);

    CorpusGenConfig cfg;
    cfg.max_new_tokens = 8;
    cfg.temperature = 0.8;
    cfg.seed = 5;
    const auto records = build_contrastive_corpus(model, trait, cfg);
    CHECK(records.size() == 10);  // 2 x 5 x 1

    trait.elicit_questions = svec::testing::toy_style_trait().elicit_questions;
    trait.elicit_questions.resize(2);
    const auto records2 = build_contrastive_corpus(model, trait, cfg);
    CHECK(records2.size() == 20);
    size_t positives = 0;
    for (const auto& r : records2) {
        if (r.direction == Direction::positive) ++positives;
        CHECK(r.sequence.spans.response_end > r.sequence.spans.response_begin);
    }
    CHECK(positives == 10);

    const auto records3 = build_contrastive_corpus(model, trait, cfg);
    REQUIRE(records3.size() == records2.size());
    for (size_t i = 0; i < records2.size(); ++i) {
        CHECK(records2[i].sequence.tokens == records3[i].sequence.tokens);
    }
}

TEST_CASE("the default question set yields 200 records per trait") {
    const MicroModel model = MicroModel::trait_fixture(svec::testing::kFixtureSeed);
    TraitSpec trait = builtin_traits().front();  // K = 20
    REQUIRE(trait.elicit_questions.size() == 20);
    CorpusGenConfig cfg;
    cfg.max_new_tokens = 1;
    cfg.temperature = 0.0;
    cfg.seed = 1;
    const auto records = build_contrastive_corpus(model, trait, cfg);
    CHECK(records.size() == 200);  // 2 directions x 5 variants x 20 questions
}

TEST_CASE("filter keeps exactly the records meeting both thresholds") {
    std::vector<ContrastiveRecord> records(3);
    for (auto& r : records) r.trait = "t";
    records[0].trait_score = 50;
    records[0].coherence_score = 50;
    records[1].trait_score = 49;
    records[1].coherence_score = 100;
    records[2].trait_score = 100;
    records[2].coherence_score = 49;

    const auto kept = filter_corpus(records, 50);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].trait_score == 50);
    CHECK(kept[0].kept);

    const auto again = filter_corpus(kept, 50);
    CHECK(again.size() == kept.size());  // idempotent

    std::vector<ContrastiveRecord> unscored(1);
    CHECK_THROWS_AS(filter_corpus(unscored, 50), UnscoredRecordError);
}

TEST_CASE("filtering never grows the corpus and preserves order") {
    Rng rng(41);
    std::vector<ContrastiveRecord> records(40);
    for (size_t i = 0; i < records.size(); ++i) {
        records[i].question_index = static_cast<int>(i);
        records[i].trait_score = static_cast<int>(rng.next_u64() % 101);
        records[i].coherence_score = static_cast<int>(rng.next_u64() % 101);
    }
    const auto kept = filter_corpus(records, 50);
    CHECK(kept.size() <= records.size());
    for (size_t i = 1; i < kept.size(); ++i) {
        CHECK(kept[i - 1].question_index < kept[i].question_index);
    }
}

TEST_CASE("pooling modes follow their span rules") {
    // positions: prompt {0,1}, response {2,3}; values chosen per the worked example
    const auto trace = trace_from({{9, 9}, {7, 5}, {1, 0}, {3, 2}});
    TokenSequence seq = seq_with_spans(2, 2);

    const auto resp = pool_activations(trace, seq, PoolingMode::response_average);
    CHECK(resp[0] == doctest::Approx(2.0));
    CHECK(resp[1] == doctest::Approx(1.0));

    const auto pav = pool_activations(trace, seq, PoolingMode::prompt_average);
    CHECK(pav[0] == doctest::Approx(8.0));
    CHECK(pav[1] == doctest::Approx(7.0));

    const auto plast = pool_activations(trace, seq, PoolingMode::prompt_last);
    CHECK(plast[0] == 7.0f);
    CHECK(plast[1] == 5.0f);
}

TEST_CASE("pooling modes agree on single-position spans") {
    const auto trace = trace_from({{4, 2}, {8, 16}});
    TokenSequence seq = seq_with_spans(1, 1);
    const auto a = pool_activations(trace, seq, PoolingMode::prompt_average);
    const auto b = pool_activations(trace, seq, PoolingMode::prompt_last);
    CHECK(a == b);
    const auto r = pool_activations(trace, seq, PoolingMode::response_average);
    CHECK(r[0] == 8.0f);
    CHECK(r[1] == 16.0f);
}

TEST_CASE("pooling excludes template positions and rejects empty spans") {
    const auto trace = trace_from({{10, 10}, {2, 4}, {6, 8}, {100, 100}});
    // BOS at 0 and SEP at 3 are special; prompt = {0,1,2}, response = {3}
    TokenSequence seq = seq_with_spans(3, 1, {0, 3});

    const auto pav = pool_activations(trace, seq, PoolingMode::prompt_average);
    CHECK(pav[0] == doctest::Approx(4.0));  // mean of positions 1,2 only
    CHECK(pav[1] == doctest::Approx(6.0));
    const auto plast = pool_activations(trace, seq, PoolingMode::prompt_last);
    CHECK(plast[0] == 6.0f);  // last non-special prompt position

    CHECK_THROWS_AS(pool_activations(trace, seq, PoolingMode::response_average), EmptySpanError);

    TokenSequence mismatched = seq_with_spans(2, 1);
    CHECK_THROWS_AS(pool_activations(trace, mismatched, PoolingMode::prompt_average),
                    DimensionMismatchError);
}

TEST_CASE("extract_vector computes the mean difference") {
    const std::vector<std::vector<float>> pos = {{1, 0}, {3, 2}};
    const std::vector<std::vector<float>> neg = {{0, 0}, {2, 2}};
    const PersonaVector v = extract_vector(pos, neg, "t", 1, PoolingMode::response_average, "bb");
    REQUIRE(v.components.size() == 2);
    CHECK(v.components[0] == doctest::Approx(1.0));
    CHECK(v.components[1] == doctest::Approx(0.0));
    CHECK(v.n_positive == 2);
    CHECK(v.n_negative == 2);
    CHECK(v.trait == "t");
    CHECK(v.layer == 1);
    CHECK(v.backbone_id == "bb");

    const PersonaVector zero = extract_vector(pos, pos, "t", 1, PoolingMode::response_average, "bb");
    for (float c : zero.components) CHECK(c == 0.0f);

    CHECK_THROWS_AS(extract_vector({}, neg, "t", 1, PoolingMode::response_average, "bb"),
                    EmptyInputError);
    CHECK_THROWS_AS(extract_vector(pos, {}, "t", 1, PoolingMode::response_average, "bb"),
                    EmptyInputError);
    CHECK_THROWS_AS(
        extract_vector({{1, 2}, {1, 2, 3}}, neg, "t", 1, PoolingMode::response_average, "bb"),
        DimensionMismatchError);
}

TEST_CASE("swapping corpora negates the vector exactly") {
    Rng rng(4242);
    const auto pos = random_pooled(rng, 13, 8, 2.0);
    const auto neg = random_pooled(rng, 9, 8, 2.0);
    const PersonaVector a = extract_vector(pos, neg, "t", 0, PoolingMode::response_average, "bb");
    const PersonaVector b = extract_vector(neg, pos, "t", 0, PoolingMode::response_average, "bb");
    for (size_t i = 0; i < a.components.size(); ++i) {
        CHECK(a.components[i] == -b.components[i]);
    }
}

TEST_CASE("extraction matches the exact rational oracle") {
    Rng rng(1001);
    for (int trial = 0; trial < 10; ++trial) {
        const size_t dim = 8 + (rng.next_u64() % 57);
        const size_t n_pos = 1 + (rng.next_u64() % 50);
        const size_t n_neg = 1 + (rng.next_u64() % 50);
        const auto pos = random_pooled(rng, n_pos, dim, 3.0);
        const auto neg = random_pooled(rng, n_neg, dim, 3.0);
        const PersonaVector v =
            extract_vector(pos, neg, "t", 0, PoolingMode::response_average, "bb");
        const auto oracle = svec::testing::rational_mean_difference(pos, neg);
        for (size_t i = 0; i < dim; ++i) {
            CHECK(std::abs(static_cast<double>(v.components[i]) - oracle[i]) < 1e-6);
        }
    }
}

TEST_CASE("record order does not move the extraction beyond float noise") {
    Rng rng(2002);
    const auto pos = random_pooled(rng, 20, 8, 1.0);
    const auto neg = random_pooled(rng, 20, 8, 1.0);
    auto pos_rev = pos;
    std::reverse(pos_rev.begin(), pos_rev.end());
    auto neg_rev = neg;
    std::reverse(neg_rev.begin(), neg_rev.end());
    const PersonaVector a = extract_vector(pos, neg, "t", 0, PoolingMode::response_average, "bb");
    const PersonaVector b =
        extract_vector(pos_rev, neg_rev, "t", 0, PoolingMode::response_average, "bb");
    const auto oracle = svec::testing::rational_mean_difference(pos, neg);
    for (size_t i = 0; i < 8; ++i) {
        // the two orderings agree to well below float quantization, and both
        // sit within the oracle tolerance
        CHECK(std::abs(static_cast<double>(a.components[i]) -
                       static_cast<double>(b.components[i])) <= 1e-9);
        CHECK(std::abs(static_cast<double>(a.components[i]) - oracle[i]) < 1e-6);
        CHECK(std::abs(static_cast<double>(b.components[i]) - oracle[i]) < 1e-6);
    }
}

TEST_CASE("persona vectors persist bit-exactly with metadata") {
    const auto dir = svec::testing::fresh_temp_dir("pv");
    Rng rng(3003);
    const auto pos = random_pooled(rng, 5, 16, 1.0);
    const auto neg = random_pooled(rng, 4, 16, 1.0);
    const PersonaVector v = extract_vector(pos, neg, "evil", 2, PoolingMode::prompt_last, "bb-1");
    const auto path = dir / "evil_l2.svpv";
    save_vector(path, v, "2026-01-01T00:00:00Z");

    const PersonaVector loaded = load_vector(path);
    CHECK(loaded.trait == v.trait);
    CHECK(loaded.layer == v.layer);
    CHECK(loaded.pooling == v.pooling);
    CHECK(loaded.n_positive == v.n_positive);
    CHECK(loaded.n_negative == v.n_negative);
    CHECK(loaded.backbone_id == v.backbone_id);
    REQUIRE(loaded.components.size() == v.components.size());
    CHECK(std::memcmp(loaded.components.data(), v.components.data(),
                      v.components.size() * sizeof(float)) == 0);

    SUBCASE("wrong magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("BADMAGIC", 8);
        f.close();
        CHECK_THROWS_AS(load_vector(path), FormatError);
    }
    SUBCASE("version mismatch") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const uint32_t ver = 9;
        f.write(reinterpret_cast<const char*>(&ver), 4);
        f.close();
        CHECK_THROWS_AS(load_vector(path), VersionMismatchError);
    }
    SUBCASE("truncation") {
        std::filesystem::resize_file(path, std::filesystem::file_size(path) - 6);
        CHECK_THROWS_AS(load_vector(path), TruncatedFileError);
    }
    SUBCASE("checksum") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(20);
        const float junk = -42.0f;
        f.write(reinterpret_cast<const char*>(&junk), 4);
        f.close();
        CHECK_THROWS_AS(load_vector(path), ChecksumError);
    }
    SUBCASE("missing sidecar") {
        std::filesystem::remove(dir / "evil_l2.svpv.meta.json");
        CHECK_THROWS_AS(load_vector(path), FormatError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("corpus files round-trip") {
    const auto dir = svec::testing::fresh_temp_dir("corpus");
    const MicroModel model = MicroModel::trait_fixture(svec::testing::kFixtureSeed);
    TraitSpec trait = svec::testing::toy_style_trait();
    trait.elicit_questions.resize(1);
    CorpusGenConfig cfg;
    cfg.max_new_tokens = 6;
    cfg.seed = 9;
    auto records = build_contrastive_corpus(model, trait, cfg);
    records[0].trait_score = 80;
    records[0].coherence_score = 70;
    records[0].kept = true;

    const auto path = dir / "corpus.ldjson";
    save_corpus(path, records);
    const auto loaded = load_corpus(path);
    REQUIRE(loaded.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].trait == records[i].trait);
        CHECK(loaded[i].direction == records[i].direction);
        CHECK(loaded[i].question_index == records[i].question_index);
        CHECK(loaded[i].instruction_index == records[i].instruction_index);
        CHECK(loaded[i].sequence.tokens == records[i].sequence.tokens);
        CHECK(loaded[i].sequence.special == records[i].sequence.special);
        CHECK(loaded[i].trait_score == records[i].trait_score);
        CHECK(loaded[i].coherence_score == records[i].coherence_score);
        CHECK(loaded[i].kept == records[i].kept);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("extract_from_records pools per layer over the kept corpus") {
    const MicroModel model = MicroModel::trait_fixture(svec::testing::kFixtureSeed);
    TraitSpec trait = svec::testing::toy_style_trait();
    trait.elicit_questions.resize(2);
    CorpusGenConfig cfg;
    cfg.max_new_tokens = 12;
    cfg.temperature = 0.0;
    cfg.seed = 3;
    cfg.allow_eos = false;
    auto records = build_contrastive_corpus(model, trait, cfg);
    svec::testing::score_with_style_judge(records);
    const auto kept = filter_corpus(records, 50);
    REQUIRE(!kept.empty());

    const auto by_layer = extract_from_records(model, kept, {1, 2}, PoolingMode::response_average);
    REQUIRE(by_layer.size() == 2);
    for (const auto& [layer, v] : by_layer) {
        CHECK(v.layer == layer);
        CHECK(v.components.size() == 64);
        CHECK(v.backbone_id == model.descriptor().model_id);
        CHECK(v.n_positive + v.n_negative == static_cast<int>(kept.size()));
        CHECK(v.pooling == PoolingMode::response_average);
    }

    auto mixed = kept;
    mixed[0].trait = "other";
    CHECK_THROWS_AS(extract_from_records(model, mixed, {1}, PoolingMode::response_average),
                    ValidationError);
    CHECK_THROWS_AS(extract_from_records(model, {}, {1}, PoolingMode::response_average),
                    EmptyInputError);
}

TEST_CASE("traits load from JSON configuration") {
    const auto dir = svec::testing::fresh_temp_dir("traitsjson");
    const auto path = dir / "traits.json";
    {
        std::ofstream os(path);
        os << R"({"traits":[{"name":"bold","opposite":"timid",
            "positive_instructions":["a","b","c","d","e"],
            "negative_instructions":["f","g","h","i","j"],
            "elicit_questions":["q1","q2"]}]})";
    }
    const auto traits = load_traits_json(path);
    REQUIRE(traits.size() == 1);
    CHECK(traits[0].name == "bold");
    CHECK(traits[0].elicit_questions.size() == 2);
    std::filesystem::remove_all(dir);
}
