#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "svec/corpus.hpp"
#include "svec/util.hpp"

using namespace svec;

namespace {

std::filesystem::path write_tsv(const std::filesystem::path& dir, const std::string& body) {
    const auto path = dir / "data.tsv";
    std::ofstream os(path);
    os << body;
    return path;
}

const std::string kHeader = "Id\tEssaySet\tScore1\tScore2\tEssayText\n";

}  // namespace

TEST_CASE("builtin set table matches the study layout") {
    const PromptSetTable table = PromptSetTable::builtin();
    REQUIRE(table.sets().size() == 10);

    // every set has exactly one domain and a valid range
    for (int id = 1; id <= 10; ++id) {
        const PromptSet& s = table.get(id);
        CHECK(s.set_id == id);
        CHECK(s.score_min == 0);
        CHECK((s.score_max == 2 || s.score_max == 3));
        CHECK_FALSE(s.topic_label.empty());
    }

    CHECK(table.get(2).domain == TaskDomain::ela);
    CHECK(table.get(2).topic_label == "censorship essay");
    CHECK(table.get(6).domain == TaskDomain::science);
    CHECK(table.get(6).topic_label == "cell membrane transport");
    CHECK(table.get(7).domain == TaskDomain::ela);
    CHECK(table.get(8).domain == TaskDomain::ela);

    // 0-3 sets are 1, 2, 5, 6; the rest are 0-2
    for (int id : {1, 2, 5, 6}) CHECK(table.get(id).score_max == 3);
    for (int id : {3, 4, 7, 8, 9, 10}) CHECK(table.get(id).score_max == 2);

    CHECK_THROWS_AS(table.get(0), RangeError);
    CHECK_THROWS_AS(table.get(11), RangeError);
}

TEST_CASE("normalize_score is the linear rubric map") {
    const PromptSetTable table = PromptSetTable::builtin();
    const PromptSet& s03 = table.get(1);  // 0-3
    const PromptSet& s02 = table.get(3);  // 0-2

    CHECK(normalize_score(2, s03).normalized == doctest::Approx(0.6667).epsilon(1e-3));
    CHECK(std::abs(normalize_score(2, s03).normalized - 2.0 / 3.0) < 1e-9);
    CHECK(normalize_score(0, s03).normalized == 0.0);
    CHECK(normalize_score(3, s03).normalized == 1.0);
    CHECK(normalize_score(0, s02).normalized == 0.0);
    CHECK(normalize_score(2, s02).normalized == 1.0);
    CHECK(normalize_score(1, s02).normalized == doctest::Approx(0.5));

    CHECK_THROWS_AS(normalize_score(3, s02), RangeError);
    CHECK_THROWS_AS(normalize_score(-1, s03), RangeError);
    CHECK_THROWS_AS(normalize_score(4, s03), RangeError);

    // strictly monotone within each range
    for (const PromptSet& s : table.sets()) {
        double last = -1.0;
        for (int raw = s.score_min; raw <= s.score_max; ++raw) {
            const double val = normalize_score(raw, s).normalized;
            CHECK(val > last);
            last = val;
        }
        CHECK(normalize_score(s.score_min, s).normalized == 0.0);
        CHECK(normalize_score(s.score_max, s).normalized == 1.0);
    }
}

TEST_CASE("load_asap parses, groups and validates") {
    const auto dir = svec::testing::fresh_temp_dir("tsv");
    const PromptSetTable table = PromptSetTable::builtin();

    SUBCASE("well-formed rows group by set with domains from the table") {
        const auto path = write_tsv(dir, kHeader +
                                             "1\t6\t2\t3\tosmosis moves water\n"
                                             "2\t2\t3\t2\tbooks should stay\n"
                                             "3\t6\t0\t1\tno idea\n");
        const auto by_set = load_asap(path, table);
        REQUIRE(by_set.size() == 2);
        CHECK(by_set.at(6).size() == 2);
        CHECK(by_set.at(2).size() == 1);
        CHECK(by_set.at(6)[0].text == "osmosis moves water");
        CHECK(by_set.at(6)[0].score1 == 2);
        CHECK(by_set.at(6)[0].score2 == 3);
        CHECK(table.get(by_set.at(6)[0].set_id).domain == TaskDomain::science);
        CHECK(table.get(by_set.at(2)[0].set_id).domain == TaskDomain::ela);
        CHECK(table.get(by_set.at(2)[0].set_id).topic_label == "censorship essay");
    }
    SUBCASE("empty file is rejected") {
        const auto path = write_tsv(dir, "");
        CHECK_THROWS_AS(load_asap(path, table), FormatError);
        const auto header_only = write_tsv(dir, kHeader);
        CHECK_THROWS_AS(load_asap(header_only, table), FormatError);
    }
    SUBCASE("missing columns are rejected") {
        const auto path = write_tsv(dir, "Id\tEssaySet\tScore1\tEssayText\n1\t1\t2\tx\n");
        CHECK_THROWS_AS(load_asap(path, table), FormatError);
    }
    SUBCASE("non-integer scores are fatal with line numbers") {
        const auto path = write_tsv(dir, kHeader + "1\t1\ttwo\t2\tanswer\n");
        try {
            load_asap(path, table);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find(":2:") != std::string::npos);
        }
    }
    SUBCASE("unknown set ids are fatal") {
        const auto path = write_tsv(dir, kHeader + "1\t11\t2\t2\tanswer\n");
        CHECK_THROWS_AS(load_asap(path, table), FormatError);
    }
    SUBCASE("scores outside the rubric range are fatal") {
        const auto path = write_tsv(dir, kHeader + "1\t3\t3\t1\tanswer\n");  // set 3 is 0-2
        CHECK_THROWS_AS(load_asap(path, table), FormatError);
    }
    SUBCASE("lenient mode skips bad rows and reports them") {
        const auto path = write_tsv(dir, kHeader +
                                             "1\t1\t2\t2\tgood row\n"
                                             "2\t1\tbad\t2\tbad row\n"
                                             "3\t1\t1\t1\tanother good row\n");
        std::ostringstream diag;
        const auto by_set = load_asap(path, table, /*lenient=*/true, &diag);
        CHECK(by_set.at(1).size() == 2);
        CHECK(diag.str().find(":3:") != std::string::npos);
    }
    SUBCASE("CRLF line endings are tolerated") {
        const auto path = write_tsv(dir, "Id\tEssaySet\tScore1\tScore2\tEssayText\r\n"
                                         "1\t1\t2\t2\tanswer text\r\n");
        const auto by_set = load_asap(path, table);
        CHECK(by_set.at(1)[0].text == "answer text");
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("canonical corpus round-trip is lossless") {
    const auto dir = svec::testing::fresh_temp_dir("canon");
    const PromptSetTable table = PromptSetTable::builtin();
    std::string body = kHeader;
    Rng rng(8);
    for (int i = 1; i <= 50; ++i) {
        const int set_id = 1 + static_cast<int>(rng.next_u64() % 10);
        const int smax = table.get(set_id).score_max;
        body += std::to_string(i) + "\t" + std::to_string(set_id) + "\t" +
                std::to_string(rng.next_u64() % (smax + 1)) + "\t" +
                std::to_string(rng.next_u64() % (smax + 1)) + "\tanswer text " +
                std::to_string(i) + " with\ttab inside\n";
    }
    const auto tsv = write_tsv(dir, body);
    const auto by_set = load_asap(tsv, table);

    const auto canon = dir / "corpus.ldjson";
    save_student_answers(canon, by_set);
    const auto reloaded = load_student_answers(canon);
    REQUIRE(reloaded.size() == by_set.size());
    for (const auto& [set_id, rows] : by_set) {
        const auto& other = reloaded.at(set_id);
        REQUIRE(other.size() == rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            CHECK(other[i].id == rows[i].id);
            CHECK(other[i].set_id == rows[i].set_id);
            CHECK(other[i].score1 == rows[i].score1);
            CHECK(other[i].score2 == rows[i].score2);
            CHECK(other[i].text == rows[i].text);
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("generation prompts are ordered, sectioned and byte-stable") {
    const PromptSetTable table = PromptSetTable::builtin();

    const PromptSet& with_source = table.get(3);
    REQUIRE(with_source.source_text.has_value());
    const std::string p1 = build_generation_prompt(with_source);
    const size_t task_pos = p1.find("TASK:\n");
    const size_t source_pos = p1.find("SOURCE:\n");
    const size_t rubric_pos = p1.find("RUBRIC:\n");
    REQUIRE(task_pos != std::string::npos);
    REQUIRE(source_pos != std::string::npos);
    REQUIRE(rubric_pos != std::string::npos);
    CHECK(task_pos < source_pos);
    CHECK(source_pos < rubric_pos);
    CHECK(p1.find(with_source.task_prompt) != std::string::npos);
    CHECK(p1.find(*with_source.source_text) != std::string::npos);
    CHECK(p1.find(with_source.rubric) != std::string::npos);

    const PromptSet& no_source = table.get(2);
    REQUIRE_FALSE(no_source.source_text.has_value());
    const std::string p2 = build_generation_prompt(no_source);
    CHECK(p2.find("SOURCE:") == std::string::npos);
    CHECK(p2.find("TASK:\n") != std::string::npos);
    CHECK(p2.find("RUBRIC:\n") != std::string::npos);

    CHECK(build_generation_prompt(with_source) == p1);
    CHECK(build_generation_prompt(no_source) == p2);
}

TEST_CASE("answer records round-trip through their line format") {
    AnswerRecord rec;
    rec.answer_id = make_answer_id("micro-abc", "evil_pos", 4, 7);
    CHECK(rec.answer_id == "micro-abc/evil_pos/s4/i7");
    rec.set_id = 4;
    rec.generator_config = "evil_pos";
    rec.model_id = "micro-abc";
    rec.text = "an answer with \"quotes\" and\nnewlines";
    rec.sample_index = 7;
    rec.response_token_count = 36;

    const AnswerRecord back = answer_from_json_line(answer_to_json_line(rec));
    CHECK(back.answer_id == rec.answer_id);
    CHECK(back.set_id == rec.set_id);
    CHECK(back.generator_config == rec.generator_config);
    CHECK(back.model_id == rec.model_id);
    CHECK(back.text == rec.text);
    CHECK(back.sample_index == rec.sample_index);
    CHECK(back.response_token_count == rec.response_token_count);

    const auto dir = svec::testing::fresh_temp_dir("answers");
    save_answers(dir / "pool.ldjson", {rec, rec});
    CHECK(load_answers(dir / "pool.ldjson").size() == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("byte-mapped text storage round-trips arbitrary bytes") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::string raw;
        const size_t len = rng.next_u64() % 64;
        for (size_t i = 0; i < len; ++i) {
            raw.push_back(static_cast<char>(rng.next_u64() % 256));
        }
        const std::string stored = bytes_to_utf8(raw);
        CHECK(is_valid_utf8(stored));
        CHECK(utf8_to_bytes(stored) == raw);

        // the same helper carries answer text through its JSON line format
        AnswerRecord rec;
        rec.answer_id = "m/baseline/s1/i0";
        rec.set_id = 1;
        rec.generator_config = "baseline";
        rec.model_id = "m";
        rec.text = raw;
        rec.sample_index = 0;
        CHECK(answer_from_json_line(answer_to_json_line(rec)).text == raw);
    }
    CHECK_THROWS_AS(utf8_to_bytes("\xE2\x82\xAC"), FormatError);  // code point above 0xFF
}

TEST_CASE("set tables load from JSON overrides") {
    const auto dir = svec::testing::fresh_temp_dir("setsjson");
    const auto path = dir / "sets.json";
    {
        std::ofstream os(path);
        os << "{\"sets\":[";
        for (int id = 1; id <= 10; ++id) {
            os << (id > 1 ? "," : "") << "{\"set_id\":" << id
               << ",\"domain\":\"" << (id % 2 == 0 ? "ELA" : "science") << "\""
               << ",\"score_max\":" << (id <= 4 ? 3 : 2)
               << ",\"task_prompt\":\"task\",\"rubric\":\"rubric\""
               << ",\"topic_label\":\"topic " << id << "\"}";
        }
        os << "]}";
    }
    const PromptSetTable table = PromptSetTable::from_json(path);
    CHECK(table.get(2).domain == TaskDomain::ela);
    CHECK(table.get(1).score_max == 3);
    CHECK(table.get(10).score_max == 2);
    std::filesystem::remove_all(dir);
}
