#include "svec/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "svec/errors.hpp"
#include "svec/util.hpp"

namespace svec {

using nlohmann::json;

const char* task_domain_name(TaskDomain d) {
    return d == TaskDomain::science ? "science" : "ELA";
}

TaskDomain task_domain_from_name(std::string_view name) {
    if (name == "science") return TaskDomain::science;
    if (name == "ELA" || name == "ela") return TaskDomain::ela;
    throw ValidationError("unknown domain: " + std::string(name));
}

void PromptSet::validate() const {
    if (set_id < 1 || set_id > 10) throw ValidationError("prompt set: set_id must be in 1..10");
    if (score_min != 0) throw ValidationError("prompt set: score_min must be 0");
    if (score_max != 2 && score_max != 3) {
        throw ValidationError("prompt set: score_max must be 2 or 3");
    }
    if (task_prompt.empty() || rubric.empty() || topic_label.empty()) {
        throw ValidationError("prompt set " + std::to_string(set_id) + ": missing text fields");
    }
}

PromptSetTable::PromptSetTable(std::vector<PromptSet> sets) : sets_(std::move(sets)) {
    if (sets_.size() != 10) throw ValidationError("prompt set table: exactly 10 sets required");
    std::sort(sets_.begin(), sets_.end(),
              [](const PromptSet& a, const PromptSet& b) { return a.set_id < b.set_id; });
    for (int i = 0; i < 10; ++i) {
        sets_[static_cast<size_t>(i)].validate();
        if (sets_[static_cast<size_t>(i)].set_id != i + 1) {
            throw ValidationError("prompt set table: set ids must cover 1..10 exactly");
        }
    }
}

const PromptSet& PromptSetTable::get(int set_id) const {
    if (set_id < 1 || set_id > 10) {
        throw RangeError("unknown set id: " + std::to_string(set_id));
    }
    return sets_[static_cast<size_t>(set_id - 1)];
}

PromptSetTable PromptSetTable::builtin() {
    std::vector<PromptSet> sets;
    auto add = [&sets](int id, TaskDomain domain, int smax, std::string topic, std::string task,
                       std::optional<std::string> source, std::string rubric) {
        PromptSet s;
        s.set_id = id;
        s.domain = domain;
        s.score_min = 0;
        s.score_max = smax;
        s.topic_label = std::move(topic);
        s.task_prompt = std::move(task);
        s.source_text = std::move(source);
        s.rubric = std::move(rubric);
        sets.push_back(std::move(s));
    };

    add(1, TaskDomain::science, 3, "acid rain experiment",
        "A group of students designed a procedure to test how four samples react to a dilute "
        "acid solution. Describe what additional information they would need in order to "
        "replicate the experiment, and explain why each piece of information matters.",
        std::string(
            "Procedure: 1. Pour equal amounts of the acid solution into four containers. "
            "2. Place one material sample in each container. 3. Wait and record observations. "
            "4. Rinse, dry, and weigh each sample."),
        "3 points: names at least three needed details (amounts, timing, sample sizes, "
        "measurement units) with reasons. 2 points: two details with reasons, or three without. "
        "1 point: one relevant detail. 0 points: no relevant details.");

    add(2, TaskDomain::ela, 3, "censorship essay",
        "Should libraries remove books or other materials from their shelves if some readers "
        "find them offensive? Write a response stating your position and supporting it with "
        "reasons and examples.",
        std::nullopt,
        "3 points: clear position supported by well-developed reasons and examples. 2 points: "
        "position with partially developed support. 1 point: position with minimal support. "
        "0 points: no position or off-topic.");

    add(3, TaskDomain::ela, 2, "invasive species passage",
        "Based on the article, explain how the introduced pythons affect the ecosystem they "
        "invaded, using details from the text.",
        std::string(
            "Article excerpt: Large constrictor snakes released by pet owners have spread "
            "through the wetlands. Researchers report sharp declines in small mammal "
            "populations, and wading-bird nests are increasingly raided. Park staff now run "
            "removal programs and public awareness campaigns."),
        "2 points: explains the effect with two or more text details. 1 point: explains the "
        "effect with one detail or gives details without explanation. 0 points: no relevant "
        "text evidence.");

    add(4, TaskDomain::ela, 2, "trail diary passage",
        "Using information from the diary entries, describe two challenges the travelers faced "
        "and how they responded to each.",
        std::string(
            "Diary excerpt: Day 12 - The river crossing took all morning; we unloaded the "
            "wagons and carried the goods across in three trips. Day 19 - Grass for the oxen "
            "has grown scarce, so we leave camp before dawn to reach the next meadow early."),
        "2 points: two challenges, each paired with the travelers' response. 1 point: one "
        "challenge with its response, or two challenges without responses. 0 points: neither.");

    add(5, TaskDomain::science, 3, "protein synthesis",
        "Starting with the mRNA leaving the nucleus, list and describe four major steps "
        "involved in building a protein.",
        std::nullopt,
        "3 points: four correct steps in order with descriptions. 2 points: three correct "
        "steps. 1 point: one or two correct steps. 0 points: no correct steps.");

    add(6, TaskDomain::science, 3, "cell membrane transport",
        "Identify and describe three processes by which substances move across the cell "
        "membrane, noting whether each requires energy.",
        std::nullopt,
        "3 points: three correct processes with energy requirements. 2 points: two correct "
        "processes. 1 point: one correct process. 0 points: no correct processes.");

    add(7, TaskDomain::ela, 2, "character trait of Rose",
        "Identify one trait that describes Rose based on her actions in the story, and support "
        "your choice with one detail from the text.",
        std::string(
            "Story excerpt: Rose spent her Saturday repainting the community center fence, "
            "then stayed late to help the younger children clean the brushes, even though she "
            "had promised herself an afternoon at the lake."),
        "2 points: names a reasonable trait and supports it with a relevant text detail. "
        "1 point: trait without support, or support without a named trait. 0 points: neither.");

    add(8, TaskDomain::ela, 2, "narrator's lesson",
        "Explain the lesson the narrator learns by the end of the story and how one event in "
        "the plot leads to that lesson.",
        std::string(
            "Story excerpt: After bragging about the shortcut, Mr. Leonard got the team lost "
            "for an hour. The narrator, who had stayed quiet despite knowing the route, "
            "finally spoke up, and the group followed her directions back before sundown."),
        "2 points: states the lesson and connects it to a plot event. 1 point: lesson without "
        "the connecting event, or event without the lesson. 0 points: neither.");

    add(9, TaskDomain::ela, 2, "space junk article",
        "According to the article, why has orbital debris become a growing problem, and what "
        "is one approach being considered to address it?",
        std::string(
            "Article excerpt: Decades of launches have left defunct satellites and fragments "
            "circling the planet at high speed. Even small pieces can disable working "
            "spacecraft. Agencies are studying capture nets, drag sails, and stricter "
            "deorbiting rules for new missions."),
        "2 points: gives a text-based cause and one proposed approach. 1 point: cause or "
        "approach, but not both. 0 points: neither.");

    add(10, TaskDomain::science, 2, "doghouse color experiment",
        "Using the data from the experiment, explain how lid color affected the temperature "
        "inside the boxes, and state one way to improve the experimental design.",
        std::string("Data: black lid 54C, dark gray 48C, light gray 44C, white 42C after one "
                    "hour in direct sunlight. Each box was measured once."),
        "2 points: describes the color-temperature relationship and one design improvement. "
        "1 point: one of the two. 0 points: neither.");

    return PromptSetTable(std::move(sets));
}

PromptSetTable PromptSetTable::from_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open prompt set table: " + path.string());
    json doc = json::parse(is, nullptr, true, true);
    std::vector<PromptSet> sets;
    for (const auto& item : doc.at("sets")) {
        PromptSet s;
        s.set_id = item.at("set_id").get<int>();
        s.domain = task_domain_from_name(item.at("domain").get<std::string>());
        s.score_min = item.value("score_min", 0);
        s.score_max = item.at("score_max").get<int>();
        s.task_prompt = item.at("task_prompt").get<std::string>();
        if (item.contains("source_text") && !item.at("source_text").is_null()) {
            s.source_text = item.at("source_text").get<std::string>();
        }
        s.rubric = item.at("rubric").get<std::string>();
        s.topic_label = item.at("topic_label").get<std::string>();
        sets.push_back(std::move(s));
    }
    return PromptSetTable(std::move(sets));
}

namespace {

std::vector<std::string> split_tabs(const std::string& line, size_t max_fields) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (fields.size() + 1 < max_fields) {
        const size_t pos = line.find('\t', start);
        if (pos == std::string::npos) break;
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    fields.push_back(line.substr(start));
    return fields;
}

bool parse_int(const std::string& s, long& out) {
    if (s.empty()) return false;
    size_t i = 0;
    if (s[0] == '-' || s[0] == '+') i = 1;
    if (i >= s.size()) return false;
    long v = 0;
    for (; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
        v = v * 10 + (s[i] - '0');
    }
    out = s[0] == '-' ? -v : v;
    return true;
}

}  // namespace

std::map<int, std::vector<StudentAnswer>> load_asap(const std::filesystem::path& path,
                                                    const PromptSetTable& table, bool lenient,
                                                    std::ostream* diag) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open TSV: " + path.string());

    std::string header;
    if (!std::getline(is, header)) throw FormatError("empty file: " + path.string());
    if (!header.empty() && header.back() == '\r') header.pop_back();
    const std::vector<std::string> cols = split_tabs(header, 64);
    const std::vector<std::string> expected = {"Id", "EssaySet", "Score1", "Score2", "EssayText"};
    for (size_t i = 0; i < expected.size(); ++i) {
        if (i >= cols.size() || cols[i] != expected[i]) {
            throw FormatError("TSV header missing column '" + expected[i] + "' at position " +
                              std::to_string(i + 1));
        }
    }

    std::map<int, std::vector<StudentAnswer>> by_set;
    std::string line;
    size_t line_no = 1;
    size_t parsed = 0;
    auto fail = [&](const std::string& what) {
        const std::string msg = path.string() + ":" + std::to_string(line_no) + ": " + what;
        if (lenient) {
            if (diag) *diag << "skipped row, " << msg << "\n";
            return;
        }
        throw FormatError(msg);
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_tabs(line, 5);
        if (fields.size() < 5) {
            fail("expected 5 tab-separated fields, got " + std::to_string(fields.size()));
            continue;
        }
        long id = 0, set_id = 0, score1 = 0, score2 = 0;
        if (!parse_int(fields[0], id)) {
            fail("non-integer Id '" + fields[0] + "'");
            continue;
        }
        if (!parse_int(fields[1], set_id)) {
            fail("non-integer EssaySet '" + fields[1] + "'");
            continue;
        }
        if (set_id < 1 || set_id > 10) {
            fail("unknown set id " + std::to_string(set_id));
            continue;
        }
        if (!parse_int(fields[2], score1) || !parse_int(fields[3], score2)) {
            fail("non-integer score");
            continue;
        }
        const PromptSet& set = table.get(static_cast<int>(set_id));
        if (score1 < set.score_min || score1 > set.score_max) {
            fail("Score1 " + std::to_string(score1) + " outside rubric range 0.." +
                 std::to_string(set.score_max));
            continue;
        }
        StudentAnswer row;
        row.id = id;
        row.set_id = static_cast<int>(set_id);
        row.score1 = static_cast<int>(score1);
        row.score2 = static_cast<int>(score2);
        row.text = fields[4];
        by_set[row.set_id].push_back(std::move(row));
        ++parsed;
    }
    if (parsed == 0) throw FormatError("no data rows parsed from " + path.string());
    return by_set;
}

void save_student_answers(const std::filesystem::path& path,
                          const std::map<int, std::vector<StudentAnswer>>& by_set) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path.string());
    for (const auto& [set_id, rows] : by_set) {
        for (const auto& row : rows) {
            json j;
            j["v"] = 1;
            j["id"] = row.id;
            j["set_id"] = row.set_id;
            j["score1"] = row.score1;
            j["score2"] = row.score2;
            j["text"] = bytes_to_utf8(row.text);
            os << j.dump() << "\n";
        }
    }
    if (!os) throw FormatError("write failed: " + path.string());
}

std::map<int, std::vector<StudentAnswer>> load_student_answers(
    const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open for read: " + path.string());
    std::map<int, std::vector<StudentAnswer>> by_set;
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        StudentAnswer row;
        row.id = j.at("id").get<long>();
        row.set_id = j.at("set_id").get<int>();
        row.score1 = j.at("score1").get<int>();
        row.score2 = j.at("score2").get<int>();
        row.text = utf8_to_bytes(j.at("text").get<std::string>());
        by_set[row.set_id].push_back(std::move(row));
    }
    return by_set;
}

NormalizedScore normalize_score(int raw, const PromptSet& set) {
    if (raw < set.score_min || raw > set.score_max) {
        throw RangeError("raw score " + std::to_string(raw) + " outside rubric range " +
                         std::to_string(set.score_min) + ".." + std::to_string(set.score_max) +
                         " for set " + std::to_string(set.set_id));
    }
    NormalizedScore out;
    out.raw = raw;
    out.normalized = static_cast<double>(raw - set.score_min) /
                     static_cast<double>(set.score_max - set.score_min);
    return out;
}

std::string build_generation_prompt(const PromptSet& set) {
    std::string out;
    out += "TASK:\n";
    out += set.task_prompt;
    out += "\n";
    if (set.source_text.has_value()) {
        out += "\nSOURCE:\n";
        out += *set.source_text;
        out += "\n";
    }
    out += "\nRUBRIC:\n";
    out += set.rubric;
    out += "\n";
    return out;
}

std::string make_answer_id(const std::string& model_id, const std::string& generator_config,
                           int set_id, int sample_index) {
    return model_id + "/" + generator_config + "/s" + std::to_string(set_id) + "/i" +
           std::to_string(sample_index);
}

std::string answer_to_json_line(const AnswerRecord& rec) {
    json j;
    j["v"] = 1;
    j["answer_id"] = rec.answer_id;
    j["set_id"] = rec.set_id;
    j["generator_config"] = rec.generator_config;
    j["model_id"] = rec.model_id;
    j["text"] = bytes_to_utf8(rec.text);
    j["sample_index"] = rec.sample_index;
    j["response_token_count"] = rec.response_token_count;
    return j.dump();
}

AnswerRecord answer_from_json_line(const std::string& line) {
    json j = json::parse(line);
    AnswerRecord rec;
    rec.answer_id = j.at("answer_id").get<std::string>();
    rec.set_id = j.at("set_id").get<int>();
    rec.generator_config = j.at("generator_config").get<std::string>();
    rec.model_id = j.at("model_id").get<std::string>();
    rec.text = utf8_to_bytes(j.at("text").get<std::string>());
    rec.sample_index = j.at("sample_index").get<int>();
    rec.response_token_count = j.value("response_token_count", 0);
    return rec;
}

void save_answers(const std::filesystem::path& path, const std::vector<AnswerRecord>& answers) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path.string());
    for (const auto& rec : answers) os << answer_to_json_line(rec) << "\n";
    if (!os) throw FormatError("write failed: " + path.string());
}

std::vector<AnswerRecord> load_answers(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open for read: " + path.string());
    std::vector<AnswerRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(answer_from_json_line(line));
    }
    return out;
}

}  // namespace svec
