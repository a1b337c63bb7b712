#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace svec {

enum class TaskDomain { science, ela };

const char* task_domain_name(TaskDomain d);
TaskDomain task_domain_from_name(std::string_view name);

struct PromptSet {
    int set_id = 0;  // 1..10
    TaskDomain domain = TaskDomain::science;
    int score_min = 0;
    int score_max = 3;  // 2 or 3
    std::string task_prompt;
    std::optional<std::string> source_text;
    std::string rubric;
    std::string topic_label;

    void validate() const;
};

// The ten short-answer prompt sets. The set -> domain/topic/range table is a
// reconstruction from the benchmark's documentation; it ships as a built-in
// static table and can be replaced from JSON.
class PromptSetTable {
public:
    static PromptSetTable builtin();
    static PromptSetTable from_json(const std::filesystem::path& path);

    const PromptSet& get(int set_id) const;
    const std::vector<PromptSet>& sets() const { return sets_; }

private:
    explicit PromptSetTable(std::vector<PromptSet> sets);
    std::vector<PromptSet> sets_;
};

struct StudentAnswer {
    long id = 0;
    int set_id = 0;
    int score1 = 0;  // reference human score
    int score2 = 0;  // second rater, retained for diagnostics
    std::string text;
};

// Parses the benchmark TSV (columns Id, EssaySet, Score1, Score2, EssayText)
// and groups rows by set. Malformed rows are fatal unless lenient, in which
// case they are reported to diag with their line numbers and skipped.
std::map<int, std::vector<StudentAnswer>> load_asap(const std::filesystem::path& path,
                                                    const PromptSetTable& table,
                                                    bool lenient = false,
                                                    std::ostream* diag = nullptr);

// Canonical line-delimited corpus persistence (lossless for retained fields).
void save_student_answers(const std::filesystem::path& path,
                          const std::map<int, std::vector<StudentAnswer>>& by_set);
std::map<int, std::vector<StudentAnswer>> load_student_answers(
    const std::filesystem::path& path);

struct NormalizedScore {
    int raw = 0;
    double normalized = 0.0;
};

// Linear map onto [0,1] using the set's rubric range; out-of-range raw
// scores are rejected, not clamped.
NormalizedScore normalize_score(int raw, const PromptSet& set);

// Deterministic concatenation: task prompt, source text when present, then
// rubric, under fixed ASCII section headers.
std::string build_generation_prompt(const PromptSet& set);

// One generated answer in the evaluation pool.
struct AnswerRecord {
    std::string answer_id;
    int set_id = 0;
    std::string generator_config;  // ConfigurationId, verbatim
    std::string model_id;
    std::string text;
    int sample_index = 0;
    int response_token_count = 0;
};

std::string make_answer_id(const std::string& model_id, const std::string& generator_config,
                           int set_id, int sample_index);

std::string answer_to_json_line(const AnswerRecord& rec);
AnswerRecord answer_from_json_line(const std::string& line);

void save_answers(const std::filesystem::path& path, const std::vector<AnswerRecord>& answers);
std::vector<AnswerRecord> load_answers(const std::filesystem::path& path);

}  // namespace svec
