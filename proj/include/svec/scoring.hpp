#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "svec/corpus.hpp"
#include "svec/extraction.hpp"
#include "svec/steering.hpp"

namespace svec {

enum class ScorerKind { external_judge, self_steered };
enum class RubricMode { quality_0_100_pair, rubric_range };

struct ScorerConfig {
    ScorerKind kind = ScorerKind::external_judge;
    SteeringConfig steering;    // self_steered only
    std::string judge_model;    // external only
    RubricMode rubric_mode = RubricMode::rubric_range;
};

struct Judgment {
    std::string answer_id;
    std::string scorer;  // ConfigurationId or judge model name
    int raw = 0;
    double normalized = 0.0;  // in [0,1] when scored
    int parse_attempts = 0;
    bool scored = false;
    std::string error;  // empty when scored
};

std::string judgment_to_json_line(const Judgment& j);
Judgment judgment_from_json_line(const std::string& line);
void save_judgments(const std::filesystem::path& path, const std::vector<Judgment>& judgments);
std::vector<Judgment> load_judgments(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Judge wire protocol: chat-completions style JSON POST.
// ---------------------------------------------------------------------------

struct ChatMessage {
    std::string role;
    std::string content;
};

struct JudgeRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
};

class JudgeTransport {
public:
    virtual ~JudgeTransport() = default;
    // Returns the assistant message text. Throws TransportError on failure;
    // the thrower marks retryable failures by message prefix "retryable:".
    virtual std::string post(const JudgeRequest& request) = 0;
};

// Real HTTP transport (http:// endpoints; request body {model, messages,
// temperature}, reply parsed from choices[0].message.content). The
// credential is sent as a bearer header and never logged.
class HttpJudgeTransport : public JudgeTransport {
public:
    HttpJudgeTransport(std::string endpoint, std::string credential, int timeout_ms = 10000);
    std::string post(const JudgeRequest& request) override;

private:
    std::string host_;
    int port_ = 80;
    std::string path_;
    std::string credential_;
    int timeout_ms_;
};

// Deterministic stand-in for proprietary judges: replies are derived from a
// hash of the request content. Quality prompts get an in-range "Score: N",
// filter prompts get "trait: T, coherence: C" with both in [50, 100].
class ScriptedJudgeTransport : public JudgeTransport {
public:
    explicit ScriptedJudgeTransport(uint64_t seed) : seed_(seed) {}
    std::string post(const JudgeRequest& request) override;

private:
    uint64_t seed_;
};

struct JudgeClientConfig {
    std::string endpoint;  // "http://host:port/path" or "scripted://<seed>"
    std::string judge_model = "external-judge";
    std::string credential_env = "JUDGE_API_KEY";
    int max_retries = 3;
    int backoff_base_ms = 100;
    int backoff_cap_ms = 2000;
    int timeout_ms = 10000;
    int max_in_flight = 4;     // concurrent requests on the wire
    int min_interval_ms = 0;   // rate budget between request starts
    double temperature = 0.0;
    std::filesystem::path cache_dir;  // empty disables the replay cache
};

// Retrying, replay-cached judge client. Thread safe; enforces the configured
// in-flight limit and rate budget; the replay cache is keyed by a content
// hash of the full request.
class JudgeClient {
public:
    JudgeClient(JudgeClientConfig config, std::unique_ptr<JudgeTransport> transport,
                std::ostream* log = nullptr);

    // Builds a transport from the config's endpoint scheme.
    static std::unique_ptr<JudgeClient> from_config(JudgeClientConfig config,
                                                    std::ostream* log = nullptr);

    std::string complete(const std::vector<ChatMessage>& messages);

    const JudgeClientConfig& config() const { return config_; }
    size_t network_calls() const;
    size_t peak_in_flight() const;

private:
    std::string transport_post(const JudgeRequest& request);

    JudgeClientConfig config_;
    std::unique_ptr<JudgeTransport> transport_;
    std::ostream* log_;
    mutable std::mutex mu_;
    std::condition_variable slot_available_;
    int in_flight_ = 0;
    size_t peak_in_flight_ = 0;
    size_t network_calls_ = 0;
    std::chrono::steady_clock::time_point last_start_{};
};

// ---------------------------------------------------------------------------
// Prompt construction and reply parsing.
// ---------------------------------------------------------------------------

// Scoring prompt: answer text + set rubric + required output format. With
// anchor_tail the prompt ends with the "Score:" anchor so a raw completion
// can be parsed as the score field (self-steered path).
std::string build_scoring_prompt(const AnswerRecord& answer, const PromptSet& set,
                                 bool anchor_tail = false);
std::string build_filter_prompt(const ContrastiveRecord& record, const TraitSpec& trait);

// First integer on a line matching the anchored "Score: <int>" pattern.
std::optional<int> parse_score_reply(const std::string& reply);
// "trait: T, coherence: C" (case-insensitive labels, any order).
std::optional<std::pair<int, int>> parse_filter_reply(const std::string& reply);

// Strict-format reprompt suffix appended after one parse failure.
extern const char* const kStrictScoreReprompt;
extern const char* const kStrictFilterReprompt;

// ---------------------------------------------------------------------------
// Scorers.
// ---------------------------------------------------------------------------

// External quality judge (rubric_range mode). Parse and range failures are
// recorded on the returned Judgment (scored=false); transport exhaustion
// throws TransportError.
Judgment score_with_external_judge(JudgeClient& client, const AnswerRecord& answer,
                                   const PromptSet& set);

// Contrastive-corpus filter judging: returns (trait_score, coherence_score)
// in [0,100]. Throws ParseError after the reprompt, TransportError on
// transport exhaustion.
std::pair<int, int> score_filter_pair(JudgeClient& client, const ContrastiveRecord& record,
                                      const TraitSpec& trait);

// Scores every record in place (trait_score/coherence_score).
void score_corpus(JudgeClient& client, std::vector<ContrastiveRecord>& records,
                  const TraitSpec& trait);

// Persona-vector lookup over a directory of .svpv files, keyed by
// (trait, layer, backbone_id). Thread safe, lazy loading.
class VectorStore {
public:
    explicit VectorStore(std::filesystem::path dir);
    const PersonaVector& get(const std::string& trait, int layer,
                             const std::string& backbone_id) const;

private:
    std::filesystem::path dir_;
    mutable std::mutex mu_;
    mutable std::map<std::string, PersonaVector> cache_;
};

// Self-steered scorer: grades an answer with the configured intervention at
// temperature 0. Parse failures after the documented reprompt are recorded
// on the Judgment (scored=false). A missing persona vector throws.
Judgment score_with_self_steered(const Backbone& backbone, const VectorStore& vectors,
                                 const ScorerConfig& config, const AnswerRecord& answer,
                                 const PromptSet& set);

}  // namespace svec
