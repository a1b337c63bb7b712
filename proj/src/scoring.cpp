#include "svec/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "svec/util.hpp"

namespace svec {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Judgment persistence
// ---------------------------------------------------------------------------

std::string judgment_to_json_line(const Judgment& j) {
    json out;
    out["v"] = 1;
    out["answer_id"] = j.answer_id;
    out["scorer"] = j.scorer;
    out["raw"] = j.raw;
    out["normalized"] = j.normalized;
    out["parse_attempts"] = j.parse_attempts;
    out["scored"] = j.scored;
    out["error"] = j.error;
    return out.dump();
}

Judgment judgment_from_json_line(const std::string& line) {
    json in = json::parse(line);
    Judgment j;
    j.answer_id = in.at("answer_id").get<std::string>();
    j.scorer = in.at("scorer").get<std::string>();
    j.raw = in.at("raw").get<int>();
    j.normalized = in.at("normalized").get<double>();
    j.parse_attempts = in.at("parse_attempts").get<int>();
    j.scored = in.at("scored").get<bool>();
    j.error = in.at("error").get<std::string>();
    return j;
}

void save_judgments(const std::filesystem::path& path, const std::vector<Judgment>& judgments) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path.string());
    for (const auto& j : judgments) os << judgment_to_json_line(j) << "\n";
    if (!os) throw FormatError("write failed: " + path.string());
}

std::vector<Judgment> load_judgments(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open for read: " + path.string());
    std::vector<Judgment> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(judgment_from_json_line(line));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Transports
// ---------------------------------------------------------------------------

namespace {

json request_to_json(const JudgeRequest& request) {
    json body;
    body["model"] = request.model;
    body["temperature"] = request.temperature;
    body["messages"] = json::array();
    for (const auto& m : request.messages) {
        body["messages"].push_back({{"role", m.role}, {"content", ensure_utf8(m.content)}});
    }
    return body;
}

}  // namespace

HttpJudgeTransport::HttpJudgeTransport(std::string endpoint, std::string credential,
                                       int timeout_ms)
    : credential_(std::move(credential)), timeout_ms_(timeout_ms) {
    const std::string scheme = "http://";
    if (endpoint.rfind(scheme, 0) != 0) {
        throw ValidationError("judge endpoint must be http:// (got '" + endpoint +
                              "'); https is not supported by this build");
    }
    std::string rest = endpoint.substr(scheme.size());
    const size_t slash = rest.find('/');
    std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
    const size_t colon = hostport.find(':');
    if (colon == std::string::npos) {
        host_ = hostport;
        port_ = 80;
    } else {
        host_ = hostport.substr(0, colon);
        port_ = std::atoi(hostport.c_str() + colon + 1);
    }
    if (host_.empty() || port_ <= 0 || port_ > 65535) {
        throw ValidationError("invalid judge endpoint: " + endpoint);
    }
}

std::string HttpJudgeTransport::post(const JudgeRequest& request) {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    httplib::Headers headers;
    if (!credential_.empty()) {
        headers.emplace("Authorization", "Bearer " + credential_);
    }
    const std::string body = request_to_json(request).dump();
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
        throw TransportError("retryable: connection to " + host_ + ":" + std::to_string(port_) +
                             " failed (" + httplib::to_string(res.error()) + ")");
    }
    if (res->status == 429 || res->status >= 500) {
        throw TransportError("retryable: judge returned HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
        throw TransportError("judge returned HTTP " + std::to_string(res->status));
    }
    try {
        json reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError(std::string("malformed judge reply: ") + e.what());
    }
}

namespace {

// Pulls "between <min> and <max>" out of a scoring prompt.
std::pair<int, int> parse_requested_range(const std::string& text) {
    const std::string needle = "between ";
    const size_t pos = text.rfind(needle);
    if (pos == std::string::npos) return {0, 2};
    const char* p = text.c_str() + pos + needle.size();
    char* end = nullptr;
    const long lo = std::strtol(p, &end, 10);
    if (end == p) return {0, 2};
    const std::string and_word = " and ";
    if (std::string(end).rfind(and_word, 0) != 0) return {0, 2};
    const char* q = end + and_word.size();
    const long hi = std::strtol(q, &end, 10);
    if (end == q || hi < lo) return {0, 2};
    return {static_cast<int>(lo), static_cast<int>(hi)};
}

}  // namespace

std::string ScriptedJudgeTransport::post(const JudgeRequest& request) {
    std::string content;
    for (const auto& m : request.messages) {
        if (m.role == "user") content = m.content;  // last user message drives the reply
    }
    uint64_t h = derive_seed(seed_, request.model);
    h = mix64(fnv1a(content, h));
    if (content.find("coherence") != std::string::npos) {
        const int trait_score = 50 + static_cast<int>(h % 51);
        const int coherence = 50 + static_cast<int>((h >> 8) % 51);
        return "trait: " + std::to_string(trait_score) +
               ", coherence: " + std::to_string(coherence);
    }
    const auto [lo, hi] = parse_requested_range(content);
    const int score = lo + static_cast<int>(h % static_cast<uint64_t>(hi - lo + 1));
    return "Score: " + std::to_string(score);
}

// ---------------------------------------------------------------------------
// JudgeClient
// ---------------------------------------------------------------------------

JudgeClient::JudgeClient(JudgeClientConfig config, std::unique_ptr<JudgeTransport> transport,
                         std::ostream* log)
    : config_(std::move(config)), transport_(std::move(transport)), log_(log) {
    if (!transport_) throw ValidationError("judge client: null transport");
}

std::unique_ptr<JudgeClient> JudgeClient::from_config(JudgeClientConfig config,
                                                      std::ostream* log) {
    const std::string scripted_scheme = "scripted://";
    std::unique_ptr<JudgeTransport> transport;
    if (config.endpoint.rfind(scripted_scheme, 0) == 0) {
        const std::string seed_str = config.endpoint.substr(scripted_scheme.size());
        uint64_t seed = 0;
        if (!seed_str.empty()) seed = std::strtoull(seed_str.c_str(), nullptr, 10);
        transport = std::make_unique<ScriptedJudgeTransport>(seed);
    } else {
        const char* cred = std::getenv(config.credential_env.c_str());
        transport = std::make_unique<HttpJudgeTransport>(
            config.endpoint, cred ? std::string(cred) : std::string(), config.timeout_ms);
    }
    return std::make_unique<JudgeClient>(std::move(config), std::move(transport), log);
}

size_t JudgeClient::network_calls() const {
    std::lock_guard<std::mutex> lk(mu_);
    return network_calls_;
}

size_t JudgeClient::peak_in_flight() const {
    std::lock_guard<std::mutex> lk(mu_);
    return peak_in_flight_;
}

// Acquires an in-flight slot, honors the rate budget, posts, releases.
std::string JudgeClient::transport_post(const JudgeRequest& request) {
    {
        std::unique_lock<std::mutex> lk(mu_);
        for (;;) {
            slot_available_.wait(lk, [this] { return in_flight_ < config_.max_in_flight; });
            if (config_.min_interval_ms <= 0) break;
            const auto next_allowed =
                last_start_ + std::chrono::milliseconds(config_.min_interval_ms);
            if (std::chrono::steady_clock::now() >= next_allowed) break;
            lk.unlock();
            std::this_thread::sleep_until(next_allowed);
            lk.lock();
        }
        last_start_ = std::chrono::steady_clock::now();
        ++in_flight_;
        peak_in_flight_ = std::max(peak_in_flight_, static_cast<size_t>(in_flight_));
        ++network_calls_;
    }
    try {
        std::string reply = transport_->post(request);
        {
            std::lock_guard<std::mutex> lk(mu_);
            --in_flight_;
        }
        slot_available_.notify_one();
        return reply;
    } catch (...) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            --in_flight_;
        }
        slot_available_.notify_one();
        throw;
    }
}

std::string JudgeClient::complete(const std::vector<ChatMessage>& messages) {
    JudgeRequest request;
    request.model = config_.judge_model;
    request.messages = messages;
    request.temperature = config_.temperature;
    const std::string request_dump = request_to_json(request).dump();
    const std::string key = hex16(fnv1a(request_dump));

    std::filesystem::path cache_file;
    if (!config_.cache_dir.empty()) {
        cache_file = config_.cache_dir / key.substr(0, 2) / (key + ".json");
        std::ifstream is(cache_file);
        if (is) {
            json cached = json::parse(is);
            if (log_) *log_ << "[judge] cache hit " << key << "\n";
            return cached.at("reply").get<std::string>();
        }
    }

    std::string reply;
    const int attempts_allowed = 1 + std::max(0, config_.max_retries);
    for (int attempt = 1;; ++attempt) {
        try {
            if (log_) {
                *log_ << "[judge] POST model=" << config_.judge_model
                      << " messages=" << messages.size() << " attempt=" << attempt << "\n";
            }
            reply = transport_post(request);
            break;
        } catch (const TransportError& e) {
            const bool retryable = std::string_view(e.what()).substr(0, 10) == "retryable:";
            if (!retryable || attempt >= attempts_allowed) {
                throw TransportError("judge transport exhausted after " +
                                     std::to_string(attempt) + " attempt(s): " + e.what());
            }
            const int shift = std::min(attempt - 1, 16);
            const int delay =
                std::min(config_.backoff_base_ms * (1 << shift), config_.backoff_cap_ms);
            if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }
    }

    if (!cache_file.empty()) {
        std::filesystem::create_directories(cache_file.parent_path());
        json entry;
        entry["request_hash"] = key;
        entry["request"] = json::parse(request_dump);
        entry["reply"] = reply;
        // unique tmp name so concurrent writers of the same entry never
        // interleave; the rename is atomic either way
        static std::atomic<uint64_t> tmp_counter{0};
        const std::filesystem::path tmp =
            cache_file.string() + ".tmp" + std::to_string(tmp_counter.fetch_add(1));
        {
            std::ofstream os(tmp);
            os << entry.dump(2) << "\n";
        }
        std::filesystem::rename(tmp, cache_file);
    }
    return reply;
}

// ---------------------------------------------------------------------------
// Prompts and parsing
// ---------------------------------------------------------------------------

const char* const kStrictScoreReprompt =
    "Your previous reply could not be parsed. Reply with exactly one line of the form "
    "\"Score: N\" and nothing else.";
const char* const kStrictFilterReprompt =
    "Your previous reply could not be parsed. Reply with exactly one line of the form "
    "\"trait: T, coherence: C\" where T and C are integers between 0 and 100, and nothing else.";

std::string build_scoring_prompt(const AnswerRecord& answer, const PromptSet& set,
                                 bool anchor_tail) {
    std::string out;
    out += "You are grading one student answer against the rubric below.\n\n";
    out += "TASK:\n" + set.task_prompt + "\n\n";
    out += "RUBRIC:\n" + set.rubric + "\n\n";
    out += "ANSWER:\n" + answer.text + "\n\n";
    out += "Reply with exactly one line of the form \"Score: N\" where N is an integer between " +
           std::to_string(set.score_min) + " and " + std::to_string(set.score_max) + ".\n";
    if (anchor_tail) out += "Score:";
    return out;
}

std::string build_filter_prompt(const ContrastiveRecord& record, const TraitSpec& trait) {
    // For negative-direction records, adherence is judged against the
    // opposite trait (what the instruction actually asked for).
    const std::string& judged =
        record.direction == Direction::positive ? trait.name : trait.opposite;
    std::string out;
    out += "You are auditing a model response for persona adherence and coherence.\n\n";
    out += "PROMPT:\n" + record.prompt_text() + "\n\n";
    out += "RESPONSE:\n" + record.response_text() + "\n\n";
    out += "Rate how strongly the response exhibits the persona \"" + judged +
           "\" (trait) and how coherent it is (coherence), each as an integer between 0 and "
           "100.\n";
    out += "Reply with exactly one line of the form \"trait: T, coherence: C\".\n";
    return out;
}

std::optional<int> parse_score_reply(const std::string& reply) {
    size_t line_start = 0;
    while (line_start <= reply.size()) {
        size_t line_end = reply.find('\n', line_start);
        if (line_end == std::string::npos) line_end = reply.size();
        size_t p = line_start;
        while (p < line_end && (reply[p] == ' ' || reply[p] == '\t')) ++p;
        const std::string anchor = "Score:";
        if (line_end - p >= anchor.size() && reply.compare(p, anchor.size(), anchor) == 0) {
            p += anchor.size();
            while (p < line_end && (reply[p] == ' ' || reply[p] == '\t')) ++p;
            size_t q = p;
            while (q < line_end && reply[q] >= '0' && reply[q] <= '9') ++q;
            if (q > p && q - p <= 9) {
                return std::stoi(reply.substr(p, q - p));
            }
        }
        if (line_end == reply.size()) break;
        line_start = line_end + 1;
    }
    return std::nullopt;
}

namespace {

std::optional<int> int_after_label(const std::string& s, const std::string& label) {
    auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
    for (size_t i = 0; i + label.size() <= s.size(); ++i) {
        bool match = true;
        for (size_t k = 0; k < label.size(); ++k) {
            if (lower(s[i + k]) != lower(label[k])) {
                match = false;
                break;
            }
        }
        if (!match) continue;
        size_t p = i + label.size();
        while (p < s.size() && (s[p] == ' ' || s[p] == '\t')) ++p;
        if (p >= s.size() || s[p] != ':') continue;
        ++p;
        while (p < s.size() && (s[p] == ' ' || s[p] == '\t')) ++p;
        size_t q = p;
        while (q < s.size() && s[q] >= '0' && s[q] <= '9') ++q;
        if (q > p && q - p <= 9) return std::stoi(s.substr(p, q - p));
    }
    return std::nullopt;
}

}  // namespace

std::optional<std::pair<int, int>> parse_filter_reply(const std::string& reply) {
    const std::optional<int> trait_score = int_after_label(reply, "trait");
    const std::optional<int> coherence = int_after_label(reply, "coherence");
    if (!trait_score || !coherence) return std::nullopt;
    if (*trait_score < 0 || *trait_score > 100 || *coherence < 0 || *coherence > 100) {
        return std::nullopt;
    }
    return std::make_pair(*trait_score, *coherence);
}

// ---------------------------------------------------------------------------
// Scorers
// ---------------------------------------------------------------------------

Judgment score_with_external_judge(JudgeClient& client, const AnswerRecord& answer,
                                   const PromptSet& set) {
    Judgment j;
    j.answer_id = answer.answer_id;
    j.scorer = client.config().judge_model;

    std::vector<ChatMessage> messages{{"user", build_scoring_prompt(answer, set)}};
    std::optional<int> raw;
    for (int attempt = 1; attempt <= 2; ++attempt) {
        const std::string reply = client.complete(messages);
        j.parse_attempts = attempt;
        raw = parse_score_reply(reply);
        if (raw) break;
        messages.push_back({"assistant", reply});
        messages.push_back({"user", kStrictScoreReprompt});
    }
    if (!raw) {
        j.scored = false;
        j.error = "unparseable judge reply after reprompt";
        return j;
    }
    j.raw = *raw;
    try {
        j.normalized = normalize_score(*raw, set).normalized;
    } catch (const RangeError& e) {
        j.scored = false;
        j.error = e.what();
        return j;
    }
    j.scored = true;
    return j;
}

std::pair<int, int> score_filter_pair(JudgeClient& client, const ContrastiveRecord& record,
                                      const TraitSpec& trait) {
    std::vector<ChatMessage> messages{{"user", build_filter_prompt(record, trait)}};
    for (int attempt = 1; attempt <= 2; ++attempt) {
        const std::string reply = client.complete(messages);
        const auto parsed = parse_filter_reply(reply);
        if (parsed) return *parsed;
        messages.push_back({"assistant", reply});
        messages.push_back({"user", kStrictFilterReprompt});
    }
    throw ParseError("unparseable filter reply after reprompt (trait=" + record.trait +
                     " direction=" + direction_name(record.direction) +
                     " i=" + std::to_string(record.instruction_index) +
                     " q=" + std::to_string(record.question_index) + ")");
}

void score_corpus(JudgeClient& client, std::vector<ContrastiveRecord>& records,
                  const TraitSpec& trait) {
    for (auto& rec : records) {
        const auto [trait_score, coherence] = score_filter_pair(client, rec, trait);
        rec.trait_score = trait_score;
        rec.coherence_score = coherence;
    }
}

// ---------------------------------------------------------------------------
// VectorStore and the self-steered scorer
// ---------------------------------------------------------------------------

VectorStore::VectorStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

const PersonaVector& VectorStore::get(const std::string& trait, int layer,
                                      const std::string& backbone_id) const {
    const std::string key = trait + "|" + std::to_string(layer) + "|" + backbone_id;
    std::lock_guard<std::mutex> lk(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    if (std::filesystem::is_directory(dir_)) {
        for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
            if (entry.path().extension() != ".svpv") continue;
            PersonaVector v = load_vector(entry.path());
            const std::string vkey =
                v.trait + "|" + std::to_string(v.layer) + "|" + v.backbone_id;
            cache_.emplace(vkey, std::move(v));
        }
    }
    it = cache_.find(key);
    if (it == cache_.end()) {
        throw ConfigMismatchError("no persona vector for trait=" + trait + " layer=" +
                                  std::to_string(layer) + " backbone=" + backbone_id + " in " +
                                  dir_.string());
    }
    return it->second;
}

Judgment score_with_self_steered(const Backbone& backbone, const VectorStore& vectors,
                                 const ScorerConfig& config, const AnswerRecord& answer,
                                 const PromptSet& set) {
    if (config.kind != ScorerKind::self_steered) {
        throw ValidationError("score_with_self_steered: scorer kind is not self_steered");
    }
    Judgment j;
    j.answer_id = answer.answer_id;
    j.scorer = configuration_id(config.steering);

    std::vector<InterventionHandle> handles;
    if (config.steering.direction != SteerDirection::unsteered) {
        const PersonaVector& v = vectors.get(config.steering.trait, config.steering.layer,
                                             backbone.descriptor().model_id);
        handles.push_back(make_intervention(v, config.steering, backbone.descriptor().model_id));
    }

    const std::string base_prompt = build_scoring_prompt(answer, set, /*anchor_tail=*/true);
    std::optional<int> raw;
    for (int attempt = 1; attempt <= 2; ++attempt) {
        std::string prompt_text = base_prompt;
        if (attempt == 2) {
            // Re-anchor so the completion stays the score field.
            prompt_text.resize(prompt_text.size() - 6);  // drop trailing "Score:"
            prompt_text += std::string(kStrictScoreReprompt) + "\nScore:";
        }
        GenerationConfig gen;
        gen.max_new_tokens = 12;
        gen.temperature = 0.0;
        gen.seed = 0;
        gen.suppress_tokens = {tok::kBos, tok::kSep};
        const TokenSequence seq = make_prompt_sequence(prompt_text);
        const TokenSequence full = backbone.generate(seq, gen, handles);
        std::span<const TokenId> resp(full.tokens.data() + full.spans.response_begin,
                                      full.spans.response_end - full.spans.response_begin);
        const std::string completion = tok::decode_bytes(resp);
        j.parse_attempts = attempt;
        raw = parse_score_reply("Score:" + completion);
        if (raw) break;
    }
    if (!raw) {
        j.scored = false;
        j.error = "unparseable self-steered reply after reprompt";
        return j;
    }
    j.raw = *raw;
    try {
        j.normalized = normalize_score(*raw, set).normalized;
    } catch (const RangeError& e) {
        j.scored = false;
        j.error = e.what();
        return j;
    }
    j.scored = true;
    return j;
}

}  // namespace svec
