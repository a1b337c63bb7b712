#include "svec/extraction.hpp"

#include <algorithm>
#include <cstring>
#include <ctime>
#include <fstream>

#include <nlohmann/json.hpp>

#include "svec/binio.hpp"
#include "svec/util.hpp"

namespace svec {

using nlohmann::json;

namespace {
constexpr char kVectorMagic[8] = {'S', 'V', 'E', 'C', '-', 'P', 'V', '\0'};
constexpr uint32_t kVectorVersion = 1;
constexpr int kInstructionVariants = 5;

std::string iso_utc_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}
}  // namespace

void TraitSpec::validate() const {
    if (name.empty() || opposite.empty()) {
        throw ValidationError("trait spec: name and opposite must be non-empty");
    }
    if (name == opposite) {
        throw ValidationError("trait spec '" + name + "': name equals opposite");
    }
    // names appear in configuration ids, work-item keys and file names
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '-';
        if (!ok) {
            throw ValidationError("trait spec '" + name +
                                  "': names are limited to letters, digits and '-'");
        }
    }
    if (positive_instructions.size() != kInstructionVariants ||
        negative_instructions.size() != kInstructionVariants) {
        throw ValidationError("trait spec '" + name + "': exactly " +
                              std::to_string(kInstructionVariants) +
                              " instructions required per direction");
    }
    if (elicit_questions.empty()) {
        throw ValidationError("trait spec '" + name + "': at least one elicit question required");
    }
}

std::vector<TraitSpec> load_traits_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open traits file: " + path.string());
    json doc = json::parse(is, nullptr, true, true);
    std::vector<TraitSpec> out;
    for (const auto& item : doc.at("traits")) {
        TraitSpec t;
        t.name = item.at("name").get<std::string>();
        t.opposite = item.at("opposite").get<std::string>();
        t.positive_instructions = item.at("positive_instructions").get<std::vector<std::string>>();
        t.negative_instructions = item.at("negative_instructions").get<std::vector<std::string>>();
        t.elicit_questions = item.at("elicit_questions").get<std::vector<std::string>>();
        t.validate();
        out.push_back(std::move(t));
    }
    if (out.empty()) throw ValidationError("traits file contains no traits");
    return out;
}

std::string ContrastiveRecord::prompt_text() const {
    std::span<const TokenId> s(sequence.tokens.data() + sequence.spans.prompt_begin,
                               sequence.spans.prompt_end - sequence.spans.prompt_begin);
    return tok::decode_bytes(s);
}

std::string ContrastiveRecord::response_text() const {
    std::span<const TokenId> s(sequence.tokens.data() + sequence.spans.response_begin,
                               sequence.spans.response_end - sequence.spans.response_begin);
    return tok::decode_bytes(s);
}

const char* pooling_mode_name(PoolingMode m) {
    switch (m) {
        case PoolingMode::prompt_average: return "prompt_average";
        case PoolingMode::response_average: return "response_average";
        case PoolingMode::prompt_last: return "prompt_last";
    }
    return "response_average";
}

PoolingMode pooling_mode_from_name(std::string_view name) {
    if (name == "prompt_average") return PoolingMode::prompt_average;
    if (name == "response_average") return PoolingMode::response_average;
    if (name == "prompt_last") return PoolingMode::prompt_last;
    throw ValidationError("unknown pooling mode: " + std::string(name));
}

std::vector<ContrastiveRecord> build_contrastive_corpus(const Backbone& backbone,
                                                        const TraitSpec& trait,
                                                        const CorpusGenConfig& config) {
    trait.validate();
    std::vector<ContrastiveRecord> out;
    out.reserve(2 * kInstructionVariants * trait.elicit_questions.size());
    for (Direction dir : {Direction::positive, Direction::negative}) {
        const auto& instructions = dir == Direction::positive ? trait.positive_instructions
                                                              : trait.negative_instructions;
        for (int ii = 0; ii < kInstructionVariants; ++ii) {
            for (size_t qi = 0; qi < trait.elicit_questions.size(); ++qi) {
                const std::string key = "corpus/" + trait.name + "/" + direction_name(dir) +
                                        "/i" + std::to_string(ii) + "/q" + std::to_string(qi);
                GenerationConfig gen;
                gen.max_new_tokens = config.max_new_tokens;
                gen.temperature = config.temperature;
                gen.seed = derive_seed(config.seed, key);
                gen.suppress_tokens = {tok::kBos, tok::kSep};
                if (!config.allow_eos) gen.suppress_tokens.push_back(tok::kEos);

                ContrastiveRecord rec;
                rec.trait = trait.name;
                rec.direction = dir;
                rec.instruction_index = ii;
                rec.question_index = static_cast<int>(qi);
                const TokenSequence prompt = make_prompt_sequence(
                    instructions[static_cast<size_t>(ii)], trait.elicit_questions[qi]);
                try {
                    rec.sequence = backbone.generate(prompt, gen, {});
                } catch (const Error& e) {
                    throw Error("corpus generation failed at " + key + ": " + e.what());
                }
                out.push_back(std::move(rec));
            }
        }
    }
    return out;
}

std::vector<ContrastiveRecord> filter_corpus(const std::vector<ContrastiveRecord>& records,
                                             int threshold) {
    std::vector<ContrastiveRecord> kept;
    for (const auto& rec : records) {
        if (!rec.trait_score.has_value() || !rec.coherence_score.has_value()) {
            throw UnscoredRecordError("filter_corpus: unscored record (trait=" + rec.trait +
                                      " direction=" + direction_name(rec.direction) +
                                      " i=" + std::to_string(rec.instruction_index) +
                                      " q=" + std::to_string(rec.question_index) + ")");
        }
        if (*rec.trait_score >= threshold && *rec.coherence_score >= threshold) {
            kept.push_back(rec);
            kept.back().kept = true;
        }
    }
    return kept;
}

std::vector<float> pool_activations(const ActivationTrace& trace, const TokenSequence& seq,
                                    PoolingMode mode) {
    if (trace.n_positions != seq.size()) {
        throw DimensionMismatchError("pooling: trace has " + std::to_string(trace.n_positions) +
                                     " positions, sequence has " + std::to_string(seq.size()));
    }
    size_t begin = 0;
    size_t end = 0;
    if (mode == PoolingMode::response_average) {
        begin = seq.spans.response_begin;
        end = seq.spans.response_end;
    } else {
        begin = seq.spans.prompt_begin;
        end = seq.spans.prompt_end;
    }
    std::vector<size_t> positions;
    for (size_t p = begin; p < end; ++p) {
        if (!seq.special[p]) positions.push_back(p);
    }
    if (positions.empty()) {
        throw EmptySpanError(std::string("pooling: no poolable positions for mode ") +
                             pooling_mode_name(mode));
    }
    if (mode == PoolingMode::prompt_last) {
        auto row = trace.at(positions.back());
        return {row.begin(), row.end()};
    }
    KahanAccumulator acc(trace.dim);
    for (size_t p : positions) acc.add(trace.at(p));
    const std::vector<double> mean = acc.mean();
    std::vector<float> out(mean.size());
    for (size_t i = 0; i < mean.size(); ++i) out[i] = static_cast<float>(mean[i]);
    return out;
}

PersonaVector extract_vector(const std::vector<std::vector<float>>& positives,
                             const std::vector<std::vector<float>>& negatives,
                             const std::string& trait, int layer, PoolingMode mode,
                             const std::string& backbone_id) {
    if (positives.empty()) throw EmptyInputError("extract_vector: empty positive set");
    if (negatives.empty()) throw EmptyInputError("extract_vector: empty negative set");
    const size_t dim = positives.front().size();
    KahanAccumulator pos_acc(dim);
    for (const auto& v : positives) {
        if (v.size() != dim) throw DimensionMismatchError("extract_vector: ragged positive set");
        pos_acc.add(v);
    }
    KahanAccumulator neg_acc(dim);
    for (const auto& v : negatives) {
        if (v.size() != dim) throw DimensionMismatchError("extract_vector: ragged negative set");
        neg_acc.add(v);
    }
    const std::vector<double> mean_pos = pos_acc.mean();
    const std::vector<double> mean_neg = neg_acc.mean();

    PersonaVector out;
    out.trait = trait;
    out.layer = layer;
    out.pooling = mode;
    out.n_positive = static_cast<int>(positives.size());
    out.n_negative = static_cast<int>(negatives.size());
    out.backbone_id = backbone_id;
    out.components.resize(dim);
    for (size_t i = 0; i < dim; ++i) {
        out.components[i] = static_cast<float>(mean_pos[i] - mean_neg[i]);
    }
    if (!all_finite(out.components)) {
        throw ValidationError("extract_vector: non-finite components");
    }
    return out;
}

std::map<int, PersonaVector> extract_from_records(const Backbone& backbone,
                                                  const std::vector<ContrastiveRecord>& kept,
                                                  const std::set<int>& layers, PoolingMode mode) {
    if (kept.empty()) throw EmptyInputError("extract_from_records: no kept records");
    const std::string trait = kept.front().trait;
    for (const auto& rec : kept) {
        if (rec.trait != trait) {
            throw ValidationError("extract_from_records: mixed traits in corpus");
        }
    }
    // Pooled vectors accumulate per layer per direction, in record order.
    const size_t dim = static_cast<size_t>(backbone.descriptor().hidden_dim);
    std::map<int, std::pair<KahanAccumulator, KahanAccumulator>> acc;
    for (int l : layers) {
        acc.emplace(l, std::make_pair(KahanAccumulator(dim), KahanAccumulator(dim)));
    }
    for (const auto& rec : kept) {
        const ForwardResult fr = backbone.forward_with_taps(rec.sequence, layers, {});
        for (const auto& trace : fr.traces) {
            const std::vector<float> pooled = pool_activations(trace, rec.sequence, mode);
            auto& [pos_acc, neg_acc] = acc.at(trace.layer);
            if (rec.direction == Direction::positive) {
                pos_acc.add(pooled);
            } else {
                neg_acc.add(pooled);
            }
        }
    }
    std::map<int, PersonaVector> out;
    for (auto& [layer, accs] : acc) {
        auto& [pos_acc, neg_acc] = accs;
        if (pos_acc.count() == 0) throw EmptyInputError("extract_from_records: no positive records");
        if (neg_acc.count() == 0) throw EmptyInputError("extract_from_records: no negative records");
        const std::vector<double> mean_pos = pos_acc.mean();
        const std::vector<double> mean_neg = neg_acc.mean();
        PersonaVector v;
        v.trait = trait;
        v.layer = layer;
        v.pooling = mode;
        v.n_positive = static_cast<int>(pos_acc.count());
        v.n_negative = static_cast<int>(neg_acc.count());
        v.backbone_id = backbone.descriptor().model_id;
        v.components.resize(dim);
        for (size_t i = 0; i < dim; ++i) {
            v.components[i] = static_cast<float>(mean_pos[i] - mean_neg[i]);
        }
        out.emplace(layer, std::move(v));
    }
    return out;
}

void save_vector(const std::filesystem::path& path, const PersonaVector& v,
                 const std::string& timestamp) {
    {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw FormatError("cannot open for write: " + path.string());
        binio::Writer w(os);
        w.bytes(kVectorMagic, 8);
        w.u32(kVectorVersion);
        w.u32(static_cast<uint32_t>(v.layer));
        w.u32(static_cast<uint32_t>(v.components.size()));
        w.f32_block(v.components);
        w.finish();
        if (!os) throw FormatError("write failed: " + path.string());
    }
    json meta;
    meta["schema_version"] = 1;
    meta["trait"] = v.trait;
    meta["layer"] = v.layer;
    meta["pooling"] = pooling_mode_name(v.pooling);
    meta["n_positive"] = v.n_positive;
    meta["n_negative"] = v.n_negative;
    meta["backbone_id"] = v.backbone_id;
    meta["extracted_at"] = timestamp.empty() ? iso_utc_now() : timestamp;
    std::ofstream ms(path.string() + ".meta.json");
    if (!ms) throw FormatError("cannot write sidecar for: " + path.string());
    ms << meta.dump(2) << "\n";
}

PersonaVector load_vector(const std::filesystem::path& path) {
    PersonaVector v;
    {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw FormatError("cannot open for read: " + path.string());
        binio::Reader r(is);
        char magic[8];
        r.bytes(magic, 8);
        if (std::memcmp(magic, kVectorMagic, 8) != 0) {
            throw FormatError("not a SVEC-PV vector file: " + path.string());
        }
        const uint32_t version = r.u32();
        if (version != kVectorVersion) {
            throw VersionMismatchError("vector version " + std::to_string(version) +
                                       ", expected " + std::to_string(kVectorVersion));
        }
        v.layer = static_cast<int>(r.u32());
        const uint32_t dim = r.u32();
        if (dim == 0 || dim > (1u << 24)) {
            throw FormatError("implausible vector dimension in " + path.string());
        }
        v.components.resize(dim);
        r.f32_block(v.components);
        r.finish();
    }
    const std::filesystem::path meta_path = path.string() + ".meta.json";
    std::ifstream ms(meta_path);
    if (!ms) throw FormatError("missing metadata sidecar: " + meta_path.string());
    json meta = json::parse(ms);
    v.trait = meta.at("trait").get<std::string>();
    v.pooling = pooling_mode_from_name(meta.at("pooling").get<std::string>());
    v.n_positive = meta.at("n_positive").get<int>();
    v.n_negative = meta.at("n_negative").get<int>();
    v.backbone_id = meta.at("backbone_id").get<std::string>();
    const int meta_layer = meta.at("layer").get<int>();
    if (meta_layer != v.layer) {
        throw FormatError("vector/sidecar layer mismatch for " + path.string());
    }
    if (v.n_positive < 1 || v.n_negative < 1) {
        throw FormatError("vector sidecar has empty corpus counts: " + path.string());
    }
    if (!all_finite(v.components)) {
        throw FormatError("vector has non-finite components: " + path.string());
    }
    return v;
}

namespace {

json sequence_to_json(const TokenSequence& seq) {
    json j;
    std::vector<TokenId> prompt_tokens(seq.tokens.begin() + static_cast<long>(seq.spans.prompt_begin),
                                       seq.tokens.begin() + static_cast<long>(seq.spans.prompt_end));
    std::vector<TokenId> response_tokens(
        seq.tokens.begin() + static_cast<long>(seq.spans.response_begin),
        seq.tokens.begin() + static_cast<long>(seq.spans.response_end));
    std::vector<int> prompt_special(seq.special.begin() + static_cast<long>(seq.spans.prompt_begin),
                                    seq.special.begin() + static_cast<long>(seq.spans.prompt_end));
    std::vector<int> response_special(
        seq.special.begin() + static_cast<long>(seq.spans.response_begin),
        seq.special.begin() + static_cast<long>(seq.spans.response_end));
    j["prompt_tokens"] = prompt_tokens;
    j["response_tokens"] = response_tokens;
    j["prompt_special"] = prompt_special;
    j["response_special"] = response_special;
    return j;
}

TokenSequence sequence_from_json(const json& j) {
    TokenSequence seq;
    const auto prompt_tokens = j.at("prompt_tokens").get<std::vector<TokenId>>();
    const auto response_tokens = j.at("response_tokens").get<std::vector<TokenId>>();
    const auto prompt_special = j.at("prompt_special").get<std::vector<int>>();
    const auto response_special = j.at("response_special").get<std::vector<int>>();
    if (prompt_special.size() != prompt_tokens.size() ||
        response_special.size() != response_tokens.size()) {
        throw FormatError("corpus record: token/special length mismatch");
    }
    seq.tokens = prompt_tokens;
    seq.tokens.insert(seq.tokens.end(), response_tokens.begin(), response_tokens.end());
    for (int s : prompt_special) seq.special.push_back(static_cast<uint8_t>(s != 0));
    for (int s : response_special) seq.special.push_back(static_cast<uint8_t>(s != 0));
    seq.spans.prompt_begin = 0;
    seq.spans.prompt_end = prompt_tokens.size();
    seq.spans.response_begin = prompt_tokens.size();
    seq.spans.response_end = seq.tokens.size();
    return seq;
}

}  // namespace

void save_corpus(const std::filesystem::path& path,
                 const std::vector<ContrastiveRecord>& records) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for write: " + path.string());
    for (const auto& rec : records) {
        json j = sequence_to_json(rec.sequence);
        j["v"] = 1;
        j["trait"] = rec.trait;
        j["direction"] = direction_name(rec.direction);
        j["question_index"] = rec.question_index;
        j["instruction_index"] = rec.instruction_index;
        if (rec.trait_score) j["trait_score"] = *rec.trait_score; else j["trait_score"] = nullptr;
        if (rec.coherence_score) j["coherence_score"] = *rec.coherence_score;
        else j["coherence_score"] = nullptr;
        j["kept"] = rec.kept;
        os << j.dump() << "\n";
    }
    if (!os) throw FormatError("write failed: " + path.string());
}

std::vector<ContrastiveRecord> load_corpus(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open for read: " + path.string());
    std::vector<ContrastiveRecord> out;
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
        ContrastiveRecord rec;
        rec.trait = j.at("trait").get<std::string>();
        const std::string dir = j.at("direction").get<std::string>();
        if (dir == "positive") {
            rec.direction = Direction::positive;
        } else if (dir == "negative") {
            rec.direction = Direction::negative;
        } else {
            throw FormatError("corpus line " + std::to_string(line_no) + ": bad direction");
        }
        rec.question_index = j.at("question_index").get<int>();
        rec.instruction_index = j.at("instruction_index").get<int>();
        rec.sequence = sequence_from_json(j);
        if (!j.at("trait_score").is_null()) rec.trait_score = j.at("trait_score").get<int>();
        if (!j.at("coherence_score").is_null()) {
            rec.coherence_score = j.at("coherence_score").get<int>();
        }
        rec.kept = j.at("kept").get<bool>();
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace svec
