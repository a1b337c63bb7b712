#include "svec/backbone.hpp"

#include <algorithm>
#include <map>

namespace svec {

namespace tok {

std::vector<TokenId> encode_bytes(std::string_view text) {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
    return out;
}

std::string decode_bytes(std::span<const TokenId> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
        if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
    }
    return out;
}

}  // namespace tok

void BackboneDescriptor::validate() const {
    if (model_id.empty()) throw ValidationError("descriptor: empty model_id");
    if (n_layers < 2) throw ValidationError("descriptor: n_layers must be >= 2");
    if (hidden_dim < 2) throw ValidationError("descriptor: hidden_dim must be >= 2");
    if (vocab_size < 2) throw ValidationError("descriptor: vocab_size must be >= 2");
    if (max_context < 1) throw ValidationError("descriptor: max_context must be >= 1");
}

int midpoint_layer(const BackboneDescriptor& desc) {
    desc.validate();
    return desc.n_layers / 2;
}

void TokenSequence::validate(int vocab_size) const {
    const size_t n = tokens.size();
    if (special.size() != n) {
        throw ValidationError("token sequence: special mask size mismatch");
    }
    for (TokenId t : tokens) {
        if (t < 0 || t >= vocab_size) {
            throw ValidationError("token sequence: token id out of vocabulary");
        }
    }
    if (spans.prompt_begin != 0 || spans.prompt_end != spans.response_begin ||
        spans.response_end != n || spans.prompt_end > n) {
        throw ValidationError("token sequence: role spans do not partition the sequence");
    }
}

static TokenSequence finish_prompt(std::vector<TokenId> tokens,
                                   std::vector<uint8_t> special) {
    TokenSequence seq;
    seq.tokens = std::move(tokens);
    seq.special = std::move(special);
    seq.spans.prompt_begin = 0;
    seq.spans.prompt_end = seq.tokens.size();
    seq.spans.response_begin = seq.tokens.size();
    seq.spans.response_end = seq.tokens.size();
    return seq;
}

TokenSequence make_prompt_sequence(std::string_view text) {
    std::vector<TokenId> tokens{tok::kBos};
    std::vector<uint8_t> special{1};
    for (TokenId t : tok::encode_bytes(text)) {
        tokens.push_back(t);
        special.push_back(0);
    }
    tokens.push_back(tok::kSep);
    special.push_back(1);
    return finish_prompt(std::move(tokens), std::move(special));
}

TokenSequence make_prompt_sequence(std::string_view system, std::string_view user) {
    std::string joined;
    joined.reserve(system.size() + user.size() + 1);
    joined.append(system);
    joined.push_back('\n');
    joined.append(user);
    return make_prompt_sequence(joined);
}

std::vector<InterventionHandle> merge_interventions(
    const std::vector<InterventionHandle>& handles) {
    std::map<int, InterventionHandle> by_layer;
    for (const auto& h : handles) {
        auto it = by_layer.find(h.layer);
        if (it == by_layer.end()) {
            by_layer.emplace(h.layer, h);
            continue;
        }
        if (it->second.delta.size() != h.delta.size()) {
            throw DimensionMismatchError("merge_interventions: delta length mismatch at layer " +
                                         std::to_string(h.layer));
        }
        for (size_t i = 0; i < h.delta.size(); ++i) it->second.delta[i] += h.delta[i];
    }
    std::vector<InterventionHandle> out;
    out.reserve(by_layer.size());
    for (auto& [layer, h] : by_layer) out.push_back(std::move(h));
    return out;
}

}  // namespace svec
