#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svec/errors.hpp"

namespace svec {

using TokenId = int32_t;

// Byte-level vocabulary: 256 raw bytes plus template specials.
namespace tok {
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kSep = 257;
inline constexpr TokenId kEos = 258;
inline constexpr int kVocabSize = 259;

std::vector<TokenId> encode_bytes(std::string_view text);
// Drops any non-byte token.
std::string decode_bytes(std::span<const TokenId> tokens);
}  // namespace tok

struct BackboneDescriptor {
    std::string model_id;
    int n_layers = 0;
    int hidden_dim = 0;
    int vocab_size = 0;
    int max_context = 0;

    void validate() const;
};

// Fixed midpoint convention: floor(n_layers / 2), constant per model.
int midpoint_layer(const BackboneDescriptor& desc);

// Half-open [begin, end) spans partitioning a sequence into the prompt
// region followed by the response region.
struct RoleSpans {
    size_t prompt_begin = 0;
    size_t prompt_end = 0;
    size_t response_begin = 0;
    size_t response_end = 0;
};

struct TokenSequence {
    std::vector<TokenId> tokens;
    RoleSpans spans;
    // Marks template/special positions (BOS, SEP, EOS). These belong to a
    // role span but are excluded from pooling.
    std::vector<uint8_t> special;

    size_t size() const { return tokens.size(); }
    void validate(int vocab_size) const;
};

// BOS + text + SEP, specials marked, prompt span covering everything.
TokenSequence make_prompt_sequence(std::string_view text);
// BOS + system + '\n' + user + SEP.
TokenSequence make_prompt_sequence(std::string_view system, std::string_view user);

// Per-position hidden states captured at one layer's post-block residual.
struct ActivationTrace {
    int layer = 0;
    size_t n_positions = 0;
    size_t dim = 0;
    std::vector<float> data;  // row-major [n_positions x dim]

    std::span<const float> at(size_t pos) const {
        return {data.data() + pos * dim, dim};
    }
    std::span<float> at(size_t pos) {
        return {data.data() + pos * dim, dim};
    }
};

// A precomputed additive perturbation (alpha * v) for one layer.
struct InterventionHandle {
    int layer = 0;
    std::vector<float> delta;
};

// Sums deltas that target the same layer so the result satisfies the
// one-handle-per-layer precondition of forward_with_taps.
std::vector<InterventionHandle> merge_interventions(
    const std::vector<InterventionHandle>& handles);

struct GenerationConfig {
    int max_new_tokens = 64;
    double temperature = 0.0;
    uint64_t seed = 0;
    // Token ids never sampled (their logits are masked out).
    std::vector<TokenId> suppress_tokens;
};

struct ForwardResult {
    std::vector<float> logits;             // next-token logits at the final position
    std::vector<ActivationTrace> traces;   // ascending layer order
};

// Capability interface over a generative backbone with per-layer residual
// taps and additive intervention points. Instances are immutable after load;
// concurrent read-only passes are safe.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual const BackboneDescriptor& descriptor() const = 0;

    virtual std::vector<TokenId> tokenize(std::string_view text) const = 0;
    virtual std::string detokenize(std::span<const TokenId> tokens) const = 0;

    // One trace per tapped layer, captured after any intervention at that
    // layer is applied. Empty interventions is the plain forward pass.
    virtual ForwardResult forward_with_taps(
        const TokenSequence& seq, const std::set<int>& tap_layers,
        const std::vector<InterventionHandle>& interventions) const = 0;

    // Extends the prompt with up to max_new_tokens generated tokens.
    // Interventions are active at every decoding step, at all positions of
    // the intervened layer. Temperature 0 decodes greedily.
    virtual TokenSequence generate(
        const TokenSequence& prompt, const GenerationConfig& config,
        const std::vector<InterventionHandle>& interventions) const = 0;
};

}  // namespace svec
