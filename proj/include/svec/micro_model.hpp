#pragma once

#include <filesystem>
#include <vector>

#include "svec/backbone.hpp"

namespace svec {

// Deterministic micro-transformer used for desk-scale verification.
//
// Architecture: pre-RMSNorm blocks with causal multi-head attention (RoPE)
// and a GELU MLP, tied input/output embeddings. Conventions fixed by the
// weight format: head_dim = 16, ffn_dim = 4 * hidden_dim, max_context = 512.
// The intervention/tap site is the residual stream after each block.
class MicroModel final : public Backbone {
public:
    static constexpr int kHeadDim = 16;
    static constexpr int kFfnMultiple = 4;
    static constexpr int kMaxContext = 2048;
    static constexpr uint32_t kWeightsVersion = 1;

    struct LayerWeights {
        std::vector<float> attn_norm;  // [d]
        std::vector<float> wq, wk, wv, wo;  // [d x d], row-major, y = W x
        std::vector<float> mlp_norm;   // [d]
        std::vector<float> w_up;       // [ffn x d]
        std::vector<float> w_down;     // [d x ffn]
    };

    // Standard seeded init: 4 layers, hidden_dim 64, byte vocabulary.
    static MicroModel random_init(uint64_t seed, int n_layers = 4, int hidden_dim = 64);

    // Styled init for the toy trait-separation fixture: uppercase-letter
    // embeddings share a latent direction, lowercase letters its negation,
    // and blocks stay residual-dominated so the style propagates through
    // generation. Same shape and file format as random_init.
    static MicroModel trait_fixture(uint64_t seed, int n_layers = 4, int hidden_dim = 64);

    static MicroModel load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    const BackboneDescriptor& descriptor() const override { return desc_; }

    std::vector<TokenId> tokenize(std::string_view text) const override;
    std::string detokenize(std::span<const TokenId> tokens) const override;

    ForwardResult forward_with_taps(
        const TokenSequence& seq, const std::set<int>& tap_layers,
        const std::vector<InterventionHandle>& interventions) const override;

    TokenSequence generate(
        const TokenSequence& prompt, const GenerationConfig& config,
        const std::vector<InterventionHandle>& interventions) const override;

    int n_heads() const { return n_heads_; }
    int ffn_dim() const { return ffn_dim_; }

private:
    MicroModel() = default;
    void finalize_shape();     // derives heads/ffn, validates
    void compute_model_id();   // content hash of the weight payload

    BackboneDescriptor desc_;
    int n_heads_ = 0;
    int ffn_dim_ = 0;
    std::vector<float> tok_embedding_;  // [vocab x d], also the output head
    std::vector<LayerWeights> layers_;
    std::vector<float> final_norm_;     // [d]
};

}  // namespace svec
