#include "svec/micro_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "svec/binio.hpp"
#include "svec/util.hpp"

namespace svec {

namespace {

constexpr char kMagic[8] = {'S', 'V', 'E', 'C', '-', 'B', 'B', '\0'};
constexpr float kNormEps = 1e-5f;

void rmsnorm(std::span<const float> x, std::span<const float> w, std::span<float> out) {
    double ss = 0.0;
    for (float v : x) ss += static_cast<double>(v) * v;
    const float scale =
        1.0f / std::sqrt(static_cast<float>(ss / static_cast<double>(x.size())) + kNormEps);
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * scale * w[i];
}

// y = W x with W row-major [rows x cols].
void matvec(std::span<const float> w, std::span<const float> x, std::span<float> out,
            int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const float* row = w.data() + static_cast<size_t>(r) * cols;
        double acc = 0.0;
        for (int c = 0; c < cols; ++c) acc += static_cast<double>(row[c]) * x[static_cast<size_t>(c)];
        out[static_cast<size_t>(r)] = static_cast<float>(acc);
    }
}

float gelu(float x) {
    const float c = 0.7978845608028654f;  // sqrt(2/pi)
    return 0.5f * x * (1.0f + std::tanh(c * (x + 0.044715f * x * x * x)));
}

void fill_gaussian(std::vector<float>& v, Rng& rng, double sigma) {
    for (float& x : v) x = static_cast<float>(rng.next_gaussian() * sigma);
}

// Scratch buffers plus per-layer KV caches for one sequence.
struct DecodeState {
    explicit DecodeState(int n_layers, int d, int max_ctx, int ffn)
        : xn(static_cast<size_t>(d)),
          q(static_cast<size_t>(d)),
          attn_out(static_cast<size_t>(d)),
          proj(static_cast<size_t>(d)),
          ffn_hidden(static_cast<size_t>(ffn)),
          k_cache(static_cast<size_t>(n_layers),
                  std::vector<float>(static_cast<size_t>(max_ctx) * d)),
          v_cache(static_cast<size_t>(n_layers),
                  std::vector<float>(static_cast<size_t>(max_ctx) * d)) {}

    size_t pos = 0;
    std::vector<float> xn, q, attn_out, proj, ffn_hidden;
    std::vector<double> scores;
    std::vector<std::vector<float>> k_cache, v_cache;
};

TokenId sample_token(std::span<const float> logits, double temperature, Rng& rng,
                     const std::vector<TokenId>& suppress) {
    std::vector<float> masked(logits.begin(), logits.end());
    for (TokenId t : suppress) {
        if (t >= 0 && static_cast<size_t>(t) < masked.size()) {
            masked[static_cast<size_t>(t)] = -std::numeric_limits<float>::infinity();
        }
    }
    if (temperature <= 0.0) {
        size_t best = 0;
        for (size_t i = 1; i < masked.size(); ++i) {
            if (masked[i] > masked[best]) best = i;
        }
        if (masked[best] == -std::numeric_limits<float>::infinity()) {
            throw ValidationError("sampling: every token is suppressed");
        }
        return static_cast<TokenId>(best);
    }
    double max_l = -std::numeric_limits<double>::infinity();
    for (float v : masked) max_l = std::max(max_l, static_cast<double>(v));
    if (max_l == -std::numeric_limits<double>::infinity()) {
        throw ValidationError("sampling: every token is suppressed");
    }
    std::vector<double> probs(masked.size());
    double z = 0.0;
    for (size_t i = 0; i < masked.size(); ++i) {
        probs[i] = std::exp((static_cast<double>(masked[i]) - max_l) / temperature);
        z += probs[i];
    }
    const double u = rng.next_double() * z;
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(probs.size() - 1);
}

}  // namespace

std::vector<TokenId> MicroModel::tokenize(std::string_view text) const {
    return tok::encode_bytes(text);
}

std::string MicroModel::detokenize(std::span<const TokenId> tokens) const {
    return tok::decode_bytes(tokens);
}

void MicroModel::finalize_shape() {
    if (desc_.hidden_dim % kHeadDim != 0) {
        throw FormatError("micro model: hidden_dim must be a multiple of " +
                          std::to_string(kHeadDim));
    }
    n_heads_ = desc_.hidden_dim / kHeadDim;
    ffn_dim_ = kFfnMultiple * desc_.hidden_dim;
    desc_.max_context = kMaxContext;
}

void MicroModel::compute_model_id() {
    uint64_t h = kFnvOffset;
    auto mix = [&h](const std::vector<float>& block) {
        h = fnv1a_bytes(block.data(), block.size() * sizeof(float), h);
    };
    mix(tok_embedding_);
    for (const auto& l : layers_) {
        mix(l.attn_norm);
        mix(l.wq);
        mix(l.wk);
        mix(l.wv);
        mix(l.wo);
        mix(l.mlp_norm);
        mix(l.w_up);
        mix(l.w_down);
    }
    mix(final_norm_);
    desc_.model_id = "micro-" + hex16(h);
}

MicroModel MicroModel::random_init(uint64_t seed, int n_layers, int hidden_dim) {
    MicroModel m;
    m.desc_.n_layers = n_layers;
    m.desc_.hidden_dim = hidden_dim;
    m.desc_.vocab_size = tok::kVocabSize;
    m.finalize_shape();

    Rng rng(seed);
    const size_t d = static_cast<size_t>(hidden_dim);
    const size_t ffn = static_cast<size_t>(m.ffn_dim_);

    m.tok_embedding_.resize(static_cast<size_t>(m.desc_.vocab_size) * d);
    fill_gaussian(m.tok_embedding_, rng, 0.08);

    m.layers_.resize(static_cast<size_t>(n_layers));
    for (auto& l : m.layers_) {
        l.attn_norm.assign(d, 1.0f);
        l.mlp_norm.assign(d, 1.0f);
        l.wq.resize(d * d);
        l.wk.resize(d * d);
        l.wv.resize(d * d);
        l.wo.resize(d * d);
        l.w_up.resize(ffn * d);
        l.w_down.resize(d * ffn);
        fill_gaussian(l.wq, rng, 0.10);
        fill_gaussian(l.wk, rng, 0.10);
        fill_gaussian(l.wv, rng, 0.10);
        fill_gaussian(l.wo, rng, 0.10);
        fill_gaussian(l.w_up, rng, 0.10);
        fill_gaussian(l.w_down, rng, 0.10);
    }
    m.final_norm_.assign(d, 1.0f);
    m.compute_model_id();
    m.desc_.validate();
    return m;
}

MicroModel MicroModel::trait_fixture(uint64_t seed, int n_layers, int hidden_dim) {
    MicroModel m;
    m.desc_.n_layers = n_layers;
    m.desc_.hidden_dim = hidden_dim;
    m.desc_.vocab_size = tok::kVocabSize;
    m.finalize_shape();

    Rng rng(seed);
    const size_t d = static_cast<size_t>(hidden_dim);
    const size_t ffn = static_cast<size_t>(m.ffn_dim_);

    // Latent class directions. Uppercase letters share one direction (its
    // negation marks lowercase) and digits share a second; tied embeddings
    // make generation echo the token class held in the residual stream.
    auto unit_direction = [&rng, d]() {
        std::vector<float> v(d);
        fill_gaussian(v, rng, 1.0);
        const double n = norm(v);
        for (float& x : v) x = static_cast<float>(x / n);
        return v;
    };
    const std::vector<float> style = unit_direction();
    const std::vector<float> digit = unit_direction();

    m.tok_embedding_.resize(static_cast<size_t>(m.desc_.vocab_size) * d);
    fill_gaussian(m.tok_embedding_, rng, 0.08);
    const float gain = 0.9f;
    for (int c = 'A'; c <= 'Z'; ++c) {
        float* row = m.tok_embedding_.data() + static_cast<size_t>(c) * d;
        for (size_t i = 0; i < d; ++i) row[i] += gain * style[i];
    }
    for (int c = 'a'; c <= 'z'; ++c) {
        float* row = m.tok_embedding_.data() + static_cast<size_t>(c) * d;
        for (size_t i = 0; i < d; ++i) row[i] -= gain * style[i];
    }
    for (int c = '0'; c <= '9'; ++c) {
        float* row = m.tok_embedding_.data() + static_cast<size_t>(c) * d;
        for (size_t i = 0; i < d; ++i) row[i] += gain * digit[i];
    }

    // Residual-dominated blocks. Value/output projections are identity-mixed
    // so attention softly copies context embeddings into the residual stream
    // without rotating the class directions; the MLP path stays small.
    m.layers_.resize(static_cast<size_t>(n_layers));
    for (auto& l : m.layers_) {
        l.attn_norm.assign(d, 1.0f);
        l.mlp_norm.assign(d, 1.0f);
        l.wq.resize(d * d);
        l.wk.resize(d * d);
        l.wv.resize(d * d);
        l.wo.resize(d * d);
        l.w_up.resize(ffn * d);
        l.w_down.resize(d * ffn);
        fill_gaussian(l.wq, rng, 0.30);
        fill_gaussian(l.wk, rng, 0.30);
        fill_gaussian(l.wv, rng, 0.08);
        fill_gaussian(l.wo, rng, 0.08);
        for (size_t i = 0; i < d; ++i) {
            l.wv[i * d + i] += 0.6f;
            l.wo[i * d + i] += 0.6f;
        }
        fill_gaussian(l.w_up, rng, 0.10);
        fill_gaussian(l.w_down, rng, 0.10);
    }
    m.final_norm_.assign(d, 1.0f);
    m.compute_model_id();
    m.desc_.validate();
    return m;
}

void MicroModel::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path.string());
    binio::Writer w(os);
    w.bytes(kMagic, 8);
    w.u32(kWeightsVersion);
    w.u32(static_cast<uint32_t>(desc_.n_layers));
    w.u32(static_cast<uint32_t>(desc_.hidden_dim));
    w.u32(static_cast<uint32_t>(desc_.vocab_size));
    w.f32_block(tok_embedding_);
    for (const auto& l : layers_) {
        w.f32_block(l.attn_norm);
        w.f32_block(l.wq);
        w.f32_block(l.wk);
        w.f32_block(l.wv);
        w.f32_block(l.wo);
        w.f32_block(l.mlp_norm);
        w.f32_block(l.w_up);
        w.f32_block(l.w_down);
    }
    w.f32_block(final_norm_);
    w.finish();
    if (!os) throw FormatError("write failed: " + path.string());
}

MicroModel MicroModel::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for read: " + path.string());
    binio::Reader r(is);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) {
        throw FormatError("not a SVEC-BB weights file: " + path.string());
    }
    const uint32_t version = r.u32();
    if (version != kWeightsVersion) {
        throw VersionMismatchError("weights version " + std::to_string(version) +
                                   ", expected " + std::to_string(kWeightsVersion));
    }
    MicroModel m;
    m.desc_.n_layers = static_cast<int>(r.u32());
    m.desc_.hidden_dim = static_cast<int>(r.u32());
    m.desc_.vocab_size = static_cast<int>(r.u32());
    if (m.desc_.n_layers < 2 || m.desc_.n_layers > 1024 || m.desc_.hidden_dim < 2 ||
        m.desc_.hidden_dim > 65536 || m.desc_.vocab_size < 2 || m.desc_.vocab_size > 1 << 20) {
        throw FormatError("implausible weights header: " + path.string());
    }
    m.finalize_shape();
    const size_t d = static_cast<size_t>(m.desc_.hidden_dim);
    const size_t ffn = static_cast<size_t>(m.ffn_dim_);
    m.tok_embedding_.resize(static_cast<size_t>(m.desc_.vocab_size) * d);
    r.f32_block(m.tok_embedding_);
    m.layers_.resize(static_cast<size_t>(m.desc_.n_layers));
    for (auto& l : m.layers_) {
        l.attn_norm.resize(d);
        l.wq.resize(d * d);
        l.wk.resize(d * d);
        l.wv.resize(d * d);
        l.wo.resize(d * d);
        l.mlp_norm.resize(d);
        l.w_up.resize(ffn * d);
        l.w_down.resize(d * ffn);
        r.f32_block(l.attn_norm);
        r.f32_block(l.wq);
        r.f32_block(l.wk);
        r.f32_block(l.wv);
        r.f32_block(l.wo);
        r.f32_block(l.mlp_norm);
        r.f32_block(l.w_up);
        r.f32_block(l.w_down);
    }
    m.final_norm_.resize(d);
    r.f32_block(m.final_norm_);
    r.finish();
    m.compute_model_id();
    m.desc_.validate();
    return m;
}

namespace {

// One position through all blocks. Updates caches at st.pos, advances pos.
// deltas[l] (when non-null) is added to the post-block residual, matching
// the all-positions intervention contract. tap_rows[l] (when non-null)
// receives the post-intervention residual for this position.
void step_position(const BackboneDescriptor& desc, int n_heads,
                   const std::vector<MicroModel::LayerWeights>& layers,
                   const std::vector<float>& tok_embedding, TokenId token,
                   DecodeState& st, const std::vector<const float*>& deltas,
                   const std::vector<float*>& tap_rows, std::vector<float>& x) {
    const int d = desc.hidden_dim;
    const int head_dim = MicroModel::kHeadDim;
    const size_t pos = st.pos;

    const float* emb = tok_embedding.data() + static_cast<size_t>(token) * d;
    x.assign(emb, emb + d);

    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& lw = layers[l];
        rmsnorm(x, lw.attn_norm, st.xn);
        matvec(lw.wq, st.xn, st.q, d, d);
        float* k_row = st.k_cache[l].data() + pos * static_cast<size_t>(d);
        float* v_row = st.v_cache[l].data() + pos * static_cast<size_t>(d);
        matvec(lw.wk, st.xn, {k_row, static_cast<size_t>(d)}, d, d);
        matvec(lw.wv, st.xn, {v_row, static_cast<size_t>(d)}, d, d);

        // RoPE on q and the freshly written k row.
        for (int h = 0; h < n_heads; ++h) {
            float* qh = st.q.data() + static_cast<size_t>(h) * head_dim;
            float* kh = k_row + static_cast<size_t>(h) * head_dim;
            for (int i = 0; i < head_dim / 2; ++i) {
                const double theta =
                    static_cast<double>(pos) *
                    std::pow(10000.0, -2.0 * i / static_cast<double>(head_dim));
                const float c = static_cast<float>(std::cos(theta));
                const float s = static_cast<float>(std::sin(theta));
                const float q0 = qh[2 * i], q1 = qh[2 * i + 1];
                qh[2 * i] = q0 * c - q1 * s;
                qh[2 * i + 1] = q0 * s + q1 * c;
                const float k0 = kh[2 * i], k1 = kh[2 * i + 1];
                kh[2 * i] = k0 * c - k1 * s;
                kh[2 * i + 1] = k0 * s + k1 * c;
            }
        }

        // Causal attention over cached positions 0..pos.
        const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim));
        st.scores.resize(pos + 1);
        for (int h = 0; h < n_heads; ++h) {
            const float* qh = st.q.data() + static_cast<size_t>(h) * head_dim;
            double max_score = -std::numeric_limits<double>::infinity();
            std::vector<double>& scores = st.scores;
            for (size_t s = 0; s <= pos; ++s) {
                const float* kh =
                    st.k_cache[l].data() + s * static_cast<size_t>(d) + static_cast<size_t>(h) * head_dim;
                double acc = 0.0;
                for (int i = 0; i < head_dim; ++i) acc += static_cast<double>(qh[i]) * kh[i];
                scores[s] = acc * inv_sqrt;
                max_score = std::max(max_score, scores[s]);
            }
            double z = 0.0;
            for (size_t s = 0; s <= pos; ++s) {
                scores[s] = std::exp(scores[s] - max_score);
                z += scores[s];
            }
            float* oh = st.attn_out.data() + static_cast<size_t>(h) * head_dim;
            for (int i = 0; i < head_dim; ++i) {
                double acc = 0.0;
                for (size_t s = 0; s <= pos; ++s) {
                    const float* vh = st.v_cache[l].data() + s * static_cast<size_t>(d) +
                                      static_cast<size_t>(h) * head_dim;
                    acc += (scores[s] / z) * vh[i];
                }
                oh[i] = static_cast<float>(acc);
            }
        }
        matvec(lw.wo, st.attn_out, st.proj, d, d);
        for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += st.proj[static_cast<size_t>(i)];

        rmsnorm(x, lw.mlp_norm, st.xn);
        matvec(lw.w_up, st.xn, st.ffn_hidden, static_cast<int>(st.ffn_hidden.size()), d);
        for (float& v : st.ffn_hidden) v = gelu(v);
        matvec(lw.w_down, st.ffn_hidden, st.proj, d, static_cast<int>(st.ffn_hidden.size()));
        for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += st.proj[static_cast<size_t>(i)];

        if (deltas[l] != nullptr) {
            for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += deltas[l][i];
        }
        if (tap_rows[l] != nullptr) {
            std::memcpy(tap_rows[l], x.data(), static_cast<size_t>(d) * sizeof(float));
        }
    }
    ++st.pos;
}

void compute_logits(const BackboneDescriptor& desc, const std::vector<float>& final_norm,
                    const std::vector<float>& tok_embedding, const std::vector<float>& x,
                    std::vector<float>& xn, std::vector<float>& logits) {
    const int d = desc.hidden_dim;
    xn.resize(static_cast<size_t>(d));
    rmsnorm(x, final_norm, xn);
    logits.resize(static_cast<size_t>(desc.vocab_size));
    matvec(tok_embedding, xn, logits, desc.vocab_size, d);
}

// Validates tap/intervention arguments; returns per-layer delta pointers.
std::vector<const float*> prepare_interventions(
    const BackboneDescriptor& desc, const std::vector<InterventionHandle>& interventions) {
    std::vector<const float*> deltas(static_cast<size_t>(desc.n_layers), nullptr);
    for (const auto& h : interventions) {
        if (h.layer < 0 || h.layer >= desc.n_layers) {
            throw LayerOutOfRangeError("intervention layer " + std::to_string(h.layer) +
                                       " out of range [0, " + std::to_string(desc.n_layers - 1) +
                                       "]");
        }
        if (static_cast<int>(h.delta.size()) != desc.hidden_dim) {
            throw DimensionMismatchError("intervention delta length " +
                                         std::to_string(h.delta.size()) + " != hidden_dim " +
                                         std::to_string(desc.hidden_dim));
        }
        if (!all_finite(h.delta)) {
            throw ValidationError("intervention delta has non-finite components");
        }
        if (deltas[static_cast<size_t>(h.layer)] != nullptr) {
            throw ValidationError("more than one intervention at layer " +
                                  std::to_string(h.layer) +
                                  " (merge_interventions first)");
        }
        deltas[static_cast<size_t>(h.layer)] = h.delta.data();
    }
    return deltas;
}

}  // namespace

ForwardResult MicroModel::forward_with_taps(
    const TokenSequence& seq, const std::set<int>& tap_layers,
    const std::vector<InterventionHandle>& interventions) const {
    if (seq.size() == 0) throw EmptyPromptError("forward: empty sequence");
    if (static_cast<int>(seq.size()) > desc_.max_context) {
        throw ContextOverflowError("forward: sequence of " + std::to_string(seq.size()) +
                                   " tokens exceeds max_context " +
                                   std::to_string(desc_.max_context));
    }
    seq.validate(desc_.vocab_size);
    for (int l : tap_layers) {
        if (l < 0 || l >= desc_.n_layers) {
            throw LayerOutOfRangeError("tap layer " + std::to_string(l) + " out of range [0, " +
                                       std::to_string(desc_.n_layers - 1) + "]");
        }
    }
    const auto deltas = prepare_interventions(desc_, interventions);

    ForwardResult result;
    result.traces.reserve(tap_layers.size());
    std::vector<float*> tap_ptr(static_cast<size_t>(desc_.n_layers), nullptr);
    std::vector<ActivationTrace*> trace_for_layer(static_cast<size_t>(desc_.n_layers), nullptr);
    for (int l : tap_layers) {
        ActivationTrace t;
        t.layer = l;
        t.n_positions = seq.size();
        t.dim = static_cast<size_t>(desc_.hidden_dim);
        t.data.resize(t.n_positions * t.dim);
        result.traces.push_back(std::move(t));
        trace_for_layer[static_cast<size_t>(l)] = &result.traces.back();
    }

    DecodeState st(desc_.n_layers, desc_.hidden_dim, desc_.max_context, ffn_dim_);
    std::vector<float> x;
    for (size_t p = 0; p < seq.size(); ++p) {
        for (int l = 0; l < desc_.n_layers; ++l) {
            ActivationTrace* t = trace_for_layer[static_cast<size_t>(l)];
            tap_ptr[static_cast<size_t>(l)] = t ? t->at(p).data() : nullptr;
        }
        step_position(desc_, n_heads_, layers_, tok_embedding_, seq.tokens[p], st, deltas,
                      tap_ptr, x);
    }
    compute_logits(desc_, final_norm_, tok_embedding_, x, st.xn, result.logits);

    if (!all_finite(result.logits)) throw ValidationError("forward produced non-finite logits");
    for (const auto& t : result.traces) {
        if (!all_finite(t.data)) throw ValidationError("forward produced non-finite trace");
    }
    return result;
}

TokenSequence MicroModel::generate(const TokenSequence& prompt, const GenerationConfig& config,
                                   const std::vector<InterventionHandle>& interventions) const {
    if (prompt.size() == 0) throw EmptyPromptError("generate: empty prompt");
    if (config.max_new_tokens < 1) throw ValidationError("generate: max_new_tokens must be >= 1");
    if (config.temperature < 0.0) throw ValidationError("generate: negative temperature");
    if (static_cast<int>(prompt.size()) + 1 > desc_.max_context) {
        throw ContextOverflowError("generate: prompt of " + std::to_string(prompt.size()) +
                                   " tokens leaves no room in max_context " +
                                   std::to_string(desc_.max_context));
    }
    prompt.validate(desc_.vocab_size);
    if (prompt.spans.response_end != prompt.spans.response_begin) {
        throw ValidationError("generate: prompt already carries a response span");
    }
    const auto deltas = prepare_interventions(desc_, interventions);

    TokenSequence out = prompt;
    DecodeState st(desc_.n_layers, desc_.hidden_dim, desc_.max_context, ffn_dim_);
    std::vector<float*> no_taps(static_cast<size_t>(desc_.n_layers), nullptr);
    std::vector<float> x;
    for (size_t p = 0; p < prompt.size(); ++p) {
        step_position(desc_, n_heads_, layers_, tok_embedding_, prompt.tokens[p], st, deltas,
                      no_taps, x);
    }

    Rng rng(config.seed);
    std::vector<float> logits;
    for (int n = 0; n < config.max_new_tokens; ++n) {
        if (static_cast<int>(st.pos) >= desc_.max_context) break;
        compute_logits(desc_, final_norm_, tok_embedding_, x, st.xn, logits);
        const TokenId next = sample_token(logits, config.temperature, rng, config.suppress_tokens);
        out.tokens.push_back(next);
        out.special.push_back(next >= 256 ? 1 : 0);
        out.spans.response_end = out.tokens.size();
        if (next == tok::kEos) break;
        if (static_cast<int>(st.pos) >= desc_.max_context) break;
        step_position(desc_, n_heads_, layers_, tok_embedding_, next, st, deltas, no_taps, x);
    }
    return out;
}

}  // namespace svec
