#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "covnat/model/config.hpp"
#include "covnat/model/layers.hpp"
#include "covnat/ops.hpp"
#include "covnat/params.hpp"
#include "covnat/vocab.hpp"

namespace covnat {

struct EncoderOutput {
    Tensor e_enc;          // padded_len x d_model, pad rows neutralized via mask
    Tensor length_logits;  // 1 x n_length_buckets
    Tensor src_mask;       // constant 0/1 vector, padded_len
    int src_len = 0;       // unpadded source length
};

// Per-iteration state of the coverage layer: hidden states H^k, attention A^k
// and the coverage matrix C^k that biased it.
struct CoverageIterationState {
    Tensor h;
    Tensor a;
    Tensor c;
    int k = 0;
};

// C[t,i] = min(sum_{t'<t} A[t',i], 1): clamped accumulation of past steps'
// attention, computed as an exclusive prefix sum. Fully differentiable.
inline Tensor coverage_vector(const Tensor& attn_prev) {
    return min_clamp1(exclusive_prefix_sum_rows(attn_prev));
}

inline void check_coverage_state(const CoverageIterationState& state,
                                 const std::vector<double>& src_mask) {
    const Index t_len = state.a.size(0), n = state.a.size(1);
    for (Index t = 0; t < t_len; ++t) {
        double row_sum = 0.0;
        for (Index i = 0; i < n; ++i) {
            if (src_mask.empty() || src_mask[static_cast<std::size_t>(i)] > 0.5)
                row_sum += state.a.at(t, i);
            const double c = state.c.at(t, i);
            if (c < 0.0 || c > 1.0)
                throw NumericError("coverage invariant: C out of [0,1] at iteration " +
                                   std::to_string(state.k));
            if (t == 0 && c != 0.0)
                throw NumericError("coverage invariant: C[0,.] must be zero");
            if (t > 0 && c + 1e-15 < state.c.at(t - 1, i))
                throw NumericError("coverage invariant: C not non-decreasing in t");
        }
        if (std::abs(row_sum - 1.0) > 1e-9)
            throw NumericError("coverage invariant: A row sum " + std::to_string(row_sum) +
                               " at iteration " + std::to_string(state.k));
    }
}

// Non-autoregressive encoder-decoder. The decoder consumes a sequence of
// <unk> tokens plus positional encodings (no positional attention); its top
// layer is the iterative coverage layer unless use_tcir is off, in which case
// a standard decoder layer takes its place.
class NatModel {
public:
    NatModel(ModelConfig config, std::uint64_t seed) : cfg_(config) {
        cfg_.validate();
        Rng rng(splitmix64(seed ^ stream_tag("nat-model")));
        const Index d = cfg_.d_model;

        embed_ = params_.create("embed.table", {cfg_.vocab_size, d}, rng, kEmbedInitRange);
        for (Index l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "encoder.layer" + std::to_string(l);
            enc_layers_.push_back(EncoderLayer{
                make_attention(params_, p + ".self_attn", d, rng), make_norm(params_, p + ".norm1", d),
                make_ffn(params_, p + ".ffn", d, cfg_.d_hidden, rng), make_norm(params_, p + ".norm2", d)});
        }
        length_w_ = params_.create("encoder.length_head.w", {d, cfg_.n_length_buckets()}, rng,
                                   xavier_range(d, cfg_.n_length_buckets()));
        length_b_ = params_.create_const("encoder.length_head.b", {cfg_.n_length_buckets()}, 0.0);

        for (Index l = 0; l + 1 < cfg_.n_layers; ++l) {
            const std::string p = "decoder.layer" + std::to_string(l);
            dec_layers_.push_back(DecoderLayer{
                make_attention(params_, p + ".self_attn", d, rng), make_norm(params_, p + ".norm1", d),
                make_attention(params_, p + ".inter_attn", d, rng), make_norm(params_, p + ".norm2", d),
                make_ffn(params_, p + ".ffn", d, cfg_.d_hidden, rng), make_norm(params_, p + ".norm3", d)});
        }

        if (cfg_.use_tcir) {
            cov_self_ = make_attention(params_, "coverage.self_attn", d, rng);
            cov_norm_self_ = make_norm(params_, "coverage.norm_self", d);
            cov_ffn_ = make_ffn(params_, "coverage.ffn", d, cfg_.d_hidden, rng);
            cov_norm_ffn_ = make_norm(params_, "coverage.norm_ffn", d);
            lambda_ = params_.create_const("coverage.lambda", {1}, cfg_.lambda_init);
        } else {
            top_ = DecoderLayer{
                make_attention(params_, "top.self_attn", d, rng), make_norm(params_, "top.norm1", d),
                make_attention(params_, "top.inter_attn", d, rng), make_norm(params_, "top.norm2", d),
                make_ffn(params_, "top.ffn", d, cfg_.d_hidden, rng), make_norm(params_, "top.norm3", d)};
        }

        sca_ws_ = params_.create("sca.ws", {d, d}, rng, xavier_range(d, d));
        pe_table_ = sinusoidal_table(cfg_.max_len, d);
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    Tensor embedding_table() const { return embed_; }
    Tensor sca_ws() const { return sca_ws_; }
    Tensor lambda() const {
        if (!cfg_.use_tcir) throw ContractError("lambda: TCIR disabled");
        return lambda_;
    }

    // Source embeddings before the encoder (token lookup only).
    Tensor source_embeddings(const std::vector<int>& src_ids) const {
        return embedding_lookup(embed_, src_ids);
    }

    EncoderOutput encode(const std::vector<int>& src_ids, const std::vector<double>& mask,
                         const ForwardCtx& ctx = {}) const {
        if (src_ids.empty()) throw ContractError("encode: empty source");
        if (mask.size() != src_ids.size()) throw ContractError("encode: mask length mismatch");
        double live = 0.0;
        for (double m : mask) live += m;
        if (live == 0.0) throw ContractError("encode: all positions are padding");
        if (static_cast<Index>(src_ids.size()) > cfg_.max_len)
            throw ContractError("encode: source longer than max_len");

        Tensor key_mask = Tensor::from_values({static_cast<Index>(mask.size())},
                                              std::vector<double>(mask.begin(), mask.end()));
        Tensor x = embed_positions(src_ids, ctx);
        for (const auto& layer : enc_layers_) {
            Tensor h = postnorm_residual(
                x, multi_head_attention(x, x, layer.self_attn, cfg_.n_heads, key_mask).out,
                layer.norm1, ctx);
            x = postnorm_residual(h, feed_forward(h, layer.ffn), layer.norm2, ctx);
        }

        // Length buckets from masked mean pooling of the top states.
        std::vector<double> weights(mask.size());
        for (std::size_t i = 0; i < mask.size(); ++i) weights[i] = mask[i] / live;
        Tensor pool = matmul(Tensor::from_values({1, static_cast<Index>(mask.size())}, weights), x);
        Tensor length_logits = add_bias(matmul(pool, length_w_), length_b_);

        EncoderOutput out;
        out.e_enc = x;
        out.length_logits = length_logits;
        out.src_mask = key_mask;
        out.src_len = static_cast<int>(live);
        return out;
    }

    // T = n + (argmax bucket - radius), clamped to [1, max_len]. Ties break
    // toward the lowest bucket.
    int predict_length(const Tensor& length_logits, int n) const {
        if (n < 1) throw ContractError("predict_length: n must be >= 1");
        const auto& v = length_logits.values();
        std::size_t best = 0;
        for (std::size_t i = 1; i < v.size(); ++i)
            if (v[i] > v[best]) best = i;
        const Index offset = static_cast<Index>(best) - cfg_.length_bucket_radius;
        Index t = static_cast<Index>(n) + offset;
        t = std::clamp<Index>(t, 1, cfg_.max_len);
        return static_cast<int>(t);
    }

    // Bottom L-1 decoder layers over <unk> inputs. Returns the top hidden
    // states H^0 and the head-averaged inter-attention weights A^0 of that
    // layer, which seed the coverage iteration.
    std::pair<Tensor, Tensor> decode_hidden(int target_len, const EncoderOutput& enc,
                                            const ForwardCtx& ctx = {}) const {
        if (target_len < 1) throw ContractError("decode_hidden: target length must be >= 1");
        if (static_cast<Index>(target_len) > cfg_.max_len)
            throw ContractError("decode_hidden: target length " + std::to_string(target_len) +
                                " exceeds max_len " + std::to_string(cfg_.max_len));
        std::vector<int> unk_ids(static_cast<std::size_t>(target_len), Vocabulary::kUnk);
        Tensor x = embed_positions(unk_ids, ctx);
        Tensor attn;
        for (std::size_t l = 0; l < dec_layers_.size(); ++l) {
            const bool want_attn = l + 1 == dec_layers_.size();
            auto [h, a] = decoder_layer(x, enc, dec_layers_[l], ctx, want_attn);
            x = h;
            if (want_attn) attn = a;
        }
        return {x, attn};
    }

    // One TCIR iteration: self-attention over H^{k-1}, then inter-attention
    // logits biased by lambda * (1 - C^k) in a single unprojected matrix as
    // the equations state, then FFN. Post-norm residuals wrap the
    // self-attention and FFN sublayers.
    std::pair<Tensor, Tensor> coverage_iteration(const Tensor& h_prev, const Tensor& c,
                                                 const EncoderOutput& enc,
                                                 const ForwardCtx& ctx = {}) const {
        if (!cfg_.use_tcir) throw ContractError("coverage_iteration: TCIR disabled");
        Tensor h_hat = postnorm_residual(
            h_prev, multi_head_attention(h_prev, h_prev, cov_self_, cfg_.n_heads).out,
            cov_norm_self_, ctx);
        Tensor bias = one_minus(c);
        Tensor scores = scale_by_scalar(matmul(h_hat, transpose_last_two(enc.e_enc)),
                                        1.0 / std::sqrt(static_cast<double>(cfg_.d_model)));
        Tensor logits = add(scores, scalar_mul(lambda_, bias));
        Tensor a = masked_softmax_lastdim(logits, enc.src_mask);
        Tensor m = matmul(a, enc.e_enc);
        Tensor h = postnorm_residual(m, feed_forward(m, cov_ffn_), cov_norm_ffn_, ctx);
        return {h, a};
    }

    // Chains K coverage iterations from the seeds (H^0, A^0); returns H^K.
    Tensor run_tcir(const Tensor& h0, const Tensor& a0, const EncoderOutput& enc, Index k,
                    const ForwardCtx& ctx = {},
                    std::vector<CoverageIterationState>* record = nullptr) const {
        if (k < 1) throw ContractError("run_tcir: K must be >= 1");
        Tensor h = h0;
        Tensor a = a0;
        for (Index it = 1; it <= k; ++it) {
            Tensor c = coverage_vector(a);
            auto [h_next, a_next] = coverage_iteration(h, c, enc, ctx);
            h = h_next;
            a = a_next;
            if (record || ctx.check_invariants) {
                CoverageIterationState state{h, a, c, static_cast<int>(it)};
                if (ctx.check_invariants)
                    check_coverage_state(state, enc.src_mask.values());
                if (record) record->push_back(state);
            }
        }
        return h;
    }

    // Full forward for one sentence: logits (target_len x vocab), projection
    // tied to the embedding table.
    Tensor forward(const std::vector<int>& src_ids, const std::vector<double>& src_mask,
                   int target_len, Index k, const ForwardCtx& ctx = {},
                   std::vector<CoverageIterationState>* record = nullptr,
                   EncoderOutput* enc_out = nullptr) const {
        EncoderOutput enc = encode(src_ids, src_mask, ctx);
        if (enc_out) *enc_out = enc;
        return forward_from_encoder(enc, target_len, k, ctx, record);
    }

    Tensor forward_from_encoder(const EncoderOutput& enc, int target_len, Index k,
                                const ForwardCtx& ctx = {},
                                std::vector<CoverageIterationState>* record = nullptr) const {
        auto [h0, a0] = decode_hidden(target_len, enc, ctx);
        Tensor h;
        if (cfg_.use_tcir) {
            h = run_tcir(h0, a0, enc, k, ctx, record);
        } else {
            auto [ht, at] = decoder_layer(h0, enc, top_, ctx, false);
            h = ht;
        }
        return output_logits(h);
    }

    Tensor output_logits(const Tensor& hidden) const {
        return matmul(hidden, transpose_last_two(embed_));
    }

private:
    struct EncoderLayer {
        AttentionParams self_attn;
        NormParams norm1;
        FfnParams ffn;
        NormParams norm2;
    };
    struct DecoderLayer {
        AttentionParams self_attn;
        NormParams norm1;
        AttentionParams inter_attn;
        NormParams norm2;
        FfnParams ffn;
        NormParams norm3;
    };

    Tensor embed_positions(const std::vector<int>& ids, const ForwardCtx& ctx) const {
        const Index len = static_cast<Index>(ids.size());
        const Index d = cfg_.d_model;
        Tensor emb = scale_by_scalar(embedding_lookup(embed_, ids),
                                     std::sqrt(static_cast<double>(d)));
        Tensor pe = Tensor::from_values(
            {len, d}, std::vector<double>(pe_table_.begin(), pe_table_.begin() + len * d));
        return ctx.maybe_dropout(add(emb, pe));
    }

    std::pair<Tensor, Tensor> decoder_layer(const Tensor& x, const EncoderOutput& enc,
                                            const DecoderLayer& layer, const ForwardCtx& ctx,
                                            bool want_attn) const {
        Tensor h1 = postnorm_residual(
            x, multi_head_attention(x, x, layer.self_attn, cfg_.n_heads).out, layer.norm1, ctx);
        MhaOutput inter = multi_head_attention(h1, enc.e_enc, layer.inter_attn, cfg_.n_heads,
                                               enc.src_mask, want_attn);
        Tensor h2 = postnorm_residual(h1, inter.out, layer.norm2, ctx);
        Tensor h3 = postnorm_residual(h2, feed_forward(h2, layer.ffn), layer.norm3, ctx);
        return {h3, inter.attn_avg};
    }

    ModelConfig cfg_;
    ParameterStore params_;
    Tensor embed_;
    std::vector<EncoderLayer> enc_layers_;
    Tensor length_w_, length_b_;
    std::vector<DecoderLayer> dec_layers_;
    AttentionParams cov_self_;
    NormParams cov_norm_self_;
    FfnParams cov_ffn_;
    NormParams cov_norm_ffn_;
    Tensor lambda_;
    DecoderLayer top_;
    Tensor sca_ws_;
    std::vector<double> pe_table_;
};

}  // namespace covnat
