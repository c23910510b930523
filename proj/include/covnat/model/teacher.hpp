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

struct BeamResult {
    std::vector<int> tokens;  // without bos/eos
    double score = 0.0;       // length-normalized log-probability
    bool finished = false;    // eos was generated before the length cap
};

// Small autoregressive encoder-decoder used for sequence-level distillation
// and candidate rescoring. Shares the student's vocabulary; frames the target
// side with bos/eos internally.
class TeacherModel {
public:
    TeacherModel(TeacherConfig config, std::uint64_t seed) : cfg_(config) {
        cfg_.validate();
        Rng rng(splitmix64(seed ^ stream_tag("at-teacher")));
        const Index d = cfg_.d_model;
        embed_ = params_.create("embed.table", {cfg_.vocab_size, d}, rng, kEmbedInitRange);
        for (Index l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "encoder.layer" + std::to_string(l);
            enc_layers_.push_back(EncoderLayer{
                make_attention(params_, p + ".self_attn", d, rng), make_norm(params_, p + ".norm1", d),
                make_ffn(params_, p + ".ffn", d, cfg_.d_hidden, rng), make_norm(params_, p + ".norm2", d)});
        }
        for (Index l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "decoder.layer" + std::to_string(l);
            dec_layers_.push_back(DecoderLayer{
                make_attention(params_, p + ".self_attn", d, rng), make_norm(params_, p + ".norm1", d),
                make_attention(params_, p + ".inter_attn", d, rng), make_norm(params_, p + ".norm2", d),
                make_ffn(params_, p + ".ffn", d, cfg_.d_hidden, rng), make_norm(params_, p + ".norm3", d)});
        }
        pe_table_ = sinusoidal_table(cfg_.max_len + 1, d);  // +1 for the bos frame
    }

    const TeacherConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    struct Encoded {
        Tensor e_enc;
        Tensor src_mask;
    };

    Encoded encode(const std::vector<int>& src_ids, const std::vector<double>& mask,
                   const ForwardCtx& ctx = {}) const {
        if (src_ids.empty()) throw ContractError("teacher encode: empty source");
        if (mask.size() != src_ids.size()) throw ContractError("teacher encode: mask length mismatch");
        Tensor key_mask = Tensor::from_values({static_cast<Index>(mask.size())},
                                              std::vector<double>(mask.begin(), mask.end()));
        Tensor x = embed_positions(src_ids, ctx);
        for (const auto& layer : enc_layers_) {
            Tensor h = postnorm_residual(
                x, multi_head_attention(x, x, layer.self_attn, cfg_.n_heads, key_mask).out,
                layer.norm1, ctx);
            x = postnorm_residual(h, feed_forward(h, layer.ffn), layer.norm2, ctx);
        }
        return {x, key_mask};
    }

    // Causally masked decoder over `decoder_input` (bos-framed); logits tied
    // to the embedding table.
    Tensor decoder_logits(const Encoded& enc, const std::vector<int>& decoder_input,
                          const ForwardCtx& ctx = {}) const {
        const Index t_len = static_cast<Index>(decoder_input.size());
        std::vector<double> tri(static_cast<std::size_t>(t_len * t_len), 0.0);
        for (Index i = 0; i < t_len; ++i)
            for (Index j = 0; j <= i; ++j) tri[static_cast<std::size_t>(i * t_len + j)] = 1.0;
        Tensor causal = Tensor::from_values({t_len, t_len}, std::move(tri));

        Tensor x = embed_positions(decoder_input, ctx);
        for (const auto& layer : dec_layers_) {
            Tensor h1 = postnorm_residual(
                x, multi_head_attention(x, x, layer.self_attn, cfg_.n_heads, causal).out,
                layer.norm1, ctx);
            Tensor h2 = postnorm_residual(
                h1, multi_head_attention(h1, enc.e_enc, layer.inter_attn, cfg_.n_heads, enc.src_mask).out,
                layer.norm2, ctx);
            x = postnorm_residual(h2, feed_forward(h2, layer.ffn), layer.norm3, ctx);
        }
        return matmul(x, transpose_last_two(embed_));
    }

    // Training objective for one pair: predict tgt + eos from bos + tgt.
    Tensor pair_ce_sum(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids,
                       const ForwardCtx& ctx = {}) const {
        if (static_cast<Index>(tgt_ids.size()) + 1 > cfg_.max_len + 1)
            throw ContractError("teacher pair: target longer than max_len");
        Encoded enc = encode(src_ids, std::vector<double>(src_ids.size(), 1.0), ctx);
        std::vector<int> input{Vocabulary::kBos};
        input.insert(input.end(), tgt_ids.begin(), tgt_ids.end());
        std::vector<int> labels(tgt_ids);
        labels.push_back(Vocabulary::kEos);
        return cross_entropy_sum_from_logits(decoder_logits(enc, input, ctx), labels);
    }

    // Total log-probability of candidate followed by eos, given src.
    double forced_logprob(const std::vector<int>& src_ids, const std::vector<int>& candidate) const {
        if (candidate.empty()) throw ContractError("forced_logprob: empty candidate");
        autograd::NoGradGuard no_grad;
        return -pair_ce_sum(src_ids, candidate).value();
    }

    // Teacher log-probability of the candidate divided by its length.
    double rescore(const std::vector<int>& src_ids, const std::vector<int>& candidate) const {
        return forced_logprob(src_ids, candidate) / static_cast<double>(candidate.size());
    }

    // Length-normalized beam search; beam = 1 is exactly greedy decoding.
    BeamResult beam_decode(const std::vector<int>& src_ids, Index beam) const {
        if (beam < 1) throw ContractError("beam_decode: beam must be >= 1");
        autograd::NoGradGuard no_grad;
        Encoded enc = encode(src_ids, std::vector<double>(src_ids.size(), 1.0));

        struct Hyp {
            std::vector<int> tokens;
            double logp = 0.0;
        };
        std::vector<Hyp> live{{{}, 0.0}};
        std::vector<BeamResult> finished;

        for (Index step = 0; step < cfg_.max_len && !live.empty(); ++step) {
            struct Cand {
                std::size_t from;
                int token;
                double logp;
            };
            std::vector<Cand> cands;
            for (std::size_t b = 0; b < live.size(); ++b) {
                std::vector<int> input{Vocabulary::kBos};
                input.insert(input.end(), live[b].tokens.begin(), live[b].tokens.end());
                Tensor logits = decoder_logits(enc, input);
                const Index v = logits.size(1);
                const Index last = logits.size(0) - 1;
                // log-softmax of the last row
                double mx = logits.at(last, 0);
                for (Index j = 1; j < v; ++j) mx = std::max(mx, logits.at(last, j));
                double z = 0.0;
                for (Index j = 0; j < v; ++j) z += std::exp(logits.at(last, j) - mx);
                const double logz = mx + std::log(z);
                for (Index j = 0; j < v; ++j)
                    cands.push_back({b, static_cast<int>(j), live[b].logp + logits.at(last, j) - logz});
            }
            std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
                if (a.logp != b.logp) return a.logp > b.logp;
                if (a.from != b.from) return a.from < b.from;
                return a.token < b.token;
            });
            std::vector<Hyp> next;
            for (const Cand& c : cands) {
                if (static_cast<Index>(next.size()) >= beam) break;
                if (c.token == Vocabulary::kEos) {
                    if (!live[c.from].tokens.empty()) {
                        const double norm =
                            c.logp / static_cast<double>(live[c.from].tokens.size() + 1);
                        finished.push_back({live[c.from].tokens, norm, true});
                    }
                    // eos consumes a beam slot either way
                    next.push_back({live[c.from].tokens, -std::numeric_limits<double>::infinity()});
                    next.back().tokens.clear();  // dead slot
                    continue;
                }
                Hyp h = live[c.from];
                h.tokens.push_back(c.token);
                h.logp = c.logp;
                next.push_back(std::move(h));
            }
            live.clear();
            for (auto& h : next)
                if (h.logp != -std::numeric_limits<double>::infinity()) live.push_back(std::move(h));
            if (static_cast<Index>(finished.size()) >= beam) break;
        }

        if (!finished.empty()) {
            std::stable_sort(finished.begin(), finished.end(),
                             [](const BeamResult& a, const BeamResult& b) { return a.score > b.score; });
            return finished.front();
        }
        // Length cap hit with no eos: fall back to the best live hypothesis.
        BeamResult r;
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& h : live) {
            if (h.tokens.empty()) continue;
            const double norm = h.logp / static_cast<double>(h.tokens.size());
            if (norm > best) {
                best = norm;
                r = {h.tokens, norm, false};
            }
        }
        if (r.tokens.empty()) r = {{Vocabulary::kUnk}, 0.0, false};
        return r;
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
        if (len > static_cast<Index>(pe_table_.size()) / d)
            throw ContractError("teacher: sequence longer than position table");
        Tensor emb = scale_by_scalar(embedding_lookup(embed_, ids), std::sqrt(static_cast<double>(d)));
        Tensor pe = Tensor::from_values(
            {len, d}, std::vector<double>(pe_table_.begin(), pe_table_.begin() + len * d));
        return ctx.maybe_dropout(add(emb, pe));
    }

    TeacherConfig cfg_;
    ParameterStore params_;
    Tensor embed_;
    std::vector<EncoderLayer> enc_layers_;
    std::vector<DecoderLayer> dec_layers_;
    std::vector<double> pe_table_;
};

}  // namespace covnat
