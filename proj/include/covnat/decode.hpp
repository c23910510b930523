#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "covnat/model/nat.hpp"
#include "covnat/model/teacher.hpp"
#include "covnat/ops.hpp"

namespace covnat {

struct DecodeResult {
    std::vector<int> raw_tokens;          // argmax output, length = predicted length
    std::vector<int> tokens;              // after repeated-token removal
    int predicted_len = 0;
    std::vector<double> token_probs;      // per-position probability of the chosen token
    std::optional<double> rescore_value;  // teacher score, when LPD rescoring ran
    long removed_count = 0;
    std::vector<CoverageIterationState> coverage;  // populated on request
};

// Collapses runs of consecutive identical tokens to a single token.
inline std::pair<std::vector<int>, long> postprocess_dedup(const std::vector<int>& tokens) {
    std::vector<int> out;
    long removed = 0;
    for (int t : tokens) {
        if (!out.empty() && out.back() == t)
            ++removed;
        else
            out.push_back(t);
    }
    return {out, removed};
}

// All positions argmax simultaneously; ties break toward the lowest token id.
inline DecodeResult greedy_parallel_decode(const NatModel& model, const std::vector<int>& src,
                                           Index k_dec, bool record_coverage = false) {
    if (k_dec < 1 && model.config().use_tcir) throw ContractError("greedy_parallel_decode: K_dec must be >= 1");
    autograd::NoGradGuard no_grad;
    EncoderOutput enc = model.encode(src, std::vector<double>(src.size(), 1.0));
    DecodeResult res;
    res.predicted_len = model.predict_length(enc.length_logits, static_cast<int>(src.size()));
    Tensor logits = model.forward_from_encoder(enc, res.predicted_len, k_dec, {},
                                               record_coverage ? &res.coverage : nullptr);
    Tensor probs = softmax_lastdim(logits);
    const Index v = logits.size(1);
    for (Index t = 0; t < logits.size(0); ++t) {
        Index best = 0;
        for (Index j = 1; j < v; ++j)
            if (logits.at(t, j) > logits.at(t, best)) best = j;
        res.raw_tokens.push_back(static_cast<int>(best));
        res.token_probs.push_back(probs.at(t, best));
    }
    auto [deduped, removed] = postprocess_dedup(res.raw_tokens);
    res.tokens = std::move(deduped);
    res.removed_count = removed;
    return res;
}

// Length-parallel decoding: greedy-decode every candidate length around the
// predicted one and keep the candidate the teacher scores highest. Ties break
// toward the length closest to the prediction, then the smaller length.
// Radius 0 is a passthrough to greedy decoding.
inline DecodeResult lpd_decode(const NatModel& model, const TeacherModel* teacher,
                               const std::vector<int>& src, Index k_dec, int radius) {
    if (radius < 0) throw ContractError("lpd_decode: radius must be >= 0");
    if (radius == 0) return greedy_parallel_decode(model, src, k_dec);
    if (teacher == nullptr)
        throw ConfigError("lpd_decode: teacher rescoring model required for radius > 0");

    autograd::NoGradGuard no_grad;
    EncoderOutput enc = model.encode(src, std::vector<double>(src.size(), 1.0));
    const int t_hat = model.predict_length(enc.length_logits, static_cast<int>(src.size()));
    const int lo = std::max(1, t_hat - radius);
    const int hi = std::min<int>(static_cast<int>(model.config().max_len), t_hat + radius);

    DecodeResult best;
    double best_score = 0.0;
    for (int t = lo; t <= hi; ++t) {
        DecodeResult cand;
        cand.predicted_len = t_hat;
        Tensor logits = model.forward_from_encoder(enc, t, k_dec);
        Tensor probs = softmax_lastdim(logits);
        const Index v = logits.size(1);
        for (Index r = 0; r < logits.size(0); ++r) {
            Index arg = 0;
            for (Index j = 1; j < v; ++j)
                if (logits.at(r, j) > logits.at(r, arg)) arg = j;
            cand.raw_tokens.push_back(static_cast<int>(arg));
            cand.token_probs.push_back(probs.at(r, arg));
        }
        auto [deduped, removed] = postprocess_dedup(cand.raw_tokens);
        cand.tokens = std::move(deduped);
        cand.removed_count = removed;
        const double score = teacher->rescore(src, cand.raw_tokens);
        cand.rescore_value = score;

        bool take = best.raw_tokens.empty();
        if (!take && score > best_score) take = true;
        if (!take && score == best_score) {
            const int cur_len = static_cast<int>(cand.raw_tokens.size());
            const int best_len = static_cast<int>(best.raw_tokens.size());
            const int cur_gap = std::abs(cur_len - t_hat);
            const int best_gap = std::abs(best_len - t_hat);
            take = cur_gap < best_gap || (cur_gap == best_gap && cur_len < best_len);
        }
        if (take) {
            best = std::move(cand);
            best_score = score;
        }
    }
    return best;
}

}  // namespace covnat
