#pragma once

#include <cmath>
#include <vector>

#include "covnat/ops.hpp"
#include "covnat/tensor.hpp"

namespace covnat {

namespace detail {

// Masks are pad suffixes by construction; returns the unmasked prefix length.
inline Index unmasked_prefix(const std::vector<double>& mask) {
    Index k = 0;
    while (k < static_cast<Index>(mask.size()) && mask[static_cast<std::size_t>(k)] > 0.5) ++k;
    for (Index i = k; i < static_cast<Index>(mask.size()); ++i)
        if (mask[static_cast<std::size_t>(i)] > 0.5)
            throw ContractError("mask must be a contiguous prefix of ones");
    return k;
}

}  // namespace detail

// Mean negative log-likelihood over unmasked target positions.
inline Tensor mle_loss(const Tensor& logits, const std::vector<int>& targets,
                       const std::vector<double>& mask) {
    const Index k = detail::unmasked_prefix(mask);
    if (k == 0) throw ContractError("mle_loss: empty mask");
    if (logits.size(0) < k || static_cast<Index>(targets.size()) < k)
        throw ShapeError("mle_loss: fewer logit rows or targets than unmasked positions");
    Tensor rows = k == logits.size(0) ? logits : row_slice(logits, 0, k);
    std::vector<int> t(targets.begin(), targets.begin() + k);
    return cross_entropy_from_logits(rows, t);
}

// Cross entropy of the length-difference bucket classifier against the gold
// bucket. Out-of-range differences clamp to the edge bucket and count.
inline Tensor length_loss(const Tensor& length_logits, int n, int t_gold, Index radius,
                          long* clamp_counter = nullptr) {
    Index bucket = static_cast<Index>(t_gold) - static_cast<Index>(n) + radius;
    const Index n_buckets = 2 * radius + 1;
    if (bucket < 0 || bucket >= n_buckets) {
        if (clamp_counter) ++*clamp_counter;
        bucket = std::clamp<Index>(bucket, 0, n_buckets - 1);
    }
    return cross_entropy_from_logits(length_logits, {static_cast<int>(bucket)});
}

// Sentence-level coverage agreement: L2 distance between the mean-pooled
// transformed source embeddings and the expected translation embeddings,
// scaled by 1/sqrt(d_model). Differentiable into W_s, the embedding table and
// the logits. Both means reduce in sorted order over row-stable products, so
// the loss is exactly invariant to source-token and target-position
// permutations.
inline Tensor sca_loss(const std::vector<int>& src_ids, const Tensor& logits,
                       const Tensor& embed_table, const Tensor& w_s) {
    const Index d = embed_table.size(1);
    Tensor e_src = embedding_lookup(embed_table, src_ids);
    Tensor src_repr = mean_over_axis(relu(matmul_rowwise(e_src, w_s)), 0);
    Tensor p = softmax_lastdim(logits);
    Tensor hyp_repr = mean_over_axis(matmul_rowwise(p, embed_table), 0);
    return scale_by_scalar(l2_distance(src_repr, hyp_repr), 1.0 / std::sqrt(static_cast<double>(d)));
}

// Inverse-square-root schedule with linear warmup. step >= 1.
inline double lr_schedule(long step, long warmup, double peak_lr) {
    if (step < 1) throw ContractError("lr_schedule: step must be >= 1");
    if (warmup < 1) throw ContractError("lr_schedule: warmup must be >= 1");
    if (step <= warmup) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    return peak_lr * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
}

}  // namespace covnat
