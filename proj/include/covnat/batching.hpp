#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "covnat/corpus.hpp"
#include "covnat/error.hpp"
#include "covnat/random.hpp"
#include "covnat/tensor.hpp"
#include "covnat/vocab.hpp"

namespace covnat {

// Padded id matrices with masks. Mask is 1 exactly on non-pad positions.
struct Batch {
    std::vector<std::vector<int>> src;
    std::vector<std::vector<int>> tgt;
    std::vector<std::vector<double>> src_mask;
    std::vector<std::vector<double>> tgt_mask;
    std::vector<int> src_len;
    std::vector<int> tgt_len;  // gold target lengths

    std::size_t npairs() const { return src.size(); }
};

namespace detail {

inline void pad_into(Batch& batch, const SentencePair& p, int max_src, int max_tgt) {
    std::vector<int> s(p.src), t(p.tgt);
    std::vector<double> sm(p.src.size(), 1.0), tm(p.tgt.size(), 1.0);
    s.resize(static_cast<std::size_t>(max_src), Vocabulary::kPad);
    t.resize(static_cast<std::size_t>(max_tgt), Vocabulary::kPad);
    sm.resize(static_cast<std::size_t>(max_src), 0.0);
    tm.resize(static_cast<std::size_t>(max_tgt), 0.0);
    batch.src.push_back(std::move(s));
    batch.tgt.push_back(std::move(t));
    batch.src_mask.push_back(std::move(sm));
    batch.tgt_mask.push_back(std::move(tm));
    batch.src_len.push_back(static_cast<int>(p.src.size()));
    batch.tgt_len.push_back(static_cast<int>(p.tgt.size()));
}

}  // namespace detail

// Groups pairs so that each batch's padded token count (pairs x widest
// sentence, counting the longer side) stays within max_tokens. Pairs are
// length-sorted before packing to limit padding waste, and batch order is
// shuffled deterministically per seed. Every pair appears exactly once per
// epoch; pairs longer than max_tokens are skipped and counted.
inline std::vector<Batch> batch_by_tokens(const std::vector<SentencePair>& pairs, Index max_tokens,
                                          std::uint64_t seed, long* skipped_counter = nullptr) {
    Rng rng(splitmix64(seed ^ stream_tag("batch_by_tokens")));

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.bounded(i)]);

    auto pair_len = [&](std::size_t idx) {
        return static_cast<Index>(std::max(pairs[idx].src.size(), pairs[idx].tgt.size()));
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pair_len(a) < pair_len(b); });

    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> current;
    Index current_max_len = 0;
    for (std::size_t idx : order) {
        const Index len = pair_len(idx);
        if (len > max_tokens) {
            if (skipped_counter) ++*skipped_counter;
            continue;
        }
        const Index widest = std::max(current_max_len, len);
        if (!current.empty() && static_cast<Index>(current.size() + 1) * widest > max_tokens) {
            groups.push_back(std::move(current));
            current.clear();
            current_max_len = 0;
        }
        current.push_back(idx);
        current_max_len = std::max(current_max_len, len);
    }
    if (!current.empty()) groups.push_back(std::move(current));

    for (std::size_t i = groups.size(); i > 1; --i) std::swap(groups[i - 1], groups[rng.bounded(i)]);

    std::vector<Batch> batches;
    batches.reserve(groups.size());
    for (const auto& g : groups) {
        int max_src = 0, max_tgt = 0;
        for (std::size_t idx : g) {
            max_src = std::max(max_src, static_cast<int>(pairs[idx].src.size()));
            max_tgt = std::max(max_tgt, static_cast<int>(pairs[idx].tgt.size()));
        }
        Batch b;
        for (std::size_t idx : g) detail::pad_into(b, pairs[idx], max_src, max_tgt);
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace covnat
