#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "covnat/error.hpp"
#include "covnat/io.hpp"

namespace covnat {

// Corpus-level BLEU-4 with brevity penalty. Precisions for n >= 2 use add-one
// smoothing so short synthetic sentences keep the metric informative; the
// unigram precision is unsmoothed.
inline double bleu(const std::vector<std::vector<std::string>>& hypotheses,
                   const std::vector<std::vector<std::string>>& references) {
    if (hypotheses.size() != references.size())
        throw ContractError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                            std::to_string(references.size()) + " references");
    if (hypotheses.empty()) throw ContractError("bleu: empty corpus");

    constexpr int kMaxOrder = 4;
    long match[kMaxOrder] = {0, 0, 0, 0};
    long total[kMaxOrder] = {0, 0, 0, 0};
    long hyp_len = 0, ref_len = 0;

    auto count_ngrams = [](const std::vector<std::string>& toks, int n) {
        std::map<std::string, long> counts;
        if (static_cast<int>(toks.size()) < n) return counts;
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
            std::string key;
            for (int j = 0; j < n; ++j) {
                if (j) key += '\x1f';
                key += toks[i + static_cast<std::size_t>(j)];
            }
            ++counts[key];
        }
        return counts;
    };

    for (std::size_t s = 0; s < hypotheses.size(); ++s) {
        hyp_len += static_cast<long>(hypotheses[s].size());
        ref_len += static_cast<long>(references[s].size());
        for (int n = 1; n <= kMaxOrder; ++n) {
            auto hyp_counts = count_ngrams(hypotheses[s], n);
            auto ref_counts = count_ngrams(references[s], n);
            for (const auto& [key, count] : hyp_counts) {
                total[n - 1] += count;
                auto it = ref_counts.find(key);
                if (it != ref_counts.end()) match[n - 1] += std::min(count, it->second);
            }
        }
    }

    if (hyp_len == 0) return 0.0;
    double log_precision = 0.0;
    for (int n = 1; n <= kMaxOrder; ++n) {
        double m = static_cast<double>(match[n - 1]);
        double t = static_cast<double>(total[n - 1]);
        if (n >= 2) {
            m += 1.0;
            t += 1.0;
        }
        if (m == 0.0 || t == 0.0) return 0.0;
        log_precision += std::log(m / t) / kMaxOrder;
    }
    const double bp = hyp_len < ref_len
                          ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                          : 1.0;
    return 100.0 * bp * std::exp(log_precision);
}

inline double bleu_lines(const std::vector<std::string>& hyp_lines,
                         const std::vector<std::string>& ref_lines) {
    if (hyp_lines.size() != ref_lines.size())
        throw ContractError("bleu: hypothesis/reference line count mismatch");
    std::vector<std::vector<std::string>> hyps, refs;
    hyps.reserve(hyp_lines.size());
    refs.reserve(ref_lines.size());
    for (const auto& l : hyp_lines) hyps.push_back(split_tokens(l));
    for (const auto& l : ref_lines) refs.push_back(split_tokens(l));
    return bleu(hyps, refs);
}

// BLEU over id sequences (rendered as digit tokens).
inline double bleu_ids(const std::vector<std::vector<int>>& hyps,
                       const std::vector<std::vector<int>>& refs) {
    std::vector<std::vector<std::string>> h, r;
    h.reserve(hyps.size());
    r.reserve(refs.size());
    for (const auto& seq : hyps) {
        std::vector<std::string> toks;
        for (int id : seq) toks.push_back(std::to_string(id));
        h.push_back(std::move(toks));
    }
    for (const auto& seq : refs) {
        std::vector<std::string> toks;
        for (int id : seq) toks.push_back(std::to_string(id));
        r.push_back(std::move(toks));
    }
    return bleu(h, r);
}

}  // namespace covnat
