#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "covnat/decode.hpp"
#include "covnat/eval/bleu.hpp"

namespace covnat {

// Per-sentence decode accounting used by the corpus-level metrics.
struct DecodeMeta {
    long removed = 0;
    long raw_len = 0;
    int src_len = 0;
};

struct RepeatedTokenRatios {
    double all = 0.0;
    double short_half = 0.0;
    double long_half = 0.0;
};

// 100 * (removed repeated tokens) / (raw decoded tokens), overall and split
// into equal short/long halves by source length.
inline RepeatedTokenRatios repeated_token_ratio(const std::vector<DecodeMeta>& decodes) {
    if (decodes.empty()) throw ContractError("repeated_token_ratio: empty corpus");
    auto ratio = [](const std::vector<std::size_t>& idx, const std::vector<DecodeMeta>& d) {
        long removed = 0, raw = 0;
        for (std::size_t i : idx) {
            removed += d[i].removed;
            raw += d[i].raw_len;
        }
        return raw == 0 ? 0.0 : 100.0 * static_cast<double>(removed) / static_cast<double>(raw);
    };
    std::vector<std::size_t> order(decodes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return decodes[a].src_len < decodes[b].src_len;
    });
    const std::size_t half = (order.size() + 1) / 2;
    std::vector<std::size_t> short_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<std::size_t> long_idx(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
    std::vector<std::size_t> all_idx(order);

    RepeatedTokenRatios r;
    r.all = ratio(all_idx, decodes);
    r.short_half = ratio(short_idx, decodes);
    r.long_half = long_idx.empty() ? 0.0 : ratio(long_idx, decodes);
    return r;
}

struct LengthBucket {
    int lo = 0;
    int hi = 0;  // exclusive; INT_MAX for the open bucket
    long count = 0;
    std::optional<double> bleu_score;
};

// Per-bucket BLEU stratified by source length. Empty buckets stay absent.
inline std::vector<LengthBucket> length_bucket_report(const std::vector<int>& src_lens,
                                                      const std::vector<std::vector<std::string>>& hyps,
                                                      const std::vector<std::vector<std::string>>& refs,
                                                      const std::vector<int>& edges) {
    if (src_lens.size() != hyps.size() || hyps.size() != refs.size())
        throw ContractError("length_bucket_report: input size mismatch");
    if (edges.size() < 2) throw ContractError("length_bucket_report: need at least one bucket");
    std::vector<LengthBucket> buckets;
    for (std::size_t b = 0; b + 1 < edges.size(); ++b)
        buckets.push_back({edges[b], edges[b + 1], 0, std::nullopt});

    for (std::size_t b = 0; b < buckets.size(); ++b) {
        std::vector<std::vector<std::string>> h, r;
        for (std::size_t i = 0; i < src_lens.size(); ++i) {
            if (src_lens[i] >= buckets[b].lo && src_lens[i] < buckets[b].hi) {
                h.push_back(hyps[i]);
                r.push_back(refs[i]);
            }
        }
        buckets[b].count = static_cast<long>(h.size());
        if (!h.empty()) buckets[b].bleu_score = bleu(h, r);
    }
    return buckets;
}

struct LatencyStats {
    double mean_ms = 0.0;
    long count = 0;
};

// Mean per-sentence decode time over single-sentence calls (no mini-batching).
template <class DecodeFn>
LatencyStats measure_latency(DecodeFn&& decode_one, const std::vector<std::vector<int>>& sources) {
    LatencyStats stats;
    if (sources.empty()) return stats;
    double total_ms = 0.0;
    for (const auto& src : sources) {
        const auto start = std::chrono::steady_clock::now();
        decode_one(src);
        const auto end = std::chrono::steady_clock::now();
        total_ms += std::chrono::duration<double, std::milli>(end - start).count();
    }
    stats.mean_ms = total_ms / static_cast<double>(sources.size());
    stats.count = static_cast<long>(sources.size());
    return stats;
}

struct EvalReport {
    double bleu_score = 0.0;
    RepeatedTokenRatios repeats;
    std::vector<LengthBucket> buckets;
    LatencyStats latency;
    Index k_dec = 0;
    int lpd_radius = 0;
    std::string smoothing = "add-one on n-gram precisions for n >= 2";

    std::vector<std::string> to_text() const {
        char buf[160];
        std::vector<std::string> out;
        auto line = [&](const char* fmt, auto... args) {
            std::snprintf(buf, sizeof(buf), fmt, args...);
            out.emplace_back(buf);
        };
        line("bleu %.4f", bleu_score);
        line("smoothing %s", smoothing.c_str());
        line("k_dec %lld", static_cast<long long>(k_dec));
        line("lpd_radius %d", lpd_radius);
        line("repeated_token_ratio_all %.4f", repeats.all);
        line("repeated_token_ratio_short %.4f", repeats.short_half);
        line("repeated_token_ratio_long %.4f", repeats.long_half);
        for (const auto& b : buckets) {
            if (!b.bleu_score) continue;
            if (b.hi == std::numeric_limits<int>::max())
                line("bucket_bleu[%d,inf) count=%ld %.4f", b.lo, b.count, *b.bleu_score);
            else
                line("bucket_bleu[%d,%d) count=%ld %.4f", b.lo, b.hi, b.count, *b.bleu_score);
        }
        line("latency_mean_ms %.4f", latency.mean_ms);
        line("latency_sentences %ld", latency.count);
        return out;
    }

    std::vector<std::string> to_csv() const {
        char buf[160];
        std::vector<std::string> out;
        out.emplace_back("metric,lo,hi,count,value");
        auto line = [&](const char* fmt, auto... args) {
            std::snprintf(buf, sizeof(buf), fmt, args...);
            out.emplace_back(buf);
        };
        line("bleu,,,,%.4f", bleu_score);
        line("repeat_ratio_all,,,,%.4f", repeats.all);
        line("repeat_ratio_short,,,,%.4f", repeats.short_half);
        line("repeat_ratio_long,,,,%.4f", repeats.long_half);
        for (const auto& b : buckets) {
            if (!b.bleu_score) continue;
            line("bucket_bleu,%d,%d,%ld,%.4f", b.lo, b.hi, b.count, *b.bleu_score);
        }
        line("latency_mean_ms,,,%ld,%.4f", latency.count, latency.mean_ms);
        return out;
    }
};

// Per-iteration A^k / C^k matrices for one sentence, as CSV rows
// "iter,t,i,A,C" at six decimal places.
inline std::vector<std::string> coverage_dump(const NatModel& model, const std::vector<int>& src,
                                              Index k_dec) {
    autograd::NoGradGuard no_grad;
    EncoderOutput enc = model.encode(src, std::vector<double>(src.size(), 1.0));
    const int t_len = model.predict_length(enc.length_logits, static_cast<int>(src.size()));
    auto [h0, a0] = model.decode_hidden(t_len, enc);
    std::vector<CoverageIterationState> states;
    model.run_tcir(h0, a0, enc, k_dec, {}, &states);

    std::vector<std::string> out;
    out.emplace_back("iter,t,i,A,C");
    char buf[96];
    for (const auto& s : states) {
        for (Index t = 0; t < s.a.size(0); ++t) {
            for (Index i = 0; i < s.a.size(1); ++i) {
                std::snprintf(buf, sizeof(buf), "%d,%lld,%lld,%.6f,%.6f", s.k,
                              static_cast<long long>(t), static_cast<long long>(i), s.a.at(t, i),
                              s.c.at(t, i));
                out.emplace_back(buf);
            }
        }
    }
    return out;
}

}  // namespace covnat
