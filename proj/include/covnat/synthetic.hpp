#pragma once

#include <string>
#include <vector>

#include "covnat/corpus.hpp"
#include "covnat/error.hpp"
#include "covnat/random.hpp"

namespace covnat {

// Knobs for the synthetic translation tasks. The multi-synonym task is the
// one that injects target-side multimodality: each source token has
// `synonyms` valid translations and the reference commits to one per
// occurrence, so any single reference under-determines the target.
struct LexiconParams {
    int n_source_types = 40;
    int synonyms = 2;
    int min_len = 3;
    int max_len = 30;
};

namespace synth {

inline std::string copy_token(int t) { return "w" + std::to_string(t); }
inline std::string src_token(int t) { return "s" + std::to_string(t); }
inline std::string swap_token(int t) { return "t" + std::to_string(t); }
inline std::string synonym_token(int t, int k) {
    return "t" + std::to_string(t) + "_" + std::to_string(k);
}

}  // namespace synth

// Deterministic pure function of (task, size, seed, params).
inline ParallelText gen_synthetic(const std::string& task, int size, std::uint64_t seed,
                                  const LexiconParams& params) {
    if (task != "copy" && task != "reverse" && task != "lexical-swap" && task != "multi-synonym")
        throw ConfigError("unknown synthetic task: " + task +
                          " (expected copy|reverse|lexical-swap|multi-synonym)");
    if (size <= 0) throw ConfigError("gen_synthetic: size must be positive");
    if (params.n_source_types < 1 || params.synonyms < 1 || params.min_len < 1 ||
        params.max_len < params.min_len)
        throw ConfigError("gen_synthetic: invalid lexicon parameters");

    Rng rng(splitmix64(seed ^ stream_tag(task)));
    ParallelText out;
    out.src.reserve(static_cast<std::size_t>(size));
    out.tgt.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        const int len = static_cast<int>(rng.range(params.min_len, params.max_len));
        std::vector<int> types(static_cast<std::size_t>(len));
        for (int& t : types) t = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(params.n_source_types)));

        std::vector<std::string> src_toks, tgt_toks;
        src_toks.reserve(types.size());
        tgt_toks.reserve(types.size());
        if (task == "copy" || task == "reverse") {
            for (int t : types) src_toks.push_back(synth::copy_token(t));
            tgt_toks = src_toks;
            if (task == "reverse") std::reverse(tgt_toks.begin(), tgt_toks.end());
        } else if (task == "lexical-swap") {
            for (int t : types) {
                src_toks.push_back(synth::src_token(t));
                tgt_toks.push_back(synth::swap_token(t));
            }
        } else {  // multi-synonym
            for (int t : types) {
                src_toks.push_back(synth::src_token(t));
                const int k = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(params.synonyms)));
                tgt_toks.push_back(synth::synonym_token(t, k));
            }
        }
        out.src.push_back(join_tokens(src_toks));
        out.tgt.push_back(join_tokens(tgt_toks));
    }
    return out;
}

// Reference-aware checker for the multi-synonym task: every target token must
// be one of the registered synonyms of the source token aligned to it.
inline bool multi_synonym_consistent(const LexiconParams& params, const std::string& src_line,
                                     const std::string& tgt_line) {
    auto src = split_tokens(src_line);
    auto tgt = split_tokens(tgt_line);
    if (src.size() != tgt.size()) return false;
    for (std::size_t i = 0; i < src.size(); ++i) {
        bool ok = false;
        for (int k = 0; k < params.synonyms && !ok; ++k) {
            for (int t = 0; t < params.n_source_types; ++t) {
                if (src[i] == synth::src_token(t) && tgt[i] == synth::synonym_token(t, k)) {
                    ok = true;
                    break;
                }
            }
        }
        if (!ok) return false;
    }
    return true;
}

}  // namespace covnat
