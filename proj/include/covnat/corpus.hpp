#pragma once

#include <string>
#include <vector>

#include "covnat/error.hpp"
#include "covnat/io.hpp"
#include "covnat/vocab.hpp"

namespace covnat {

// One aligned pair as token ids, unpadded.
struct SentencePair {
    std::vector<int> src;
    std::vector<int> tgt;
};

// Raw parallel text: two aligned line files (.src / .tgt).
struct ParallelText {
    std::vector<std::string> src;
    std::vector<std::string> tgt;

    std::size_t size() const { return src.size(); }
};

inline ParallelText read_parallel(const std::string& src_path, const std::string& tgt_path) {
    ParallelText text{read_lines(src_path), read_lines(tgt_path)};
    if (text.src.size() != text.tgt.size())
        throw DataError("parallel corpus line count mismatch: " + src_path + " has " +
                        std::to_string(text.src.size()) + " lines, " + tgt_path + " has " +
                        std::to_string(text.tgt.size()));
    return text;
}

inline void write_parallel(const std::string& src_path, const std::string& tgt_path,
                           const ParallelText& text) {
    atomic_write_lines(src_path, text.src);
    atomic_write_lines(tgt_path, text.tgt);
}

inline std::vector<SentencePair> encode_corpus(const ParallelText& text, const Vocabulary& vocab) {
    std::vector<SentencePair> pairs;
    pairs.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        SentencePair p{vocab.encode(text.src[i]), vocab.encode(text.tgt[i])};
        if (p.src.empty() || p.tgt.empty())
            throw DataError("empty sentence at corpus line " + std::to_string(i + 1));
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace covnat
