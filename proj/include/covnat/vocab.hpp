#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "covnat/error.hpp"
#include "covnat/io.hpp"

namespace covnat {

// Token <-> id mapping shared between source and target sides.
// Reserved ids: pad=0, unk=1, bos=2, eos=3. Id 1 is the filler token fed to
// the non-autoregressive decoder.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    static const std::vector<std::string>& reserved_tokens() {
        static const std::vector<std::string> r{"<pad>", "<unk>", "<bos>", "<eos>"};
        return r;
    }

    Vocabulary() : tokens_(reserved_tokens()) { rebuild_index(); }

    static Vocabulary build(const std::vector<std::string>& corpus_paths, int min_count) {
        std::map<std::string, long> counts;
        for (const auto& path : corpus_paths)
            for (const auto& line : read_lines(path))
                for (const auto& tok : split_tokens(line)) ++counts[tok];
        if (counts.empty()) throw ConfigError("build_vocab: empty corpus");

        std::vector<std::pair<std::string, long>> entries(counts.begin(), counts.end());
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocabulary v;
        for (const auto& [tok, count] : entries) {
            if (count < min_count) continue;
            v.tokens_.push_back(tok);
        }
        v.rebuild_index();
        return v;
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw DataError("vocabulary id out of range: " + std::to_string(id));
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::vector<int> encode(const std::string& line) const {
        std::vector<int> ids;
        for (const auto& tok : split_tokens(line)) ids.push_back(id(tok));
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::vector<std::string> toks;
        toks.reserve(ids.size());
        for (int i : ids) toks.push_back(token(i));
        return join_tokens(toks);
    }

    // One token per line, line number = id.
    void save(const std::string& path) const { atomic_write_lines(path, tokens_); }

    static Vocabulary load(const std::string& path) {
        Vocabulary v;
        v.tokens_ = read_lines(path);
        if (v.tokens_.size() < reserved_tokens().size())
            throw DataError("vocabulary file too short: " + path);
        for (std::size_t i = 0; i < reserved_tokens().size(); ++i)
            if (v.tokens_[i] != reserved_tokens()[i])
                throw DataError("vocabulary file missing reserved token at id " + std::to_string(i));
        v.rebuild_index();
        return v;
    }

private:
    void rebuild_index() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
    }

    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

}  // namespace covnat
