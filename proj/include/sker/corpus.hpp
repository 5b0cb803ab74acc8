#pragma once

#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sker/linalg.hpp"

namespace sker {

inline constexpr const char* kBlankToken = "#idiom#";
inline constexpr const char* kMaskToken = "#mask#";  // secondary blanks in multi-blank docs

// One passage with one blank and m candidate idioms, exactly one correct.
struct ClozeInstance {
    std::vector<std::string> tokens;  // tokens[blank_index] == kBlankToken
    std::size_t blank_index = 0;
    std::vector<std::string> candidates;
    std::size_t gold = 0;

    void validate() const {
        if (blank_index >= tokens.size() || tokens[blank_index] != kBlankToken)
            throw std::invalid_argument("ClozeInstance: blank sentinel missing at blank_index");
        std::size_t blanks = 0;
        for (const auto& t : tokens) blanks += (t == kBlankToken);
        if (blanks != 1)
            throw std::invalid_argument("ClozeInstance: expected exactly one blank sentinel, got " +
                                        std::to_string(blanks));
        if (candidates.size() < 2)
            throw std::invalid_argument("ClozeInstance: need at least 2 candidates");
        std::set<std::string> uniq(candidates.begin(), candidates.end());
        if (uniq.size() != candidates.size())
            throw std::invalid_argument("ClozeInstance: duplicate candidates");
        if (gold >= candidates.size())
            throw std::invalid_argument("ClozeInstance: gold index out of range");
    }
};

struct CorpusSplit {
    std::string name;  // train, dev, test, ran, sim, out, or custom
    std::vector<ClozeInstance> instances;
};

enum class TokenizeMode { whitespace, character };

namespace detail {

inline bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Splits a placeholder-free segment into tokens; character mode yields one
// token per UTF-8 code point, skipping whitespace.
inline void tokenize_segment(const std::string& seg, TokenizeMode mode,
                             std::vector<std::string>& out) {
    if (mode == TokenizeMode::whitespace) {
        std::string cur;
        for (char c : seg) {
            if (is_space(c)) {
                if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
    } else {
        std::size_t i = 0;
        while (i < seg.size()) {
            const unsigned char b = seg[i];
            std::size_t len = b < 0x80 ? 1 : b < 0xE0 ? 2 : b < 0xF0 ? 3 : 4;
            len = std::min(len, seg.size() - i);
            if (!is_space(seg[i])) out.push_back(seg.substr(i, len));
            i += len;
        }
    }
}

}  // namespace detail

// ChID-compatible JSONL: {"content": "... #idiom# ...", "candidates": [[...],...],
// "groundTruth": ["...", ...]}. Each blank yields one instance; the other
// blanks of the same document become kMaskToken.
inline CorpusSplit load_jsonl(const std::string& path, const std::string& name = "custom",
                              TokenizeMode mode = TokenizeMode::whitespace) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    CorpusSplit split;
    split.name = name;
    std::string line;
    std::size_t line_no = 0;
    const std::string placeholder = kBlankToken;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ": line " + std::to_string(line_no);
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + ": invalid JSON: " + e.what());
        }
        if (!doc.contains("content") || !doc.contains("candidates") || !doc.contains("groundTruth"))
            throw std::runtime_error(where + ": missing content/candidates/groundTruth");
        const std::string content = doc["content"].get<std::string>();

        // split content around placeholders
        std::vector<std::string> segments;
        std::size_t pos = 0, found;
        while ((found = content.find(placeholder, pos)) != std::string::npos) {
            segments.push_back(content.substr(pos, found - pos));
            pos = found + placeholder.size();
        }
        segments.push_back(content.substr(pos));
        const std::size_t n_blanks = segments.size() - 1;
        if (n_blanks == 0) throw std::runtime_error(where + ": content has no " + placeholder);

        const auto& gts = doc["groundTruth"];
        const auto& cands = doc["candidates"];
        if (gts.size() != n_blanks)
            throw std::runtime_error(where + ": " + std::to_string(n_blanks) + " blanks but " +
                                     std::to_string(gts.size()) + " groundTruth entries");
        if (cands.size() != n_blanks)
            throw std::runtime_error(where + ": " + std::to_string(n_blanks) + " blanks but " +
                                     std::to_string(cands.size()) + " candidate arrays");

        for (std::size_t b = 0; b < n_blanks; ++b) {
            ClozeInstance inst;
            for (std::size_t s = 0; s < segments.size(); ++s) {
                detail::tokenize_segment(segments[s], mode, inst.tokens);
                if (s + 1 < segments.size()) {
                    if (s == b) {
                        inst.blank_index = inst.tokens.size();
                        inst.tokens.push_back(kBlankToken);
                    } else {
                        inst.tokens.push_back(kMaskToken);
                    }
                }
            }
            for (const auto& c : cands[b]) inst.candidates.push_back(c.get<std::string>());
            const std::string gold = gts[b].get<std::string>();
            const auto it = std::find(inst.candidates.begin(), inst.candidates.end(), gold);
            if (it == inst.candidates.end())
                throw std::runtime_error(where + ": gold idiom \"" + gold +
                                         "\" absent from candidates of blank " + std::to_string(b));
            inst.gold = static_cast<std::size_t>(it - inst.candidates.begin());
            try {
                inst.validate();
            } catch (const std::exception& e) {
                throw std::runtime_error(where + ": " + e.what());
            }
            split.instances.push_back(std::move(inst));
        }
    }
    return split;
}

// Deterministic partition of 0..n-1 into batches; final batch may be short.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          std::uint64_t seed, bool shuffle) {
    if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        Rng rng(seed);
        rng.shuffle(order);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + i, order.begin() + std::min(i + batch_size, n));
    }
    return batches;
}

inline std::vector<std::vector<std::size_t>> make_batches(const CorpusSplit& split,
                                                          std::size_t batch_size,
                                                          std::uint64_t seed, bool shuffle) {
    return make_batches(split.instances.size(), batch_size, seed, shuffle);
}

inline std::set<std::string> vocabulary(const CorpusSplit& split) {
    std::set<std::string> vocab;
    for (const auto& inst : split.instances)
        vocab.insert(inst.candidates.begin(), inst.candidates.end());
    return vocab;
}

}  // namespace sker
