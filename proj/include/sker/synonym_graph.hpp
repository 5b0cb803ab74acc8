#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sker/embeddings.hpp"

namespace sker {

enum class GraphSource { dictionary, embedding_threshold };

inline const char* to_string(GraphSource s) {
    return s == GraphSource::dictionary ? "dictionary" : "embedding_threshold";
}

// Star graph: center idiom plus its synonym group; neighbor-neighbor edges
// are not represented.
struct SynonymGraph {
    std::string center;
    std::vector<std::string> neighbors;
    GraphSource source = GraphSource::dictionary;

    bool operator==(const SynonymGraph& o) const {
        return center == o.center && neighbors == o.neighbors && source == o.source;
    }
};

struct SynonymDictionary {
    std::vector<std::vector<std::string>> groups;  // each group >= 2 distinct idioms
};

// One synonym group per non-empty line, whitespace separated.
inline SynonymDictionary load_dictionary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synonym dictionary: " + path);
    SynonymDictionary dict;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::vector<std::string> group;
        std::string idiom;
        while (ls >> idiom) {
            if (std::find(group.begin(), group.end(), idiom) == group.end())
                group.push_back(idiom);
        }
        if (group.empty()) continue;
        if (group.size() < 2)
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": synonym group needs at least 2 distinct idioms");
        dict.groups.push_back(std::move(group));
    }
    return dict;
}

inline SynonymGraph build_from_dictionary(const SynonymDictionary& dict,
                                          const std::string& idiom) {
    SynonymGraph g;
    g.center = idiom;
    g.source = GraphSource::dictionary;
    for (const auto& group : dict.groups) {
        if (std::find(group.begin(), group.end(), idiom) == group.end()) continue;
        for (const auto& member : group) {
            if (member == idiom) continue;
            if (std::find(g.neighbors.begin(), g.neighbors.end(), member) == g.neighbors.end())
                g.neighbors.push_back(member);
        }
    }
    return g;
}

// Neighbors = vocabulary idioms with cosine strictly above threshold, sorted
// by descending similarity (token order breaks exact ties), capped.
inline SynonymGraph build_from_embeddings(const EmbeddingTable& table, const std::string& idiom,
                                          double threshold, std::size_t cap) {
    if (!(threshold > -1.0 && threshold < 1.0))
        throw std::invalid_argument("build_from_embeddings: threshold must be in (-1, 1)");
    const std::size_t center_row = table.row_of(idiom);
    const Vec center = table.vectors.row_vec(center_row);

    std::vector<std::pair<double, std::size_t>> hits;
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (i == center_row) continue;
        const double sim = cosine(center, table.vectors.row_vec(i));
        if (sim > threshold) hits.emplace_back(sim, i);
    }
    std::sort(hits.begin(), hits.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return table.tokens[a.second] < table.tokens[b.second];
    });
    if (hits.size() > cap) hits.resize(cap);

    SynonymGraph g;
    g.center = idiom;
    g.source = GraphSource::embedding_threshold;
    for (const auto& [sim, i] : hits) g.neighbors.push_back(table.tokens[i]);
    return g;
}

using GraphSet = std::map<std::string, SynonymGraph>;

inline GraphSet build_all_from_embeddings(const EmbeddingTable& table, double threshold,
                                          std::size_t cap) {
    GraphSet graphs;
    for (const auto& token : table.tokens)
        graphs.emplace(token, build_from_embeddings(table, token, threshold, cap));
    return graphs;
}

inline GraphSet build_all_from_dictionary(const SynonymDictionary& dict,
                                          const std::vector<std::string>& idioms) {
    GraphSet graphs;
    for (const auto& idiom : idioms) graphs.emplace(idiom, build_from_dictionary(dict, idiom));
    return graphs;
}

// Line format: "center TAB neighbor1 SPACE neighbor2 ...". A header comment
// records the source mode.
inline void save_graphs(const GraphSet& graphs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write graph file: " + path);
    GraphSource src = graphs.empty() ? GraphSource::dictionary : graphs.begin()->second.source;
    out << "# source: " << to_string(src) << '\n';
    for (const auto& [center, g] : graphs) {
        out << center << '\t';
        for (std::size_t i = 0; i < g.neighbors.size(); ++i) {
            if (i) out << ' ';
            out << g.neighbors[i];
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline GraphSet load_graphs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open graph file: " + path);
    GraphSet graphs;
    GraphSource src = GraphSource::dictionary;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.find("embedding_threshold") != std::string::npos)
                src = GraphSource::embedding_threshold;
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": malformed line, expected \"center TAB neighbors\"");
        SynonymGraph g;
        g.center = line.substr(0, tab);
        g.source = src;
        std::istringstream ns(line.substr(tab + 1));
        std::string n;
        while (ns >> n) {
            if (n == g.center)
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": center listed as its own neighbor");
            if (std::find(g.neighbors.begin(), g.neighbors.end(), n) != g.neighbors.end())
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": duplicate neighbor " + n);
            g.neighbors.push_back(n);
        }
        if (!graphs.emplace(g.center, g).second)
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": duplicate center " + g.center);
    }
    return graphs;
}

// "w/o synonym" ablation: every neighbor list replaced by `cap` idioms drawn
// uniformly from the vocabulary.
inline GraphSet randomize_neighbors(const std::vector<std::string>& vocabulary, std::size_t cap,
                                    Rng& rng) {
    GraphSet graphs;
    for (const auto& idiom : vocabulary) {
        SynonymGraph g;
        g.center = idiom;
        g.source = GraphSource::dictionary;
        std::set<std::string> chosen;
        const std::size_t want = std::min(cap, vocabulary.size() > 0 ? vocabulary.size() - 1 : 0);
        while (chosen.size() < want) {
            const std::string& pick = vocabulary[rng.below(vocabulary.size())];
            if (pick == idiom) continue;
            chosen.insert(pick);
        }
        g.neighbors.assign(chosen.begin(), chosen.end());
        graphs.emplace(idiom, std::move(g));
    }
    return graphs;
}

}  // namespace sker
