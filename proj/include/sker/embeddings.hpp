#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sker/linalg.hpp"

namespace sker {

// Token -> vector map in the source embedding space.
struct EmbeddingTable {
    std::vector<std::string> tokens;
    Mat vectors;  // tokens.size() x source_dim
    std::unordered_map<std::string, std::size_t> index;

    std::size_t size() const { return tokens.size(); }
    std::size_t source_dim() const { return vectors.cols; }

    bool contains(const std::string& token) const { return index.count(token) > 0; }

    std::size_t row_of(const std::string& token) const {
        auto it = index.find(token);
        if (it == index.end())
            throw std::out_of_range("unknown token in embedding table: " + token);
        return it->second;
    }

    Vec vector_of(const std::string& token) const { return vectors.row_vec(row_of(token)); }

    void rebuild_index() {
        index.clear();
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (!index.emplace(tokens[i], i).second)
                throw std::invalid_argument("duplicate token in embedding table: " + tokens[i]);
        }
    }
};

// word2vec text format: "<count> <dim>" header, then "<token> <dim floats>"
// per line, single ASCII space separated, tokens UTF-8.
inline EmbeddingTable load_word2vec_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);

    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error(path + ": line 1: empty file, expected \"<count> <dim>\" header");
    std::istringstream header(line);
    long long count = -1, dim = -1;
    std::string extra;
    if (!(header >> count >> dim) || (header >> extra) || count < 0 || dim <= 0)
        throw std::runtime_error(path + ": line 1: malformed header, expected \"<count> <dim>\"");

    EmbeddingTable table;
    table.tokens.reserve(static_cast<std::size_t>(count));
    table.vectors = Mat(static_cast<std::size_t>(count), static_cast<std::size_t>(dim));

    std::size_t row = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (row >= static_cast<std::size_t>(count))
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": more rows than header count " + std::to_string(count));
        std::istringstream ls(line);
        std::string token;
        ls >> token;
        std::vector<double> values;
        std::string field;
        while (ls >> field) {
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(field, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != field.size())
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": non-numeric value \"" + field + "\"");
            values.push_back(v);
        }
        if (values.size() != static_cast<std::size_t>(dim))
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(dim) + " floats, got " +
                                     std::to_string(values.size()));
        for (double x : values)
            if (!std::isfinite(x))
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": non-finite value for token " + token);
        if (!table.index.emplace(token, row).second)
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": duplicate token " + token);
        table.tokens.push_back(token);
        std::copy(values.begin(), values.end(), table.vectors.row(row));
        ++row;
    }
    if (row != static_cast<std::size_t>(count))
        throw std::runtime_error(path + ": expected " + std::to_string(count) + " rows, got " +
                                 std::to_string(row));
    return table;
}

inline void save_word2vec_text(const EmbeddingTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write embedding file: " + path);
    out << table.size() << ' ' << table.source_dim() << '\n';
    char buf[64];
    for (std::size_t i = 0; i < table.size(); ++i) {
        out << table.tokens[i];
        for (std::size_t j = 0; j < table.source_dim(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", table.vectors(i, j));
            out << ' ' << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Rows sampled Xavier-uniform treating each row as a 1 x dim map.
inline EmbeddingTable init_random(const std::vector<std::string>& tokens, std::size_t dim,
                                  std::uint64_t seed) {
    if (tokens.empty()) throw std::invalid_argument("init_random: empty token list");
    if (dim == 0) throw std::invalid_argument("init_random: dim must be positive");
    EmbeddingTable table;
    table.tokens = tokens;
    table.vectors = Mat(tokens.size(), dim);
    table.rebuild_index();
    Rng rng(seed);
    xavier_fill(table.vectors, 1, dim, rng);
    return table;
}

inline double cosine(const Vec& u, const Vec& v) {
    if (u.size() != v.size())
        throw std::invalid_argument("cosine: length mismatch " + std::to_string(u.size()) +
                                    " vs " + std::to_string(v.size()));
    const double nu = norm2(u), nv = norm2(v);
    if (nu == 0.0 || nv == 0.0)
        throw std::invalid_argument("cosine: zero-norm input, similarity undefined");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

// source_dim -> d map; applied as weight^T row + bias.
struct Projection {
    Mat weight;  // source_dim x d
    Vec bias;    // d

    static Projection init(std::size_t source_dim, std::size_t d, Rng& rng) {
        Projection p;
        p.weight = Mat(source_dim, d);
        xavier_fill(p.weight, source_dim, d, rng);
        p.bias = Vec(d, 0.0);
        return p;
    }

    Vec apply(const Vec& row) const {
        Vec y = matvec_t(weight, row);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i];
        return y;
    }
};

inline Vec project(const EmbeddingTable& table, const Projection& p, const std::string& token) {
    return p.apply(table.vector_of(token));
}

}  // namespace sker
