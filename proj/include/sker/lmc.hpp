#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sker/linalg.hpp"

namespace sker {

// Exact rational arithmetic for the literal-meaning-coverage statistics; with
// 3 raters the bucket boundaries 5/3 and 7/3 are otherwise ill-defined in
// floating point.
struct Rational {
    long long num = 0;
    long long den = 1;

    Rational() = default;
    Rational(long long n, long long d = 1) : num(n), den(d) { normalize(); }

    void normalize() {
        if (den == 0) throw std::invalid_argument("Rational: zero denominator");
        if (den < 0) {
            num = -num;
            den = -den;
        }
        const long long g = std::gcd(num < 0 ? -num : num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
    }

    static Rational from128(__int128 n, __int128 d) {
        if (d < 0) {
            n = -n;
            d = -d;
        }
        __int128 a = n < 0 ? -n : n, b = d;
        while (b) {
            __int128 t = a % b;
            a = b;
            b = t;
        }
        if (a > 1) {
            n /= a;
            d /= a;
        }
        Rational r;
        r.num = static_cast<long long>(n);
        r.den = static_cast<long long>(d);
        return r;
    }

    friend Rational operator+(const Rational& a, const Rational& b) {
        return from128(static_cast<__int128>(a.num) * b.den + static_cast<__int128>(b.num) * a.den,
                       static_cast<__int128>(a.den) * b.den);
    }
    friend Rational operator-(const Rational& a, const Rational& b) {
        return from128(static_cast<__int128>(a.num) * b.den - static_cast<__int128>(b.num) * a.den,
                       static_cast<__int128>(a.den) * b.den);
    }
    friend Rational operator*(const Rational& a, const Rational& b) {
        return from128(static_cast<__int128>(a.num) * b.num,
                       static_cast<__int128>(a.den) * b.den);
    }
    friend Rational operator/(const Rational& a, const Rational& b) {
        if (b.num == 0) throw std::invalid_argument("Rational: division by zero");
        return from128(static_cast<__int128>(a.num) * b.den,
                       static_cast<__int128>(a.den) * b.num);
    }
    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num == b.num && a.den == b.den;
    }
    friend bool operator<(const Rational& a, const Rational& b) {
        return static_cast<__int128>(a.num) * b.den < static_cast<__int128>(b.num) * a.den;
    }
    friend bool operator>(const Rational& a, const Rational& b) { return b < a; }
    friend bool operator<=(const Rational& a, const Rational& b) { return !(b < a); }
    friend bool operator>=(const Rational& a, const Rational& b) { return !(a < b); }

    double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

enum class ItemKind { idiom, common_word };

struct AnnotationRecord {
    std::string item;
    std::vector<int> ratings;  // each in {1,2,3}
    ItemKind kind = ItemKind::idiom;

    void validate() const {
        if (ratings.empty())
            throw std::invalid_argument("AnnotationRecord " + item + ": needs >= 1 rating");
        for (int r : ratings)
            if (r < 1 || r > 3)
                throw std::invalid_argument("AnnotationRecord " + item + ": rating " +
                                            std::to_string(r) + " outside {1,2,3}");
    }
};

inline Rational final_lmc_exact(const AnnotationRecord& rec) {
    rec.validate();
    long long sum = std::accumulate(rec.ratings.begin(), rec.ratings.end(), 0LL);
    return Rational(sum, static_cast<long long>(rec.ratings.size()));
}

inline double final_lmc(const AnnotationRecord& rec) { return final_lmc_exact(rec).to_double(); }

// Buckets [1, 5/3), [5/3, 7/3), [7/3, 3]; the printed 1.66/2.33 boundaries
// are thirds.
struct BucketShares {
    double low = 0.0, mid = 0.0, high = 0.0;
    std::size_t counts[3] = {0, 0, 0};
};

inline BucketShares bucket_distribution(const std::vector<AnnotationRecord>& records) {
    if (records.empty()) throw std::invalid_argument("bucket_distribution: empty input");
    static const Rational lo_edge(5, 3), hi_edge(7, 3);
    BucketShares shares;
    for (const auto& rec : records) {
        const Rational lmc = final_lmc_exact(rec);
        if (lmc < lo_edge)
            ++shares.counts[0];
        else if (lmc < hi_edge)
            ++shares.counts[1];
        else
            ++shares.counts[2];
    }
    const double total = static_cast<double>(records.size());
    shares.low = shares.counts[0] / total;
    shares.mid = shares.counts[1] / total;
    shares.high = shares.counts[2] / total;
    return shares;
}

struct KappaResult {
    double value = 0.0;
    Rational exact;
    bool degenerate = false;  // all raters on all items used one category
};

// Fleiss' kappa over the fixed categories {1, 2, 3}.
inline KappaResult fleiss_kappa(const std::vector<AnnotationRecord>& records) {
    if (records.empty()) throw std::invalid_argument("fleiss_kappa: empty input");
    const std::size_t n = records.front().ratings.size();
    if (n < 2) throw std::invalid_argument("fleiss_kappa: need >= 2 raters");
    for (const auto& rec : records) {
        rec.validate();
        if (rec.ratings.size() != n)
            throw std::invalid_argument("fleiss_kappa: unequal rater counts (item " + rec.item +
                                        " has " + std::to_string(rec.ratings.size()) +
                                        ", expected " + std::to_string(n) + ")");
    }
    const long long items = static_cast<long long>(records.size());
    const long long nn = static_cast<long long>(n);

    long long agree_sum = 0;  // sum over items of sum_j n_ij (n_ij - 1)
    long long cat_totals[3] = {0, 0, 0};
    for (const auto& rec : records) {
        long long counts[3] = {0, 0, 0};
        for (int r : rec.ratings) ++counts[r - 1];
        for (int j = 0; j < 3; ++j) {
            agree_sum += counts[j] * (counts[j] - 1);
            cat_totals[j] += counts[j];
        }
    }

    const Rational p_bar(agree_sum, items * nn * (nn - 1));
    Rational pe_bar(0);
    const Rational denom(items * nn);
    for (int j = 0; j < 3; ++j) {
        const Rational pj = Rational(cat_totals[j]) / denom;
        pe_bar = pe_bar + pj * pj;
    }

    KappaResult result;
    if (pe_bar == Rational(1)) {
        result.degenerate = true;
        result.exact = Rational(1);
        result.value = 1.0;
        return result;
    }
    result.exact = (p_bar - pe_bar) / (Rational(1) - pe_bar);
    result.value = result.exact.to_double();
    return result;
}

struct ChangeShares {
    double higher = 0.0, equal = 0.0, lower = 0.0;
    std::size_t counts[3] = {0, 0, 0};
    std::size_t skipped = 0;  // idioms without annotated synonyms
};

// Compares each idiom's final LMC against the mean of its synonyms' final
// LMCs; equality is exact-rational.
inline ChangeShares lmc_change(
    const std::vector<AnnotationRecord>& idioms,
    const std::map<std::string, std::vector<AnnotationRecord>>& synonyms_per_idiom) {
    ChangeShares shares;
    for (const auto& idiom : idioms) {
        const auto it = synonyms_per_idiom.find(idiom.item);
        if (it == synonyms_per_idiom.end() || it->second.empty()) {
            ++shares.skipped;
            continue;
        }
        Rational syn_sum(0);
        for (const auto& syn : it->second) syn_sum = syn_sum + final_lmc_exact(syn);
        const Rational syn_mean = syn_sum / Rational(static_cast<long long>(it->second.size()));
        const Rational own = final_lmc_exact(idiom);
        if (syn_mean > own)
            ++shares.counts[0];  // synonym assistance raises accessibility
        else if (syn_mean == own)
            ++shares.counts[1];
        else
            ++shares.counts[2];
    }
    const std::size_t total = shares.counts[0] + shares.counts[1] + shares.counts[2];
    if (total > 0) {
        shares.higher = static_cast<double>(shares.counts[0]) / total;
        shares.equal = static_cast<double>(shares.counts[1]) / total;
        shares.lower = static_cast<double>(shares.counts[2]) / total;
    }
    return shares;
}

// CSV "item,kind,r1,r2,..." with kind in {idiom, common_word}
inline std::vector<AnnotationRecord> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open annotation file: " + path);
    std::vector<AnnotationRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string field;
        AnnotationRecord rec;
        if (!std::getline(ls, rec.item, ','))
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": missing item");
        if (!std::getline(ls, field, ','))
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": missing kind");
        if (field == "idiom")
            rec.kind = ItemKind::idiom;
        else if (field == "common_word")
            rec.kind = ItemKind::common_word;
        else
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": unknown kind \"" + field + "\"");
        while (std::getline(ls, field, ',')) {
            try {
                rec.ratings.push_back(std::stoi(field));
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": bad rating \"" + field + "\"");
            }
        }
        try {
            rec.validate();
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
        records.push_back(std::move(rec));
    }
    return records;
}

// "idiom TAB synonym1 SPACE synonym2 ..."
inline std::map<std::string, std::vector<std::string>> load_synonym_links(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synonym link file: " + path);
    std::map<std::string, std::vector<std::string>> links;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": expected \"idiom TAB synonyms\"");
        std::vector<std::string> syns;
        std::istringstream ss(line.substr(tab + 1));
        std::string s;
        while (ss >> s) syns.push_back(s);
        links[line.substr(0, tab)] = std::move(syns);
    }
    return links;
}

}  // namespace sker
