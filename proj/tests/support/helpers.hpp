#pragma once

// Shared test utilities: finite-difference oracles and synthetic corpora.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sker/corpus.hpp"
#include "sker/embeddings.hpp"
#include "sker/model.hpp"
#include "sker/synonym_graph.hpp"

namespace testutil {

// Central finite differences over any parameter pack exposing for_each.
// loss_fn must recompute the scalar objective from the (perturbed) params.
template <class Params>
double finite_diff_max_rel_error(Params& params, Params& analytic_grads,
                                 const std::function<double()>& loss_fn, double eps = 1e-5,
                                 std::string* worst = nullptr) {
    std::vector<sker::Mat*> gs;
    analytic_grads.for_each([&](const std::string&, sker::Mat& m) { gs.push_back(&m); });
    double max_rel = 0.0;
    std::size_t ti = 0;
    params.for_each([&](const std::string& name, sker::Mat& m) {
        const sker::Mat& g = *gs[ti++];
        for (std::size_t i = 0; i < m.a.size(); ++i) {
            const double saved = m.a[i];
            m.a[i] = saved + eps;
            const double fp = loss_fn();
            m.a[i] = saved - eps;
            const double fm = loss_fn();
            m.a[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double rel = std::abs(numeric - g.a[i]) /
                               std::max({std::abs(numeric), std::abs(g.a[i]), 1e-4});
            if (rel > max_rel) {
                max_rel = rel;
                if (worst) *worst = name + "[" + std::to_string(i) + "]";
            }
        }
    });
    return max_rel;
}

inline sker::EmbeddingTable random_table(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < n; ++i) tokens.push_back("tok" + std::to_string(i));
    return sker::init_random(tokens, dim, seed);
}

// O(V^2) brute-force edge oracle, independent of build_from_embeddings.
inline std::set<std::pair<std::string, std::string>> brute_force_edges(
    const sker::EmbeddingTable& table, double threshold) {
    std::set<std::pair<std::string, std::string>> edges;
    for (std::size_t i = 0; i < table.size(); ++i)
        for (std::size_t j = 0; j < table.size(); ++j) {
            if (i == j) continue;
            double du = 0, dv = 0, dd = 0;
            for (std::size_t k = 0; k < table.source_dim(); ++k) {
                du += table.vectors(i, k) * table.vectors(i, k);
                dv += table.vectors(j, k) * table.vectors(j, k);
                dd += table.vectors(i, k) * table.vectors(j, k);
            }
            if (dd / std::sqrt(du * dv) > threshold)
                edges.emplace(table.tokens[i], table.tokens[j]);
        }
    return edges;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / name).string();
    }
    ~TempFile() { std::remove(path.c_str()); }
};

// ---- synthetic corpora ---------------------------------------------------

// Memorizable task: a cue token directly tied to the gold idiom appears
// before the blank.
struct OverfitTask {
    sker::CorpusSplit split;
    sker::GraphSet graphs;  // empty neighbor lists
    std::vector<std::string> idioms;
};

inline OverfitTask make_overfit_task(std::size_t n_instances, std::size_t m,
                                     std::size_t vocab_size, std::uint64_t seed) {
    OverfitTask task;
    task.split.name = "train";
    for (std::size_t i = 0; i < vocab_size; ++i)
        task.idioms.push_back("idiom" + std::to_string(i));
    for (const auto& idiom : task.idioms) {
        sker::SynonymGraph g;
        g.center = idiom;
        task.graphs.emplace(idiom, g);
    }
    sker::Rng rng(seed);
    for (std::size_t i = 0; i < n_instances; ++i) {
        sker::ClozeInstance inst;
        std::set<std::size_t> chosen;
        while (chosen.size() < m) chosen.insert(rng.below(vocab_size));
        for (std::size_t c : chosen) inst.candidates.push_back(task.idioms[c]);
        inst.gold = rng.below(m);
        inst.tokens = {"cue_" + inst.candidates[inst.gold], sker::kBlankToken,
                       "pad" + std::to_string(rng.below(8))};
        inst.blank_index = 1;
        inst.validate();
        task.split.instances.push_back(std::move(inst));
    }
    return task;
}

// Synonym-signal task: the gold candidate is identifiable only through the
// tag idiom its synonym graph points to; test candidates are unseen in
// training, so memorizing candidate identities cannot generalize.
struct SynonymSignalTask {
    sker::CorpusSplit train, test;
    sker::GraphSet graphs;
};

inline SynonymSignalTask make_synonym_signal_task(std::size_t n_tags, std::size_t cands_per_pool,
                                                  std::size_t m, std::size_t n_train,
                                                  std::size_t n_test, std::uint64_t seed) {
    SynonymSignalTask task;
    task.train.name = "train";
    task.test.name = "test";
    sker::Rng rng(seed);
    std::vector<std::string> tags;
    for (std::size_t t = 0; t < n_tags; ++t) tags.push_back("tag" + std::to_string(t));

    std::vector<std::string> train_pool, test_pool;
    std::vector<std::size_t> train_tag, test_tag;
    for (std::size_t i = 0; i < cands_per_pool; ++i) {
        train_pool.push_back("traincand" + std::to_string(i));
        train_tag.push_back(i % n_tags);
        test_pool.push_back("testcand" + std::to_string(i));
        test_tag.push_back(i % n_tags);
    }
    auto add_graphs = [&](const std::vector<std::string>& pool,
                          const std::vector<std::size_t>& tag) {
        for (std::size_t i = 0; i < pool.size(); ++i) {
            sker::SynonymGraph g;
            g.center = pool[i];
            g.neighbors = {tags[tag[i]]};
            task.graphs.emplace(g.center, g);
        }
    };
    add_graphs(train_pool, train_tag);
    add_graphs(test_pool, test_tag);
    for (const auto& t : tags) {
        sker::SynonymGraph g;
        g.center = t;
        task.graphs.emplace(t, g);
    }

    auto make_split = [&](sker::CorpusSplit& split, const std::vector<std::string>& pool,
                          const std::vector<std::size_t>& tag, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            sker::ClozeInstance inst;
            std::set<std::size_t> used_tags;
            std::vector<std::size_t> picked;
            while (picked.size() < m) {
                const std::size_t c = rng.below(pool.size());
                if (used_tags.count(tag[c])) continue;
                if (std::find(picked.begin(), picked.end(), c) != picked.end()) continue;
                used_tags.insert(tag[c]);
                picked.push_back(c);
            }
            for (std::size_t c : picked) inst.candidates.push_back(pool[c]);
            inst.gold = rng.below(m);
            inst.tokens = {"cue" + std::to_string(tag[picked[inst.gold]]), sker::kBlankToken};
            inst.blank_index = 1;
            inst.validate();
            split.instances.push_back(std::move(inst));
        }
    };
    make_split(task.train, train_pool, train_tag, n_train);
    make_split(task.test, test_pool, test_tag, n_test);
    return task;
}

}  // namespace testutil
