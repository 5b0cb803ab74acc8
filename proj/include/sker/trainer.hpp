#pragma once

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sker/corpus.hpp"
#include "sker/digest.hpp"
#include "sker/model.hpp"
#include "sker/synonym_graph.hpp"

namespace sker {

struct TrainConfig {
    std::size_t d = 32;
    std::size_t heads = 2;
    std::size_t source_dim = 64;
    std::size_t max_len = 128;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 50;
    std::size_t patience_epochs = 1;
    double learning_rate = 1e-3;
    double dropout = 0.2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip = 0.0;  // 0 = off
    std::uint64_t seed = 1;
    std::size_t cap = 7;  // neighbor cap, also used by the w/o-synonym ablation
    std::size_t workers = 1;
    bool char_tokenize = false;
    AblationConfig ablation;

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("dropout must be in [0, 1)");
        if (heads == 0 || d % heads != 0)
            throw std::invalid_argument("heads (" + std::to_string(heads) +
                                        ") must divide d (" + std::to_string(d) + ")");
        if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
        if (workers == 0) throw std::invalid_argument("workers must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const AblationConfig& a) {
    j = {{"use_synonyms", a.use_synonyms}, {"use_gate", a.use_gate}, {"use_gat", a.use_gat}};
}
inline void from_json(const nlohmann::json& j, AblationConfig& a) {
    a.use_synonyms = j.value("use_synonyms", true);
    a.use_gate = j.value("use_gate", true);
    a.use_gat = j.value("use_gat", true);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"d", c.d},
         {"heads", c.heads},
         {"source_dim", c.source_dim},
         {"max_len", c.max_len},
         {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},
         {"patience_epochs", c.patience_epochs},
         {"learning_rate", c.learning_rate},
         {"dropout", c.dropout},
         {"adam_beta1", c.adam_beta1},
         {"adam_beta2", c.adam_beta2},
         {"adam_eps", c.adam_eps},
         {"clip", c.clip},
         {"seed", c.seed},
         {"cap", c.cap},
         {"workers", c.workers},
         {"char_tokenize", c.char_tokenize},
         {"ablation", c.ablation}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig def;
    c.d = j.value("d", def.d);
    c.heads = j.value("heads", def.heads);
    c.source_dim = j.value("source_dim", def.source_dim);
    c.max_len = j.value("max_len", def.max_len);
    c.batch_size = j.value("batch_size", def.batch_size);
    c.max_epochs = j.value("max_epochs", def.max_epochs);
    c.patience_epochs = j.value("patience_epochs", def.patience_epochs);
    c.learning_rate = j.value("learning_rate", def.learning_rate);
    c.dropout = j.value("dropout", def.dropout);
    c.adam_beta1 = j.value("adam_beta1", def.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", def.adam_beta2);
    c.adam_eps = j.value("adam_eps", def.adam_eps);
    c.clip = j.value("clip", def.clip);
    c.seed = j.value("seed", def.seed);
    c.cap = j.value("cap", def.cap);
    c.workers = j.value("workers", def.workers);
    c.char_tokenize = j.value("char_tokenize", def.char_tokenize);
    if (j.contains("ablation")) c.ablation = j["ablation"].get<AblationConfig>();
}

// ---- Adam ----------------------------------------------------------------

struct AdamState {
    ModelParams m, v;
    std::uint64_t t = 0;

    static AdamState init(const ModelParams& p) {
        return AdamState{p.zeros_like(), p.zeros_like(), 0};
    }
};

// Standard Adam with bias correction.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                      const TrainConfig& cfg) {
    state.t += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

    std::vector<std::pair<std::string, Mat*>> ps, gs, ms, vs;
    params.for_each([&](const std::string& n, Mat& m) { ps.emplace_back(n, &m); });
    const_cast<ModelParams&>(grads).for_each(
        [&](const std::string& n, Mat& m) { gs.emplace_back(n, &m); });
    state.m.for_each([&](const std::string& n, Mat& m) { ms.emplace_back(n, &m); });
    state.v.for_each([&](const std::string& n, Mat& m) { vs.emplace_back(n, &m); });

    for (std::size_t k = 0; k < ps.size(); ++k) {
        Mat& p = *ps[k].second;
        const Mat& g = *gs[k].second;
        Mat& m = *ms[k].second;
        Mat& v = *vs[k].second;
        if (!p.same_shape(g))
            throw std::invalid_argument("adam_step: shape mismatch for " + ps[k].first);
        if (!all_finite(g.a))
            throw std::runtime_error("adam_step: non-finite gradient in parameter " + ps[k].first);
        for (std::size_t i = 0; i < p.a.size(); ++i) {
            m.a[i] = b1 * m.a[i] + (1.0 - b1) * g.a[i];
            v.a[i] = b2 * v.a[i] + (1.0 - b2) * g.a[i] * g.a[i];
            const double mhat = m.a[i] / bc1;
            const double vhat = v.a[i] / bc2;
            p.a[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

// ---- model bundle and checkpointing --------------------------------------

struct Model {
    TrainConfig cfg;
    Vocab words;
    Vocab idioms;
    ModelParams params;
    std::uint64_t graph_fingerprint = 0;
};

inline std::uint64_t graph_fingerprint(const GraphSet& graphs) {
    std::ostringstream ss;
    for (const auto& [center, g] : graphs) {
        ss << center << '\t';
        for (const auto& n : g.neighbors) ss << n << ' ';
        ss << '\n';
    }
    return fnv1a64(ss.str());
}

inline void save_checkpoint(const Model& model, const std::string& path) {
    nlohmann::json meta;
    meta["config"] = model.cfg;
    meta["word_vocab"] = model.words.items;
    meta["idiom_vocab"] = model.idioms.items;
    meta["graph_fingerprint"] = model.graph_fingerprint;
    meta["tensors"] = nlohmann::json::array();
    const_cast<Model&>(model).params.for_each([&](const std::string& n, Mat& m) {
        meta["tensors"].push_back({{"name", n}, {"rows", m.rows}, {"cols", m.cols}});
    });
    const std::string meta_str = meta.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write("SKERCKPT1\n", 10);
    const std::uint64_t len = meta_str.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    const_cast<Model&>(model).params.for_each([&](const std::string&, Mat& m) {
        out.write(reinterpret_cast<const char*>(m.a.data()),
                  static_cast<std::streamsize>(m.a.size() * sizeof(double)));
    });
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Model load_checkpoint(const std::string& path,
                             const TrainConfig* expected_cfg = nullptr,
                             const std::uint64_t* expected_fingerprint = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[10];
    in.read(magic, 10);
    if (!in || std::string(magic, 10) != "SKERCKPT1\n")
        throw std::runtime_error(path + ": not a SKER checkpoint (bad magic)");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in) throw std::runtime_error(path + ": corrupt checkpoint (truncated header)");
    std::string meta_str(len, '\0');
    in.read(meta_str.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error(path + ": corrupt checkpoint (truncated metadata)");
    nlohmann::json meta = nlohmann::json::parse(meta_str);

    Model model;
    model.cfg = meta["config"].get<TrainConfig>();
    for (const auto& s : meta["word_vocab"]) model.words.add(s.get<std::string>());
    for (const auto& s : meta["idiom_vocab"]) model.idioms.add(s.get<std::string>());
    model.graph_fingerprint = meta["graph_fingerprint"].get<std::uint64_t>();

    if (expected_cfg && expected_cfg->d != model.cfg.d)
        throw std::runtime_error("checkpoint dimension mismatch: checkpoint d=" +
                                 std::to_string(model.cfg.d) + ", requested d=" +
                                 std::to_string(expected_cfg->d));
    if (expected_fingerprint && *expected_fingerprint != model.graph_fingerprint)
        throw std::runtime_error("graph fingerprint mismatch: checkpoint " +
                                 hex64(model.graph_fingerprint) + ", provided " +
                                 hex64(*expected_fingerprint));

    model.params = ModelParams::init(model.words.size(), model.idioms.size(),
                                     model.cfg.source_dim, model.cfg.max_len, model.cfg.d,
                                     model.cfg.heads, 0);
    std::size_t idx = 0;
    const auto& tensors = meta["tensors"];
    model.params.for_each([&](const std::string& n, Mat& m) {
        if (idx >= tensors.size())
            throw std::runtime_error(path + ": corrupt checkpoint (missing tensor " + n + ")");
        const auto& t = tensors[idx++];
        if (t["name"].get<std::string>() != n || t["rows"].get<std::size_t>() != m.rows ||
            t["cols"].get<std::size_t>() != m.cols)
            throw std::runtime_error(path + ": tensor shape mismatch for " + n);
        in.read(reinterpret_cast<char*>(m.a.data()),
                static_cast<std::streamsize>(m.a.size() * sizeof(double)));
        if (!in) throw std::runtime_error(path + ": corrupt checkpoint (truncated tensor " + n + ")");
    });
    return model;
}

// ---- evaluation ----------------------------------------------------------

struct EvalReport {
    std::string split;
    double accuracy = 0.0;
    std::size_t total = 0;
    std::size_t correct = 0;
    std::vector<std::size_t> predicted;
};

namespace detail {

inline GraphSet effective_graphs(const Model& model, const GraphSet& graphs,
                                 std::uint64_t salt) {
    if (model.cfg.ablation.use_synonyms) return graphs;
    Rng rng(mix_seed(model.cfg.seed, 0x5753594eULL /*"WSYN"*/, salt));
    return randomize_neighbors(model.idioms.items, model.cfg.cap, rng);
}

}  // namespace detail

inline EvalReport evaluate(const Model& model, const CorpusSplit& split,
                           const GraphSet& graphs) {
    if (split.instances.empty())
        throw std::invalid_argument("evaluate: empty split " + split.name);
    const GraphSet eff = detail::effective_graphs(model, graphs, /*salt=*/0);

    EvalReport report;
    report.split = split.name;
    report.total = split.instances.size();
    report.predicted.resize(report.total);

    const std::size_t workers = std::max<std::size_t>(1, model.cfg.workers);
    auto run_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            PreparedInstance prep =
                prepare_instance(split.instances[i], model.words, model.idioms, eff);
            ForwardTrace t = forward(model.params, prep, model.cfg.ablation, false, 0.0);
            report.predicted[i] = t.predicted;
        }
    };
    if (workers == 1 || report.total < 2 * workers) {
        run_range(0, report.total);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (report.total + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t lo = w * chunk, hi = std::min(report.total, lo + chunk);
            if (lo < hi) pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    for (std::size_t i = 0; i < report.total; ++i)
        report.correct += (report.predicted[i] == split.instances[i].gold);
    report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);
    return report;
}

// ---- training ------------------------------------------------------------

struct TrainResult {
    Model model;
    double best_dev_accuracy = 0.0;
    std::size_t epochs_run = 0;
};

// Builds vocabularies, initializes parameters (copying pre-trained idiom rows
// when a table is supplied), and runs Adam with dev-accuracy early stopping.
inline TrainResult train(const TrainConfig& cfg, const CorpusSplit& train_split,
                         const CorpusSplit& dev_split, const GraphSet& graphs,
                         const EmbeddingTable* pretrained = nullptr,
                         std::ostream* log = nullptr) {
    cfg.validate();
    if (train_split.instances.empty()) throw std::invalid_argument("train: empty train split");
    if (dev_split.instances.empty()) throw std::invalid_argument("train: empty dev split");
    if (pretrained && pretrained->source_dim() != cfg.source_dim)
        throw std::invalid_argument("train: pretrained dim " +
                                    std::to_string(pretrained->source_dim()) +
                                    " != config source_dim " + std::to_string(cfg.source_dim));

    Model model;
    model.cfg = cfg;
    model.graph_fingerprint = graph_fingerprint(graphs);

    model.words = Vocab::with_unk();
    model.words.add(kBlankToken);
    model.words.add(kMaskToken);
    for (const auto& inst : train_split.instances)
        for (const auto& t : inst.tokens) model.words.add(t);

    model.idioms = Vocab::with_unk();
    for (const CorpusSplit* s : {&train_split, &dev_split})
        for (const auto& inst : s->instances)
            for (const auto& c : inst.candidates) model.idioms.add(c);
    for (const auto& [center, g] : graphs) {
        model.idioms.add(center);
        for (const auto& n : g.neighbors) model.idioms.add(n);
    }

    model.params = ModelParams::init(model.words.size(), model.idioms.size(), cfg.source_dim,
                                     cfg.max_len, cfg.d, cfg.heads, cfg.seed);
    if (pretrained) {
        for (std::size_t i = 0; i < model.idioms.size(); ++i) {
            const std::string& tok = model.idioms.items[i];
            if (pretrained->contains(tok)) {
                const Vec row = pretrained->vector_of(tok);
                std::copy(row.begin(), row.end(), model.params.idiom_emb.row(i));
            }
        }
    }

    AdamState state = AdamState::init(model.params);

    const std::size_t n = train_split.instances.size();
    Model best = model;
    double best_acc = -1.0;
    std::size_t since_improvement = 0;
    std::size_t epochs_run = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        epochs_run = epoch;
        const GraphSet eff = detail::effective_graphs(model, graphs, /*salt=*/epoch);
        const auto batches = make_batches(n, cfg.batch_size, mix_seed(cfg.seed, epoch), true);

        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& batch = batches[bi];
            const std::size_t workers =
                std::min(cfg.workers, std::max<std::size_t>(1, batch.size()));
            std::vector<ModelParams> buffers;
            std::vector<double> losses(workers, 0.0);
            std::vector<std::string> errors(workers);
            for (std::size_t w = 0; w < workers; ++w)
                buffers.push_back(model.params.zeros_like());

            auto run_slice = [&](std::size_t w) {
                try {
                    for (std::size_t k = w; k < batch.size(); k += workers) {
                        const std::size_t idx = batch[k];
                        PreparedInstance prep = prepare_instance(train_split.instances[idx],
                                                                 model.words, model.idioms, eff);
                        Rng drop_rng(mix_seed(cfg.seed, epoch, bi, idx));
                        ForwardTrace t =
                            forward(model.params, prep, cfg.ablation, true, cfg.dropout, &drop_rng);
                        if (!std::isfinite(t.loss))
                            throw std::runtime_error("non-finite loss at epoch " +
                                                     std::to_string(epoch) + " batch " +
                                                     std::to_string(bi));
                        losses[w] += t.loss;
                        backward(model.params, prep, t, buffers[w]);
                    }
                } catch (const std::exception& e) {
                    errors[w] = e.what();
                }
            };
            if (workers == 1) {
                run_slice(0);
            } else {
                std::vector<std::thread> pool;
                for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run_slice, w);
                for (auto& th : pool) th.join();
            }
            for (const auto& err : errors)
                if (!err.empty()) throw std::runtime_error(err);

            // fixed merge order keeps gradient sums deterministic per worker count
            ModelParams& grads = buffers[0];
            for (std::size_t w = 1; w < workers; ++w) {
                std::vector<Mat*> dst, src;
                grads.for_each([&](const std::string&, Mat& m) { dst.push_back(&m); });
                buffers[w].for_each([&](const std::string&, Mat& m) { src.push_back(&m); });
                for (std::size_t k = 0; k < dst.size(); ++k)
                    for (std::size_t i = 0; i < dst[k]->a.size(); ++i)
                        dst[k]->a[i] += src[k]->a[i];
            }
            const double inv = 1.0 / static_cast<double>(batch.size());
            double gnorm2 = 0.0;
            grads.for_each([&](const std::string&, Mat& m) {
                for (double& x : m.a) {
                    x *= inv;
                    gnorm2 += x * x;
                }
            });
            if (cfg.clip > 0.0) {
                const double gnorm = std::sqrt(gnorm2);
                if (gnorm > cfg.clip) {
                    const double s = cfg.clip / gnorm;
                    grads.for_each([&](const std::string&, Mat& m) {
                        for (double& x : m.a) x *= s;
                    });
                }
            }

            adam_step(model.params, grads, state, cfg);
            const std::string bad = model.params.first_non_finite();
            if (!bad.empty())
                throw std::runtime_error("non-finite parameter " + bad + " after epoch " +
                                         std::to_string(epoch) + " batch " + std::to_string(bi));

            if (log) {
                const double mean_loss =
                    std::accumulate(losses.begin(), losses.end(), 0.0) * inv;
                nlohmann::json line = {{"epoch", epoch}, {"batch", bi}, {"loss", mean_loss}};
                *log << line.dump() << '\n';
            }
        }

        const EvalReport dev = evaluate(model, dev_split, graphs);
        if (log) {
            nlohmann::json line = {{"epoch", epoch},
                                   {"batch", batches.size() - 1},
                                   {"dev_accuracy", dev.accuracy}};
            *log << line.dump() << '\n';
        }
        if (dev.accuracy > best_acc) {
            best_acc = dev.accuracy;
            best = model;
            since_improvement = 0;
        } else {
            ++since_improvement;
            if (since_improvement >= cfg.patience_epochs) break;
        }
    }

    TrainResult result;
    result.model = std::move(best);
    result.best_dev_accuracy = best_acc;
    result.epochs_run = epochs_run;
    return result;
}

// ---- ablation suite ------------------------------------------------------

struct AblationRow {
    std::string name;
    AblationConfig ablation;
    std::vector<EvalReport> reports;
    double average = 0.0;
    double delta = 0.0;  // average minus the full model's average
};

inline std::vector<AblationRow> run_ablation_suite(
    const TrainConfig& base_cfg, const CorpusSplit& train_split, const CorpusSplit& dev_split,
    const std::vector<const CorpusSplit*>& eval_splits, const GraphSet& graphs,
    const EmbeddingTable* pretrained = nullptr, std::ostream* log = nullptr) {
    const std::vector<std::pair<std::string, AblationConfig>> rows = {
        {"full", {true, true, true}},
        {"w/o synonym", {false, true, true}},
        {"w/o gate", {true, false, true}},
        {"w/o gate & GAT", {true, false, false}},
    };
    std::vector<AblationRow> out;
    for (const auto& [name, ab] : rows) {
        TrainConfig cfg = base_cfg;
        cfg.ablation = ab;
        TrainResult r = train(cfg, train_split, dev_split, graphs, pretrained, log);
        AblationRow row;
        row.name = name;
        row.ablation = ab;
        double sum = 0.0;
        for (const CorpusSplit* s : eval_splits) {
            row.reports.push_back(evaluate(r.model, *s, graphs));
            sum += row.reports.back().accuracy;
        }
        row.average = eval_splits.empty() ? 0.0 : sum / eval_splits.size();
        out.push_back(std::move(row));
    }
    for (auto& row : out) row.delta = row.average - out[0].average;
    return out;
}

}  // namespace sker
