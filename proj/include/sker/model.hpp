#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sker/corpus.hpp"
#include "sker/encoder.hpp"
#include "sker/linalg.hpp"
#include "sker/synonym_graph.hpp"
#include "sker/vocab.hpp"

namespace sker {

// Ablation rows: "w/o synonym" (random neighbors), "w/o gate" (z_check =
// z_hat), "w/o gate & GAT" (z_check = z_tilde).
struct AblationConfig {
    bool use_synonyms = true;
    bool use_gate = true;
    bool use_gat = true;

    AblationConfig normalized() const {
        AblationConfig c = *this;
        if (!c.use_gat) c.use_gate = false;  // no aggregation means nothing to gate
        return c;
    }
};

struct HeadParams {
    Mat wq, wk, wv;  // d_h x d_h
};

// Every trainable tensor of the aggregation/prediction head.
struct SkerParams {
    Mat w_t, b_t, w_s, b_s;  // residual MLP
    std::vector<HeadParams> heads;
    Mat w_o, b_o;  // multi-head output projection
    Mat w_g, b_g;  // gate
    Mat u_o;       // d x 1 scoring vector
    Mat b_out;     // 1 x 1 scoring bias

    std::size_t d() const { return w_t.rows; }
    std::size_t head_count() const { return heads.size(); }
    std::size_t d_h() const { return heads.empty() ? 0 : heads[0].wq.rows; }

    static SkerParams init(std::size_t d, std::size_t h, Rng& rng) {
        if (h == 0 || d % h != 0)
            throw std::invalid_argument("head count " + std::to_string(h) +
                                        " must divide hidden size " + std::to_string(d));
        SkerParams p;
        const std::size_t dh = d / h;
        for (Mat* m : {&p.w_t, &p.w_s, &p.w_g}) {
            *m = Mat(d, d);
            xavier_fill(*m, d, d, rng);
        }
        p.b_t = Mat(d, 1, 0.0);
        p.b_s = Mat(d, 1, 0.0);
        p.b_g = Mat(d, 1, 0.0);
        p.heads.resize(h);
        for (auto& head : p.heads) {
            for (Mat* m : {&head.wq, &head.wk, &head.wv}) {
                *m = Mat(dh, dh);
                xavier_fill(*m, dh, dh, rng);
            }
        }
        p.w_o = Mat(d, d);
        xavier_fill(p.w_o, d, d, rng);
        p.b_o = Mat(d, 1, 0.0);
        p.u_o = Mat(d, 1);
        xavier_fill(p.u_o, d, 1, rng);
        p.b_out = Mat(1, 1, 0.0);
        return p;
    }

    template <class F>
    void for_each(F&& f) {
        f("sker.w_t", w_t);
        f("sker.b_t", b_t);
        f("sker.w_s", w_s);
        f("sker.b_s", b_s);
        for (std::size_t i = 0; i < heads.size(); ++i) {
            const std::string base = "sker.head" + std::to_string(i);
            f(base + ".wq", heads[i].wq);
            f(base + ".wk", heads[i].wk);
            f(base + ".wv", heads[i].wv);
        }
        f("sker.w_o", w_o);
        f("sker.b_o", b_o);
        f("sker.w_g", w_g);
        f("sker.b_g", b_g);
        f("sker.u_o", u_o);
        f("sker.b_out", b_out);
    }
};

// Full trainable state: encoder, idiom embedding table, projection, head.
struct ModelParams {
    EncoderParams enc;
    Mat idiom_emb;  // idiom vocab x source_dim (row 0 = <unk>)
    Mat proj_w;     // source_dim x d, applied as proj_w^T row + proj_b
    Mat proj_b;     // d x 1
    SkerParams sker;

    std::size_t d() const { return sker.d(); }

    static ModelParams init(std::size_t word_vocab, std::size_t idiom_vocab,
                            std::size_t source_dim, std::size_t max_len, std::size_t d,
                            std::size_t h, std::uint64_t seed) {
        Rng rng(seed);
        ModelParams p;
        p.enc = EncoderParams::init(word_vocab, max_len, d, rng);
        p.idiom_emb = Mat(idiom_vocab, source_dim);
        xavier_fill(p.idiom_emb, 1, source_dim, rng);
        p.proj_w = Mat(source_dim, d);
        xavier_fill(p.proj_w, source_dim, d, rng);
        p.proj_b = Mat(d, 1, 0.0);
        p.sker = SkerParams::init(d, h, rng);
        return p;
    }

    template <class F>
    void for_each(F&& f) {
        enc.for_each(f);
        f("idiom_emb", idiom_emb);
        f("proj_w", proj_w);
        f("proj_b", proj_b);
        sker.for_each(f);
    }

    ModelParams zeros_like() const {
        ModelParams z = *this;
        z.for_each([](const std::string&, Mat& m) { std::fill(m.a.begin(), m.a.end(), 0.0); });
        return z;
    }

    // returns the name of the first non-finite tensor, or empty
    std::string first_non_finite() {
        std::string bad;
        for_each([&](const std::string& name, Mat& m) {
            if (!bad.empty()) return;
            if (!all_finite(m.a)) bad = name;
        });
        return bad;
    }
};

struct PreparedCandidate {
    std::size_t idiom_id = 0;
    std::string idiom;
    std::vector<std::size_t> syn_ids;
    std::vector<std::string> syn_names;
};

struct PreparedInstance {
    std::vector<std::size_t> word_ids;
    std::size_t blank = 0;
    std::vector<PreparedCandidate> cands;
    std::size_t gold = 0;
};

inline PreparedInstance prepare_instance(const ClozeInstance& inst, const Vocab& words,
                                         const Vocab& idioms, const GraphSet& graphs) {
    PreparedInstance p;
    p.word_ids.reserve(inst.tokens.size());
    for (const auto& t : inst.tokens) p.word_ids.push_back(words.id_or_unk(t));
    p.blank = inst.blank_index;
    p.gold = inst.gold;
    for (const auto& cand : inst.candidates) {
        PreparedCandidate pc;
        pc.idiom = cand;
        pc.idiom_id = idioms.id_or_unk(cand);
        const auto it = graphs.find(cand);
        if (it != graphs.end()) {
            for (const auto& n : it->second.neighbors) {
                pc.syn_names.push_back(n);
                pc.syn_ids.push_back(idioms.id_or_unk(n));
            }
        }
        p.cands.push_back(std::move(pc));
    }
    return p;
}

// ---- forward primitives --------------------------------------------------

inline Vec interact(const Vec& q, const Vec& z) {
    if (q.size() != z.size())
        throw std::invalid_argument("interact: length mismatch " + std::to_string(q.size()) +
                                    " vs " + std::to_string(z.size()));
    return hadamard(q, z);
}

// z_tilde = W_s ReLU(W_t z_t + b_t) + b_s + z_t
inline Vec transform(const Vec& z_t, const SkerParams& p, Vec* hidden_pre = nullptr,
                     Vec* hidden_out = nullptr) {
    Vec pre = matvec(p.w_t, z_t);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += p.b_t.a[i];
    Vec hidden = pre;
    for (double& x : hidden) x = std::max(x, 0.0);
    Vec out = matvec(p.w_s, hidden);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p.b_s.a[i] + z_t[i];
    if (hidden_pre) *hidden_pre = std::move(pre);
    if (hidden_out) *hidden_out = std::move(hidden);
    return out;
}

struct HeadTrace {
    Vec zq;                 // d_h
    std::vector<Vec> keys;  // l+1 of d_h
    std::vector<Vec> vals;
    Vec alpha;  // l+1, sums to 1
};

struct AggTrace {
    std::vector<HeadTrace> heads;
    Vec concat;     // d
    Vec z_hat_raw;  // d, before dropout
};

// Multi-head attention over [z_tilde, n_tilde_1..l]; the candidate occupies
// column 0.
inline AggTrace aggregate(const Vec& z_tilde, const std::vector<Vec>& n_tilde,
                          const SkerParams& p) {
    const std::size_t d = p.d(), h = p.head_count(), dh = p.d_h();
    if (h == 0 || dh * h != d)
        throw std::invalid_argument("aggregate: head count must divide hidden size");
    const std::size_t cols = n_tilde.size() + 1;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto block = [&](const Vec& v, std::size_t i) {
        return Vec(v.begin() + i * dh, v.begin() + (i + 1) * dh);
    };

    AggTrace t;
    t.heads.resize(h);
    t.concat = Vec(d, 0.0);
    for (std::size_t i = 0; i < h; ++i) {
        HeadTrace& ht = t.heads[i];
        ht.zq = matvec(p.heads[i].wq, block(z_tilde, i));
        ht.keys.resize(cols);
        ht.vals.resize(cols);
        Vec logits(cols);
        for (std::size_t j = 0; j < cols; ++j) {
            const Vec col = block(j == 0 ? z_tilde : n_tilde[j - 1], i);
            ht.keys[j] = matvec(p.heads[i].wk, col);
            ht.vals[j] = matvec(p.heads[i].wv, col);
            logits[j] = dot(ht.zq, ht.keys[j]) * scale;
        }
        ht.alpha = softmax(logits);
        for (std::size_t j = 0; j < cols; ++j)
            for (std::size_t c = 0; c < dh; ++c) t.concat[i * dh + c] += ht.alpha[j] * ht.vals[j][c];
    }
    t.z_hat_raw = matvec(p.w_o, t.concat);
    for (std::size_t i = 0; i < d; ++i) t.z_hat_raw[i] += p.b_o.a[i];
    return t;
}

// g = sigmoid(W_g z_tilde + b_g); z_check = g*z_hat + (1-g)*z_tilde
inline Vec gate_fuse(const Vec& z_tilde, const Vec& z_hat, const SkerParams& p, Vec* gate_out) {
    Vec pre = matvec(p.w_g, z_tilde);
    Vec g(pre.size());
    Vec out(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
        g[i] = 1.0 / (1.0 + std::exp(-(pre[i] + p.b_g.a[i])));
        out[i] = g[i] * z_hat[i] + (1.0 - g[i]) * z_tilde[i];
    }
    if (gate_out) *gate_out = std::move(g);
    return out;
}

inline Vec score(const std::vector<Vec>& z_checks, const SkerParams& p) {
    if (z_checks.size() < 2) throw std::invalid_argument("score: need at least 2 candidates");
    Vec logits(z_checks.size());
    for (std::size_t i = 0; i < z_checks.size(); ++i)
        logits[i] = dot(p.u_o.a, z_checks[i]) + p.b_out.a[0];
    return softmax(logits);
}

inline double cross_entropy(const Vec& probs, std::size_t gold) {
    if (gold >= probs.size()) throw std::out_of_range("cross_entropy: gold index out of range");
    return -std::log(probs[gold]);
}

// ---- full pipeline -------------------------------------------------------

struct CandidateTrace {
    Vec e;  // source-space embedding row
    Vec z;  // projected
    Vec z_t, hidden_pre, hidden, z_tilde;
    std::vector<Vec> n_e, n_z, n_t, n_hidden_pre, n_hidden, n_tilde;
    AggTrace agg;
    Vec drop_mask;  // on z_hat
    Vec z_hat;      // after dropout
    Vec gate;
    Vec z_check;
};

struct ForwardTrace {
    EncoderTrace enc;
    std::vector<CandidateTrace> cands;
    Vec logits;
    Vec probs;
    double loss = 0.0;
    std::size_t predicted = 0;
    bool train_mode = false;
    AblationConfig ablation;
};

inline ForwardTrace forward(const ModelParams& p, const PreparedInstance& inst,
                            const AblationConfig& ablation_in = {}, bool train = false,
                            double dropout = 0.0, Rng* rng = nullptr) {
    const AblationConfig ablation = ablation_in.normalized();
    const std::size_t d = p.d();

    ForwardTrace t;
    t.train_mode = train;
    t.ablation = ablation;
    t.enc = encode(p.enc, inst.word_ids, inst.blank, train, dropout, rng);
    const Vec& q = t.enc.q;

    auto embed = [&](std::size_t id, Vec& e_out) {
        e_out = p.idiom_emb.row_vec(id);
        Vec z = matvec_t(p.proj_w, e_out);
        for (std::size_t i = 0; i < d; ++i) z[i] += p.proj_b.a[i];
        return z;
    };

    std::vector<Vec> z_checks;
    for (const auto& cand : inst.cands) {
        CandidateTrace ct;
        ct.z = embed(cand.idiom_id, ct.e);
        ct.z_t = interact(q, ct.z);
        ct.z_tilde = transform(ct.z_t, p.sker, &ct.hidden_pre, &ct.hidden);

        if (ablation.use_gat) {
            for (std::size_t s = 0; s < cand.syn_ids.size(); ++s) {
                Vec e;
                Vec nz = embed(cand.syn_ids[s], e);
                ct.n_e.push_back(std::move(e));
                ct.n_t.push_back(interact(q, nz));
                Vec hp, hv;
                ct.n_tilde.push_back(transform(ct.n_t.back(), p.sker, &hp, &hv));
                ct.n_hidden_pre.push_back(std::move(hp));
                ct.n_hidden.push_back(std::move(hv));
                ct.n_z.push_back(std::move(nz));
            }
            ct.agg = aggregate(ct.z_tilde, ct.n_tilde, p.sker);
            ct.drop_mask = Vec(d, 1.0);
            if (train && dropout > 0.0) {
                if (!rng) throw std::invalid_argument("forward: dropout needs an RNG");
                const double keep = 1.0 - dropout;
                for (std::size_t i = 0; i < d; ++i)
                    ct.drop_mask[i] = rng->uniform01() < keep ? 1.0 / keep : 0.0;
            }
            ct.z_hat = hadamard(ct.agg.z_hat_raw, ct.drop_mask);
            if (ablation.use_gate)
                ct.z_check = gate_fuse(ct.z_tilde, ct.z_hat, p.sker, &ct.gate);
            else
                ct.z_check = ct.z_hat;
        } else {
            ct.z_check = ct.z_tilde;
        }
        z_checks.push_back(ct.z_check);
        t.cands.push_back(std::move(ct));
    }

    t.logits = Vec(z_checks.size());
    for (std::size_t i = 0; i < z_checks.size(); ++i)
        t.logits[i] = dot(p.sker.u_o.a, z_checks[i]) + p.sker.b_out.a[0];
    t.probs = softmax(t.logits);
    t.loss = cross_entropy(t.probs, inst.gold);
    t.predicted = 0;
    for (std::size_t i = 1; i < t.probs.size(); ++i)
        if (t.probs[i] > t.probs[t.predicted]) t.predicted = i;  // ties: lowest index
    return t;
}

namespace detail {

// backward through the residual MLP of transform(); returns d z_t
inline Vec transform_backward(const Vec& dz_tilde, const Vec& z_t, const Vec& hidden_pre,
                              const Vec& hidden, const SkerParams& p, SkerParams& g) {
    outer_acc(g.w_s, dz_tilde, hidden);
    for (std::size_t i = 0; i < dz_tilde.size(); ++i) g.b_s.a[i] += dz_tilde[i];
    Vec dpre = matvec_t(p.w_s, dz_tilde);
    for (std::size_t i = 0; i < dpre.size(); ++i)
        if (hidden_pre[i] <= 0.0) dpre[i] = 0.0;
    outer_acc(g.w_t, dpre, z_t);
    for (std::size_t i = 0; i < dpre.size(); ++i) g.b_t.a[i] += dpre[i];
    Vec dz_t = matvec_t(p.w_t, dpre);
    for (std::size_t i = 0; i < dz_t.size(); ++i) dz_t[i] += dz_tilde[i];  // residual
    return dz_t;
}

}  // namespace detail

// Exact analytic gradients of the instance loss, accumulated into `g`.
inline void backward(const ModelParams& p, const PreparedInstance& inst, const ForwardTrace& t,
                     ModelParams& g) {
    if (!t.train_mode)
        throw std::logic_error("backward: trace was not produced by a train-mode forward");
    if (t.cands.size() != inst.cands.size())
        throw std::logic_error("backward: trace does not match instance");

    const std::size_t d = p.d(), h = p.sker.head_count(), dh = p.sker.d_h();
    const AblationConfig ab = t.ablation;
    const Vec& q = t.enc.q;
    Vec dq(d, 0.0);

    Vec dlogits = t.probs;
    dlogits[inst.gold] -= 1.0;
    for (std::size_t i = 0; i < dlogits.size(); ++i) g.sker.b_out.a[0] += dlogits[i];

    auto embed_backward = [&](std::size_t idiom_id, const Vec& e, const Vec& dz) {
        // z = proj_w^T e + proj_b
        for (std::size_t i = 0; i < d; ++i) g.proj_b.a[i] += dz[i];
        for (std::size_t r = 0; r < p.proj_w.rows; ++r) {
            const double er = e[r];
            double de = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                g.proj_w(r, c) += er * dz[c];
                de += p.proj_w(r, c) * dz[c];
            }
            g.idiom_emb(idiom_id, r) += de;
        }
    };

    for (std::size_t ci = 0; ci < t.cands.size(); ++ci) {
        const CandidateTrace& ct = t.cands[ci];
        const PreparedCandidate& pc = inst.cands[ci];

        Vec dz_check(d, 0.0);
        axpy(dz_check, dlogits[ci], p.sker.u_o.a);
        for (std::size_t i = 0; i < d; ++i) g.sker.u_o.a[i] += dlogits[ci] * ct.z_check[i];

        Vec dz_tilde(d, 0.0);
        if (ab.use_gat) {
            Vec dz_hat(d, 0.0);
            if (ab.use_gate) {
                // z_check = g*z_hat + (1-g)*z_tilde
                Vec dgate(d);
                for (std::size_t i = 0; i < d; ++i) {
                    dgate[i] = dz_check[i] * (ct.z_hat[i] - ct.z_tilde[i]);
                    dz_hat[i] = dz_check[i] * ct.gate[i];
                    dz_tilde[i] += dz_check[i] * (1.0 - ct.gate[i]);
                }
                Vec dgate_pre(d);
                for (std::size_t i = 0; i < d; ++i)
                    dgate_pre[i] = dgate[i] * ct.gate[i] * (1.0 - ct.gate[i]);
                outer_acc(g.sker.w_g, dgate_pre, ct.z_tilde);
                for (std::size_t i = 0; i < d; ++i) g.sker.b_g.a[i] += dgate_pre[i];
                axpy(dz_tilde, 1.0, matvec_t(p.sker.w_g, dgate_pre));
            } else {
                dz_hat = dz_check;
            }

            Vec dz_hat_raw = hadamard(dz_hat, ct.drop_mask);
            outer_acc(g.sker.w_o, dz_hat_raw, ct.agg.concat);
            for (std::size_t i = 0; i < d; ++i) g.sker.b_o.a[i] += dz_hat_raw[i];
            Vec dconcat = matvec_t(p.sker.w_o, dz_hat_raw);

            const std::size_t cols = ct.n_tilde.size() + 1;
            const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
            std::vector<Vec> dn_tilde(ct.n_tilde.size(), Vec(d, 0.0));

            for (std::size_t i = 0; i < h; ++i) {
                const HeadTrace& ht = ct.agg.heads[i];
                const Vec dhead(dconcat.begin() + i * dh, dconcat.begin() + (i + 1) * dh);

                Vec dalpha(cols, 0.0);
                std::vector<Vec> dval(cols, Vec(dh, 0.0));
                for (std::size_t j = 0; j < cols; ++j) {
                    dalpha[j] = dot(dhead, ht.vals[j]);
                    axpy(dval[j], ht.alpha[j], dhead);
                }
                Vec dlog = softmax_backward(ht.alpha, dalpha);

                Vec dzq(dh, 0.0);
                std::vector<Vec> dkey(cols, Vec(dh, 0.0));
                for (std::size_t j = 0; j < cols; ++j) {
                    axpy(dzq, dlog[j] * scale, ht.keys[j]);
                    axpy(dkey[j], dlog[j] * scale, ht.zq);
                }

                auto block = [&](const Vec& v) {
                    return Vec(v.begin() + i * dh, v.begin() + (i + 1) * dh);
                };
                const Vec zt_block = block(ct.z_tilde);
                outer_acc(g.sker.heads[i].wq, dzq, zt_block);
                Vec dzt_block = matvec_t(p.sker.heads[i].wq, dzq);
                for (std::size_t c = 0; c < dh; ++c) dz_tilde[i * dh + c] += dzt_block[c];

                for (std::size_t j = 0; j < cols; ++j) {
                    const Vec col = j == 0 ? zt_block : block(ct.n_tilde[j - 1]);
                    outer_acc(g.sker.heads[i].wk, dkey[j], col);
                    outer_acc(g.sker.heads[i].wv, dval[j], col);
                    Vec dcol = add(matvec_t(p.sker.heads[i].wk, dkey[j]),
                                   matvec_t(p.sker.heads[i].wv, dval[j]));
                    if (j == 0)
                        for (std::size_t c = 0; c < dh; ++c) dz_tilde[i * dh + c] += dcol[c];
                    else
                        for (std::size_t c = 0; c < dh; ++c)
                            dn_tilde[j - 1][i * dh + c] += dcol[c];
                }
            }

            for (std::size_t s = 0; s < ct.n_tilde.size(); ++s) {
                Vec dn_t = detail::transform_backward(dn_tilde[s], ct.n_t[s], ct.n_hidden_pre[s],
                                                      ct.n_hidden[s], p.sker, g.sker);
                // n_t = q * n_z
                Vec dn_z(d);
                for (std::size_t i = 0; i < d; ++i) {
                    dq[i] += dn_t[i] * ct.n_z[s][i];
                    dn_z[i] = dn_t[i] * q[i];
                }
                embed_backward(pc.syn_ids[s], ct.n_e[s], dn_z);
            }
        } else {
            dz_tilde = dz_check;
        }

        Vec dz_t = detail::transform_backward(dz_tilde, ct.z_t, ct.hidden_pre, ct.hidden, p.sker,
                                              g.sker);
        Vec dz(d);
        for (std::size_t i = 0; i < d; ++i) {
            dq[i] += dz_t[i] * ct.z[i];
            dz[i] = dz_t[i] * q[i];
        }
        embed_backward(pc.idiom_id, ct.e, dz);
    }

    encode_backward(p.enc, t.enc, dq, g.enc);
}

// ForwardTrace serialization for the `inspect` subcommand; per-head attention
// weights are reported against the synonym names (candidate itself first).
inline nlohmann::json trace_to_json(const ForwardTrace& t, const PreparedInstance& inst) {
    nlohmann::json out;
    out["loss"] = t.loss;
    out["predicted"] = t.predicted;
    out["gold"] = inst.gold;
    out["probabilities"] = t.probs;
    out["candidates"] = nlohmann::json::array();
    for (std::size_t ci = 0; ci < t.cands.size(); ++ci) {
        const auto& ct = t.cands[ci];
        nlohmann::json c;
        c["idiom"] = inst.cands[ci].idiom;
        c["synonyms"] = inst.cands[ci].syn_names;
        c["probability"] = t.probs[ci];
        if (t.ablation.use_gat) {
            c["attention_heads"] = nlohmann::json::array();
            for (const auto& ht : ct.agg.heads) c["attention_heads"].push_back(ht.alpha);
            if (t.ablation.use_gate) c["gate"] = ct.gate;
        }
        out["candidates"].push_back(std::move(c));
    }
    return out;
}

}  // namespace sker
