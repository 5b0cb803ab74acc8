#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sker/linalg.hpp"

namespace sker {

// Small trainable stand-in for a pre-trained passage encoder: one post-norm
// self-attention block over token + position embeddings. Produces the hidden
// state at the blank position as the passage representation q.
struct EncoderParams {
    Mat tok_emb;   // vocab x d
    Mat pos_emb;   // max_len x d
    Mat wq, wk, wv, wo;             // d x d
    Mat ln1_gain, ln1_bias;         // d x 1
    Mat ff1_w;                      // 4d x d
    Mat ff1_b;                      // 4d x 1
    Mat ff2_w;                      // d x 4d
    Mat ff2_b;                      // d x 1
    Mat ln2_gain, ln2_bias;         // d x 1

    std::size_t d() const { return wq.rows; }
    std::size_t max_len() const { return pos_emb.rows; }

    static EncoderParams init(std::size_t vocab_size, std::size_t max_len, std::size_t d,
                              Rng& rng) {
        EncoderParams p;
        p.tok_emb = Mat(vocab_size, d);
        xavier_fill(p.tok_emb, 1, d, rng);
        p.pos_emb = Mat(max_len, d);
        xavier_fill(p.pos_emb, 1, d, rng);
        for (Mat* m : {&p.wq, &p.wk, &p.wv, &p.wo}) {
            *m = Mat(d, d);
            xavier_fill(*m, d, d, rng);
        }
        p.ln1_gain = Mat(d, 1, 1.0);
        p.ln1_bias = Mat(d, 1, 0.0);
        p.ff1_w = Mat(4 * d, d);
        xavier_fill(p.ff1_w, d, 4 * d, rng);
        p.ff1_b = Mat(4 * d, 1, 0.0);
        p.ff2_w = Mat(d, 4 * d);
        xavier_fill(p.ff2_w, 4 * d, d, rng);
        p.ff2_b = Mat(d, 1, 0.0);
        p.ln2_gain = Mat(d, 1, 1.0);
        p.ln2_bias = Mat(d, 1, 0.0);
        return p;
    }

    template <class F>
    void for_each(F&& f) {
        f("enc.tok_emb", tok_emb);
        f("enc.pos_emb", pos_emb);
        f("enc.wq", wq);
        f("enc.wk", wk);
        f("enc.wv", wv);
        f("enc.wo", wo);
        f("enc.ln1_gain", ln1_gain);
        f("enc.ln1_bias", ln1_bias);
        f("enc.ff1_w", ff1_w);
        f("enc.ff1_b", ff1_b);
        f("enc.ff2_w", ff2_w);
        f("enc.ff2_b", ff2_b);
        f("enc.ln2_gain", ln2_gain);
        f("enc.ln2_bias", ln2_bias);
    }
};

namespace detail {

inline constexpr double kLnEps = 1e-5;

struct LnCache {
    Vec xhat;
    double inv_std = 0.0;
};

inline Vec ln_forward(const Vec& r, const Mat& gain, const Mat& bias, LnCache& cache) {
    const std::size_t d = r.size();
    double mean = 0.0;
    for (double x : r) mean += x;
    mean /= d;
    double var = 0.0;
    for (double x : r) var += (x - mean) * (x - mean);
    var /= d;
    cache.inv_std = 1.0 / std::sqrt(var + kLnEps);
    cache.xhat.resize(d);
    Vec y(d);
    for (std::size_t i = 0; i < d; ++i) {
        cache.xhat[i] = (r[i] - mean) * cache.inv_std;
        y[i] = gain.a[i] * cache.xhat[i] + bias.a[i];
    }
    return y;
}

inline Vec ln_backward(const Vec& dy, const Mat& gain, const LnCache& cache, Mat& dgain,
                       Mat& dbias) {
    const std::size_t d = dy.size();
    Vec dxhat(d);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        dgain.a[i] += dy[i] * cache.xhat[i];
        dbias.a[i] += dy[i];
        dxhat[i] = dy[i] * gain.a[i];
        mean_dxhat += dxhat[i];
        mean_dxhat_xhat += dxhat[i] * cache.xhat[i];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    Vec dr(d);
    for (std::size_t i = 0; i < d; ++i)
        dr[i] = cache.inv_std * (dxhat[i] - mean_dxhat - cache.xhat[i] * mean_dxhat_xhat);
    return dr;
}

}  // namespace detail

struct EncoderTrace {
    std::vector<std::size_t> ids;  // after truncation
    std::size_t blank = 0;         // after truncation
    Mat x;                         // n x d token+position embeddings
    Mat k, v;                      // n x d keys/values
    Vec q_blank;                   // attention query at the blank row
    Vec attn;                      // softmax weights, length n
    Vec attn_out, o_b, r1_b, h_b;
    detail::LnCache ln1;
    Vec ff_pre, ff_relu;  // 4d
    Vec f_raw;            // d, before dropout
    Vec drop_mask;        // d, scale factors (all 1 in eval mode)
    Vec f_b, r2_b;
    detail::LnCache ln2;
    Vec q;  // final blank representation
    bool valid = false;
};

struct EncoderOutput {
    Vec q;
};

// Symmetric truncation around the blank; never drops the blank token.
inline void truncate_around_blank(std::vector<std::size_t>& ids, std::size_t& blank,
                                  std::size_t max_len) {
    if (ids.size() <= max_len) return;
    std::size_t start = blank >= (max_len - 1) / 2 ? blank - (max_len - 1) / 2 : 0;
    start = std::min(start, ids.size() - max_len);
    ids = std::vector<std::size_t>(ids.begin() + start, ids.begin() + start + max_len);
    blank -= start;
}

inline EncoderTrace encode(const EncoderParams& p, std::vector<std::size_t> ids,
                           std::size_t blank, bool train = false, double dropout = 0.0,
                           Rng* rng = nullptr) {
    if (ids.empty()) throw std::invalid_argument("encode: empty token sequence");
    if (blank >= ids.size()) throw std::invalid_argument("encode: blank index out of range");
    truncate_around_blank(ids, blank, p.max_len());

    const std::size_t n = ids.size(), d = p.d();
    EncoderTrace t;
    t.ids = ids;
    t.blank = blank;
    t.x = Mat(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        if (ids[i] >= p.tok_emb.rows)
            throw std::out_of_range("encode: token id " + std::to_string(ids[i]) +
                                    " outside embedding table");
        for (std::size_t j = 0; j < d; ++j)
            t.x(i, j) = p.tok_emb(ids[i], j) + p.pos_emb(i, j);
    }

    t.k = Mat(n, d);
    t.v = Mat(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec xi = t.x.row_vec(i);
        const Vec ki = matvec(p.wk, xi), vi = matvec(p.wv, xi);
        std::copy(ki.begin(), ki.end(), t.k.row(i));
        std::copy(vi.begin(), vi.end(), t.v.row(i));
    }
    t.q_blank = matvec(p.wq, t.x.row_vec(blank));

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Vec logits(n);
    for (std::size_t j = 0; j < n; ++j) logits[j] = dot(t.q_blank, t.k.row_vec(j)) * scale;
    t.attn = softmax(logits);

    t.attn_out = Vec(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) axpy(t.attn_out, t.attn[j], t.v.row_vec(j));
    t.o_b = matvec(p.wo, t.attn_out);
    t.r1_b = add(t.x.row_vec(blank), t.o_b);
    t.h_b = detail::ln_forward(t.r1_b, p.ln1_gain, p.ln1_bias, t.ln1);

    t.ff_pre = matvec(p.ff1_w, t.h_b);
    for (std::size_t i = 0; i < t.ff_pre.size(); ++i) t.ff_pre[i] += p.ff1_b.a[i];
    t.ff_relu = t.ff_pre;
    for (double& x : t.ff_relu) x = std::max(x, 0.0);
    t.f_raw = matvec(p.ff2_w, t.ff_relu);
    for (std::size_t i = 0; i < d; ++i) t.f_raw[i] += p.ff2_b.a[i];

    t.drop_mask = Vec(d, 1.0);
    if (train && dropout > 0.0) {
        if (!rng) throw std::invalid_argument("encode: dropout in train mode needs an RNG");
        const double keep = 1.0 - dropout;
        for (std::size_t i = 0; i < d; ++i)
            t.drop_mask[i] = rng->uniform01() < keep ? 1.0 / keep : 0.0;
    }
    t.f_b = hadamard(t.f_raw, t.drop_mask);
    t.r2_b = add(t.h_b, t.f_b);
    t.q = detail::ln_forward(t.r2_b, p.ln2_gain, p.ln2_bias, t.ln2);
    t.valid = true;
    return t;
}

// Gradients of upstream . q with respect to every encoder parameter,
// accumulated into `g`.
inline void encode_backward(const EncoderParams& p, const EncoderTrace& t, const Vec& upstream,
                            EncoderParams& g) {
    if (!t.valid) throw std::logic_error("encode_backward: no recorded forward trace");
    const std::size_t n = t.ids.size(), d = p.d();

    Vec dr2 = detail::ln_backward(upstream, p.ln2_gain, t.ln2, g.ln2_gain, g.ln2_bias);
    Vec dh = dr2;  // residual
    Vec df = hadamard(dr2, t.drop_mask);

    // feed-forward
    outer_acc(g.ff2_w, df, t.ff_relu);
    for (std::size_t i = 0; i < d; ++i) g.ff2_b.a[i] += df[i];
    Vec du = matvec_t(p.ff2_w, df);
    for (std::size_t i = 0; i < du.size(); ++i)
        if (t.ff_pre[i] <= 0.0) du[i] = 0.0;
    outer_acc(g.ff1_w, du, t.h_b);
    for (std::size_t i = 0; i < du.size(); ++i) g.ff1_b.a[i] += du[i];
    axpy(dh, 1.0, matvec_t(p.ff1_w, du));

    Vec dr1 = detail::ln_backward(dh, p.ln1_gain, t.ln1, g.ln1_gain, g.ln1_bias);
    Mat dx(n, d);
    for (std::size_t j = 0; j < d; ++j) dx(t.blank, j) += dr1[j];  // residual into x_b
    Vec do_b = dr1;

    outer_acc(g.wo, do_b, t.attn_out);
    Vec dattn_out = matvec_t(p.wo, do_b);

    // attention
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Vec dalpha(n);
    for (std::size_t j = 0; j < n; ++j) dalpha[j] = dot(dattn_out, t.v.row_vec(j));
    Vec dlogits = softmax_backward(t.attn, dalpha);

    Vec dq_blank(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        axpy(dq_blank, dlogits[j] * scale, t.k.row_vec(j));
        Vec dk = Vec(d, 0.0);
        axpy(dk, dlogits[j] * scale, t.q_blank);
        Vec dv = Vec(d, 0.0);
        axpy(dv, t.attn[j], dattn_out);
        const Vec xj = t.x.row_vec(j);
        outer_acc(g.wk, dk, xj);
        outer_acc(g.wv, dv, xj);
        Vec dxj = add(matvec_t(p.wk, dk), matvec_t(p.wv, dv));
        for (std::size_t c = 0; c < d; ++c) dx(j, c) += dxj[c];
    }
    const Vec xb = t.x.row_vec(t.blank);
    outer_acc(g.wq, dq_blank, xb);
    Vec dxb = matvec_t(p.wq, dq_blank);
    for (std::size_t c = 0; c < d; ++c) dx(t.blank, c) += dxb[c];

    // embeddings (rows accumulate across duplicate tokens)
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) {
            g.tok_emb(t.ids[i], c) += dx(i, c);
            g.pos_emb(i, c) += dx(i, c);
        }
}

}  // namespace sker
