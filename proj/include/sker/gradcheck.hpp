#pragma once

#include <cmath>
#include <string>

#include "sker/model.hpp"

namespace sker {

// Central-finite-difference verification of the full analytic backward pass.
struct GradCheckConfig {
    std::size_t d = 8;
    std::size_t heads = 2;
    std::size_t m = 3;    // candidates
    std::size_t l = 2;    // synonyms per candidate
    std::size_t len = 6;  // passage length
    std::size_t source_dim = 12;
    std::size_t word_vocab = 9;
    std::size_t idiom_vocab = 12;
    std::size_t max_len = 16;
    std::uint64_t seed = 1;
    double epsilon = 1e-5;
    AblationConfig ablation;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t entries_checked = 0;
};

inline PreparedInstance random_instance(const GradCheckConfig& cfg, Rng& rng) {
    PreparedInstance inst;
    for (std::size_t i = 0; i < cfg.len; ++i) inst.word_ids.push_back(rng.below(cfg.word_vocab));
    inst.blank = rng.below(cfg.len);
    for (std::size_t c = 0; c < cfg.m; ++c) {
        PreparedCandidate pc;
        pc.idiom_id = 1 + rng.below(cfg.idiom_vocab - 1);
        pc.idiom = "idiom_" + std::to_string(pc.idiom_id);
        for (std::size_t s = 0; s < cfg.l; ++s) {
            // repeats allowed across candidates so shared-row accumulation is exercised
            pc.syn_ids.push_back(rng.below(cfg.idiom_vocab));
            pc.syn_names.push_back("idiom_" + std::to_string(pc.syn_ids.back()));
        }
        inst.cands.push_back(std::move(pc));
    }
    inst.gold = rng.below(cfg.m);
    return inst;
}

inline GradCheckResult run_gradcheck(const GradCheckConfig& cfg) {
    Rng rng(mix_seed(cfg.seed, 0x6763ULL));
    ModelParams params = ModelParams::init(cfg.word_vocab, cfg.idiom_vocab, cfg.source_dim,
                                           cfg.max_len, cfg.d, cfg.heads,
                                           mix_seed(cfg.seed, 1));
    const PreparedInstance inst = random_instance(cfg, rng);

    auto loss_of = [&](ModelParams& p) {
        return forward(p, inst, cfg.ablation, true, 0.0).loss;
    };

    ForwardTrace trace = forward(params, inst, cfg.ablation, true, 0.0);
    ModelParams grads = params.zeros_like();
    backward(params, inst, trace, grads);

    std::vector<std::pair<std::string, Mat*>> gs;
    grads.for_each([&](const std::string& n, Mat& m) { gs.emplace_back(n, &m); });

    GradCheckResult result;
    std::size_t tensor_idx = 0;
    params.for_each([&](const std::string& name, Mat& m) {
        const Mat& g = *gs[tensor_idx++].second;
        for (std::size_t i = 0; i < m.a.size(); ++i) {
            const double saved = m.a[i];
            m.a[i] = saved + cfg.epsilon;
            const double fp = loss_of(params);
            m.a[i] = saved - cfg.epsilon;
            const double fm = loss_of(params);
            m.a[i] = saved;
            const double numeric = (fp - fm) / (2.0 * cfg.epsilon);
            const double analytic = g.a[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
            const double rel = std::abs(numeric - analytic) / denom;
            ++result.entries_checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = name + "[" + std::to_string(i) + "]";
            }
        }
    });
    return result;
}

}  // namespace sker
