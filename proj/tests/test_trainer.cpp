#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "sker/trainer.hpp"
#include "support/helpers.hpp"

using namespace sker;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool params_equal(ModelParams& a, ModelParams& b) {
    std::vector<Mat*> bm;
    b.for_each([&](const std::string&, Mat& m) { bm.push_back(&m); });
    bool equal = true;
    std::size_t i = 0;
    a.for_each([&](const std::string&, Mat& m) { equal = equal && (m == *bm[i++]); });
    return equal;
}

Model uniform_model(std::size_t m_candidates) {
    Model model;
    model.cfg.d = 8;
    model.cfg.heads = 2;
    model.cfg.source_dim = 8;
    model.cfg.max_len = 16;
    model.words = Vocab::with_unk();
    model.words.add(kBlankToken);
    model.words.add(kMaskToken);
    model.idioms = Vocab::with_unk();
    for (std::size_t i = 0; i < m_candidates; ++i) model.idioms.add("c" + std::to_string(i));
    model.params = ModelParams::init(model.words.size(), model.idioms.size(),
                                     model.cfg.source_dim, model.cfg.max_len, model.cfg.d,
                                     model.cfg.heads, 3);
    std::fill(model.params.sker.u_o.a.begin(), model.params.sker.u_o.a.end(), 0.0);
    model.params.sker.b_out.a[0] = 0.0;
    return model;
}

}  // namespace

TEST_CASE("adam_step with zero gradients is a fixed point") {
    TrainConfig cfg;
    ModelParams p = ModelParams::init(5, 6, 8, 16, 8, 2, 1);
    ModelParams before = p;
    AdamState state = AdamState::init(p);
    const ModelParams zeros = p.zeros_like();
    for (int step = 0; step < 3; ++step) adam_step(p, zeros, state, cfg);
    REQUIRE(params_equal(p, before));
}

TEST_CASE("adam_step first update matches the bias-corrected closed form") {
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    ModelParams p = ModelParams::init(5, 6, 8, 16, 8, 2, 2);
    ModelParams before = p;
    ModelParams grads = p.zeros_like();
    Rng rng(4);
    grads.for_each([&](const std::string&, Mat& m) {
        for (double& x : m.a) x = rng.uniform(-1, 1);
    });
    AdamState state = AdamState::init(p);
    adam_step(p, grads, state, cfg);

    // after bias correction mhat = g and vhat = g^2 on the first step
    std::vector<Mat*> bm, gm;
    before.for_each([&](const std::string&, Mat& m) { bm.push_back(&m); });
    grads.for_each([&](const std::string&, Mat& m) { gm.push_back(&m); });
    std::size_t t = 0;
    p.for_each([&](const std::string&, Mat& m) {
        const Mat& b = *bm[t];
        const Mat& g = *gm[t];
        ++t;
        for (std::size_t i = 0; i < m.a.size(); ++i) {
            const double expected =
                b.a[i] - cfg.learning_rate * g.a[i] / (std::abs(g.a[i]) + cfg.adam_eps);
            REQUIRE(m.a[i] == Catch::Approx(expected).margin(1e-12));
        }
    });
}

TEST_CASE("adam_step minimizes a quadratic in one coordinate") {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    ModelParams p = ModelParams::init(5, 6, 8, 16, 8, 2, 5);
    AdamState state = AdamState::init(p);
    const double target = 3.0;
    double loss0 = (p.sker.b_out.a[0] - target) * (p.sker.b_out.a[0] - target);
    for (int step = 0; step < 200; ++step) {
        ModelParams grads = p.zeros_like();
        grads.sker.b_out.a[0] = 2.0 * (p.sker.b_out.a[0] - target);
        adam_step(p, grads, state, cfg);
    }
    const double loss1 = (p.sker.b_out.a[0] - target) * (p.sker.b_out.a[0] - target);
    REQUIRE(loss1 < loss0 * 1e-2);
    REQUIRE(p.sker.b_out.a[0] == Catch::Approx(target).margin(0.05));
}

TEST_CASE("adam_step rejects non-finite gradients by name") {
    TrainConfig cfg;
    ModelParams p = ModelParams::init(5, 6, 8, 16, 8, 2, 6);
    ModelParams grads = p.zeros_like();
    grads.sker.w_g.a[3] = std::numeric_limits<double>::quiet_NaN();
    AdamState state = AdamState::init(p);
    REQUIRE_THROWS_WITH(adam_step(p, grads, state, cfg),
                        Catch::Matchers::ContainsSubstring("sker.w_g"));
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.d = 10;
    cfg.heads = 3;
    REQUIRE_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("divide"));
    cfg = TrainConfig{};
    cfg.dropout = 1.0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.learning_rate = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("train config JSON round-trip") {
    TrainConfig cfg;
    cfg.d = 16;
    cfg.heads = 4;
    cfg.learning_rate = 5e-4;
    cfg.ablation = {false, true, true};
    nlohmann::json j = cfg;
    const TrainConfig back = j.get<TrainConfig>();
    REQUIRE(back.d == 16);
    REQUIRE(back.heads == 4);
    REQUIRE(back.learning_rate == 5e-4);
    REQUIRE(back.ablation.use_synonyms == false);
}

TEST_CASE("early stopping honors patience with a frozen model") {
    // a vanishing learning rate keeps dev accuracy constant, so the second
    // epoch fails to improve strictly and patience 1 stops training
    auto task = testutil::make_overfit_task(16, 3, 10, 7);
    TrainConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.source_dim = 8;
    cfg.max_len = 8;
    cfg.batch_size = 8;
    cfg.max_epochs = 20;
    cfg.patience_epochs = 1;
    cfg.learning_rate = 1e-15;
    cfg.dropout = 0.0;
    cfg.seed = 11;
    const auto result = train(cfg, task.split, task.split, task.graphs);
    REQUIRE(result.epochs_run == 2);
}

TEST_CASE("same seed produces bitwise-identical checkpoints and logs") {
    auto task = testutil::make_overfit_task(24, 3, 12, 9);
    TrainConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.source_dim = 8;
    cfg.max_len = 8;
    cfg.batch_size = 8;
    cfg.max_epochs = 2;
    cfg.patience_epochs = 5;
    cfg.dropout = 0.2;
    cfg.seed = 21;

    testutil::TempFile f1("sker_ckpt_a.bin"), f2("sker_ckpt_b.bin");
    std::ostringstream log1, log2;
    auto r1 = train(cfg, task.split, task.split, task.graphs, nullptr, &log1);
    auto r2 = train(cfg, task.split, task.split, task.graphs, nullptr, &log2);
    save_checkpoint(r1.model, f1.path);
    save_checkpoint(r2.model, f2.path);
    REQUIRE(log1.str() == log2.str());
    REQUIRE(read_bytes(f1.path) == read_bytes(f2.path));
    REQUIRE_FALSE(log1.str().empty());
}

TEST_CASE("checkpoint round-trip restores every tensor bitwise") {
    auto task = testutil::make_overfit_task(8, 2, 6, 3);
    TrainConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.source_dim = 8;
    cfg.max_len = 8;
    cfg.batch_size = 8;
    cfg.max_epochs = 1;
    cfg.seed = 31;
    auto r = train(cfg, task.split, task.split, task.graphs);

    testutil::TempFile f("sker_ckpt_rt.bin");
    save_checkpoint(r.model, f.path);
    Model back = load_checkpoint(f.path);
    REQUIRE(back.words == r.model.words);
    REQUIRE(back.idioms == r.model.idioms);
    REQUIRE(back.graph_fingerprint == r.model.graph_fingerprint);
    REQUIRE(params_equal(back.params, r.model.params));

    SECTION("truncated file is rejected") {
        const std::string bytes = read_bytes(f.path);
        std::ofstream out(f.path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        REQUIRE_THROWS_WITH(load_checkpoint(f.path),
                            Catch::Matchers::ContainsSubstring("corrupt") ||
                                Catch::Matchers::ContainsSubstring("truncated"));
    }
    SECTION("bad magic is rejected") {
        std::ofstream out(f.path, std::ios::binary);
        out << "NOTACKPT!\nmore";
        out.close();
        REQUIRE_THROWS_WITH(load_checkpoint(f.path),
                            Catch::Matchers::ContainsSubstring("bad magic"));
    }
    SECTION("dimension mismatch names both values") {
        TrainConfig want = cfg;
        want.d = 16;
        REQUIRE_THROWS_WITH(load_checkpoint(f.path, &want),
                            Catch::Matchers::ContainsSubstring("checkpoint d=8") &&
                                Catch::Matchers::ContainsSubstring("requested d=16"));
    }
    SECTION("fingerprint mismatch is rejected") {
        const std::uint64_t other = r.model.graph_fingerprint + 1;
        REQUIRE_THROWS_WITH(load_checkpoint(f.path, nullptr, &other),
                            Catch::Matchers::ContainsSubstring("fingerprint mismatch"));
    }
}

TEST_CASE("graph fingerprint is sensitive to membership and order") {
    GraphSet a;
    SynonymGraph g;
    g.center = "A";
    g.neighbors = {"B", "C"};
    a.emplace(g.center, g);
    GraphSet b = a;
    b.at("A").neighbors = {"C", "B"};
    GraphSet c = a;
    c.at("A").neighbors = {"B"};
    REQUIRE(graph_fingerprint(a) != graph_fingerprint(b));
    REQUIRE(graph_fingerprint(a) != graph_fingerprint(c));
    REQUIRE(graph_fingerprint(a) == graph_fingerprint(GraphSet(a)));
}

TEST_CASE("a zeroed scorer predicts the first candidate everywhere") {
    Model model = uniform_model(10);

    CorpusSplit split;
    split.name = "test";
    Rng rng(41);
    std::size_t gold_zero = 0;
    for (int i = 0; i < 200; ++i) {
        ClozeInstance inst;
        inst.tokens = {kBlankToken};
        inst.blank_index = 0;
        for (int c = 0; c < 10; ++c) inst.candidates.push_back("c" + std::to_string(c));
        inst.gold = rng.below(10);
        gold_zero += (inst.gold == 0);
        split.instances.push_back(std::move(inst));
    }
    const auto report = evaluate(model, split, {});
    for (std::size_t pred : report.predicted) REQUIRE(pred == 0);  // tie-break: lowest index
    REQUIRE(report.correct == gold_zero);
    REQUIRE(report.accuracy ==
            Catch::Approx(static_cast<double>(gold_zero) / 200.0).margin(1e-15));

    // offline recount oracle
    std::size_t recount = 0;
    for (std::size_t i = 0; i < split.instances.size(); ++i)
        recount += (report.predicted[i] == split.instances[i].gold);
    REQUIRE(recount == report.correct);

    // per-instance loss is exactly ln(m) for the uniform distribution
    const auto prep = prepare_instance(split.instances[0], model.words, model.idioms, {});
    const auto t = forward(model.params, prep);
    REQUIRE(t.loss == Catch::Approx(std::log(10.0)).margin(1e-12));
}

TEST_CASE("evaluate is invariant to the worker count") {
    auto task = testutil::make_overfit_task(50, 4, 12, 51);
    TrainConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.source_dim = 8;
    cfg.max_len = 8;
    cfg.batch_size = 16;
    cfg.max_epochs = 1;
    cfg.seed = 52;
    auto r = train(cfg, task.split, task.split, task.graphs);

    r.model.cfg.workers = 1;
    const auto one = evaluate(r.model, task.split, task.graphs);
    r.model.cfg.workers = 3;
    const auto three = evaluate(r.model, task.split, task.graphs);
    REQUIRE(one.predicted == three.predicted);
    REQUIRE(one.accuracy == three.accuracy);
}

TEST_CASE("multi-threaded training is deterministic for a fixed worker count") {
    auto task = testutil::make_overfit_task(24, 3, 10, 61);
    TrainConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.source_dim = 8;
    cfg.max_len = 8;
    cfg.batch_size = 12;
    cfg.max_epochs = 2;
    cfg.patience_epochs = 5;
    cfg.dropout = 0.2;
    cfg.seed = 62;
    cfg.workers = 2;

    auto r1 = train(cfg, task.split, task.split, task.graphs);
    auto r2 = train(cfg, task.split, task.split, task.graphs);
    REQUIRE(params_equal(r1.model.params, r2.model.params));

    // a different worker count changes only summation order, so parameters
    // stay numerically close even though they need not match bitwise
    cfg.workers = 1;
    auto r3 = train(cfg, task.split, task.split, task.graphs);
    std::vector<Mat*> b;
    r3.model.params.for_each([&](const std::string&, Mat& m) { b.push_back(&m); });
    std::size_t i = 0;
    double max_diff = 0.0;
    r1.model.params.for_each([&](const std::string&, Mat& m) {
        const Mat& o = *b[i++];
        for (std::size_t k = 0; k < m.a.size(); ++k)
            max_diff = std::max(max_diff, std::abs(m.a[k] - o.a[k]));
    });
    REQUIRE(max_diff < 1e-6);
}

TEST_CASE("pretrained idiom rows are copied into the embedding table") {
    auto task = testutil::make_overfit_task(8, 2, 6, 71);
    TrainConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.source_dim = 5;
    cfg.max_len = 8;
    cfg.batch_size = 8;
    cfg.max_epochs = 1;
    cfg.learning_rate = 1e-15;  // keep parameters effectively frozen
    cfg.seed = 72;

    EmbeddingTable table;
    table.tokens = {task.idioms[0]};
    table.vectors = Mat(1, 5);
    for (std::size_t j = 0; j < 5; ++j) table.vectors(0, j) = 0.25 * (j + 1);
    table.rebuild_index();

    auto r = train(cfg, task.split, task.split, task.graphs, &table);
    const std::size_t row = r.model.idioms.id_of(task.idioms[0]);
    for (std::size_t j = 0; j < 5; ++j)
        REQUIRE(r.model.params.idiom_emb(row, j) == Catch::Approx(0.25 * (j + 1)).margin(1e-6));

    SECTION("dimension mismatch is rejected") {
        cfg.source_dim = 7;
        REQUIRE_THROWS_WITH(train(cfg, task.split, task.split, task.graphs, &table),
                            Catch::Matchers::ContainsSubstring("source_dim"));
    }
}

TEST_CASE("the w/o-synonym ablation redraws random neighbors per epoch") {
    Model model;
    model.cfg.ablation.use_synonyms = false;
    model.cfg.cap = 3;
    model.cfg.seed = 81;
    model.idioms = Vocab::with_unk();
    for (int i = 0; i < 12; ++i) model.idioms.add("w" + std::to_string(i));

    GraphSet real;  // ignored when use_synonyms is off
    const GraphSet e0 = detail::effective_graphs(model, real, 0);
    const GraphSet e0_again = detail::effective_graphs(model, real, 0);
    const GraphSet e1 = detail::effective_graphs(model, real, 1);
    REQUIRE(graph_fingerprint(e0) == graph_fingerprint(e0_again));
    REQUIRE(graph_fingerprint(e0) != graph_fingerprint(e1));
    for (const auto& [center, g] : e0) REQUIRE(g.neighbors.size() == 3);

    model.cfg.ablation.use_synonyms = true;
    REQUIRE(graph_fingerprint(detail::effective_graphs(model, real, 0)) ==
            graph_fingerprint(real));
}

TEST_CASE("training a memorizable task reaches high accuracy") {
    auto task = testutil::make_overfit_task(32, 3, 12, 91);
    TrainConfig cfg;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.source_dim = 16;
    cfg.max_len = 8;
    cfg.batch_size = 16;
    cfg.max_epochs = 120;
    cfg.patience_epochs = 120;
    cfg.learning_rate = 1e-3;
    cfg.dropout = 0.0;
    cfg.seed = 92;
    auto r = train(cfg, task.split, task.split, task.graphs);
    REQUIRE(r.best_dev_accuracy >= 0.9);
}
