#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sker/corpus.hpp"
#include "sker/digest.hpp"
#include "sker/embeddings.hpp"
#include "sker/gradcheck.hpp"
#include "sker/lmc.hpp"
#include "sker/model.hpp"
#include "sker/synonym_graph.hpp"
#include "sker/trainer.hpp"

namespace {

constexpr const char* kVersion = "sker 0.1.0";

void emit_manifest(const std::string& subcommand, const nlohmann::json& config,
                   const std::map<std::string, std::string>& inputs, std::uint64_t seed) {
    nlohmann::json manifest;
    manifest["subcommand"] = subcommand;
    manifest["config"] = config;
    manifest["seed"] = seed;
    manifest["version"] = kVersion;
    manifest["inputs"] = nlohmann::json::object();
    for (const auto& [name, path] : inputs)
        manifest["inputs"][name] = {{"path", path},
                                    {"digest", sker::hex64(sker::file_digest(path))}};
    std::cout << manifest.dump() << std::endl;
}

// CLI flag > config file > built-in default
sker::TrainConfig resolve_config(const std::string& config_path, const CLI::App* cmd) {
    sker::TrainConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open config file: " + config_path);
        nlohmann::json j;
        in >> j;
        cfg = j.get<sker::TrainConfig>();
    }
    auto override_sz = [&](const char* flag, std::size_t& field) {
        if (cmd->count(flag)) field = cmd->get_option(flag)->as<std::size_t>();
    };
    auto override_dbl = [&](const char* flag, double& field) {
        if (cmd->count(flag)) field = cmd->get_option(flag)->as<double>();
    };
    override_sz("--d", cfg.d);
    override_sz("--heads", cfg.heads);
    override_sz("--source-dim", cfg.source_dim);
    override_sz("--batch", cfg.batch_size);
    override_sz("--epochs", cfg.max_epochs);
    override_sz("--patience", cfg.patience_epochs);
    override_sz("--cap", cfg.cap);
    override_dbl("--lr", cfg.learning_rate);
    override_dbl("--dropout", cfg.dropout);
    override_dbl("--clip", cfg.clip);
    if (cmd->count("--seed")) cfg.seed = cmd->get_option("--seed")->as<std::uint64_t>();
    if (cmd->count("--workers"))
        cfg.workers = cmd->get_option("--workers")->as<std::size_t>();
    else if (const char* env = std::getenv("SKER_WORKERS"))
        cfg.workers = static_cast<std::size_t>(std::strtoull(env, nullptr, 10));
    if (cmd->count("--char-tokenize")) cfg.char_tokenize = true;
    return cfg;
}

void add_train_flags(CLI::App* cmd) {
    cmd->add_option("--d", "hidden size");
    cmd->add_option("--heads", "attention heads");
    cmd->add_option("--source-dim", "idiom embedding source dimension");
    cmd->add_option("--batch", "batch size");
    cmd->add_option("--epochs", "max epochs");
    cmd->add_option("--patience", "early-stop patience in epochs");
    cmd->add_option("--cap", "neighbor cap");
    cmd->add_option("--lr", "learning rate");
    cmd->add_option("--dropout", "dropout rate");
    cmd->add_option("--clip", "global-norm gradient clip (0 = off)");
    cmd->add_option("--seed", "random seed");
    cmd->add_option("--workers", "worker threads (env SKER_WORKERS as fallback)");
    cmd->add_flag("--char-tokenize", "tokenize passages per UTF-8 code point");
}

sker::CorpusSplit load_split(const std::string& path, const std::string& name, bool chars) {
    return sker::load_jsonl(path, name,
                            chars ? sker::TokenizeMode::character
                                  : sker::TokenizeMode::whitespace);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synonym knowledge enhanced reader for cloze-style idiom comprehension"};
    app.require_subcommand(1);

    // build-graph
    auto* build = app.add_subcommand("build-graph", "construct per-idiom synonym graphs");
    std::string mode = "embed", emb_path, dict_path, graph_out;
    double threshold = 0.65;
    std::size_t cap = 7;
    build->add_option("--mode", mode, "dict or embed")->check(CLI::IsMember({"dict", "embed"}));
    build->add_option("--threshold", threshold, "cosine threshold (embed mode)");
    build->add_option("--cap", cap, "max neighbors per idiom");
    build->add_option("--embeddings", emb_path, "word2vec text file (embed mode)");
    build->add_option("--dict", dict_path, "synonym dictionary file (dict mode)");
    build->add_option("--out", graph_out, "output graph file")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string config_path, train_path, dev_path, graphs_path, pre_path, ckpt_out, log_path;
    train_cmd->add_option("--config", config_path, "JSON config file");
    train_cmd->add_option("--train", train_path, "train JSONL")->required();
    train_cmd->add_option("--dev", dev_path, "dev JSONL")->required();
    train_cmd->add_option("--graphs", graphs_path, "synonym graph file")->required();
    train_cmd->add_option("--embeddings", pre_path, "pre-trained idiom embeddings (word2vec text)");
    train_cmd->add_option("--out", ckpt_out, "checkpoint output path")->required();
    train_cmd->add_option("--log", log_path, "training log (line-JSON)");
    add_train_flags(train_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string ckpt_path, data_path, split_name = "custom", dump_path;
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_path, "split JSONL")->required();
    eval_cmd->add_option("--split", split_name, "split name (dev/test/ran/sim/out/custom)");
    eval_cmd->add_option("--graphs", graphs_path, "synonym graph file")->required();
    eval_cmd->add_option("--dump", dump_path, "write per-instance predictions JSON");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "train and compare the four ablation rows");
    std::vector<std::string> ablate_eval_paths;
    ablate_cmd->add_option("--config", config_path, "JSON config file");
    ablate_cmd->add_option("--train", train_path, "train JSONL")->required();
    ablate_cmd->add_option("--dev", dev_path, "dev JSONL")->required();
    ablate_cmd->add_option("--eval", ablate_eval_paths, "evaluation JSONL files");
    ablate_cmd->add_option("--graphs", graphs_path, "synonym graph file")->required();
    ablate_cmd->add_option("--embeddings", pre_path, "pre-trained idiom embeddings");
    add_train_flags(ablate_cmd);

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the backward pass");
    sker::GradCheckConfig gc;
    grad_cmd->add_option("--d", gc.d, "hidden size");
    grad_cmd->add_option("--heads", gc.heads, "attention heads");
    grad_cmd->add_option("--m", gc.m, "candidates");
    grad_cmd->add_option("--l", gc.l, "synonyms per candidate");
    grad_cmd->add_option("--len", gc.len, "passage length");
    grad_cmd->add_option("--seed", gc.seed, "random seed");

    // inspect
    auto* inspect_cmd = app.add_subcommand("inspect", "dump the forward trace of one instance");
    std::size_t instance_id = 0;
    inspect_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    inspect_cmd->add_option("--data", data_path, "split JSONL")->required();
    inspect_cmd->add_option("--graphs", graphs_path, "synonym graph file")->required();
    inspect_cmd->add_option("--instance", instance_id, "instance index")->required();

    // analyze-lmc
    auto* lmc_cmd = app.add_subcommand("analyze-lmc", "literal-meaning-coverage statistics");
    std::string ann_path, syn_path;
    lmc_cmd->add_option("--annotations", ann_path, "CSV item,kind,r1,r2,...")->required();
    lmc_cmd->add_option("--synonyms", syn_path, "idiom TAB synonyms link file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // usage text
        return 2;
    }

    try {
        if (*build) {
            std::map<std::string, std::string> inputs;
            sker::GraphSet graphs;
            if (mode == "embed") {
                if (emb_path.empty())
                    throw std::runtime_error("build-graph --mode embed requires --embeddings");
                inputs["embeddings"] = emb_path;
                emit_manifest("build-graph",
                              {{"mode", mode}, {"threshold", threshold}, {"cap", cap}}, inputs, 0);
                const auto table = sker::load_word2vec_text(emb_path);
                graphs = sker::build_all_from_embeddings(table, threshold, cap);
            } else {
                if (dict_path.empty())
                    throw std::runtime_error("build-graph --mode dict requires --dict");
                inputs["dict"] = dict_path;
                emit_manifest("build-graph", {{"mode", mode}, {"cap", cap}}, inputs, 0);
                const auto dict = sker::load_dictionary(dict_path);
                std::vector<std::string> idioms;
                std::set<std::string> seen;
                for (const auto& group : dict.groups)
                    for (const auto& idiom : group)
                        if (seen.insert(idiom).second) idioms.push_back(idiom);
                graphs = sker::build_all_from_dictionary(dict, idioms);
            }
            sker::save_graphs(graphs, graph_out);
            std::cout << "wrote " << graphs.size() << " graphs to " << graph_out << std::endl;
        } else if (*train_cmd) {
            sker::TrainConfig cfg = resolve_config(config_path, train_cmd);
            cfg.validate();
            std::map<std::string, std::string> inputs = {
                {"train", train_path}, {"dev", dev_path}, {"graphs", graphs_path}};
            if (!pre_path.empty()) inputs["embeddings"] = pre_path;
            emit_manifest("train", cfg, inputs, cfg.seed);

            const auto train_split = load_split(train_path, "train", cfg.char_tokenize);
            const auto dev_split = load_split(dev_path, "dev", cfg.char_tokenize);
            const auto graphs = sker::load_graphs(graphs_path);
            sker::EmbeddingTable pretrained;
            const sker::EmbeddingTable* pre = nullptr;
            if (!pre_path.empty()) {
                pretrained = sker::load_word2vec_text(pre_path);
                pre = &pretrained;
            }
            std::ofstream log;
            if (!log_path.empty()) {
                log.open(log_path);
                if (!log) throw std::runtime_error("cannot open log file: " + log_path);
            }
            const auto result = sker::train(cfg, train_split, dev_split, graphs, pre,
                                            log_path.empty() ? nullptr : &log);
            sker::save_checkpoint(result.model, ckpt_out);
            nlohmann::json summary = {{"best_dev_accuracy", result.best_dev_accuracy},
                                      {"epochs_run", result.epochs_run},
                                      {"checkpoint", ckpt_out}};
            std::cout << summary.dump() << std::endl;
        } else if (*eval_cmd) {
            emit_manifest("eval", {{"split", split_name}},
                          {{"checkpoint", ckpt_path}, {"data", data_path}, {"graphs", graphs_path}},
                          0);
            const auto graphs = sker::load_graphs(graphs_path);
            const std::uint64_t fp = sker::graph_fingerprint(graphs);
            const auto model = sker::load_checkpoint(ckpt_path, nullptr, &fp);
            const auto split = load_split(data_path, split_name, model.cfg.char_tokenize);
            const auto report = sker::evaluate(model, split, graphs);
            nlohmann::json out = {{"split", report.split},
                                  {"accuracy", report.accuracy},
                                  {"correct", report.correct},
                                  {"total", report.total}};
            if (!dump_path.empty()) {
                nlohmann::json dump = out;
                dump["predicted"] = report.predicted;
                std::ofstream df(dump_path);
                df << dump.dump(2) << '\n';
            }
            std::cout << out.dump() << std::endl;
        } else if (*ablate_cmd) {
            sker::TrainConfig cfg = resolve_config(config_path, ablate_cmd);
            cfg.validate();
            std::map<std::string, std::string> inputs = {
                {"train", train_path}, {"dev", dev_path}, {"graphs", graphs_path}};
            for (std::size_t i = 0; i < ablate_eval_paths.size(); ++i)
                inputs["eval" + std::to_string(i)] = ablate_eval_paths[i];
            emit_manifest("ablate", cfg, inputs, cfg.seed);

            const auto train_split = load_split(train_path, "train", cfg.char_tokenize);
            const auto dev_split = load_split(dev_path, "dev", cfg.char_tokenize);
            const auto graphs = sker::load_graphs(graphs_path);
            sker::EmbeddingTable pretrained;
            const sker::EmbeddingTable* pre = nullptr;
            if (!pre_path.empty()) {
                pretrained = sker::load_word2vec_text(pre_path);
                pre = &pretrained;
            }
            std::vector<sker::CorpusSplit> evals;
            if (ablate_eval_paths.empty())
                evals.push_back(dev_split);
            else
                for (std::size_t i = 0; i < ablate_eval_paths.size(); ++i)
                    evals.push_back(load_split(ablate_eval_paths[i],
                                               "eval" + std::to_string(i), cfg.char_tokenize));
            std::vector<const sker::CorpusSplit*> eval_ptrs;
            for (const auto& s : evals) eval_ptrs.push_back(&s);

            const auto rows =
                sker::run_ablation_suite(cfg, train_split, dev_split, eval_ptrs, graphs, pre);
            for (const auto& row : rows) {
                std::cout << row.name << '\t';
                for (const auto& rep : row.reports)
                    std::cout << rep.split << '=' << rep.accuracy << '\t';
                std::cout << "ave=" << row.average << "\tdelta=" << row.delta << std::endl;
            }
        } else if (*grad_cmd) {
            emit_manifest("gradcheck",
                          {{"d", gc.d}, {"heads", gc.heads}, {"m", gc.m}, {"l", gc.l},
                           {"len", gc.len}},
                          {}, gc.seed);
            const auto result = sker::run_gradcheck(gc);
            const bool pass = result.max_rel_error < 1e-4;
            std::cout << "max relative error " << result.max_rel_error << " (worst "
                      << result.worst_param << ", " << result.entries_checked << " entries): "
                      << (pass ? "PASS" : "FAIL") << std::endl;
            return pass ? 0 : 1;
        } else if (*inspect_cmd) {
            emit_manifest("inspect", {{"instance", instance_id}},
                          {{"checkpoint", ckpt_path}, {"data", data_path}, {"graphs", graphs_path}},
                          0);
            const auto graphs = sker::load_graphs(graphs_path);
            const std::uint64_t fp = sker::graph_fingerprint(graphs);
            const auto model = sker::load_checkpoint(ckpt_path, nullptr, &fp);
            const auto split = load_split(data_path, "custom", model.cfg.char_tokenize);
            if (instance_id >= split.instances.size())
                throw std::runtime_error("instance index " + std::to_string(instance_id) +
                                         " out of range (split has " +
                                         std::to_string(split.instances.size()) + ")");
            const auto prep = sker::prepare_instance(split.instances[instance_id], model.words,
                                                     model.idioms, graphs);
            const auto trace = sker::forward(model.params, prep, model.cfg.ablation, false, 0.0);
            std::cout << sker::trace_to_json(trace, prep).dump(2) << std::endl;
        } else if (*lmc_cmd) {
            std::map<std::string, std::string> inputs = {{"annotations", ann_path}};
            if (!syn_path.empty()) inputs["synonyms"] = syn_path;
            emit_manifest("analyze-lmc", nlohmann::json::object(), inputs, 0);

            const auto records = sker::load_annotations(ann_path);
            std::vector<sker::AnnotationRecord> idioms, words;
            for (const auto& rec : records)
                (rec.kind == sker::ItemKind::idiom ? idioms : words).push_back(rec);

            nlohmann::json out;
            auto summarize = [](const std::vector<sker::AnnotationRecord>& recs) {
                nlohmann::json j;
                if (recs.empty()) return j;
                const auto buckets = sker::bucket_distribution(recs);
                j["bucket_shares"] = {{"[1.00,1.66)", buckets.low},
                                      {"[1.66,2.33)", buckets.mid},
                                      {"[2.33,3.00]", buckets.high}};
                const auto kappa = sker::fleiss_kappa(recs);
                j["fleiss_kappa"] = kappa.value;
                j["kappa_degenerate"] = kappa.degenerate;
                j["items"] = recs.size();
                return j;
            };
            out["idioms"] = summarize(idioms);
            out["common_words"] = summarize(words);

            if (!syn_path.empty()) {
                const auto links = sker::load_synonym_links(syn_path);
                std::map<std::string, sker::AnnotationRecord> by_item;
                for (const auto& rec : records) by_item[rec.item] = rec;
                std::map<std::string, std::vector<sker::AnnotationRecord>> syn_records;
                for (const auto& [idiom, syns] : links) {
                    for (const auto& s : syns) {
                        const auto it = by_item.find(s);
                        if (it != by_item.end()) syn_records[idiom].push_back(it->second);
                    }
                }
                const auto change = sker::lmc_change(idioms, syn_records);
                out["lmc_change"] = {{"higher", change.higher},
                                     {"equal", change.equal},
                                     {"lower", change.lower},
                                     {"skipped", change.skipped}};
            }
            std::cout << out.dump(2) << std::endl;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
