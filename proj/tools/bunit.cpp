#include "bunit/adversary.hpp"
#include "bunit/binio.hpp"
#include "bunit/classifier.hpp"
#include "bunit/corpus.hpp"
#include "bunit/errors.hpp"
#include "bunit/evaluation.hpp"
#include "bunit/extraction.hpp"
#include "bunit/hash.hpp"
#include "bunit/mining.hpp"
#include "bunit/pipeline.hpp"
#include "bunit/shapelet.hpp"
#include "bunit/units.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitStageError = 3;

using namespace bunit;
namespace fs = std::filesystem;

struct CommonSeeds {
    uint64_t seed = 1;
};

void cmd_ingest(const std::string& input, int window, const std::string& out) {
    ingest_jsonl(input, window).save(out);
    std::cout << "wrote " << out << "\n";
}

void cmd_synth(const PipelineConfig& cfg, uint64_t seed, const std::string& out) {
    SyntheticConfig sc;
    sc.vocab_size = cfg.synth_vocab;
    sc.benign_traces = cfg.synth_benign;
    sc.malicious_traces = cfg.synth_malicious;
    sc.trace_length = cfg.synth_length;
    sc.motifs = cfg.synth_motifs;
    sc.background_skew = cfg.synth_skew;
    sc.insertions_per_motif = cfg.synth_insertions;
    generate_synthetic(sc, seed).save(out);
    std::cout << "wrote " << out << "\n";
}

void cmd_embed(const std::string& corpus_path, int dim, int window, int epochs, uint64_t seed,
               const std::string& out) {
    const Corpus corpus = Corpus::load(corpus_path);
    SkipGramConfig cfg;
    cfg.dim = dim;
    cfg.window = window;
    cfg.epochs = epochs;
    train_behavior2vec(corpus, cfg, seed).save(out);
    std::cout << "wrote " << out << "\n";
}

void cmd_mine(const std::string& corpus_path, const std::string& embed_path, int k, int min_len,
              int max_len, const ShapeletTrainConfig& shapelet_cfg, const std::string& distance,
              const std::string& units_out, const std::string& shapelet_out) {
    const Corpus corpus = Corpus::load(corpus_path);
    const EmbeddingTable table = distance == "onehot" ? one_hot_table(corpus.vocabulary.size())
                                                      : EmbeddingTable::load(embed_path);
    const ShapeletModel model = train_shapelet_model(corpus, table, shapelet_cfg);
    if (!shapelet_out.empty()) model.save(shapelet_out);
    MiningConfig mc;
    mc.k = k;
    mc.min_len = min_len;
    mc.max_len = max_len;
    save_units(units_out, mine_units(corpus, model, table, mc), corpus.vocabulary);
    std::cout << "wrote " << units_out << "\n";
}

void cmd_extract(const std::string& corpus_path, const std::string& units_path,
                 const std::string& out, bool repeat_match) {
    const Corpus corpus = Corpus::load(corpus_path);
    const std::vector<BehaviorUnitPattern> units = load_units(units_path, corpus.vocabulary);
    ExtractOptions opts;
    opts.repeat_match = repeat_match;
    extract_corpus(corpus, units, opts).save(out);
    std::cout << "wrote " << out << "\n";
}

void cmd_train(const std::string& extracted_path, const std::string& embed_path,
               const ClassifierConfig& cfg, const ClassifierTrainConfig& tc,
               const std::string& out) {
    const ExtractedCorpus extracted = ExtractedCorpus::load(extracted_path);
    const EmbeddingTable table = EmbeddingTable::load(embed_path);
    std::vector<ClassifierExample> examples;
    for (const auto& seq : extracted.sequences) examples.push_back(to_example(seq));
    ClassifierConfig cfg_full = cfg;
    cfg_full.embed_dim = table.dim;
    train_classifier(examples, unit_token_lists(extracted.units), table, cfg_full, tc,
                     sha256_file(extracted_path))
        .save(out);
    std::cout << "wrote " << out << "\n";
}

void cmd_attack(const std::string& corpus_path, const std::string& benign_train_path,
                const std::vector<double>& rates, int windows, uint64_t seed,
                const std::string& out_dir) {
    const Corpus corpus = Corpus::load(corpus_path);
    const Corpus benign_train = Corpus::load(benign_train_path);
    const FragmentGenerator gen = FragmentGenerator::train(benign_train);
    const std::map<double, Corpus> attacked = attack_corpus(corpus, gen, rates, windows, seed);
    fs::create_directories(out_dir);
    for (const auto& [rate, c] : attacked) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "rate_%03d.bin", static_cast<int>(std::lround(rate * 100)));
        c.save((fs::path(out_dir) / buf).string());
    }
    std::cout << "wrote " << attacked.size() << " corpora to " << out_dir << "\n";
}

void cmd_predict_full(const std::string& model_path, const std::string& extracted_path,
                      const std::string& embed_path, double threshold, const std::string& out) {
    const ExtractedCorpus extracted = ExtractedCorpus::load(extracted_path);
    const ClassifierModel model = ClassifierModel::load(model_path);
    const EmbeddingTable table = EmbeddingTable::load(embed_path);
    const std::vector<std::vector<int>> unit_tokens = unit_token_lists(extracted.units);
    std::string lines;
    for (const auto& seq : extracted.sequences) {
        const Prediction pred = model.forward(to_example(seq), unit_tokens, table);
        nlohmann::json j;
        j["id"] = seq.source_id;
        j["score"] = pred.score();
        j["label"] = pred.label_at(threshold);
        j["true_label"] = seq.label;
        j["no_units_flag"] = pred.no_units;
        lines += j.dump() + "\n";
    }
    atomic_write_file(out, lines);
    std::cout << "wrote " << out << "\n";
}

void cmd_evaluate(const std::string& model_path, const std::string& units_path,
                  const std::string& embed_path, const std::string& attacks_dir, double threshold,
                  const std::string& out) {
    const EmbeddingTable table = EmbeddingTable::load(embed_path);

    std::map<double, Corpus> attacked;
    for (const auto& entry : fs::directory_iterator(attacks_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("rate_", 0) != 0 || entry.path().extension() != ".bin") continue;
        const double rate = std::stoi(name.substr(5, 3)) / 100.0;
        attacked.emplace(rate, Corpus::load(entry.path().string()));
    }
    if (attacked.empty()) throw ValidationError("no rate_*.bin corpora found in " + attacks_dir);

    TrainedPipeline pipeline;
    pipeline.units = load_units(units_path, attacked.begin()->second.vocabulary);
    pipeline.embeddings = table;
    pipeline.model = ClassifierModel::load(model_path);
    pipeline.threshold = threshold;

    std::map<std::string, SweepReport> sweeps;
    sweeps["full"] = robustness_sweep(pipeline, attacked);
    atomic_write_file(out, sweep_to_json(sweeps));
    std::cout << sweep_to_table(sweeps);
    std::cout << "wrote " << out << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"behavior-unit anomaly detection pipeline"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "execute the full pipeline from a config file");
    std::string run_config;
    std::vector<std::string> run_overrides;
    run->add_option("--config", run_config, "pipeline config file (key = value lines)");
    run->add_option("--override", run_overrides, "key=value override, repeatable");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "convert a JSONL trace file into a corpus");
    std::string in_path, in_out = "corpus.bin";
    int in_window = 200;
    ingest->add_option("--input", in_path, "JSONL input")->required();
    ingest->add_option("--window", in_window, "window size");
    ingest->add_option("--out", in_out, "output corpus file");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    std::string synth_out = "corpus.bin";
    std::vector<std::string> synth_overrides;
    uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out, "output corpus file");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--override", synth_overrides, "synth.* key=value override, repeatable");

    // embed
    auto* embed = app.add_subcommand("embed", "train behavior embeddings");
    std::string em_corpus, em_out = "embeddings.bin";
    int em_dim = 16, em_window = 4, em_epochs = 5;
    uint64_t em_seed = 3;
    embed->add_option("--corpus", em_corpus)->required();
    embed->add_option("--dim", em_dim);
    embed->add_option("--window", em_window);
    embed->add_option("--epochs", em_epochs);
    embed->add_option("--seed", em_seed);
    embed->add_option("--out", em_out);

    // mine
    auto* mine = app.add_subcommand("mine", "mine critical behavior units");
    std::string mi_corpus, mi_embed, mi_units = "units.json", mi_shapelet = "shapelet.bin";
    std::string mi_distance = "embedding";
    int mi_k = 15, mi_min = 3, mi_max = 6;
    ShapeletTrainConfig mi_cfg;
    mine->add_option("--corpus", mi_corpus)->required();
    mine->add_option("--embeddings", mi_embed);
    mine->add_option("--k", mi_k);
    mine->add_option("--min", mi_min);
    mine->add_option("--max", mi_max);
    mine->add_option("--distance", mi_distance, "embedding|onehot");
    mine->add_option("--shapelets", mi_cfg.shapelet_count, "shapelet count J");
    mine->add_option("--shapelet-len", mi_cfg.shapelet_len, "shapelet length L");
    mine->add_option("--gamma", mi_cfg.gamma);
    mine->add_option("--alpha", mi_cfg.reg_alpha);
    mine->add_option("--seed", mi_cfg.seed);
    mine->add_option("--out", mi_units);
    mine->add_option("--shapelet-out", mi_shapelet);

    // extract
    auto* extract = app.add_subcommand("extract", "extract behavior units from a corpus");
    std::string ex_corpus, ex_units, ex_out = "extracted.bin";
    bool ex_repeat = false;
    extract->add_option("--corpus", ex_corpus)->required();
    extract->add_option("--units", ex_units)->required();
    extract->add_option("--out", ex_out);
    extract->add_flag("--repeat-match", ex_repeat, "let a unit claim multiple matches");

    // train
    auto* train = app.add_subcommand("train", "train the two-level classifier");
    std::string tr_extracted, tr_embed, tr_out = "model.bin";
    ClassifierConfig tr_cfg;
    ClassifierTrainConfig tr_tc;
    bool tr_no_units = false;
    train->add_option("--extracted", tr_extracted)->required();
    train->add_option("--embeddings", tr_embed)->required();
    train->add_option("--d-model", tr_cfg.d_model);
    train->add_option("--heads", tr_cfg.heads);
    train->add_option("--layers", tr_cfg.layers);
    train->add_option("--epochs", tr_tc.epochs);
    train->add_option("--batch", tr_tc.batch_size);
    train->add_option("--lr", tr_tc.learning_rate);
    train->add_option("--seed", tr_tc.seed);
    train->add_flag("--no-units", tr_no_units, "behaviors-only variant");
    train->add_option("--out", tr_out);

    // attack
    auto* attack = app.add_subcommand("attack", "generate benign-fragment injection attacks");
    std::string at_corpus, at_benign, at_out = "attacks";
    std::vector<double> at_rates = {0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40};
    int at_windows = 4;
    uint64_t at_seed = 7;
    attack->add_option("--corpus", at_corpus)->required();
    attack->add_option("--benign-train", at_benign)->required();
    attack->add_option("--rates", at_rates)->delimiter(',');
    attack->add_option("--windows", at_windows);
    attack->add_option("--seed", at_seed);
    attack->add_option("--out-dir", at_out);

    // predict
    auto* predict = app.add_subcommand("predict", "score an extracted corpus");
    std::string pr_model, pr_extracted, pr_embed, pr_out = "scores.jsonl";
    double pr_threshold = 0.5;
    predict->add_option("--model", pr_model)->required();
    predict->add_option("--extracted", pr_extracted)->required();
    predict->add_option("--embeddings", pr_embed)->required();
    predict->add_option("--threshold", pr_threshold);
    predict->add_option("--out", pr_out);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "robustness sweep over attacked corpora");
    std::string ev_model, ev_units, ev_embed, ev_attacks = "attacks", ev_out = "report.json";
    double ev_threshold = 0.5;
    evaluate->add_option("--model", ev_model)->required();
    evaluate->add_option("--units", ev_units)->required();
    evaluate->add_option("--embeddings", ev_embed)->required();
    evaluate->add_option("--attacks", ev_attacks);
    evaluate->add_option("--threshold", ev_threshold);
    evaluate->add_option("--out", ev_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    try {
        if (run->parsed()) {
            const PipelineConfig cfg = run_config.empty()
                                           ? parse_config_text("", run_overrides)
                                           : load_config(run_config, run_overrides);
            run_pipeline(cfg);
            std::cout << "pipeline complete; artifacts in " << cfg.out_dir << "\n";
        } else if (ingest->parsed()) {
            cmd_ingest(in_path, in_window, in_out);
        } else if (synth->parsed()) {
            const PipelineConfig cfg = parse_config_text("", synth_overrides);
            cmd_synth(cfg, synth_seed, synth_out);
        } else if (embed->parsed()) {
            cmd_embed(em_corpus, em_dim, em_window, em_epochs, em_seed, em_out);
        } else if (mine->parsed()) {
            if (mi_distance == "embedding" && mi_embed.empty())
                throw ValidationError("mine: --embeddings required unless --distance onehot");
            cmd_mine(mi_corpus, mi_embed, mi_k, mi_min, mi_max, mi_cfg, mi_distance, mi_units,
                     mi_shapelet);
        } else if (extract->parsed()) {
            cmd_extract(ex_corpus, ex_units, ex_out, ex_repeat);
        } else if (train->parsed()) {
            tr_cfg.use_units = !tr_no_units;
            cmd_train(tr_extracted, tr_embed, tr_cfg, tr_tc, tr_out);
        } else if (attack->parsed()) {
            cmd_attack(at_corpus, at_benign, at_rates, at_windows, at_seed, at_out);
        } else if (predict->parsed()) {
            cmd_predict_full(pr_model, pr_extracted, pr_embed, pr_threshold, pr_out);
        } else if (evaluate->parsed()) {
            cmd_evaluate(ev_model, ev_units, ev_embed, ev_attacks, ev_threshold, ev_out);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStageError;
    }
    return kExitOk;
}
