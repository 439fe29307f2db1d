#include "bunit/pipeline.hpp"

#include "bunit/adversary.hpp"
#include "bunit/binio.hpp"
#include "bunit/classifier.hpp"
#include "bunit/corpus.hpp"
#include "bunit/errors.hpp"
#include "bunit/evaluation.hpp"
#include "bunit/extraction.hpp"
#include "bunit/hash.hpp"
#include "bunit/metrics.hpp"
#include "bunit/mining.hpp"
#include "bunit/shapelet.hpp"
#include "bunit/units.hpp"

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace bunit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string render_motifs(const std::vector<std::vector<int>>& motifs) {
    std::string out;
    for (size_t i = 0; i < motifs.size(); ++i) {
        if (i) out += ";";
        for (size_t j = 0; j < motifs[i].size(); ++j) {
            if (j) out += ",";
            out += std::to_string(motifs[i][j]);
        }
    }
    return out;
}

std::string render_rates(const std::vector<double>& rates) {
    std::ostringstream out;
    out.precision(17);
    for (size_t i = 0; i < rates.size(); ++i) {
        if (i) out << ",";
        out << rates[i];
    }
    return out.str();
}

// Field registry: one entry per config key, with parse and render hooks so
// the file format, overrides, digests, and the manifest all share one
// definition.
struct Field {
    std::string key;
    std::function<void(PipelineConfig&, const std::string&, std::vector<std::string>&)> parse;
    std::function<std::string(const PipelineConfig&)> render;
};

template <typename T>
void parse_number(const std::string& key, const std::string& value, T& out,
                  std::vector<std::string>& errors) {
    try {
        size_t pos = 0;
        if constexpr (std::is_same_v<T, double>) {
            out = std::stod(value, &pos);
        } else if constexpr (std::is_same_v<T, uint64_t>) {
            out = std::stoull(value, &pos);
        } else {
            out = static_cast<T>(std::stoll(value, &pos));
        }
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        errors.push_back(key + ": cannot parse \"" + value + "\"");
    }
}

void parse_bool(const std::string& key, const std::string& value, bool& out,
                std::vector<std::string>& errors) {
    if (value == "true")
        out = true;
    else if (value == "false")
        out = false;
    else
        errors.push_back(key + ": expected true or false, got \"" + value + "\"");
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        auto add = [&f](std::string key, auto parse, auto render) {
            f.push_back({std::move(key), parse, render});
        };
#define BUNIT_NUM_FIELD(KEY, MEMBER)                                                            \
    add(KEY,                                                                                    \
        [](PipelineConfig& c, const std::string& v, std::vector<std::string>& e) {              \
            parse_number(std::string(KEY), v, c.MEMBER, e);                                     \
        },                                                                                      \
        [](const PipelineConfig& c) {                                                           \
            if constexpr (std::is_same_v<std::decay_t<decltype(c.MEMBER)>, double>) {           \
                std::ostringstream o;                                                           \
                o.precision(17);                                                                \
                o << c.MEMBER;                                                                  \
                return o.str();                                                                 \
            } else {                                                                            \
                return std::to_string(c.MEMBER);                                                \
            }                                                                                   \
        })
#define BUNIT_BOOL_FIELD(KEY, MEMBER)                                                           \
    add(KEY,                                                                                    \
        [](PipelineConfig& c, const std::string& v, std::vector<std::string>& e) {              \
            parse_bool(KEY, v, c.MEMBER, e);                                                    \
        },                                                                                      \
        [](const PipelineConfig& c) { return c.MEMBER ? std::string("true") : std::string("false"); })

        add("corpus.input",
            [](PipelineConfig& c, const std::string& v, std::vector<std::string>&) {
                c.corpus_input = v;
                c.corpus_synthetic = v.empty();
            },
            [](const PipelineConfig& c) { return c.corpus_input; });
        BUNIT_BOOL_FIELD("corpus.synthetic", corpus_synthetic);
        BUNIT_NUM_FIELD("corpus.window", window_size);
        BUNIT_NUM_FIELD("synth.vocab", synth_vocab);
        BUNIT_NUM_FIELD("synth.benign", synth_benign);
        BUNIT_NUM_FIELD("synth.malicious", synth_malicious);
        BUNIT_NUM_FIELD("synth.length", synth_length);
        add("synth.motifs",
            [](PipelineConfig& c, const std::string& v, std::vector<std::string>& e) {
                c.synth_motifs.clear();
                std::stringstream groups(v);
                std::string group;
                while (std::getline(groups, group, ';')) {
                    std::vector<int> motif;
                    std::stringstream ids(group);
                    std::string id;
                    while (std::getline(ids, id, ',')) {
                        int token = 0;
                        parse_number(std::string("synth.motifs"), trim(id), token, e);
                        motif.push_back(token);
                    }
                    if (!motif.empty()) c.synth_motifs.push_back(std::move(motif));
                }
            },
            [](const PipelineConfig& c) { return render_motifs(c.synth_motifs); });
        BUNIT_NUM_FIELD("synth.skew", synth_skew);
        BUNIT_NUM_FIELD("synth.insertions", synth_insertions);
        BUNIT_NUM_FIELD("split.fraction", split_fraction);
        BUNIT_NUM_FIELD("embed.dim", embed_dim);
        BUNIT_NUM_FIELD("embed.window", embed_window);
        BUNIT_NUM_FIELD("embed.epochs", embed_epochs);
        BUNIT_NUM_FIELD("embed.negatives", embed_negatives);
        BUNIT_NUM_FIELD("embed.lr", embed_lr);
        BUNIT_NUM_FIELD("mine.k", mine_k);
        BUNIT_NUM_FIELD("mine.min", mine_min);
        BUNIT_NUM_FIELD("mine.max", mine_max);
        add("mine.distance",
            [](PipelineConfig& c, const std::string& v, std::vector<std::string>& e) {
                if (v != "embedding" && v != "onehot")
                    e.push_back("mine.distance: expected embedding or onehot, got \"" + v + "\"");
                else
                    c.mine_distance = v;
            },
            [](const PipelineConfig& c) { return c.mine_distance; });
        BUNIT_NUM_FIELD("shapelet.count", shapelet_count);
        BUNIT_NUM_FIELD("shapelet.len", shapelet_len);
        BUNIT_NUM_FIELD("shapelet.gamma", shapelet_gamma);
        BUNIT_NUM_FIELD("shapelet.alpha", shapelet_alpha);
        BUNIT_NUM_FIELD("shapelet.lr", shapelet_lr);
        BUNIT_NUM_FIELD("shapelet.epochs", shapelet_epochs);
        BUNIT_NUM_FIELD("classifier.d_model", clf_d_model);
        BUNIT_NUM_FIELD("classifier.heads", clf_heads);
        BUNIT_NUM_FIELD("classifier.layers", clf_layers);
        BUNIT_NUM_FIELD("classifier.d_ff", clf_d_ff);
        BUNIT_NUM_FIELD("classifier.hidden", clf_hidden);
        BUNIT_NUM_FIELD("classifier.dropout", clf_dropout);
        BUNIT_NUM_FIELD("classifier.lr", clf_lr);
        BUNIT_NUM_FIELD("classifier.batch", clf_batch);
        BUNIT_NUM_FIELD("classifier.epochs", clf_epochs);
        BUNIT_BOOL_FIELD("train.ablation", train_ablation);
        BUNIT_BOOL_FIELD("train.baseline", train_baseline);
        BUNIT_NUM_FIELD("attack.windows", attack_windows);
        add("attack.rates",
            [](PipelineConfig& c, const std::string& v, std::vector<std::string>& e) {
                c.attack_rates.clear();
                std::stringstream ss(v);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    double rate = 0.0;
                    parse_number(std::string("attack.rates"), trim(item), rate, e);
                    c.attack_rates.push_back(rate);
                }
            },
            [](const PipelineConfig& c) { return render_rates(c.attack_rates); });
        BUNIT_NUM_FIELD("evaluate.threshold", eval_threshold);
        BUNIT_BOOL_FIELD("evaluate.roc_csv", eval_roc_csv);
        BUNIT_NUM_FIELD("seed.corpus", seed_corpus);
        BUNIT_NUM_FIELD("seed.split", seed_split);
        BUNIT_NUM_FIELD("seed.embed", seed_embed);
        BUNIT_NUM_FIELD("seed.shapelet", seed_shapelet);
        BUNIT_NUM_FIELD("seed.classifier", seed_classifier);
        BUNIT_NUM_FIELD("seed.attack", seed_attack);
        add("out.dir",
            [](PipelineConfig& c, const std::string& v, std::vector<std::string>&) { c.out_dir = v; },
            [](const PipelineConfig& c) { return c.out_dir; });
#undef BUNIT_NUM_FIELD
#undef BUNIT_BOOL_FIELD
        return f;
    }();
    return table;
}

void apply_key(PipelineConfig& config, const std::string& key, const std::string& value,
               std::vector<std::string>& errors) {
    for (const auto& field : fields()) {
        if (field.key == key) {
            field.parse(config, value, errors);
            return;
        }
    }
    errors.push_back("unknown key: " + key);
}

void cross_validate(const PipelineConfig& c, std::vector<std::string>& errors) {
    if (c.window_size < 3) errors.push_back("corpus.window: must be at least 3");
    if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0))
        errors.push_back("split.fraction: must lie in (0,1)");
    if (c.mine_min < 3) errors.push_back("mine.min: must be at least 3");
    if (c.mine_min > c.mine_max)
        errors.push_back("mine.min/mine.max: min " + std::to_string(c.mine_min) +
                         " exceeds max " + std::to_string(c.mine_max));
    if (c.mine_max > c.window_size)
        errors.push_back("mine.max/corpus.window: max unit length exceeds the window size");
    if (c.shapelet_len > c.mine_max)
        errors.push_back("shapelet.len/mine.max: shapelet longer than the longest unit");
    if (c.shapelet_len < 1 || c.shapelet_count < 1)
        errors.push_back("shapelet.len/shapelet.count: must be positive");
    if (c.shapelet_gamma <= 0.0) errors.push_back("shapelet.gamma: must be positive");
    if (c.shapelet_alpha < 0.0) errors.push_back("shapelet.alpha: must be non-negative");
    if (c.embed_dim < 2) errors.push_back("embed.dim: must be at least 2");
    if (c.mine_k < 1) errors.push_back("mine.k: must be at least 1");
    for (double r : c.attack_rates)
        if (r < 0.0 || r > 1.0)
            errors.push_back("attack.rates: rate " + std::to_string(r) + " outside [0,1]");
    if (std::find(c.attack_rates.begin(), c.attack_rates.end(), 0.0) == c.attack_rates.end())
        errors.push_back("attack.rates: must include the rate-0 baseline");
    if (c.attack_windows < 1) errors.push_back("attack.windows: must be positive");
    if (c.clf_d_model % c.clf_heads != 0)
        errors.push_back("classifier.d_model/classifier.heads: width not divisible by heads");
    if (!(c.eval_threshold >= 0.0 && c.eval_threshold <= 1.0))
        errors.push_back("evaluate.threshold: must lie in [0,1]");
    if (c.corpus_synthetic) {
        if (c.synth_vocab < 10) errors.push_back("synth.vocab: must be at least 10");
        for (const auto& motif : c.synth_motifs) {
            if (motif.size() < 3 || motif.size() > 6)
                errors.push_back("synth.motifs: motif length must be 3..6");
            for (int t : motif)
                if (t < 1 || t >= c.synth_vocab)
                    errors.push_back("synth.motifs: token id " + std::to_string(t) +
                                     " outside [1, synth.vocab)");
        }
        if (c.synth_motifs.empty()) errors.push_back("synth.motifs: at least one motif required");
    } else if (c.corpus_input.empty()) {
        errors.push_back("corpus.input: path required when corpus.synthetic is false");
    }
}

} // namespace

PipelineConfig PipelineConfig::defaults() {
    PipelineConfig c;
    c.synth_motifs = {{3, 7, 9, 4}, {12, 5, 13}, {20, 21, 22, 23}};
    return c;
}

std::string PipelineConfig::to_text() const {
    std::ostringstream out;
    for (const auto& field : fields()) out << field.key << " = " << field.render(*this) << "\n";
    return out.str();
}

PipelineConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
    PipelineConfig config = PipelineConfig::defaults();
    std::vector<std::string> errors;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(line_no) + ": expected key = value");
            continue;
        }
        apply_key(config, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)), errors);
    }
    for (const auto& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos) {
            errors.push_back("override \"" + ov + "\": expected key=value");
            continue;
        }
        apply_key(config, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)), errors);
    }
    // canonical rate order keeps file naming and digests stable
    std::sort(config.attack_rates.begin(), config.attack_rates.end());
    config.attack_rates.erase(std::unique(config.attack_rates.begin(), config.attack_rates.end()),
                              config.attack_rates.end());
    cross_validate(config, errors);
    if (!errors.empty()) {
        std::string msg = "configuration errors:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ValidationError(msg);
    }
    return config;
}

PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    return parse_config_text(read_file(path), overrides);
}

std::string RunManifest::output_hash(const std::string& filename) const {
    for (const auto& stage : stages) {
        for (const auto& [path, hash] : stage.outputs)
            if (fs::path(path).filename() == filename) return hash;
    }
    return {};
}

namespace {

// Subset of config lines whose keys match any of the given prefixes; the
// digest material for one stage.
std::string config_subset(const PipelineConfig& c, const std::vector<std::string>& prefixes) {
    std::ostringstream out;
    for (const auto& field : fields())
        for (const auto& p : prefixes)
            if (field.key.rfind(p, 0) == 0) {
                out << field.key << " = " << field.render(c) << "\n";
                break;
            }
    return out.str();
}

class StageRunner {
public:
    StageRunner(const fs::path& out_dir) : out_dir_(out_dir) {
        fs::create_directories(out_dir_ / "cache");
    }

    // Runs fn unless a cache record matching `digest` exists and all its
    // outputs are intact on disk.
    StageRecord run(const std::string& name, const std::string& digest_material,
                    const std::vector<std::string>& outputs, const std::function<void()>& fn) {
        StageRecord rec;
        rec.name = name;
        rec.digest = sha256_hex("stage:" + name + "\n" + digest_material);
        const fs::path cache_file = out_dir_ / "cache" / (name + ".json");

        if (fs::exists(cache_file)) {
            try {
                const json cached = json::parse(read_file(cache_file.string()));
                if (cached.at("digest").get<std::string>() == rec.digest) {
                    bool intact = true;
                    std::map<std::string, std::string> hashes;
                    for (const auto& [path, hash] : cached.at("outputs").items()) {
                        if (!fs::exists(path) || sha256_file(path) != hash.get<std::string>()) {
                            intact = false;
                            break;
                        }
                        hashes[path] = hash.get<std::string>();
                    }
                    if (intact) {
                        rec.skipped = true;
                        rec.outputs = std::move(hashes);
                        return rec;
                    }
                }
            } catch (const std::exception&) {
                // unreadable cache record: fall through and rerun
            }
        }

        const auto start = std::chrono::steady_clock::now();
        try {
            fn();
        } catch (const std::exception& e) {
            throw IoError("stage " + name + " failed: " + e.what());
        }
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
        json record;
        record["digest"] = rec.digest;
        json outs;
        for (const auto& path : outputs) {
            const std::string h = sha256_file(path);
            rec.outputs[path] = h;
            outs[path] = h;
        }
        record["outputs"] = std::move(outs);
        atomic_write_file(cache_file.string(), record.dump(2) + "\n");
        return rec;
    }

private:
    fs::path out_dir_;
};

// Exclusive ownership of the output directory via an O_EXCL lock file.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw IoError("output directory is locked by another run: " + path_.string());
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

std::string rate_file_name(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "rate_%03d.bin", static_cast<int>(std::lround(rate * 100.0)));
    return buf;
}

std::string rate_csv_name(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "roc_rate_%03d.csv", static_cast<int>(std::lround(rate * 100.0)));
    return buf;
}

} // namespace

RunManifest run_pipeline(const PipelineConfig& config) {
    const fs::path out(config.out_dir);
    DirLock lock(out);
    fs::create_directories(out / "attacks");
    StageRunner runner(out);
    RunManifest manifest;
    manifest.config_text = config.to_text();

    const std::string corpus_file = (out / "corpus.bin").string();
    const std::string train_file = (out / "train.bin").string();
    const std::string test_file = (out / "test.bin").string();
    const std::string embed_file = (out / "embeddings.bin").string();
    const std::string units_file = (out / "units.json").string();
    const std::string shapelet_file = (out / "shapelet.bin").string();
    const std::string extracted_file = (out / "extracted_train.bin").string();
    const std::string model_file = (out / "model.bin").string();
    const std::string ablation_file = (out / "model_ablation.bin").string();
    const std::string baseline_file = (out / "model_baseline.bin").string();
    const std::string report_file = (out / "report.json").string();
    const std::string table_file = (out / "table.txt").string();

    // --- corpus ---------------------------------------------------------
    {
        std::string digest = config_subset(config, {"corpus.", "synth.", "split.", "seed.corpus",
                                                    "seed.split"});
        if (!config.corpus_synthetic) digest += "input-sha:" + sha256_file(config.corpus_input) + "\n";
        manifest.stages.push_back(runner.run(
            "corpus", digest, {corpus_file, train_file, test_file}, [&] {
                Corpus corpus = config.corpus_synthetic
                                    ? generate_synthetic(
                                          [&] {
                                              SyntheticConfig sc;
                                              sc.vocab_size = config.synth_vocab;
                                              sc.benign_traces = config.synth_benign;
                                              sc.malicious_traces = config.synth_malicious;
                                              sc.trace_length = config.synth_length;
                                              sc.motifs = config.synth_motifs;
                                              sc.background_skew = config.synth_skew;
                                              sc.insertions_per_motif = config.synth_insertions;
                                              return sc;
                                          }(),
                                          config.seed_corpus)
                                    : ingest_jsonl(config.corpus_input, config.window_size);
                corpus.save(corpus_file);
                auto [train, test] = split_corpus(corpus, config.split_fraction, config.seed_split);
                train.save(train_file);
                test.save(test_file);
            }));
    }

    // --- embeddings ------------------------------------------------------
    manifest.stages.push_back(runner.run(
        "embed",
        config_subset(config, {"embed.", "seed.embed"}) + "train-sha:" + sha256_file(train_file) + "\n",
        {embed_file}, [&] {
            const Corpus train = Corpus::load(train_file);
            SkipGramConfig sg;
            sg.dim = config.embed_dim;
            sg.window = config.embed_window;
            sg.epochs = config.embed_epochs;
            sg.negatives = config.embed_negatives;
            sg.learning_rate = config.embed_lr;
            train_behavior2vec(train, sg, config.seed_embed).save(embed_file);
        }));

    // --- mining ----------------------------------------------------------
    manifest.stages.push_back(runner.run(
        "mine",
        config_subset(config, {"mine.", "shapelet.", "seed.shapelet"}) +
            "train-sha:" + sha256_file(train_file) + "\nembed-sha:" + sha256_file(embed_file) + "\n",
        {units_file, shapelet_file}, [&] {
            const Corpus train = Corpus::load(train_file);
            const EmbeddingTable table = config.mine_distance == "onehot"
                                             ? one_hot_table(train.vocabulary.size())
                                             : EmbeddingTable::load(embed_file);
            ShapeletTrainConfig sc;
            sc.shapelet_count = config.shapelet_count;
            sc.shapelet_len = config.shapelet_len;
            sc.gamma = config.shapelet_gamma;
            sc.reg_alpha = config.shapelet_alpha;
            sc.learning_rate = config.shapelet_lr;
            sc.max_epochs = config.shapelet_epochs;
            sc.seed = config.seed_shapelet;
            const ShapeletModel model = train_shapelet_model(train, table, sc);
            model.save(shapelet_file);
            MiningConfig mc;
            mc.min_len = config.mine_min;
            mc.max_len = config.mine_max;
            mc.k = config.mine_k;
            save_units(units_file, mine_units(train, model, table, mc), train.vocabulary);
        }));

    // --- extraction ------------------------------------------------------
    manifest.stages.push_back(runner.run(
        "extract",
        "train-sha:" + sha256_file(train_file) + "\nunits-sha:" + sha256_file(units_file) + "\n",
        {extracted_file}, [&] {
            const Corpus train = Corpus::load(train_file);
            const std::vector<BehaviorUnitPattern> units = load_units(units_file, train.vocabulary);
            extract_corpus(train, units).save(extracted_file);
        }));

    // --- classifier training ----------------------------------------------
    {
        std::vector<std::string> outputs = {model_file};
        if (config.train_ablation) outputs.push_back(ablation_file);
        if (config.train_baseline) outputs.push_back(baseline_file);
        manifest.stages.push_back(runner.run(
            "train",
            config_subset(config, {"classifier.", "train.", "seed.classifier"}) +
                "extracted-sha:" + sha256_file(extracted_file) +
                "\nembed-sha:" + sha256_file(embed_file) +
                "\ntrain-sha:" + sha256_file(train_file) + "\n",
            outputs, [&] {
                const ExtractedCorpus extracted = ExtractedCorpus::load(extracted_file);
                const EmbeddingTable table = EmbeddingTable::load(embed_file);
                const std::string extracted_digest = sha256_file(extracted_file);

                ClassifierConfig base;
                base.d_model = config.clf_d_model;
                base.heads = config.clf_heads;
                base.layers = config.clf_layers;
                base.d_ff = config.clf_d_ff;
                base.mlp_hidden = config.clf_hidden;
                base.dropout = config.clf_dropout;
                base.max_unit_len = config.mine_max;
                base.embed_dim = config.embed_dim;
                ClassifierTrainConfig tc;
                tc.learning_rate = config.clf_lr;
                tc.batch_size = config.clf_batch;
                tc.epochs = config.clf_epochs;
                tc.seed = config.seed_classifier;

                std::vector<ClassifierExample> examples;
                for (const auto& seq : extracted.sequences) examples.push_back(to_example(seq));
                const std::vector<std::vector<int>> unit_tokens = unit_token_lists(extracted.units);

                ClassifierConfig full_cfg = base;
                full_cfg.use_units = true;
                train_classifier(examples, unit_tokens, table, full_cfg, tc, extracted_digest)
                    .save(model_file);

                if (config.train_ablation) {
                    ClassifierConfig abl_cfg = base;
                    abl_cfg.use_units = false;
                    train_classifier(examples, unit_tokens, table, abl_cfg, tc, extracted_digest)
                        .save(ablation_file);
                }
                if (config.train_baseline) {
                    const Corpus train = Corpus::load(train_file);
                    std::vector<ClassifierExample> raw;
                    for (const auto& seq : train.sequences) {
                        ClassifierExample ex;
                        ex.tokens = seq.tokens;
                        ex.unit_of.assign(seq.tokens.size(), -1);
                        ex.label = seq.label;
                        raw.push_back(std::move(ex));
                    }
                    ClassifierConfig raw_cfg = base;
                    raw_cfg.use_units = false;
                    train_classifier(raw, {}, table, raw_cfg, tc, sha256_file(train_file))
                        .save(baseline_file);
                }
            }));
    }

    // --- attack ------------------------------------------------------------
    std::vector<std::string> attack_files;
    for (double rate : config.attack_rates)
        attack_files.push_back((out / "attacks" / rate_file_name(rate)).string());
    manifest.stages.push_back(runner.run(
        "attack",
        config_subset(config, {"attack.", "seed.attack"}) + "train-sha:" + sha256_file(train_file) +
            "\ntest-sha:" + sha256_file(test_file) + "\n",
        attack_files, [&] {
            const Corpus train = Corpus::load(train_file);
            const Corpus test = Corpus::load(test_file);
            const FragmentGenerator gen = FragmentGenerator::train(train);
            const std::map<double, Corpus> attacked =
                attack_corpus(test, gen, config.attack_rates, config.attack_windows,
                              config.seed_attack);
            size_t i = 0;
            for (const auto& [rate, corpus] : attacked) {
                (void)rate;
                corpus.save(attack_files[i++]);
            }
        }));

    // --- evaluation ----------------------------------------------------------
    {
        std::vector<std::string> outputs = {report_file, table_file};
        if (config.eval_roc_csv) {
            outputs.push_back((out / rate_csv_name(0.0)).string());
            outputs.push_back((out / rate_csv_name(config.attack_rates.back())).string());
        }
        std::string digest = config_subset(config, {"evaluate."});
        digest += "model-sha:" + sha256_file(model_file) + "\n";
        if (config.train_ablation) digest += "abl-sha:" + sha256_file(ablation_file) + "\n";
        if (config.train_baseline) digest += "base-sha:" + sha256_file(baseline_file) + "\n";
        digest += "units-sha:" + sha256_file(units_file) + "\nembed-sha:" + sha256_file(embed_file) + "\n";
        for (const auto& f : attack_files) digest += "attack-sha:" + sha256_file(f) + "\n";

        manifest.stages.push_back(runner.run("evaluate", digest, outputs, [&] {
            const Corpus train = Corpus::load(train_file);
            const EmbeddingTable table = EmbeddingTable::load(embed_file);
            const std::vector<BehaviorUnitPattern> units = load_units(units_file, train.vocabulary);

            std::map<double, Corpus> attacked;
            for (size_t i = 0; i < config.attack_rates.size(); ++i)
                attacked.emplace(config.attack_rates[i], Corpus::load(attack_files[i]));

            std::map<std::string, SweepReport> sweeps;
            TrainedPipeline full;
            full.units = units;
            full.embeddings = table;
            full.model = ClassifierModel::load(model_file);
            full.threshold = config.eval_threshold;
            sweeps["full"] = robustness_sweep(full, attacked);

            if (config.train_ablation) {
                TrainedPipeline abl = full;
                abl.model = ClassifierModel::load(ablation_file);
                sweeps["ablation_no_units"] = robustness_sweep(abl, attacked);
            }
            if (config.train_baseline) {
                TrainedPipeline base = full;
                base.model = ClassifierModel::load(baseline_file);
                base.extract_input = false;
                sweeps["baseline_raw"] = robustness_sweep(base, attacked);
            }

            atomic_write_file(report_file, sweep_to_json(sweeps));
            atomic_write_file(table_file, sweep_to_table(sweeps));

            if (config.eval_roc_csv) {
                auto dump_roc = [&](double rate, const std::string& path) {
                    std::vector<std::pair<double, int>> scored;
                    for (const auto& seq : attacked.at(rate).sequences)
                        scored.emplace_back(predict_sequence(full, seq).score(), seq.label);
                    atomic_write_file(path, roc_points_csv(roc_auc(scored).points));
                };
                dump_roc(0.0, outputs[2]);
                dump_roc(config.attack_rates.back(), outputs[3]);
            }
        }));
    }

    // manifest last; wall times differ run to run so it is not part of the
    // deterministic artifact set.
    json mj;
    mj["version"] = 1;
    mj["config"] = manifest.config_text;
    json stages = json::array();
    for (const auto& stage : manifest.stages) {
        json s;
        s["name"] = stage.name;
        s["digest"] = stage.digest;
        s["skipped"] = stage.skipped;
        s["wall_ms"] = stage.wall_ms;
        json outs;
        for (const auto& [path, hash] : stage.outputs) outs[path] = hash;
        s["outputs"] = std::move(outs);
        stages.push_back(std::move(s));
    }
    mj["stages"] = std::move(stages);
    atomic_write_file((out / "manifest.json").string(), mj.dump(2) + "\n");
    return manifest;
}

} // namespace bunit
