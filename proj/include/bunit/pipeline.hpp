#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace bunit {

// Whole-run configuration. One declarative key=value file; every field has a
// default, unknown keys are rejected, and all violations are reported in a
// single error.
struct PipelineConfig {
    // corpus
    std::string corpus_input;     // JSONL path; empty selects the synthetic corpus
    bool corpus_synthetic = true;
    int window_size = 200;
    // synthetic generator
    int synth_vocab = 50;
    int synth_benign = 400;
    int synth_malicious = 400;
    int synth_length = 60;
    std::vector<std::vector<int>> synth_motifs; // defaulted in defaults()
    double synth_skew = 2.0;
    int synth_insertions = 1;
    // split
    double split_fraction = 0.5;
    // embedding
    int embed_dim = 16;
    int embed_window = 4;
    int embed_epochs = 5;
    int embed_negatives = 5;
    double embed_lr = 0.025;
    // mining + shapelets
    int mine_k = 15;
    int mine_min = 3;
    int mine_max = 6;
    std::string mine_distance = "embedding"; // or "onehot"
    int shapelet_count = 8;
    int shapelet_len = 4;
    double shapelet_gamma = 50.0;
    double shapelet_alpha = 0.1;
    double shapelet_lr = 0.05;
    int shapelet_epochs = 500;
    // classifier
    int clf_d_model = 64;
    int clf_heads = 4;
    int clf_layers = 2;
    int clf_d_ff = 128;
    int clf_hidden = 64;
    double clf_dropout = 0.1;
    double clf_lr = 1e-3;
    int clf_batch = 32;
    int clf_epochs = 30;
    bool train_ablation = true; // also train the no-unit-features variant
    bool train_baseline = true; // also train the raw-sequence baseline
    // attack
    int attack_windows = 4;
    std::vector<double> attack_rates = {0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40};
    // evaluation
    double eval_threshold = 0.5;
    bool eval_roc_csv = true;
    // seeds, one per stage
    uint64_t seed_corpus = 1;
    uint64_t seed_split = 2;
    uint64_t seed_embed = 3;
    uint64_t seed_shapelet = 4;
    uint64_t seed_classifier = 5;
    uint64_t seed_attack = 6;
    // output
    std::string out_dir = "runs/default";

    static PipelineConfig defaults();
    // Canonical key=value rendering; doubles as the manifest config snapshot
    // and the per-stage digest material.
    std::string to_text() const;
};

// Parses a config file (empty file = pure defaults) and applies overrides,
// then validates. Throws ValidationError listing every violation.
PipelineConfig load_config(const std::string& path,
                           const std::vector<std::string>& overrides = {});
PipelineConfig parse_config_text(const std::string& text,
                                 const std::vector<std::string>& overrides = {});

struct StageRecord {
    std::string name;
    std::string digest;
    bool skipped = false;
    double wall_ms = 0.0;
    std::map<std::string, std::string> outputs; // path -> sha256
};

struct RunManifest {
    std::string config_text;
    std::vector<StageRecord> stages;

    std::string output_hash(const std::string& filename) const;
};

// Executes ingest -> embed -> mine -> extract -> train -> attack -> evaluate
// with content-addressed stage caching; a stage reruns only when its config
// subset or input artifacts changed. The out directory is locked for the
// duration of the run.
RunManifest run_pipeline(const PipelineConfig& config);

} // namespace bunit
