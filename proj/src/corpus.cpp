#include "bunit/corpus.hpp"

#include "bunit/errors.hpp"
#include "bunit/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace bunit {

using nlohmann::json;

Corpus ingest_jsonl(const std::string& path, int window_size) {
    if (window_size < 3) throw ValidationError("window size must be at least 3");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open input file: " + path);

    struct Record {
        std::string id;
        int label;
        std::vector<std::string> events;
    };
    std::vector<Record> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        Record rec;
        try {
            rec.id = j.at("id").get<std::string>();
            const std::string label = j.at("label").get<std::string>();
            if (label == "benign") {
                rec.label = 0;
            } else if (label == "malicious") {
                rec.label = 1;
            } else {
                throw ValidationError(path + ":" + std::to_string(line_no) +
                                      ": unknown label \"" + label + "\"");
            }
            rec.events = j.at("events").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        records.push_back(std::move(rec));
    }

    Corpus corpus;
    corpus.window_size = window_size;
    // First pass builds the full vocabulary so ids are independent of
    // window boundaries.
    for (const auto& rec : records)
        for (const auto& name : rec.events) corpus.vocabulary.add(name);

    for (const auto& rec : records) {
        const size_t n = rec.events.size();
        for (size_t start = 0; start < n; start += static_cast<size_t>(window_size)) {
            const size_t len = std::min(static_cast<size_t>(window_size), n - start);
            if (len < 3) break; // short trailing window dropped
            BehaviorSequence seq;
            seq.source_id = rec.id;
            seq.label = rec.label;
            seq.tokens.reserve(len);
            for (size_t i = start; i < start + len; ++i)
                seq.tokens.push_back(corpus.vocabulary.encode(rec.events[i]));
            corpus.sequences.push_back(std::move(seq));
        }
    }
    if (corpus.sequences.empty()) throw ValidationError("no usable sequences in " + path);
    corpus.validate();
    return corpus;
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double fraction, uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ValidationError("split fraction must be in (0,1)");
    if (corpus.sequences.empty()) throw ValidationError("cannot split an empty corpus");

    // Collect traces per class in first-appearance order, then shuffle each
    // class deterministically.
    std::vector<std::string> order;
    std::map<std::string, int> trace_label;
    for (const auto& seq : corpus.sequences) {
        auto [it, inserted] = trace_label.emplace(seq.source_id, seq.label);
        if (inserted) order.push_back(seq.source_id);
        else if (it->second != seq.label)
            throw ValidationError("trace " + seq.source_id + " has inconsistent labels");
    }

    std::set<std::string> first_side;
    Rng rng(seed);
    for (int label = 0; label <= 1; ++label) {
        std::vector<std::string> traces;
        for (const auto& id : order)
            if (trace_label[id] == label) traces.push_back(id);
        // Fisher-Yates with the project RNG.
        for (size_t i = traces.size(); i > 1; --i)
            std::swap(traces[i - 1], traces[rng.uniform(i)]);
        const size_t take = static_cast<size_t>(std::llround(fraction * static_cast<double>(traces.size())));
        for (size_t i = 0; i < take && i < traces.size(); ++i) first_side.insert(traces[i]);
    }

    Corpus a, b;
    a.vocabulary = corpus.vocabulary;
    b.vocabulary = corpus.vocabulary;
    a.window_size = corpus.window_size;
    b.window_size = corpus.window_size;
    for (const auto& seq : corpus.sequences)
        (first_side.count(seq.source_id) ? a : b).sequences.push_back(seq);
    return {std::move(a), std::move(b)};
}

namespace {

// Order-1 Markov background over ids [1, V). Row weights are u^skew draws,
// normalized; skew > 1 concentrates mass on a few successors per state.
struct MarkovBackground {
    int vocab_size;
    std::vector<double> rows; // (V-1) x (V-1) transition probabilities
    std::vector<double> initial;

    MarkovBackground(int vocab, double skew, Rng& rng) : vocab_size(vocab) {
        const int n = vocab - 1;
        rows.resize(static_cast<size_t>(n) * n);
        for (int s = 0; s < n; ++s) {
            double total = 0.0;
            for (int t = 0; t < n; ++t) {
                const double w = std::pow(rng.uniform_real() + 1e-12, skew);
                rows[static_cast<size_t>(s) * n + t] = w;
                total += w;
            }
            for (int t = 0; t < n; ++t) rows[static_cast<size_t>(s) * n + t] /= total;
        }
        initial.resize(n);
        double total = 0.0;
        for (int t = 0; t < n; ++t) {
            initial[t] = std::pow(rng.uniform_real() + 1e-12, skew);
            total += initial[t];
        }
        for (int t = 0; t < n; ++t) initial[t] /= total;
    }

    int sample(const std::vector<double>& probs, Rng& rng) const {
        const double u = rng.uniform_real();
        double acc = 0.0;
        const int n = vocab_size - 1;
        for (int t = 0; t < n; ++t) {
            acc += probs[t];
            if (u < acc) return t + 1;
        }
        return n; // guard against rounding at the tail
    }

    std::vector<int> trace(int length, Rng& rng) const {
        std::vector<int> out;
        out.reserve(length);
        int prev = sample(initial, rng);
        out.push_back(prev);
        const int n = vocab_size - 1;
        for (int i = 1; i < length; ++i) {
            const std::vector<double> row(rows.begin() + static_cast<size_t>(prev - 1) * n,
                                          rows.begin() + static_cast<size_t>(prev) * n);
            prev = sample(row, rng);
            out.push_back(prev);
        }
        return out;
    }
};

} // namespace

Corpus generate_synthetic(const SyntheticConfig& config, uint64_t seed) {
    if (config.vocab_size < 10) throw ValidationError("synthetic vocabulary must have at least 10 ids");
    if (config.motifs.empty()) throw ValidationError("at least one planted motif is required");
    if (config.trace_length < 3) throw ValidationError("trace length must be at least 3");
    if (config.benign_traces < 1 || config.malicious_traces < 1)
        throw ValidationError("both classes need at least one trace");
    int motif_total = 0;
    for (const auto& motif : config.motifs) {
        if (motif.size() < 3 || motif.size() > 6)
            throw ValidationError("motif length must be between 3 and 6");
        if (static_cast<int>(motif.size()) > config.trace_length)
            throw ValidationError("motif longer than trace length");
        for (int t : motif)
            if (t < 1 || t >= config.vocab_size)
                throw ValidationError("motif token id out of range");
        motif_total += static_cast<int>(motif.size()) * config.insertions_per_motif;
    }

    Corpus corpus;
    for (int i = 1; i < config.vocab_size; ++i) corpus.vocabulary.add("ev_" + std::to_string(i));

    Rng rng(seed);
    MarkovBackground background(config.vocab_size, config.background_skew, rng);

    const int benign_len =
        config.length_match ? config.trace_length + motif_total : config.trace_length;
    for (int i = 0; i < config.benign_traces; ++i) {
        BehaviorSequence seq;
        seq.source_id = "synth-benign-" + std::to_string(i);
        seq.label = 0;
        seq.tokens = background.trace(benign_len, rng);
        corpus.sequences.push_back(std::move(seq));
    }
    for (int i = 0; i < config.malicious_traces; ++i) {
        BehaviorSequence seq;
        seq.source_id = "synth-malicious-" + std::to_string(i);
        seq.label = 1;
        seq.tokens = background.trace(config.trace_length, rng);
        for (const auto& motif : config.motifs) {
            for (int rep = 0; rep < config.insertions_per_motif; ++rep) {
                const size_t pos = rng.uniform(seq.tokens.size() + 1);
                seq.tokens.insert(seq.tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                                  motif.begin(), motif.end());
            }
        }
        corpus.sequences.push_back(std::move(seq));
    }

    int max_len = 0;
    for (const auto& seq : corpus.sequences)
        max_len = std::max(max_len, static_cast<int>(seq.tokens.size()));
    corpus.window_size = max_len;
    corpus.validate();
    return corpus;
}

} // namespace bunit
