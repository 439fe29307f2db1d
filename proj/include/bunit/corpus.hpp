#pragma once

#include "bunit/types.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace bunit {

// Reads a JSONL trace file ({"id","label","events":[...]}) and windows each
// record into consecutive non-overlapping sequences of at most window_size
// tokens. A trailing window shorter than 3 tokens is dropped: nothing useful
// can be mined from it because the minimum unit length is 3.
Corpus ingest_jsonl(const std::string& path, int window_size);

// Trace-level stratified split. All windows of one source land on the same
// side and each class is divided to within one trace of the requested
// fraction. Deterministic for a fixed seed.
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, double fraction, uint64_t seed);

struct SyntheticConfig {
    int vocab_size = 50;      // total ids including the reserved unk slot
    int benign_traces = 400;
    int malicious_traces = 400;
    int trace_length = 60;    // background length before motif insertion
    std::vector<std::vector<int>> motifs; // planted malicious runs, ids in [1, vocab_size)
    double background_skew = 2.0;         // larger = spikier Markov transition rows
    int insertions_per_motif = 1;
    bool length_match = true; // pad benign traces so both classes have equal lengths
};

// Desk-scale corpus generator: benign traces sample an order-1 Markov
// background; malicious traces share the background but carry every motif as
// a contiguous run at random offsets. Byte-identical output per seed.
Corpus generate_synthetic(const SyntheticConfig& config, uint64_t seed);

} // namespace bunit
