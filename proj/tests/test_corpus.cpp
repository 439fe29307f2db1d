#include "bunit/corpus.hpp"
#include "bunit/errors.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace bunit;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& name, const std::string& contents) {
    const fs::path p = fs::temp_directory_path() / name;
    std::ofstream out(p);
    out << contents;
    return p.string();
}

std::string record(const std::string& id, const std::string& label, int n_events,
                   const std::string& prefix = "ev") {
    std::ostringstream out;
    out << "{\"id\":\"" << id << "\",\"label\":\"" << label << "\",\"events\":[";
    for (int i = 0; i < n_events; ++i) {
        if (i) out << ",";
        out << "\"" << prefix << i << "\"";
    }
    out << "]}";
    return out.str();
}

} // namespace

TEST_CASE("windowing splits records and drops short tails") {
    const std::string path = write_temp("bunit_windows.jsonl",
                                        record("a", "benign", 10) + "\n" +
                                        record("b", "malicious", 9) + "\n" +
                                        record("c", "benign", 11) + "\n");
    const Corpus corpus = ingest_jsonl(path, 4);

    std::map<std::string, std::vector<size_t>> lens;
    for (const auto& seq : corpus.sequences) lens[seq.source_id].push_back(seq.tokens.size());
    // 10 events -> [4,4], remainder 2 dropped
    CHECK(lens["a"] == std::vector<size_t>{4, 4});
    // 9 events -> [4,4], remainder 1 dropped
    CHECK(lens["b"] == std::vector<size_t>{4, 4});
    // 11 events -> [4,4,3], remainder 3 kept
    CHECK(lens["c"] == std::vector<size_t>{4, 4, 3});

    for (const auto& seq : corpus.sequences)
        CHECK(seq.label == (seq.source_id == "b" ? 1 : 0));
}

TEST_CASE("windowing is a partition of the record") {
    const std::string path = write_temp("bunit_partition.jsonl", record("a", "benign", 11) + "\n");
    const Corpus corpus = ingest_jsonl(path, 4);
    std::vector<std::string> rebuilt;
    for (const auto& seq : corpus.sequences)
        for (int t : seq.tokens) rebuilt.push_back(corpus.vocabulary.decode(t));
    // all 11 events survive here because the tail has length 3
    std::vector<std::string> expect;
    for (int i = 0; i < 11; ++i) expect.push_back("ev" + std::to_string(i));
    CHECK(rebuilt == expect);
}

TEST_CASE("shared event names map to one token id") {
    const std::string path = write_temp(
        "bunit_shared.jsonl",
        "{\"id\":\"a\",\"label\":\"benign\",\"events\":[\"read\",\"open\",\"read\"]}\n"
        "{\"id\":\"b\",\"label\":\"malicious\",\"events\":[\"close\",\"read\",\"exit\"]}\n");
    const Corpus corpus = ingest_jsonl(path, 8);
    const int read_id = corpus.vocabulary.encode("read");
    CHECK(corpus.sequences[0].tokens[0] == read_id);
    CHECK(corpus.sequences[1].tokens[1] == read_id);
}

TEST_CASE("vocabulary round-trips every name and reserves unk") {
    const std::string path = write_temp("bunit_roundtrip.jsonl", record("a", "benign", 7) + "\n");
    const Corpus corpus = ingest_jsonl(path, 7);
    CHECK(corpus.vocabulary.decode(Vocabulary::kUnkId) == Vocabulary::kUnkName);
    for (const auto& name : corpus.vocabulary.names())
        CHECK(corpus.vocabulary.decode(corpus.vocabulary.encode(name)) == name);
    CHECK(corpus.vocabulary.encode("never-seen") == Vocabulary::kUnkId);
}

TEST_CASE("ingest errors carry context") {
    const std::string bad_json = write_temp("bunit_bad.jsonl",
                                            record("a", "benign", 4) + "\nnot json\n");
    try {
        ingest_jsonl(bad_json, 4);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }

    const std::string bad_label =
        write_temp("bunit_badlabel.jsonl",
                   "{\"id\":\"a\",\"label\":\"weird\",\"events\":[\"x\",\"y\",\"z\"]}\n");
    CHECK_THROWS_AS(ingest_jsonl(bad_label, 4), ValidationError);

    const std::string empty = write_temp("bunit_empty.jsonl", "");
    CHECK_THROWS_AS(ingest_jsonl(empty, 4), ValidationError);
}

TEST_CASE("split is stratified by trace and deterministic") {
    std::ostringstream doc;
    for (int i = 0; i < 4; ++i) doc << record("b" + std::to_string(i), "benign", 6) << "\n";
    for (int i = 0; i < 4; ++i) doc << record("m" + std::to_string(i), "malicious", 6) << "\n";
    const Corpus corpus = ingest_jsonl(write_temp("bunit_split.jsonl", doc.str()), 6);

    auto [a, b] = split_corpus(corpus, 0.5, 42);
    auto count_traces = [](const Corpus& c, int label) {
        std::set<std::string> ids;
        for (const auto& s : c.sequences)
            if (s.label == label) ids.insert(s.source_id);
        return ids.size();
    };
    CHECK(count_traces(a, 0) == 2);
    CHECK(count_traces(a, 1) == 2);
    CHECK(count_traces(b, 0) == 2);
    CHECK(count_traces(b, 1) == 2);

    auto [a2, b2] = split_corpus(corpus, 0.5, 42);
    auto ids_of = [](const Corpus& c) {
        std::set<std::string> ids;
        for (const auto& s : c.sequences) ids.insert(s.source_id);
        return ids;
    };
    CHECK(ids_of(a) == ids_of(a2));
    CHECK(ids_of(b) == ids_of(b2));

    CHECK_THROWS_AS(split_corpus(corpus, 0.0, 1), ValidationError);
    CHECK_THROWS_AS(split_corpus(corpus, 1.0, 1), ValidationError);
}

TEST_CASE("split keeps class ratios within one trace on 100 traces") {
    std::ostringstream doc;
    for (int i = 0; i < 61; ++i) doc << record("b" + std::to_string(i), "benign", 5) << "\n";
    for (int i = 0; i < 39; ++i) doc << record("m" + std::to_string(i), "malicious", 5) << "\n";
    const Corpus corpus = ingest_jsonl(write_temp("bunit_split100.jsonl", doc.str()), 5);
    auto [a, b] = split_corpus(corpus, 0.5, 9);

    auto count_traces = [](const Corpus& c, int label) {
        std::set<std::string> ids;
        for (const auto& s : c.sequences)
            if (s.label == label) ids.insert(s.source_id);
        return static_cast<int>(ids.size());
    };
    // 61 benign -> 30/31 per side; 39 malicious -> 19/20
    CHECK(std::abs(count_traces(a, 0) - count_traces(b, 0)) <= 1);
    CHECK(std::abs(count_traces(a, 1) - count_traces(b, 1)) <= 1);
    // windows of one trace never straddle the split
    std::set<std::string> left, right;
    for (const auto& s : a.sequences) left.insert(s.source_id);
    for (const auto& s : b.sequences) right.insert(s.source_id);
    for (const auto& id : left) CHECK(right.count(id) == 0);
}

TEST_CASE("synthetic corpus plants motifs in every malicious trace") {
    SyntheticConfig cfg;
    cfg.vocab_size = 20;
    cfg.benign_traces = 30;
    cfg.malicious_traces = 50;
    cfg.trace_length = 40;
    cfg.motifs = {{3, 7, 9}};
    const Corpus corpus = generate_synthetic(cfg, 7);

    auto contains_motif = [](const std::vector<int>& tokens, const std::vector<int>& motif) {
        return std::search(tokens.begin(), tokens.end(), motif.begin(), motif.end()) != tokens.end();
    };
    int benign_hits = 0, benign_total = 0;
    for (const auto& seq : corpus.sequences) {
        if (seq.label == 1) {
            CHECK(contains_motif(seq.tokens, cfg.motifs[0]));
        } else {
            ++benign_total;
            benign_hits += contains_motif(seq.tokens, cfg.motifs[0]) ? 1 : 0;
        }
    }
    // brute-force scan of the generated benign set: contiguous occurrences
    // stay at chance level, far below the malicious 100%
    CHECK(benign_total == 30);
    CHECK(benign_hits <= benign_total / 4);
}

TEST_CASE("synthetic corpus validation and determinism") {
    SyntheticConfig cfg;
    cfg.vocab_size = 15;
    cfg.benign_traces = 5;
    cfg.malicious_traces = 5;
    cfg.trace_length = 20;

    SUBCASE("no motifs") {
        cfg.motifs = {};
        CHECK_THROWS_AS(generate_synthetic(cfg, 1), ValidationError);
    }
    SUBCASE("motif longer than trace") {
        cfg.trace_length = 4;
        cfg.motifs = {{1, 2, 3, 4, 5}};
        CHECK_THROWS_AS(generate_synthetic(cfg, 1), ValidationError);
    }
    SUBCASE("byte-identical per seed") {
        cfg.motifs = {{3, 7, 9}};
        const Corpus a = generate_synthetic(cfg, 99);
        const Corpus b = generate_synthetic(cfg, 99);
        REQUIRE(a.sequences.size() == b.sequences.size());
        for (size_t i = 0; i < a.sequences.size(); ++i) {
            CHECK(a.sequences[i].tokens == b.sequences[i].tokens);
            CHECK(a.sequences[i].source_id == b.sequences[i].source_id);
        }
        const Corpus c = generate_synthetic(cfg, 100);
        bool all_same = true;
        for (size_t i = 0; i < a.sequences.size(); ++i)
            if (a.sequences[i].tokens != c.sequences[i].tokens) all_same = false;
        CHECK_FALSE(all_same);
    }
}

TEST_CASE("corpus save/load round-trip") {
    SyntheticConfig cfg;
    cfg.vocab_size = 12;
    cfg.benign_traces = 3;
    cfg.malicious_traces = 3;
    cfg.trace_length = 15;
    cfg.motifs = {{2, 4, 6}};
    const Corpus corpus = generate_synthetic(cfg, 5);

    const std::string path = (fs::temp_directory_path() / "bunit_corpus_io.bin").string();
    corpus.save(path);
    const Corpus loaded = Corpus::load(path);
    CHECK(loaded.window_size == corpus.window_size);
    CHECK(loaded.vocabulary.names() == corpus.vocabulary.names());
    REQUIRE(loaded.sequences.size() == corpus.sequences.size());
    for (size_t i = 0; i < corpus.sequences.size(); ++i) {
        CHECK(loaded.sequences[i].tokens == corpus.sequences[i].tokens);
        CHECK(loaded.sequences[i].label == corpus.sequences[i].label);
        CHECK(loaded.sequences[i].source_id == corpus.sequences[i].source_id);
    }
}
