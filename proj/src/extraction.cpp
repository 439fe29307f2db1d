#include "bunit/extraction.hpp"

#include "bunit/binio.hpp"
#include "bunit/errors.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace bunit {

namespace {

constexpr char kExtractedMagic[9] = "BUEXTR\x01\n";
constexpr uint32_t kExtractedVersion = 1;

// Leftmost greedy match of `unit` over the positions of `tokens` not yet
// claimed, scanning forward from `from`. Returns matched positions or empty.
std::vector<int> greedy_match(const std::vector<int>& unit, const std::vector<int>& tokens,
                              const std::vector<char>& claimed, size_t from) {
    std::vector<int> positions;
    positions.reserve(unit.size());
    size_t next = from;
    for (int want : unit) {
        while (next < tokens.size() && (claimed[next] || tokens[next] != want)) ++next;
        if (next == tokens.size()) return {};
        positions.push_back(static_cast<int>(next));
        ++next;
    }
    return positions;
}

} // namespace

UnitAnnotatedSequence extract_units(const BehaviorSequence& sequence,
                                    const std::vector<BehaviorUnitPattern>& units,
                                    const ExtractOptions& options) {
    if (units.empty()) throw ValidationError("extract_units requires a nonempty unit list");

    // Claim order is ascending quality; stable to preserve the caller's
    // ordering between equal scores.
    std::vector<int> order(units.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return units[a].quality < units[b].quality; });

    const auto& tokens = sequence.tokens;
    std::vector<char> claimed(tokens.size(), 0);
    std::vector<int> owner(tokens.size(), -1);
    std::vector<std::pair<int, std::vector<int>>> spans;

    for (int unit_index : order) {
        const auto& pattern = units[unit_index].tokens;
        if (pattern.empty()) continue;
        size_t from = 0;
        while (true) {
            std::vector<int> positions = greedy_match(pattern, tokens, claimed, from);
            if (positions.empty()) break;
            for (int p : positions) {
                claimed[static_cast<size_t>(p)] = 1;
                owner[static_cast<size_t>(p)] = unit_index;
            }
            spans.emplace_back(unit_index, positions);
            if (!options.repeat_match) break;
            from = static_cast<size_t>(positions.front()) + 1;
        }
    }

    UnitAnnotatedSequence out;
    out.label = sequence.label;
    out.source_id = sequence.source_id;
    out.perturbed = sequence.perturbed;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (!claimed[i]) continue;
        out.tokens.push_back(tokens[i]);
        out.unit_of.push_back(owner[i]);
    }
    out.spans = std::move(spans);
    out.no_match = out.tokens.empty();
    return out;
}

ExtractedCorpus extract_corpus(const Corpus& corpus, const std::vector<BehaviorUnitPattern>& units,
                               const ExtractOptions& options) {
    ExtractedCorpus out;
    out.vocabulary = corpus.vocabulary;
    out.units = units;
    out.sequences.reserve(corpus.sequences.size());
    for (const auto& seq : corpus.sequences) out.sequences.push_back(extract_units(seq, units, options));
    return out;
}

void ExtractedCorpus::save(const std::string& path) const {
    atomic_write_stream(path, [this](std::ostream& os) {
        BinaryWriter w(os);
        w.magic(kExtractedMagic);
        w.u32(kExtractedVersion);
        w.u64(static_cast<uint64_t>(vocabulary.size()));
        for (const auto& name : vocabulary.names()) w.str(name);
        w.u64(units.size());
        for (const auto& unit : units) {
            w.u64(unit.tokens.size());
            for (int t : unit.tokens) w.i32(t);
            w.f64(unit.quality);
        }
        w.u64(sequences.size());
        for (const auto& seq : sequences) {
            w.str(seq.source_id);
            w.u8(static_cast<uint8_t>(seq.label));
            w.u8(seq.perturbed ? 1 : 0);
            w.u8(seq.no_match ? 1 : 0);
            w.u64(seq.tokens.size());
            for (int t : seq.tokens) w.i32(t);
            for (int u : seq.unit_of) w.i32(u);
            w.u64(seq.spans.size());
            for (const auto& [unit, positions] : seq.spans) {
                w.i32(unit);
                w.u64(positions.size());
                for (int p : positions) w.i32(p);
            }
        }
    });
}

ExtractedCorpus ExtractedCorpus::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open extracted corpus: " + path);
    BinaryReader r(in, path);
    r.expect_magic(kExtractedMagic);
    if (r.u32() != kExtractedVersion) throw IoError("unsupported extracted corpus version in " + path);

    ExtractedCorpus out;
    const uint64_t vocab_size = r.u64();
    for (uint64_t i = 0; i < vocab_size; ++i) {
        const std::string name = r.str();
        if (i == 0) continue; // unk slot
        out.vocabulary.add(name);
    }
    const uint64_t n_units = r.u64();
    out.units.resize(n_units);
    for (auto& unit : out.units) {
        const uint64_t len = r.u64();
        unit.tokens.resize(len);
        for (auto& t : unit.tokens) t = r.i32();
        unit.quality = r.f64();
    }
    const uint64_t n_seqs = r.u64();
    out.sequences.resize(n_seqs);
    for (auto& seq : out.sequences) {
        seq.source_id = r.str();
        seq.label = r.u8();
        seq.perturbed = r.u8() != 0;
        seq.no_match = r.u8() != 0;
        const uint64_t len = r.u64();
        seq.tokens.resize(len);
        for (auto& t : seq.tokens) t = r.i32();
        seq.unit_of.resize(len);
        for (auto& u : seq.unit_of) u = r.i32();
        const uint64_t n_spans = r.u64();
        seq.spans.resize(n_spans);
        for (auto& [unit, positions] : seq.spans) {
            unit = r.i32();
            positions.resize(r.u64());
            for (auto& p : positions) p = r.i32();
        }
    }
    return out;
}

} // namespace bunit
