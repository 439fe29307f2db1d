#include "bunit/mining.hpp"

#include "bunit/errors.hpp"

#include <algorithm>

namespace bunit {

std::vector<Candidate> generate_candidates(const BehaviorSequence& sequence, int sequence_index,
                                           int min_len, int max_len, size_t* clamp_warnings) {
    if (min_len < 3) throw ValidationError("minimum unit length must be at least 3");
    if (max_len < min_len) throw ValidationError("max unit length below min");
    const int m = static_cast<int>(sequence.tokens.size());
    if (max_len > m) {
        max_len = m;
        if (clamp_warnings) ++*clamp_warnings;
    }
    std::vector<Candidate> out;
    for (int l = min_len; l <= max_len; ++l) {
        for (int start = 0; start + l <= m; ++start) {
            Candidate c;
            c.tokens.assign(sequence.tokens.begin() + start, sequence.tokens.begin() + start + l);
            c.sequence_index = sequence_index;
            c.start = start;
            out.push_back(std::move(c));
        }
    }
    return out;
}

bool self_similar(const Candidate& a, const Candidate& b) {
    if (a.sequence_index == b.sequence_index && a.sequence_index >= 0) {
        const bool overlap = a.start < b.end() && b.start < a.end();
        if (overlap) return true;
    }
    const auto& s = a.tokens.size() <= b.tokens.size() ? a.tokens : b.tokens;
    const auto& l = a.tokens.size() <= b.tokens.size() ? b.tokens : a.tokens;
    return std::search(l.begin(), l.end(), s.begin(), s.end()) != l.end();
}

namespace {

// Deterministic ordering: quality first, then token string, then origin.
bool candidate_less(const Candidate& a, const Candidate& b) {
    if (a.quality() != b.quality()) return a.quality() < b.quality();
    if (a.tokens != b.tokens) return a.tokens < b.tokens;
    if (a.sequence_index != b.sequence_index) return a.sequence_index < b.sequence_index;
    return a.start < b.start;
}

// Best-first greedy filter: keep a candidate only if it is not self-similar
// with anything already kept. Input must be sorted by candidate_less. A zero
// limit means unbounded.
std::vector<Candidate> filter_self_similar(const std::vector<Candidate>& sorted, size_t limit) {
    std::vector<Candidate> kept;
    for (const auto& cand : sorted) {
        bool drop = false;
        for (const auto& have : kept)
            if (self_similar(have, cand)) {
                drop = true;
                break;
            }
        if (!drop) {
            kept.push_back(cand);
            if (limit != 0 && kept.size() == limit) break;
        }
    }
    return kept;
}

} // namespace

std::vector<BehaviorUnitPattern> mine_units(const Corpus& train, const ShapeletModel& model,
                                            const EmbeddingTable& embeddings,
                                            const MiningConfig& config) {
    if (config.k < 1) throw ValidationError("k must be at least 1");
    for (const auto& seq : train.sequences)
        if (seq.perturbed)
            throw ValidationError("unit mining requires unperturbed sequences: " + seq.source_id);

    std::vector<Candidate> top;
    for (size_t i = 0; i < train.sequences.size(); ++i) {
        const auto& seq = train.sequences[i];
        if (static_cast<int>(seq.tokens.size()) < config.min_len) continue;
        std::vector<Candidate> cands =
            generate_candidates(seq, static_cast<int>(i), config.min_len, config.max_len);
        for (auto& c : cands) c.xi = assess_candidate(c.tokens, seq.label, model, embeddings);
        std::sort(cands.begin(), cands.end(), candidate_less);
        std::vector<Candidate> survivors = filter_self_similar(cands, 0);

        // merge with the running top-k
        std::vector<Candidate> merged = std::move(top);
        merged.insert(merged.end(), survivors.begin(), survivors.end());
        std::sort(merged.begin(), merged.end(), candidate_less);
        top = filter_self_similar(merged, static_cast<size_t>(config.k));
    }

    std::vector<BehaviorUnitPattern> patterns;
    patterns.reserve(top.size());
    for (const auto& cand : top) patterns.push_back({cand.tokens, cand.quality()});
    return patterns;
}

} // namespace bunit
