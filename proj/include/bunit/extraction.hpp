#pragma once

#include "bunit/types.hpp"
#include "bunit/units.hpp"

#include <string>
#include <utility>
#include <vector>

namespace bunit {

// Extraction output: only behaviors claimed by a fully contained unit
// survive, each tagged with its owning unit. Everything else, including
// injected perturbations, is dropped.
struct UnitAnnotatedSequence {
    std::vector<int> tokens;  // retained token ids, original order
    std::vector<int> unit_of; // owning unit index per retained token
    std::vector<std::pair<int, std::vector<int>>> spans; // (unit index, original positions)
    int label = 0;
    std::string source_id;
    bool perturbed = false;
    bool no_match = false; // set when nothing matched and the output is empty
};

struct ExtractOptions {
    bool repeat_match = false; // let a unit claim multiple disjoint matches
};

// Greedy claim in ascending quality order, leftmost witness per unit,
// positions exclusive.
UnitAnnotatedSequence extract_units(const BehaviorSequence& sequence,
                                    const std::vector<BehaviorUnitPattern>& units,
                                    const ExtractOptions& options = {});

// Extracted corpus artifact. It embeds the unit definitions it was built
// with so downstream consumers never need to re-pair files.
struct ExtractedCorpus {
    Vocabulary vocabulary;
    std::vector<BehaviorUnitPattern> units;
    std::vector<UnitAnnotatedSequence> sequences;

    void save(const std::string& path) const;
    static ExtractedCorpus load(const std::string& path);
};

ExtractedCorpus extract_corpus(const Corpus& corpus, const std::vector<BehaviorUnitPattern>& units,
                               const ExtractOptions& options = {});

} // namespace bunit
