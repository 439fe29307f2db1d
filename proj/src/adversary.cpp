#include "bunit/adversary.hpp"

#include "bunit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace bunit {

FragmentGenerator FragmentGenerator::train(const Corpus& corpus) {
    FragmentGenerator gen;
    std::set<int> vocab;
    bool any_benign = false;
    for (const auto& seq : corpus.sequences) {
        if (seq.label != 0) continue;
        any_benign = true;
        for (int t : seq.tokens) vocab.insert(t);
    }
    if (!any_benign) throw ValidationError("fragment generator needs at least one benign sequence");

    gen.vocab_.assign(vocab.begin(), vocab.end());
    for (size_t i = 0; i < gen.vocab_.size(); ++i) gen.vocab_index_[gen.vocab_[i]] = static_cast<int>(i);

    const size_t s = static_cast<size_t>(gen.states());
    const size_t v = gen.vocab_.size();
    gen.counts_.assign(s * s * v, 0);
    const int start = static_cast<int>(v); // start-sentinel state index
    for (const auto& seq : corpus.sequences) {
        if (seq.label != 0) continue;
        int p2 = start, p1 = start;
        for (int t : seq.tokens) {
            const int idx = gen.vocab_index_.at(t);
            gen.counts_[(static_cast<size_t>(p2) * s + static_cast<size_t>(p1)) * v +
                        static_cast<size_t>(idx)] += 1;
            p2 = p1;
            p1 = idx;
        }
    }
    return gen;
}

int FragmentGenerator::state_of(int token) const {
    const auto it = vocab_index_.find(token);
    return it == vocab_index_.end() ? static_cast<int>(vocab_.size()) : it->second;
}

std::vector<double> FragmentGenerator::next_distribution(int prev2, int prev1) const {
    const size_t s = static_cast<size_t>(states());
    const size_t v = vocab_.size();
    const size_t base =
        (static_cast<size_t>(state_of(prev2)) * s + static_cast<size_t>(state_of(prev1))) * v;
    std::vector<double> probs(v);
    double total = 0.0;
    for (size_t i = 0; i < v; ++i) {
        probs[i] = double(counts_[base + i]) + 1.0; // add-one smoothing
        total += probs[i];
    }
    for (auto& p : probs) p /= total;
    return probs;
}

std::vector<int> FragmentGenerator::sample_fragment(int length, Rng& rng) const {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(length));
    int p2 = -1, p1 = -1; // start context
    for (int i = 0; i < length; ++i) {
        const std::vector<double> probs = next_distribution(p2, p1);
        const double u = rng.uniform_real();
        double acc = 0.0;
        size_t pick = probs.size() - 1;
        for (size_t j = 0; j < probs.size(); ++j) {
            acc += probs[j];
            if (u < acc) {
                pick = j;
                break;
            }
        }
        const int token = vocab_[pick];
        out.push_back(token);
        p2 = p1;
        p1 = token;
    }
    return out;
}

int FragmentGenerator::sample_length(Rng& rng) const {
    return static_cast<int>(rng.uniform_range(min_fragment_len, max_fragment_len));
}

PerturbResult perturb(const BehaviorSequence& x, const FragmentGenerator& gen,
                      const AttackConfig& config, Rng& rng) {
    if (x.label != 1) throw ValidationError("perturb expects a malicious sequence");
    if (config.windows < 1) throw ValidationError("window count must be positive");
    if (config.max_rate < 0.0 || config.max_rate > 1.0)
        throw ValidationError("injection rate must be in [0,1]");
    const int l = static_cast<int>(x.tokens.size());
    if (l < config.windows)
        throw ValidationError("sequence shorter than the adversarial window count");

    if (config.max_rate == 0.0) {
        PerturbResult out;
        out.sequence = x;
        out.injected.assign(x.tokens.size(), 0);
        return out;
    }

    PerturbResult out;
    out.sequence.label = x.label;
    out.sequence.source_id = x.source_id;
    out.sequence.perturbed = true;

    // Near-equal contiguous windows: the first l % n windows get the extra
    // token.
    const int n = config.windows;
    const int base_len = l / n;
    const int extra = l % n;
    int cursor = 0;
    for (int w = 0; w < n; ++w) {
        const int window_len = base_len + (w < extra ? 1 : 0);
        std::vector<std::pair<int, char>> window; // (token, injected)
        window.reserve(static_cast<size_t>(window_len) * 2);
        for (int i = 0; i < window_len; ++i)
            window.emplace_back(x.tokens[static_cast<size_t>(cursor + i)], 0);
        cursor += window_len;

        const double budget = config.max_rate * double(window_len);
        int injected = 0;
        while (true) {
            const int frag_len = gen.sample_length(rng);
            if (double(injected + frag_len) > budget) break;
            const size_t pos = rng.uniform(window.size() + 1);
            const std::vector<int> fragment = gen.sample_fragment(frag_len, rng);
            std::vector<std::pair<int, char>> insert;
            insert.reserve(fragment.size());
            for (int t : fragment) insert.emplace_back(t, 1);
            window.insert(window.begin() + static_cast<std::ptrdiff_t>(pos), insert.begin(),
                          insert.end());
            injected += frag_len;
        }
        for (const auto& [token, inj] : window) {
            out.sequence.tokens.push_back(token);
            out.injected.push_back(inj);
        }
    }
    return out;
}

std::map<double, Corpus> attack_corpus(const Corpus& corpus, const FragmentGenerator& gen,
                                       const std::vector<double>& rates, int windows, uint64_t seed) {
    for (double r : rates)
        if (r < 0.0 || r > 1.0) throw ValidationError("injection rate out of [0,1]");

    std::map<double, Corpus> out;
    for (size_t ri = 0; ri < rates.size(); ++ri) {
        const double rate = rates[ri];
        Corpus attacked;
        attacked.vocabulary = corpus.vocabulary;
        attacked.window_size = corpus.window_size;
        AttackConfig cfg;
        cfg.windows = windows;
        cfg.max_rate = rate;
        cfg.seed = seed;
        int max_len = corpus.window_size;
        for (size_t si = 0; si < corpus.sequences.size(); ++si) {
            const auto& seq = corpus.sequences[si];
            if (seq.label != 1 || rate == 0.0) {
                attacked.sequences.push_back(seq);
                continue;
            }
            Rng rng = Rng::derive(seed, ri + 1, si + 1);
            PerturbResult res = perturb(seq, gen, cfg, rng);
            max_len = std::max(max_len, static_cast<int>(res.sequence.tokens.size()));
            attacked.sequences.push_back(std::move(res.sequence));
        }
        attacked.window_size = max_len;
        out.emplace(rate, std::move(attacked));
    }
    return out;
}

} // namespace bunit
