#include "bunit/types.hpp"

#include "bunit/binio.hpp"
#include "bunit/errors.hpp"

#include <fstream>

namespace bunit {

namespace {
constexpr char kCorpusMagic[9] = "BUCORP\x01\n";
constexpr uint32_t kCorpusVersion = 1;
} // namespace

Vocabulary::Vocabulary() {
    names_.emplace_back(kUnkName);
    lookup_.emplace(kUnkName, kUnkId);
}

int Vocabulary::add(const std::string& name) {
    if (name.empty()) throw ValidationError("empty event name");
    auto it = lookup_.find(name);
    if (it != lookup_.end()) return it->second;
    const int id = static_cast<int>(names_.size());
    names_.push_back(name);
    lookup_.emplace(name, id);
    return id;
}

int Vocabulary::encode(const std::string& name) const {
    auto it = lookup_.find(name);
    return it == lookup_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::decode(int id) const {
    if (id < 0 || id >= size()) throw ValidationError("token id out of range: " + std::to_string(id));
    return names_[static_cast<size_t>(id)];
}

void Corpus::validate() const {
    for (const auto& seq : sequences) {
        if (seq.tokens.empty()) throw ValidationError("empty sequence in corpus: " + seq.source_id);
        if (static_cast<int>(seq.tokens.size()) > window_size)
            throw ValidationError("sequence longer than window size: " + seq.source_id);
        for (int t : seq.tokens)
            if (t < 0 || t >= vocabulary.size())
                throw ValidationError("token id out of vocabulary range in " + seq.source_id);
        if (seq.label != 0 && seq.label != 1)
            throw ValidationError("label must be 0 or 1 in " + seq.source_id);
    }
}

void Corpus::save(const std::string& path) const {
    atomic_write_stream(path, [this](std::ostream& out) {
        BinaryWriter w(out);
        w.magic(kCorpusMagic);
        w.u32(kCorpusVersion);
        w.i32(window_size);
        w.u64(static_cast<uint64_t>(vocabulary.size()));
        for (const auto& name : vocabulary.names()) w.str(name);
        w.u64(sequences.size());
        for (const auto& seq : sequences) {
            w.str(seq.source_id);
            w.u8(static_cast<uint8_t>(seq.label));
            w.u8(seq.perturbed ? 1 : 0);
            w.u64(seq.tokens.size());
            for (int t : seq.tokens) w.i32(t);
        }
    });
}

Corpus Corpus::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path);
    BinaryReader r(in, path);
    r.expect_magic(kCorpusMagic);
    const uint32_t version = r.u32();
    if (version != kCorpusVersion)
        throw IoError("unsupported corpus version " + std::to_string(version) + " in " + path);

    Corpus c;
    c.window_size = r.i32();
    const uint64_t vocab_size = r.u64();
    for (uint64_t i = 0; i < vocab_size; ++i) {
        const std::string name = r.str();
        if (i == 0) {
            if (name != Vocabulary::kUnkName) throw IoError("corpus vocabulary missing unk slot: " + path);
            continue;
        }
        c.vocabulary.add(name);
    }
    const uint64_t n_seqs = r.u64();
    c.sequences.reserve(n_seqs);
    for (uint64_t i = 0; i < n_seqs; ++i) {
        BehaviorSequence seq;
        seq.source_id = r.str();
        seq.label = r.u8();
        seq.perturbed = r.u8() != 0;
        const uint64_t len = r.u64();
        seq.tokens.resize(len);
        for (uint64_t j = 0; j < len; ++j) seq.tokens[j] = r.i32();
        c.sequences.push_back(std::move(seq));
    }
    c.validate();
    return c;
}

} // namespace bunit
