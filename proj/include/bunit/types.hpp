#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace bunit {

// Dense name <-> id table shared by every sequence of a corpus. Id 0 is a
// reserved unknown-token slot so a frozen vocabulary can absorb unseen event
// names at inference time.
class Vocabulary {
public:
    static constexpr int kUnkId = 0;
    static constexpr const char* kUnkName = "<unk>";

    Vocabulary();

    // Returns the existing id for a known name, otherwise appends it.
    int add(const std::string& name);
    // Known name -> id, unknown -> kUnkId.
    int encode(const std::string& name) const;
    const std::string& decode(int id) const;
    bool contains(const std::string& name) const { return lookup_.count(name) != 0; }
    int size() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }

    bool operator==(const Vocabulary& other) const { return names_ == other.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> lookup_;
};

struct BehaviorSequence {
    std::vector<int> tokens;
    int label = 0; // 0 = benign, 1 = malicious
    std::string source_id;
    bool perturbed = false;
};

struct Corpus {
    Vocabulary vocabulary;
    std::vector<BehaviorSequence> sequences;
    int window_size = 0;

    void validate() const; // token ids in range, lengths within window
    void save(const std::string& path) const;
    static Corpus load(const std::string& path);
};

} // namespace bunit
