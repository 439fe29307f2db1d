#include "bunit/units.hpp"

#include "bunit/binio.hpp"
#include "bunit/errors.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace bunit {

using nlohmann::json;

void save_units(const std::string& path, const std::vector<BehaviorUnitPattern>& units,
                const Vocabulary& vocabulary) {
    json doc;
    doc["version"] = 1;
    json list = json::array();
    for (const auto& unit : units) {
        json entry;
        json tokens = json::array();
        for (int id : unit.tokens) tokens.push_back(vocabulary.decode(id));
        entry["tokens"] = std::move(tokens);
        entry["quality"] = unit.quality;
        list.push_back(std::move(entry));
    }
    doc["units"] = std::move(list);
    atomic_write_file(path, doc.dump(2) + "\n");
}

std::vector<BehaviorUnitPattern> load_units(const std::string& path, const Vocabulary& vocabulary) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (!doc.contains("version") || doc["version"].get<int>() != 1)
        throw ParseError(path + ": unsupported units file version");
    std::vector<BehaviorUnitPattern> units;
    for (const auto& entry : doc.at("units")) {
        BehaviorUnitPattern unit;
        for (const auto& name : entry.at("tokens")) {
            const std::string s = name.get<std::string>();
            if (!vocabulary.contains(s))
                throw ValidationError(path + ": unit token \"" + s + "\" not in vocabulary");
            unit.tokens.push_back(vocabulary.encode(s));
        }
        unit.quality = entry.at("quality").get<double>();
        units.push_back(std::move(unit));
    }
    return units;
}

} // namespace bunit
