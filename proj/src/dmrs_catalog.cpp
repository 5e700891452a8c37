#include "psydef/dmrs_catalog.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace psydef {

using nlohmann::json;

const DmrsLevel& DmrsCatalog::level_by_id(int id) const {
    for (const DmrsLevel& l : levels) {
        if (l.id == id) return l;
    }
    throw ValidationError("unknown DMRS level id " + std::to_string(id));
}

const DmrsMechanism& DmrsCatalog::mechanism_by_id(int id) const {
    for (const DmrsMechanism& m : mechanisms) {
        if (m.id == id) return m;
    }
    throw ValidationError("unknown DMRS mechanism id " + std::to_string(id));
}

std::size_t DmrsCatalog::mechanism_position(int mechanism_id) const {
    for (std::size_t i = 0; i < mechanisms.size(); ++i) {
        if (mechanisms[i].id == mechanism_id) return i;
    }
    throw ValidationError("unknown DMRS mechanism id " + std::to_string(mechanism_id));
}

std::vector<std::vector<std::size_t>> DmrsCatalog::indicators_by_mechanism() const {
    std::map<int, std::size_t> position;
    for (std::size_t i = 0; i < mechanisms.size(); ++i) position[mechanisms[i].id] = i;
    std::vector<std::vector<std::size_t>> groups(mechanisms.size());
    for (std::size_t j = 0; j < indicators.size(); ++j) {
        groups[position.at(indicators[j].mechanism_id)].push_back(j);
    }
    return groups;
}

std::vector<int> DmrsCatalog::mechanism_ids_for_level(int level_id) const {
    std::vector<int> out;
    for (const DmrsMechanism& m : mechanisms) {
        if (m.level_id == level_id) out.push_back(m.id);
    }
    return out;
}

std::uint64_t DmrsCatalog::fingerprint() const {
    std::ostringstream buf;
    for (const DmrsLevel& l : levels) buf << l.id << '|' << l.name << ';';
    for (const DmrsMechanism& m : mechanisms) {
        buf << m.id << '|' << m.name << '|' << m.level_id << '|' << m.definition << '|'
            << m.pattern_description << '|';
        for (const std::string& e : m.exemplars) buf << e << '~';
        buf << ';';
    }
    for (const DmrsIndicator& ind : indicators)
        buf << ind.id << '|' << ind.mechanism_id << '|' << ind.statement << ';';
    return psydef::fingerprint(buf.str());
}

namespace {

void validate_catalog(const DmrsCatalog& c) {
    if (c.levels.size() != kNumLevels)
        throw ValidationError("expected " + std::to_string(kNumLevels) + " levels, found " +
                              std::to_string(c.levels.size()));
    std::set<int> level_ids;
    for (const DmrsLevel& l : c.levels) {
        if (l.id < 1 || l.id > 7) throw ValidationError("level id out of range 1..7");
        if (l.name.empty()) throw ValidationError("level " + std::to_string(l.id) + " has empty name");
        if (!level_ids.insert(l.id).second)
            throw ValidationError("duplicate level id " + std::to_string(l.id));
    }

    if (c.mechanisms.size() != kNumMechanisms)
        throw ValidationError("expected " + std::to_string(kNumMechanisms) +
                              " mechanisms, found " + std::to_string(c.mechanisms.size()));
    std::set<int> mech_ids;
    std::set<int> levels_with_mechanisms;
    for (const DmrsMechanism& m : c.mechanisms) {
        if (!mech_ids.insert(m.id).second)
            throw ValidationError("duplicate mechanism id " + std::to_string(m.id));
        if (!level_ids.count(m.level_id))
            throw ValidationError("mechanism \"" + m.name + "\" references unknown level " +
                                  std::to_string(m.level_id));
        if (m.name.empty() || m.definition.empty() || m.pattern_description.empty())
            throw ValidationError("mechanism " + std::to_string(m.id) +
                                  " has empty name/definition/pattern");
        if (m.exemplars.size() < 3)
            throw ValidationError("mechanism \"" + m.name + "\" needs at least 3 exemplars");
        levels_with_mechanisms.insert(m.level_id);
    }
    if (levels_with_mechanisms.size() != level_ids.size())
        throw ValidationError("every level must own at least one mechanism");

    if (c.indicators.size() != kNumIndicators)
        throw ValidationError("expected " + std::to_string(kNumIndicators) +
                              " indicators, found " + std::to_string(c.indicators.size()));
    std::set<int> indicator_ids;
    std::set<int> referenced;
    for (const DmrsIndicator& ind : c.indicators) {
        if (!indicator_ids.insert(ind.id).second)
            throw ValidationError("duplicate indicator id " + std::to_string(ind.id));
        if (!mech_ids.count(ind.mechanism_id))
            throw ValidationError("indicator " + std::to_string(ind.id) +
                                  " references unknown mechanism " +
                                  std::to_string(ind.mechanism_id));
        if (ind.statement.empty())
            throw ValidationError("indicator " + std::to_string(ind.id) + " has empty statement");
        referenced.insert(ind.mechanism_id);
    }
    if (referenced.size() != mech_ids.size())
        throw ValidationError("every mechanism must own at least one indicator");
}

}  // namespace

DmrsCatalog parse_dmrs_catalog(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("catalog is not valid JSON: ") + e.what());
    }
    DmrsCatalog catalog;
    try {
        for (const json& jl : doc.at("levels")) {
            DmrsLevel level;
            level.id = jl.at("id").get<int>();
            level.name = jl.at("name").get<std::string>();
            catalog.levels.push_back(std::move(level));
        }
        for (const json& jm : doc.at("mechanisms")) {
            DmrsMechanism m;
            m.id = jm.at("id").get<int>();
            m.name = jm.at("name").get<std::string>();
            m.level_id = jm.at("level_id").get<int>();
            m.definition = jm.at("definition").get<std::string>();
            m.pattern_description = jm.at("pattern_description").get<std::string>();
            m.exemplars = jm.at("exemplars").get<std::vector<std::string>>();
            catalog.mechanisms.push_back(std::move(m));
        }
        for (const json& ji : doc.at("indicators")) {
            DmrsIndicator ind;
            ind.id = ji.at("id").get<int>();
            ind.mechanism_id = ji.at("mechanism_id").get<int>();
            ind.statement = ji.at("statement").get<std::string>();
            catalog.indicators.push_back(std::move(ind));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("catalog field error: ") + e.what());
    }
    validate_catalog(catalog);
    return catalog;
}

DmrsCatalog load_dmrs_catalog(const std::string& path) {
    return parse_dmrs_catalog(read_text_file(path));
}

const DefenseDefinition& SupplementaryDefinitions::for_label(int label) const {
    for (const DefenseDefinition& d : entries) {
        if (d.label == label) return d;
    }
    throw ValidationError("no supplementary definition for label " + std::to_string(label));
}

SupplementaryDefinitions parse_supplementary_definitions(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("supplementary definitions are not valid JSON: ") +
                              e.what());
    }
    SupplementaryDefinitions defs;
    try {
        for (const json& jd : doc.at("definitions")) {
            DefenseDefinition d;
            d.label = jd.at("label").get<int>();
            d.level_name = jd.at("name").get<std::string>();
            d.mechanism_name = jd.at("name").get<std::string>();
            d.definition = jd.at("definition").get<std::string>();
            d.pattern_description = jd.at("pattern_description").get<std::string>();
            d.exemplars = jd.at("exemplars").get<std::vector<std::string>>();
            if (d.label != 0 && d.label != 8)
                throw ValidationError("supplementary definitions cover labels 0 and 8 only");
            if (d.exemplars.size() < 3)
                throw ValidationError("supplementary definition for label " +
                                      std::to_string(d.label) + " needs at least 3 exemplars");
            defs.entries.push_back(std::move(d));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("supplementary definition field error: ") + e.what());
    }
    return defs;
}

SupplementaryDefinitions load_supplementary_definitions(const std::string& path) {
    return parse_supplementary_definitions(read_text_file(path));
}

DefenseDefinition defense_definition_for(const DmrsCatalog& catalog,
                                         const SupplementaryDefinitions& supplementary,
                                         int label, std::size_t variant) {
    if (label < 0 || label > 8) throw ValidationError("label out of range 0..8");
    if (label == 0 || label == 8) return supplementary.for_label(label);

    std::vector<int> mechs = catalog.mechanism_ids_for_level(label);
    if (mechs.empty())
        throw ValidationError("catalog has no mechanisms for level " + std::to_string(label));
    const DmrsMechanism& m = catalog.mechanism_by_id(mechs[variant % mechs.size()]);
    DefenseDefinition d;
    d.label = label;
    d.level_name = catalog.level_by_id(label).name;
    d.mechanism_name = m.name;
    d.definition = m.definition;
    d.pattern_description = m.pattern_description;
    d.exemplars = m.exemplars;
    return d;
}

}  // namespace psydef
