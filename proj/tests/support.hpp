#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "psydef/corpus.hpp"
#include "psydef/dmrs_catalog.hpp"

namespace testsupport {

inline std::string data_path(const std::string& name) {
    return std::string(PSYDEF_DATA_DIR) + "/" + name;
}

/// Fresh scratch directory under the system temp root, removed on
/// destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = (std::filesystem::temp_directory_path() /
                 ("psydef_" + tag + "_" + std::to_string(::getpid()) + "_" +
                  std::to_string(counter++)))
                    .string();
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return path_ + "/" + name; }

private:
    std::string path_;
};

inline const psydef::DmrsCatalog& shipped_catalog() {
    static psydef::DmrsCatalog catalog =
        psydef::load_dmrs_catalog(data_path("dmrs_catalog.json"));
    return catalog;
}

inline const psydef::SupplementaryDefinitions& shipped_supplementary() {
    static psydef::SupplementaryDefinitions defs =
        psydef::load_supplementary_definitions(data_path("supplementary_defenses.json"));
    return defs;
}

inline psydef::Turn seeker_turn(int index, std::string text, std::optional<int> label = {},
                                std::optional<double> rt = {}) {
    psydef::Turn t;
    t.index = index;
    t.speaker = psydef::Speaker::Seeker;
    t.text = std::move(text);
    t.label = label;
    t.response_time_s = rt;
    return t;
}

inline psydef::Turn supporter_turn(int index, std::string text) {
    psydef::Turn t;
    t.index = index;
    t.speaker = psydef::Speaker::Supporter;
    t.text = std::move(text);
    return t;
}

inline psydef::Dialogue simple_dialogue(const std::string& id,
                                        const std::vector<psydef::Turn>& turns) {
    psydef::Dialogue d;
    d.id = id;
    d.turns = turns;
    return d;
}

}  // namespace testsupport
