#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prefopt/io.hpp"

namespace prefopt {

// Every CLI command writes its manifest before computing anything: the
// command, the fully resolved configuration (defaults materialized), the
// seed, input artifact hashes, and the declared output paths. Re-running a
// command with an identical manifest reproduces identical artifacts; the
// manifest itself contains nothing volatile, so it is byte-identical too.
struct RunManifest {
    std::string command;
    uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> config; // key -> value, insertion order
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;

    void add(const std::string& key, const std::string& value) { config.push_back({key, value}); }
    void add(const std::string& key, double value) { config.push_back({key, format_config_double(value)}); }
    void add(const std::string& key, int64_t value) { config.push_back({key, std::to_string(value)}); }

    static std::string format_config_double(double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return buf;
    }

    std::string to_json() const {
        nlohmann::ordered_json doc;
        doc["command"] = command;
        doc["seed"] = seed;
        auto cfg = nlohmann::ordered_json::object();
        for (const auto& [k, v] : config) cfg[k] = v;
        doc["config"] = std::move(cfg);
        auto ins = nlohmann::ordered_json::array();
        for (const auto& path : inputs) {
            nlohmann::ordered_json entry;
            entry["path"] = path;
            entry["fnv1a64"] = fnv1a64_hex(read_file_text(path));
            ins.push_back(std::move(entry));
        }
        doc["inputs"] = std::move(ins);
        doc["outputs"] = outputs;
        return doc.dump(2) + "\n";
    }

    void write(const std::string& path) const { atomic_write_file(path, to_json()); }
};

} // namespace prefopt
