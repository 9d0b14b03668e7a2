#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipp/errors.hpp"
#include "ipp/sha256.hpp"

namespace ipp {

using json = nlohmann::json;

// Line-delimited JSON is the toolkit's on-disk format for catalogs, cases,
// paths, scores and the response cache: one record per line, first record
// is a header carrying the schema name and version.

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open for writing: " + path.string());
    for (const auto& r : records) out << r.dump() << '\n';
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open: " + path.string());
    std::vector<json> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError(path.string() + " line " + std::to_string(lineno) +
                             ": invalid JSON record");
        records.push_back(std::move(j));
    }
    return records;
}

// Header helpers: schema mismatches surface as ParseError before any field
// access goes wrong.
inline json make_header(const std::string& schema, int version) {
    return json{{"record", "header"}, {"schema", schema}, {"v", version}};
}

inline void check_header(const std::vector<json>& records, const std::string& schema,
                         const std::filesystem::path& path) {
    if (records.empty() || !records.front().contains("schema") ||
        records.front().at("schema").get<std::string>() != schema)
        throw ParseError(path.string() + ": missing or wrong header, expected schema '" +
                         schema + "'");
}

inline std::string file_sha256(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open: " + path.string());
    Sha256 h;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    return h.hex_digest();
}

}  // namespace ipp
