#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace fprog {

inline constexpr const char* kToolVersion = "0.1.0";

// Everything needed to reproduce one invocation: the subcommand, its resolved
// options, the seed, the tool version and a digest of every input file.  Each
// report embeds this block so identical manifests imply identical outputs.
struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::string version = kToolVersion;
    std::map<std::string, std::string> input_digests;

    // Digest a file and record it under its path.
    void add_input(const std::string& path);

    nlohmann::json to_json() const;
    // '#'-prefixed lines for embedding at the top of text and CSV reports.
    std::string comment_block() const;
};

} // namespace fprog
