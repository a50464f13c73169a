#include "fprog/manifest.hpp"

#include "fprog/util.hpp"

namespace fprog {

void RunManifest::add_input(const std::string& path) {
    input_digests[path] = sha256_file(path);
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["version"] = version;
    j["inputs"] = nlohmann::json::object();
    for (const auto& [path, digest] : input_digests) j["inputs"][path] = digest;
    return j;
}

std::string RunManifest::comment_block() const {
    std::string out;
    out += "# command: " + command + "\n";
    out += "# version: " + version + "\n";
    out += "# seed: " + std::to_string(seed) + "\n";
    if (!config.empty()) out += "# config: " + config.dump() + "\n";
    for (const auto& [path, digest] : input_digests)
        out += "# input sha256: " + path + " " + digest + "\n";
    return out;
}

} // namespace fprog
