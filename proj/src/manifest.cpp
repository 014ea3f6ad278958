#include "auxseg/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "binary_io.hpp"
#include "json.hpp"

namespace auxseg {

namespace {

using Json = nlohmann::ordered_json;

std::string to_hex(const unsigned char* bytes, unsigned len) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(digits[bytes[i] >> 4]);
        out.push_back(digits[bytes[i] & 0xF]);
    }
    return out;
}

std::string digest(const void* data, std::size_t size) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data, size) != 1 || EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) {
        throw std::runtime_error("sha256: digest computation failed");
    }
    return to_hex(md.data(), len);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& path) {
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : base / p;
}

Json entries_json(const std::vector<ManifestEntry>& entries) {
    Json arr = Json::array();
    for (const auto& e : entries) arr.push_back({{"path", e.path}, {"sha256", e.sha256}});
    return arr;
}

std::vector<ManifestEntry> entries_from(const Json& arr) {
    std::vector<ManifestEntry> out;
    for (const auto& e : arr) out.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>()});
    return out;
}

}  // namespace

std::string sha256_bytes(const std::string& bytes) { return digest(bytes.data(), bytes.size()); }

std::string sha256_file(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return digest(bytes.data(), bytes.size());
}

ManifestEntry hash_entry(const std::filesystem::path& base, const std::string& path) {
    return {path, sha256_file(resolve(base, path))};
}

std::string manifest_json(const RunManifest& m) {
    Json j;
    j["tool"] = "auxseg";
    j["version"] = m.tool_version;
    j["command"] = m.command;
    j["config"] = Json::parse(m.config_json);
    j["seeds"] = m.seeds;
    j["inputs"] = entries_json(m.inputs);
    j["artifacts"] = entries_json(m.artifacts);
    return j.dump(2) + "\n";
}

RunManifest parse_manifest(const std::string& text) {
    try {
        const Json j = Json::parse(text);
        RunManifest m;
        m.tool_version = j.at("version").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.config_json = j.at("config").dump();
        m.seeds = j.at("seeds").get<std::vector<unsigned long long>>();
        m.inputs = entries_from(j.at("inputs"));
        m.artifacts = entries_from(j.at("artifacts"));
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError(std::string("manifest: ") + e.what());
    }
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
    const std::string text = manifest_json(manifest);
    io::write_file(path, std::vector<char>(text.begin(), text.end()));
}

RunManifest read_manifest(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

std::vector<std::string> verify_manifest(const std::filesystem::path& path) {
    const RunManifest m = read_manifest(path);
    const auto base = path.parent_path();
    std::vector<std::string> problems;
    for (const auto* list : {&m.inputs, &m.artifacts}) {
        for (const auto& e : *list) {
            const auto file = resolve(base, e.path);
            if (!std::filesystem::exists(file)) {
                problems.push_back("missing file " + file.string());
            } else if (sha256_file(file) != e.sha256) {
                problems.push_back("checksum mismatch for " + file.string());
            }
        }
    }
    return problems;
}

}  // namespace auxseg
