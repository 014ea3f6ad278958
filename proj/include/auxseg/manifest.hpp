#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace auxseg {

inline constexpr const char* kToolVersion = "0.1.0";

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(const std::string& bytes);

struct ManifestEntry {
    /// Relative entries resolve against the manifest's directory.
    std::string path;
    std::string sha256;
};

struct RunManifest {
    std::string command;
    /// Serialized JSON object echoing the effective configuration.
    std::string config_json = "{}";
    std::vector<unsigned long long> seeds;
    std::vector<ManifestEntry> inputs;
    std::vector<ManifestEntry> artifacts;
    std::string tool_version = kToolVersion;
};

/// Hashes `path` (resolved against `base` when relative) and records it as given.
ManifestEntry hash_entry(const std::filesystem::path& base, const std::string& path);

std::string manifest_json(const RunManifest& manifest);
RunManifest parse_manifest(const std::string& json);

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

/// Recomputes every checksum. Returns one message per missing or mismatching file.
std::vector<std::string> verify_manifest(const std::filesystem::path& path);

}  // namespace auxseg
