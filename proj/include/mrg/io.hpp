#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mrg {

std::string read_text_file(const std::filesystem::path& path);

// Writes to a temporary sibling file and renames it into place, so readers
// never observe a partially written file.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

// FNV-1a, stable across platforms. Used for content fingerprints in manifests.
uint64_t fnv1a64(std::string_view bytes);

}  // namespace mrg
