#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace reident {

/// Flat binary container shared by models and fitted ensemble transforms.
///
/// Layout, all integers little-endian:
///   8 bytes   magic "REIDENS\0"
///   u32       format version
///   u64       header length, then that many bytes of UTF-8 header text
///   u64       array count
///   per array: u64 element count, then IEEE-754 binary64 values
struct Container {
  std::string header;
  std::vector<std::vector<double>> arrays;
};

constexpr std::uint32_t kContainerVersion = 1;

std::string encode_container(const Container& container);
Container decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

}  // namespace reident
