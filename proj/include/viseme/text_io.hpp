// Small file/text helpers shared by the parsers and writers.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace viseme {

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& content);
std::vector<std::byte> read_binary(const std::filesystem::path& p);
std::string read_binary_str(const std::filesystem::path& p);
void write_binary(const std::filesystem::path& p, const void* data, std::size_t n);

inline void write_binary(const std::filesystem::path& p, const std::string& data) {
  write_binary(p, data.data(), data.size());
}

bool is_valid_utf8(std::string_view s);
std::string latin1_to_utf8(std::string_view s);

std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view text);  // tolerates \r\n and \n

}  // namespace viseme
