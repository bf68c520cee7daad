#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace kp {

std::string trim(std::string_view s);

// Number of whitespace-separated tokens. All length bounds in the data
// model are defined against this count.
int word_count(std::string_view s);

bool contains(std::string_view haystack, std::string_view needle);

std::vector<std::string> split_lines(std::string_view s);

std::string to_upper(std::string_view s);

// Offset just past the first sentence terminator ('.', '!' or '?') that is
// followed by whitespace or end of text; npos if the text has no such
// boundary.
std::size_t first_sentence_end(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace kp
