#pragma once

#include <string>
#include <vector>

namespace minibert {

// Reads the whole file as bytes. Throws "<path>: cannot open" on failure.
std::string read_text_file(const std::string& path);

// Splits file content into lines. A trailing '\r' is stripped from each
// line (CRLF tolerance) and the virtual empty line after a final newline
// is dropped; interior blank lines are preserved since several formats
// use them as separators.
std::vector<std::string> read_lines(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);

// Splits on a single-character delimiter; always returns at least one
// (possibly empty) field.
std::vector<std::string> split_fields(const std::string& line, char delim);

}  // namespace minibert
