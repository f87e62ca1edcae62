#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hallab::io {

// Shortest round-trip decimal form of a double ("nan"/"inf" spelled out).
std::string format_double(double v);
std::string format_optional(const std::optional<double>& v);  // empty when absent

// RFC-4180 field quoting: quote when the field has a comma, quote, CR or LF.
std::string csv_field(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);

// Splits one CSV record (no embedded newlines) honoring quotes.
std::vector<std::string> parse_csv_row(std::string_view line);

// Writes to `path.tmp` then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body);
std::string read_file(const std::filesystem::path& path);

}  // namespace hallab::io
