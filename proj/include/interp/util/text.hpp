#pragma once

#include <string>
#include <string_view>

namespace interp::util {

/// Valid UTF-8 copy of `s`; bytes that do not form UTF-8 become "\xNN".
std::string printable(std::string_view s);

/// Python-repr style quoting: `q` delimits, backslash escapes, control and
/// invalid bytes as \xNN.
std::string quote(std::string_view s, char q = '\'');

/// "%.4f" without negative zero.
std::string fixed4(double v);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

}  // namespace interp::util
