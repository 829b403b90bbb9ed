#pragma once

// Line-record helpers shared by every file format in the toolkit: one record
// per line, comma-separated, header first. Empty fields mean "absent".

#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

namespace xidle::records {

inline std::string_view trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',')
{
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(trim(line.substr(pos)));
      break;
    }
    out.push_back(trim(line.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s)
{
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s)
{
  s = trim(s);
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

inline std::optional<bool> parse_bool(std::string_view s)
{
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw std::invalid_argument("not a truth value: '" + std::string(s) + "'");
}

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v)
{
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("double formatting failed");
  return std::string(buf, ptr);
}

/// Fixed-precision formatting for report columns.
inline std::string format_fixed(double v, int precision)
{
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, precision);
  if (ec != std::errc{}) throw std::runtime_error("double formatting failed");
  return std::string(buf, ptr);
}

inline std::string format_optional(const std::optional<double>& v)
{
  return v ? format_double(*v) : std::string{};
}

/// Rejects text that would break the line-record framing.
inline const std::string& checked_field(const std::string& s)
{
  if (s.find_first_of(",\n\r") != std::string::npos) {
    throw std::invalid_argument("field contains a separator: '" + s + "'");
  }
  return s;
}

template <typename Range>
std::string join(const Range& fields, char sep = ',')
{
  std::string out;
  bool first = true;
  for (const auto& f : fields) {
    if (!first) out.push_back(sep);
    out += f;
    first = false;
  }
  return out;
}

/// Maps header names to column positions.
class Header {
public:
  Header() = default;

  explicit Header(std::string_view line)
  {
    const auto cols = split(line);
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (!index_.emplace(std::string(cols[i]), i).second) {
        throw std::invalid_argument("duplicate column '" + std::string(cols[i]) + "'");
      }
      names_.emplace_back(cols[i]);
    }
  }

  std::optional<std::size_t> find(std::string_view name) const
  {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t require(std::string_view name) const
  {
    if (auto i = find(name)) return *i;
    throw std::invalid_argument("missing column '" + std::string(name) + "'");
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> names_;
};

}  // namespace xidle::records
