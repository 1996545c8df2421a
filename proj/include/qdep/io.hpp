#pragma once

#include "errors.hpp"
#include "oracle.hpp"
#include "sample.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace qdep::io {

struct Table
{
  std::vector<std::string> header;
  Sample sample;
};

namespace detail {

inline std::string_view
trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view>
split_fields(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos)
      return out;
    start = comma + 1;
  }
}

} // namespace detail

//! Parses CSV text: a header row of variable names, then one row of
//! decimal reals per observation. LF or CRLF line endings; blank lines are
//! skipped. Errors cite 1-based line numbers.
inline Table
parse_csv(std::string_view text, const std::string& source = "input")
{
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  if (text.substr(0, 3) == "\xEF\xBB\xBF")
    pos = 3;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (detail::trim(line).empty())
      continue;
    const auto fields = detail::split_fields(line);
    if (header.empty()) {
      for (auto f : fields) {
        if (f.empty())
          throw ParseError(source + ":" + std::to_string(line_no) + ": empty column name");
        header.emplace_back(f);
      }
      continue;
    }
    if (fields.size() != header.size())
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    std::vector<double> row;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto f = fields[c];
      double v = 0.0;
      const char* first = f.data();
      if (!f.empty() && *first == '+')
        ++first;
      const auto [end, ec] = std::from_chars(first, f.data() + f.size(), v);
      if (f.empty() || ec != std::errc{} || end != f.data() + f.size())
        throw ParseError(source + ":" + std::to_string(line_no) + ": column '" + header[c] +
                         "' is not a number: '" + std::string(f) + "'");
      if (!std::isfinite(v))
        throw ParseError(source + ":" + std::to_string(line_no) + ": column '" + header[c] +
                         "' is not finite");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (header.empty())
    throw ParseError(source + ": missing header row");
  if (header.size() < 2)
    throw ParseError(source + ": need at least two columns");
  if (rows.empty())
    throw ParseError(source + ": no observations");
  return { std::move(header), Sample::from_rows(rows) };
}

inline std::string
read_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Table
read_csv(const std::filesystem::path& path)
{
  return parse_csv(read_file(path), path.string());
}

//! Shortest round-trip decimal form.
inline std::string
format_double(double v)
{
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string
to_csv(const Sample& sample, const std::vector<std::string>& header)
{
  std::string out;
  for (std::size_t k = 0; k < header.size(); ++k)
    out += (k ? "," : "") + header[k];
  out += '\n';
  for (std::size_t i = 0; i < sample.n(); ++i) {
    for (std::size_t k = 0; k < sample.k(); ++k) {
      if (k)
        out += ',';
      out += format_double(sample(i, k));
    }
    out += '\n';
  }
  return out;
}

inline std::vector<std::string>
default_header(std::size_t k)
{
  std::vector<std::string> h;
  for (std::size_t i = 0; i < k; ++i)
    h.push_back("y" + std::to_string(i + 1));
  return h;
}

//! Writes through a temporary file in the same directory and renames it
//! over the target, so readers never see a partial file.
inline void
write_atomic(const std::filesystem::path& path, std::string_view content)
{
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const auto tmp = dir / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out)
      throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename onto " + path.string() + ": " + ec.message());
  }
}

//! {"atoms": [[y_1, ..., y_K], ...], "probs": [p, ...]}
inline nlohmann::json
to_json(const DiscreteJoint& joint)
{
  return { { "atoms", joint.atoms() }, { "probs", joint.probs() } };
}

inline DiscreteJoint
discrete_joint_from_json(const nlohmann::json& j)
{
  if (!j.is_object() || !j.contains("atoms") || !j.contains("probs"))
    throw ParseError("discrete joint JSON needs 'atoms' and 'probs'");
  for (const auto& [key, value] : j.items())
    if (key != "atoms" && key != "probs")
      throw ParseError("unknown key '" + key + "' in discrete joint JSON");
  try {
    return { j.at("atoms").get<std::vector<std::vector<double>>>(),
             j.at("probs").get<std::vector<double>>() };
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed discrete joint JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("invalid discrete joint: ") + e.what());
  }
}

inline DiscreteJoint
read_discrete_joint(const std::filesystem::path& path)
{
  try {
    return discrete_joint_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

//! 64-bit FNV-1a, hex encoded.
inline std::string
fnv1a_hex(std::string_view data)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace qdep::io
