#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mragent {

/// Simulated or measured time, in seconds.
using Seconds = double;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return n > 0.0 ? a * (1.0 / n) : a;
}

constexpr double kUnitTolerance = 1e-6;

inline bool is_unit(const Vec3& v) { return std::abs(norm(v) - 1.0) <= kUnitTolerance; }

/// The three timed query categories (A/B/C in the garden study).
enum class QueryKind { AnchorLoad, General, ObjectQuery };

inline std::string_view to_string(QueryKind kind) {
  switch (kind) {
    case QueryKind::AnchorLoad: return "AnchorLoad";
    case QueryKind::General: return "General";
    case QueryKind::ObjectQuery: return "ObjectQuery";
  }
  return "General";
}

inline std::optional<QueryKind> query_kind_from_string(std::string_view s) {
  if (s == "AnchorLoad") return QueryKind::AnchorLoad;
  if (s == "General") return QueryKind::General;
  if (s == "ObjectQuery") return QueryKind::ObjectQuery;
  return std::nullopt;
}

/// Raised by asset and file validators. `rule()` names the violated rule so
/// command-line tools can report it verbatim.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string rule, const std::string& message)
      : std::runtime_error(rule + ": " + message), rule_(std::move(rule)) {}
  const std::string& rule() const noexcept { return rule_; }

 private:
  std::string rule_;
};

struct Violation {
  std::string rule;
  std::string message;
};

inline void throw_first(const std::vector<Violation>& violations) {
  if (!violations.empty()) throw ValidationError(violations.front().rule, violations.front().message);
}

namespace text {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string_view trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

/// Lowercase word tokens: maximal runs of letters, digits and inner
/// apostrophes. Everything else separates words.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    while (!current.empty() && current.back() == '\'') current.pop_back();
    std::size_t lead = 0;
    while (lead < current.size() && current[lead] == '\'') ++lead;
    if (lead < current.size()) words.push_back(current.substr(lead));
    current.clear();
  };
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '\'') {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return words;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace text
}  // namespace mragent
