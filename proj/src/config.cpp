#include "lungsynth/config.hpp"

#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "lungsynth/error.hpp"

namespace lungsynth {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string_view strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

bool valid_key(std::string_view key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

double parse_number(std::string_view tok, const std::string& key) {
  std::string s(trim(tok));
  if (s.empty()) throw ConfigError("config key '" + key + "': empty number");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
  }
  return v;
}

std::vector<std::string_view> split_list(std::string_view literal, const std::string& key) {
  auto body = trim(literal);
  if (body.size() < 2 || body.front() != '[' || body.back() != ']') {
    throw ConfigError("config key '" + key + "': expected an array");
  }
  body = trim(body.substr(1, body.size() - 2));
  std::vector<std::string_view> out;
  if (body.empty()) return out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i == body.size() || body[i] == ',') {
      auto item = trim(body.substr(start, i - start));
      if (!item.empty()) out.push_back(item);
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Config Config::parse(std::string_view text, std::string_view origin) {
  Config cfg;
  cfg.origin_ = std::string(origin);
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = trim(strip_comment(text.substr(pos, nl - pos)));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto where = std::string(origin) + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!valid_key(section)) throw ConfigError(where + ": bad section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const auto key = std::string(trim(line.substr(0, eq)));
    if (!valid_key(key)) throw ConfigError(where + ": bad key '" + key + "'");
    const auto full = section.empty() ? key : section + "." + key;
    cfg.set(full, std::string(trim(line.substr(eq + 1))));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void Config::set(const std::string& key, const std::string& literal) {
  auto lit = trim(literal);
  Value v;
  if (!lit.empty() && lit.front() == '"') {
    if (lit.size() < 2 || lit.back() != '"') throw ConfigError("config key '" + key + "': unterminated string");
    v.literal = std::string(lit.substr(1, lit.size() - 2));
    v.quoted = true;
  } else {
    if (lit.empty()) throw ConfigError("config key '" + key + "': missing value");
    v.literal = std::string(lit);
  }
  values_[key] = std::move(v);
}

void Config::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const auto key = std::string(trim(assignment.substr(0, eq)));
  if (!valid_key(key)) throw ConfigError("override has bad key '" + key + "'");
  auto value = std::string(trim(assignment.substr(eq + 1)));
  // Bare words that are not numbers, booleans or arrays are taken as strings.
  if (!value.empty() && value.front() != '"' && value.front() != '[' && value != "true" && value != "false") {
    char* end = nullptr;
    std::strtod(value.c_str(), &end);
    if (end != value.c_str() + value.size()) value = "\"" + value + "\"";
  }
  set(key, value);
}

const Config::Value* Config::find(const std::string& key) const {
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string Config::get_string(const std::string& key, std::optional<std::string> fallback) const {
  const auto* v = find(key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError("missing config key '" + key + "'");
  }
  if (!v->quoted) throw ConfigError("config key '" + key + "' must be a quoted string");
  return v->literal;
}

double Config::get_double(const std::string& key, std::optional<double> fallback) const {
  const auto* v = find(key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError("missing config key '" + key + "'");
  }
  if (v->quoted) throw ConfigError("config key '" + key + "' must be a number");
  return parse_number(v->literal, key);
}

std::int64_t Config::get_int(const std::string& key, std::optional<std::int64_t> fallback) const {
  const auto* v = find(key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError("missing config key '" + key + "'");
  }
  std::int64_t out = 0;
  const auto& s = v->literal;
  std::string digits;
  for (char c : s) {
    if (c != '_') digits.push_back(c);
  }
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), out);
  if (v->quoted || ec != std::errc{} || ptr != digits.data() + digits.size()) {
    throw ConfigError("config key '" + key + "' must be an integer, got '" + s + "'");
  }
  return out;
}

bool Config::get_bool(const std::string& key, std::optional<bool> fallback) const {
  const auto* v = find(key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError("missing config key '" + key + "'");
  }
  if (!v->quoted && v->literal == "true") return true;
  if (!v->quoted && v->literal == "false") return false;
  throw ConfigError("config key '" + key + "' must be true or false");
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            std::optional<std::vector<double>> fallback) const {
  const auto* v = find(key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError("missing config key '" + key + "'");
  }
  if (v->quoted) throw ConfigError("config key '" + key + "' must be an array");
  std::vector<double> out;
  for (auto item : split_list(v->literal, key)) out.push_back(parse_number(item, key));
  return out;
}

std::vector<int> Config::get_int_list(const std::string& key, std::optional<std::vector<int>> fallback) const {
  const auto* v = find(key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError("missing config key '" + key + "'");
  }
  std::vector<int> out;
  for (double d : get_double_list(key)) {
    if (d != static_cast<int>(d)) throw ConfigError("config key '" + key + "' must hold integers");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

std::vector<std::string> Config::get_string_list(const std::string& key,
                                                 std::optional<std::vector<std::string>> fallback) const {
  const auto* v = find(key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError("missing config key '" + key + "'");
  }
  if (v->quoted) throw ConfigError("config key '" + key + "' must be an array");
  std::vector<std::string> out;
  for (auto item : split_list(v->literal, key)) {
    if (item.size() >= 2 && item.front() == '"' && item.back() == '"') item = item.substr(1, item.size() - 2);
    out.emplace_back(item);
  }
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += " = ";
    out += v.quoted ? "\"" + v.literal + "\"" : v.literal;
    out += '\n';
  }
  return out;
}

std::uint64_t Config::hash() const { return fnv1a64(canonical()); }

}  // namespace lungsynth
