// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wetseg/error.hpp"

namespace wetseg::cli {

namespace {

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  return parts;
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

const std::string& single(const std::vector<std::string>& v) {
  static const std::string empty;
  return v.empty() ? empty : v.back();
}

bool parse_bool(const std::string& raw) {
  std::string s = raw;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s.empty() || s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + raw + "'");
}

template <class T, class F>
T parse_number(const std::string& s, F f, const char* what) {
  std::size_t used = 0;
  T v{};
  try {
    v = f(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw ConfigError(std::string("expected ") + what + ", got '" + s + "'");
  return v;
}

json convert_like(const json& def, const std::vector<std::string>& values) {
  switch (def.type()) {
    case json::value_t::boolean:
      return parse_bool(single(values));
    case json::value_t::number_unsigned: {
      const auto& s = single(values);
      if (!s.empty() && s.front() == '-') throw ConfigError("expected a non-negative integer, got '" + s + "'");
      return parse_number<unsigned long long>(
          s, [](const std::string& x, std::size_t* u) { return std::stoull(x, u); }, "an integer");
    }
    case json::value_t::number_integer:
      return parse_number<long long>(
          single(values), [](const std::string& x, std::size_t* u) { return std::stoll(x, u); },
          "an integer");
    case json::value_t::number_float:
      return parse_number<double>(
          single(values), [](const std::string& x, std::size_t* u) { return std::stod(x, u); },
          "a number");
    case json::value_t::array:
      return values;
    case json::value_t::object:
      return parse_assignments(values);
    default:
      return single(values);
  }
}

}  // namespace

const json* find_path(const json& j, const std::string& path) {
  const json* cur = &j;
  for (const auto& p : split_path(path)) {
    if (!cur->is_object() || !cur->contains(p)) return nullptr;
    cur = &(*cur)[p];
  }
  return cur;
}

void set_path(json& j, const std::string& path, json value) {
  json* cur = &j;
  for (const auto& p : split_path(path)) {
    if (!cur->is_object()) *cur = json::object();
    cur = &(*cur)[p];
  }
  *cur = std::move(value);
}

void merge_into(json& base, const json& over, const std::set<std::string>& whole,
                const std::string& prefix) {
  for (const auto& [k, v] : over.items()) {
    const auto path = join(prefix, k);
    if (v.is_object() && base.contains(k) && base[k].is_object() && !whole.count(path))
      merge_into(base[k], v, whole, path);
    else
      base[k] = v;
  }
}

json check_keys(const json& user, const json& schema, const std::set<std::string>& whole,
                const std::string& prefix, std::vector<std::string>& errors) {
  if (!user.is_object()) return user;
  json kept = json::object();
  for (const auto& [k, v] : user.items()) {
    const auto path = join(prefix, k);
    if (!schema.is_object() || !schema.contains(k)) {
      errors.push_back(path + ": unknown key");
      continue;
    }
    kept[k] = v.is_object() && schema[k].is_object() && !whole.count(path)
                  ? check_keys(v, schema[k], whole, path, errors)
                  : v;
  }
  return kept;
}

void add_error_lines(const std::string& prefix, const std::string& what,
                     std::vector<std::string>& errors) {
  std::stringstream ss(what);
  std::vector<std::string> lines;
  for (std::string line; std::getline(ss, line);) {
    const auto first = line.find_first_not_of(' ');
    if (first != std::string::npos) lines.push_back(line.substr(first));
  }
  if (lines.size() > 1 && lines.front().back() == ':') lines.erase(lines.begin());
  for (const auto& l : lines) errors.push_back(prefix + ": " + l);
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": top level must be an object");
  return j;
}

void raise_if_any(const std::vector<std::string>& errors) {
  if (errors.empty()) return;
  std::string msg = std::to_string(errors.size()) + " config error(s):";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

std::string display_value(const json& v) {
  if (v.is_null()) return "none";
  if (v.is_string()) return v.get<std::string>().empty() ? "none" : v.get<std::string>();
  if (v.is_array()) {
    if (v.empty()) return "none";
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + display_value(x);
    return s;
  }
  if (v.is_object()) {
    if (v.empty()) return "none";
    std::string s;
    for (const auto& [k, x] : v.items()) s += (s.empty() ? "" : ",") + k + "=" + display_value(x);
    return s;
  }
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v.get<double>());
    return buf;
  }
  return v.dump();
}

json parse_assignments(const std::vector<std::string>& items) {
  json out = json::object();
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("expected KEY=VALUE, got '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

CLI::Option* FlagSet::bind(const std::string& flags, const std::string& path,
                           const std::string& desc, const json& fallback) {
  const json* def = find_path(defaults_, path);
  const json d = def ? *def : fallback;
  const char* type = "TEXT";
  switch (d.type()) {
    case json::value_t::boolean: type = "BOOL"; break;
    case json::value_t::number_unsigned:
    case json::value_t::number_integer: type = "INT"; break;
    case json::value_t::number_float: type = "FLOAT"; break;
    case json::value_t::array: type = "LIST"; break;
    case json::value_t::object: type = "KEY=VALUE"; break;
    default: break;
  }
  return bind(
      flags, path, desc, type, [d](const std::vector<std::string>& v) { return convert_like(d, v); }, d);
}

CLI::Option* FlagSet::bind(const std::string& flags, const std::string& path,
                           const std::string& desc, const std::string& type_name,
                           Converter convert, const json& fallback) {
  const json* def = find_path(defaults_, path);
  auto values = std::make_shared<std::vector<std::string>>();
  const std::string shown = display_value(def ? *def : fallback);
  CLI::Option* opt = nullptr;
  if (type_name == "BOOL") {
    // bare flag means true
    opt = app_->add_option(flags, *values, desc + " [" + shown + "] (" + path + ")");
    opt->type_name(type_name)->expected(0, 1);
  } else {
    opt = app_->add_option(flags, *values, desc + " (" + path + ")");
    opt->type_name(type_name)->default_str(shown);
  }
  if (type_name == "LIST") {
    opt->delimiter(',')->expected(1, CLI::detail::expected_max_vector_size);
  } else if (type_name == "INT" || type_name == "FLOAT" || type_name == "TEXT") {
    opt->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
  entries_.push_back({opt, path, values, std::move(convert)});
  return opt;
}

void FlagSet::apply(json& j, std::vector<std::string>& errors) const {
  for (const auto& e : entries_) {
    if (e.opt->count() == 0) continue;
    try {
      set_path(j, e.path, e.convert(*e.values));
    } catch (const std::exception& ex) {
      errors.push_back(e.opt->get_name() + " (" + e.path + "): " + ex.what());
    }
  }
}

bool FlagSet::given(const std::string& path) const {
  for (const auto& e : entries_)
    if (e.path == path && e.opt->count() > 0) return true;
  return false;
}

}  // namespace wetseg::cli
