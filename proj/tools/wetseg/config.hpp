// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace wetseg::cli {

using nlohmann::json;

/// Dotted-path access into nested objects ("train.model.depth").
const json* find_path(const json& j, const std::string& path);
void set_path(json& j, const std::string& path, json value);

/// Recursive object merge. Paths in `whole` (maps, lists of records) are
/// replaced rather than merged.
void merge_into(json& base, const json& over, const std::set<std::string>& whole,
                const std::string& prefix = "");

/// Appends "<path>: unknown key" for every key of `user` missing from `schema`
/// and returns `user` without them.
json check_keys(const json& user, const json& schema, const std::set<std::string>& whole,
                const std::string& prefix, std::vector<std::string>& errors);

/// Splits a multi-line library message ("header:\n  a\n  b") into entries.
void add_error_lines(const std::string& prefix, const std::string& what,
                     std::vector<std::string>& errors);

/// Reads a config file. Throws ConfigError when it does not parse or its top
/// level is not an object.
json load_config_file(const std::filesystem::path& path);

/// Throws ConfigError listing every entry, one per line.
void raise_if_any(const std::vector<std::string>& errors);

/// Flags that override config values. Each flag names its config path in the
/// help text and shows the default taken from `defaults`.
class FlagSet {
 public:
  using Converter = std::function<json(const std::vector<std::string>&)>;

  FlagSet(CLI::App* app, const json& defaults) : app_(app), defaults_(defaults) {}

  /// The value type comes from the default at `path`, or from `fallback` when
  /// the defaults leave that path out.
  CLI::Option* bind(const std::string& flags, const std::string& path, const std::string& desc,
                    const json& fallback = nullptr);
  /// Custom parsing for repeatable structured values.
  CLI::Option* bind(const std::string& flags, const std::string& path, const std::string& desc,
                    const std::string& type_name, Converter convert,
                    const json& fallback = nullptr);

  /// Writes every flag given on the command line into `j`.
  void apply(json& j, std::vector<std::string>& errors) const;
  bool given(const std::string& path) const;

 private:
  struct Entry {
    CLI::Option* opt;
    std::string path;
    std::shared_ptr<std::vector<std::string>> values;
    Converter convert;
  };

  CLI::App* app_;
  const json& defaults_;
  std::vector<Entry> entries_;
};

/// Default shown in --help for a config value.
std::string display_value(const json& v);

/// "k=v" items to an object; throws ConfigError on a malformed item.
json parse_assignments(const std::vector<std::string>& items);

}  // namespace wetseg::cli
