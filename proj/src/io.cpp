// SPDX-License-Identifier: MIT

#include "fedban/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "fedban/common.hpp"
#include "fedban/rng.hpp"

namespace fedban {

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("ConfigError", "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    fail("ConfigError", "invalid JSON in '" + path + "': " + e.what());
  }
  return j;
}

void require_keys(const nlohmann::json& obj,
                  std::initializer_list<const char*> allowed,
                  std::initializer_list<const char*> required, const char* ctx) {
  if (!obj.is_object())
    fail("ConfigError", std::string(ctx) + " must be a JSON object");
  std::set<std::string> allow;
  for (const char* k : allowed) allow.insert(k);
  for (const auto& item : obj.items()) {
    if (!allow.count(item.key()))
      fail("ConfigError", std::string(ctx) + ": unknown key '" + item.key() + "'");
  }
  for (const char* k : required) {
    if (!obj.contains(k))
      fail("ConfigError", std::string(ctx) + ": missing required key '" + k + "'");
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  // Try increasing precision until the decimal text parses back exactly.
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fnv1a_hex(const std::string& bytes) {
  const std::uint64_t h = RngStream::fnv1a64(bytes);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("ConfigError", "cannot open '" + path + "' for writing");
  out << content;
  if (!out) fail("ConfigError", "failed writing '" + path + "'");
}

}  // namespace fedban
