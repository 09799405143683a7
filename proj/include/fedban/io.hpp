// SPDX-License-Identifier: MIT
//
// Strict JSON handling, config hashing, and deterministic text formatting
// shared by the serializers and the CLI.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>

#include <json.hpp>

namespace fedban {

/// Parses a JSON file; throws Error("ConfigError", ...) on IO/parse failure.
nlohmann::json load_json_file(const std::string& path);

/// Validates that `obj` is a JSON object whose keys are a subset of `allowed`
/// and a superset of `required`; throws Error("ConfigError", ...) otherwise.
/// `ctx` names the object in error messages.
void require_keys(const nlohmann::json& obj,
                  std::initializer_list<const char*> allowed,
                  std::initializer_list<const char*> required, const char* ctx);

/// Shortest round-trip-exact decimal rendering of a double (uses %.17g and
/// prunes digits while the value survives a parse round trip). NaN renders
/// as "nan". Deterministic across runs and platforms using IEEE doubles.
std::string format_double(double v);

/// FNV-1a hash of a string, rendered as 16 hex digits. Used to fingerprint
/// canonicalized configs in output files.
std::string fnv1a_hex(const std::string& bytes);

/// Writes `content` to `path`; throws Error("ConfigError", ...) on failure.
void write_text_file(const std::string& path, const std::string& content);

}  // namespace fedban
