#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cffma/model.hpp"

namespace cffma {

// Ordered so error messages and serialization are stable.
using KvMap = std::map<std::string, std::string>;

// Parses "key = value" lines. Blank lines are skipped; when allow_comments is
// set, "#" starts a comment (whole-line or trailing). Duplicate or malformed
// keys are format errors.
KvMap parse_kv_text(const std::string& text, bool allow_comments);

// Loads a config file (comments allowed).
KvMap read_config_file(const std::string& path);

// Applies every model-level key present in `kv` to `cfg`, removing consumed
// keys. Leftover keys are the caller's problem: commands layer their own
// schema on top and reject what remains. Bad values are format errors.
void apply_model_keys(ModelConfig& cfg, KvMap& kv);

// Strict scalar parsers shared by the config plumbing.
int64_t parse_i64(const std::string& key, const std::string& value);
uint64_t parse_u64(const std::string& key, const std::string& value);
double parse_f64(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace cffma
