#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace coreflect {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Text
// ---------------------------------------------------------------------------

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with_ci(std::string_view s, std::string_view prefix);
bool contains(std::string_view haystack, std::string_view needle);

/// Body of the first ```<tag> fenced block, or nullopt-like empty string plus
/// `found == false` when absent. An empty `tag` matches any fence.
struct FencedBlock {
  bool found = false;
  std::string body;
};
FencedBlock extract_fenced_block(std::string_view text, std::string_view tag);

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);
/// First 8 bytes of SHA-256 as an integer; used to seed per-item generators.
std::uint64_t hash64(std::string_view data);

// ---------------------------------------------------------------------------
// Random numbers
//
// std::*_distribution output is implementation-defined, so draws are derived
// from raw mt19937_64 words (whose sequence the standard fixes) to keep runs
// bit-reproducible across standard libraries.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform integer in [0, bound), unbiased.
  std::uint64_t uniform_index(std::uint64_t bound);
  /// Uniform double in [0, 1).
  double uniform01();
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Deterministic seed derived from a base seed and a label.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

// ---------------------------------------------------------------------------
// Numbers
// ---------------------------------------------------------------------------

/// Half-up rounding to two decimals for report tables. Values within 1e-9 of a
/// half-cent boundary are treated as on the boundary, so a mean such as 4.805
/// (not exactly representable in binary) rounds to 4.81.
double round2(double value);
std::string format2(double value);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename, so readers never see partial files.
void write_file(const std::filesystem::path& path, std::string_view contents);
json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& value);
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

}  // namespace coreflect
