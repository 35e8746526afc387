#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lsm {

/// Input that violates a documented contract (bad file, bad config, bad shape).
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Failure while running an otherwise valid computation (divergence, I/O).
class RuntimeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Shortest decimal representation that parses back to the same double.
std::string format_real(double v);

/// Strict full-token parse; throws ValidationError with `context` on failure.
double parse_real(std::string_view token, std::string_view context);

std::vector<std::string_view> split_whitespace(std::string_view line);
std::vector<std::string> split_csv_line(std::string_view line);

/// 64-bit FNV-1a. Used as a content hash for checkpoints and run manifests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t h);
std::string file_hash(const std::filesystem::path& path);

} // namespace lsm
