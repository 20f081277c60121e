#pragma once

// Command-line front end: synth, train, refine, eval, sweep and replay.
//
// Exit codes: 0 success, 2 usage, 3 data or validation, 4 numerical failure.
// Every command that writes files also writes a run manifest ("key = value"
// lines) holding the argument list, the effective configuration and a CRC-32
// of each output, so `bem replay <manifest>` can rerun and verify it.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bem/common.hpp"

namespace bem {

inline constexpr const char* kToolVersion = "1.0.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

int exit_code(ErrorKind kind);

/// Runs one command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct ManifestOutput {
  std::string name;
  std::string path;
  std::string crc32;  // 8 hex digits
};

/// Ordered key/value pairs of a run manifest.
struct Manifest {
  std::vector<std::pair<std::string, std::string>> entries;

  void set(std::string key, std::string value);
  std::optional<std::string> get(const std::string& key) const;
  /// Values of arg.0, arg.1, ... in order.
  std::vector<std::string> args() const;
  /// Every "output.<name> = path" entry with its "output.<name>.crc32".
  std::vector<ManifestOutput> outputs() const;
};

std::string format_manifest(const Manifest& m);
Manifest parse_manifest(std::string_view text);

/// CRC-32 of a whole file as 8 lowercase hex digits.
std::string file_crc32(const std::filesystem::path& path);

}  // namespace bem
