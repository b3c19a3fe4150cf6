#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "elastic/bytes.hpp"
#include "elastic/world.hpp"

// Image layout (little-endian):
//   "ELCK" | u16 format_version | u32 entry count | entries (u32-len key, u32-len value)... |
//   u32-len payload
// Entries are written in key order so identical inputs give identical bytes.
namespace elastic::ckpt {

inline constexpr char kMagic[4] = {'E', 'L', 'C', 'K'};
inline constexpr std::uint16_t kFormatVersion = 1;

using Metadata = std::map<std::string, std::string>;

namespace keys {
inline constexpr const char* rank = "rank";
inline constexpr const char* world_size = "world_size";
inline constexpr const char* epoch = "epoch";
inline constexpr const char* pending = "pending";
inline constexpr const char* controller = "controller";
inline constexpr const char* config_path = "config_path";
}  // namespace keys

struct CheckpointImage {
  std::uint16_t format_version = kFormatVersion;
  Metadata metadata;
  Bytes payload;
  bool operator==(const CheckpointImage&) const = default;
};

Bytes encode_image(const CheckpointImage& image);
/// Errors: BadMagic, VersionUnsupported, TruncatedImage.
CheckpointImage decode_image(std::span<const std::byte> bytes);

void write_image_file(const std::filesystem::path& path, const CheckpointImage& image);
CheckpointImage read_image_file(const std::filesystem::path& path);

enum class Phase { init, pre_checkpoint, restart };

/// What a hook may inspect or change.
struct HookContext {
  Metadata& metadata;
  Bytes& state;
};

using Hook = std::function<void(HookContext&)>;

/// Ordered per-phase callback lists; duplicates allowed.
class HookRegistry {
 public:
  void register_hook(Phase phase, Hook hook);
  void run(Phase phase, HookContext& ctx) const;
  std::size_t count(Phase phase) const;

 private:
  std::vector<Hook>& list(Phase phase);
  const std::vector<Hook>& list(Phase phase) const;

  std::vector<Hook> on_init_;
  std::vector<Hook> on_pre_checkpoint_;
  std::vector<Hook> on_restart_;
};

/// Returns the state to capture; nullopt means the state cannot be serialized.
using StateCapture = std::function<std::optional<Bytes>()>;

/// Runs pre_checkpoint hooks over the captured state, then seals it with `meta`.
/// Errors: SerializationFailed.
CheckpointImage snapshot(const StateCapture& capture, Metadata meta, const HookRegistry* hooks = nullptr);
CheckpointImage snapshot(Bytes state, Metadata meta, const HookRegistry* hooks = nullptr);

struct Restored {
  Bytes state;
  Metadata metadata;  // effective: stored values with overrides applied
};

/// Applies overrides and fires restart hooks before returning.
/// Errors: OverrideConflict when an override names a key that is neither stored
/// nor one of rank/world_size/epoch/pending.
Restored restore(const CheckpointImage& image, const Metadata& overrides, const HookRegistry* hooks = nullptr);

/// Plain-text world checkpoint index:
///   version v<k> size <n>
///   rank <r> <filename>      (one per rank)
struct Manifest {
  VersionTag version;
  std::uint32_t size = 0;
  std::vector<std::pair<Rank, std::string>> files;
  bool operator==(const Manifest&) const = default;
};

inline constexpr const char* kManifestName = "manifest";

std::string format_manifest(const Manifest& m);
/// Errors: ManifestInvalid.
Manifest parse_manifest(std::string_view text);
void write_manifest(const std::filesystem::path& dir, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir);

std::filesystem::path default_checkpoint_dir(const std::string& jobid);

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> content);

}  // namespace elastic::ckpt
