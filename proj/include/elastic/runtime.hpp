#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "elastic/bytes.hpp"
#include "elastic/checkpoint.hpp"
#include "elastic/world.hpp"

namespace elastic {

/// Result of a data-bearing runtime call. Failures are thrown as Error.
enum class Status { ok, world_resized };

/// Launch parameters a rank receives from its fault daemon through ELASTIC_* variables.
struct Environment {
  Rank rank = 0;
  std::uint32_t world_size = 1;
  Endpoint controller;
  VersionTag epoch;
  bool pending = false;                       // must block in the commit barrier during init
  std::optional<std::string> restore_image;   // restore from this checkpoint image
  std::uint32_t fork_m = 0;                   // nonzero: this process is a fork child
  bool spawned = false;                       // started by a spawn-merge
  std::string config_path;
  std::chrono::milliseconds connect_timeout{10000};
  std::uint32_t launch_id = 0;

  static Environment from_process();
  static Environment from_variables(const std::vector<std::pair<std::string, std::string>>& vars);
  /// Variables to export so that from_process() reproduces this value.
  std::vector<std::pair<std::string, std::string>> to_variables() const;
};

namespace env_vars {
inline constexpr const char* rank = "ELASTIC_RANK";
inline constexpr const char* world_size = "ELASTIC_WORLD_SIZE";
inline constexpr const char* controller = "ELASTIC_CONTROLLER";
inline constexpr const char* epoch = "ELASTIC_EPOCH";
inline constexpr const char* pending = "ELASTIC_PENDING";
inline constexpr const char* restore = "ELASTIC_RESTORE";
inline constexpr const char* fork_m = "ELASTIC_FORK_M";
inline constexpr const char* spawned = "ELASTIC_SPAWNED";
inline constexpr const char* config = "ELASTIC_CONFIG";
inline constexpr const char* connect_timeout = "ELASTIC_CONNECT_TIMEOUT_MS";
inline constexpr const char* launch_id = "ELASTIC_LAUNCH_ID";
}  // namespace env_vars

/// Bridge between the spawning group and the spawned group of a spawn-merge.
struct InterComm {
  std::vector<Rank> local_group;
  std::vector<Rank> remote_group;
  VersionTag version;  // epoch the merge commits
  bool parent_side = true;
};

struct RecvResult {
  Bytes payload;
  Status status = Status::ok;
};

/// Per-process handle on the elastic runtime.
///
/// Every call is blocking and must come from one application thread. A pending
/// WORLD_RESIZED notice is reported through the status of the next data-bearing
/// call (send, recv, barrier) while that call still completes normally.
class Runtime {
 public:
  Runtime();
  ~Runtime();
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  /// Hooks must be registered before init() to observe init and restart.
  ckpt::HookRegistry& hooks();

  /// Reads the process environment. A second init in the same process throws DuplicateInit.
  void init();
  void init(const Environment& env);

  bool initialized() const;
  Rank rank() const;
  std::uint32_t size() const;
  VersionTag version() const;
  const WorldHistory& history() const;
  /// Restored from a checkpoint image (restart or fork child).
  bool restored() const;
  /// Joined through a commit barrier rather than the initial launch.
  bool joined_late() const;
  bool fork_child() const;
  const ckpt::Metadata& metadata() const;

  Status send(Rank dst, std::int32_t tag, std::span<const std::byte> payload,
              const CommRef& comm = CommRef::world());
  RecvResult recv(Rank src, std::int32_t tag, const CommRef& comm = CommRef::world());
  Status barrier(const CommRef& comm = CommRef::world());

  /// NULL until a spawn-merge commits; afterwards the newest merged communicator.
  CommRef resized_world();
  InterComm comm_spawn(const std::vector<std::string>& command, std::uint32_t maxprocs, Rank root,
                       const CommRef& comm = CommRef::world());
  CommRef intercomm_merge(const InterComm& inter, int high);
  /// The spawning group, for processes started by a spawn-merge.
  std::optional<InterComm> parent() const;

  /// Collective clone of ranks 0..m-1. Returns m in pre-existing ranks, 0 in new
  /// ranks, and -1 (mismatched m), -2 (m out of range) or -3 (spawn/restore failure).
  int fork(std::uint32_t m);
  CommRef comm_parents() const;
  CommRef comm_children() const;

  std::vector<Rank> membership(const CommRef& comm) const;

  void register_state(Bytes blob);
  void replace_state(Bytes blob);
  const Bytes& state() const;
  bool has_state() const;

  void finalize();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace elastic
