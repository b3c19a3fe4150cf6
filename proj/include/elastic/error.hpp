#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace elastic {

enum class Errc {
  // world-model
  null_communicator,
  unknown_version,
  version_skew,
  shrink_unsupported,
  // wire / net
  malformed_frame,
  unknown_kind,
  oversize,
  connect_timeout,
  refused,
  disconnected,
  // runtime
  duplicate_init,
  not_initialized,
  rank_out_of_range,
  self_send,
  spawn_failed,
  not_collective,
  state_not_registered,
  spawn_aborted,
  // orchestrator
  resize_in_progress,
  invalid_m,
  spawn_shortfall,
  checkpoint_unavailable,
  stray_enter,
  launch_failed,
  // checkpoint
  bad_magic,
  version_unsupported,
  override_conflict,
  serialization_failed,
  truncated_image,
  quiesce_timeout,
  // launcher / demo
  job_not_found,
  manifest_invalid,
  partition_mismatch,
  io_error,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure surfaced by the library is an Error carrying one Errc.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  explicit Error(Errc code) : std::runtime_error(std::string(errc_name(code))), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace elastic
