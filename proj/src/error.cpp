#include "elastic/error.hpp"

namespace elastic {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::null_communicator: return "NullCommunicator";
    case Errc::unknown_version: return "UnknownVersion";
    case Errc::version_skew: return "VersionSkew";
    case Errc::shrink_unsupported: return "ShrinkUnsupported";
    case Errc::malformed_frame: return "MalformedFrame";
    case Errc::unknown_kind: return "UnknownKind";
    case Errc::oversize: return "Oversize";
    case Errc::connect_timeout: return "ConnectTimeout";
    case Errc::refused: return "Refused";
    case Errc::disconnected: return "Disconnected";
    case Errc::duplicate_init: return "DuplicateInit";
    case Errc::not_initialized: return "NotInitialized";
    case Errc::rank_out_of_range: return "RankOutOfRange";
    case Errc::self_send: return "SelfSend";
    case Errc::spawn_failed: return "SpawnFailed";
    case Errc::not_collective: return "NotCollective";
    case Errc::state_not_registered: return "StateNotRegistered";
    case Errc::spawn_aborted: return "SpawnAborted";
    case Errc::resize_in_progress: return "ResizeInProgress";
    case Errc::invalid_m: return "InvalidM";
    case Errc::spawn_shortfall: return "SpawnShortfall";
    case Errc::checkpoint_unavailable: return "CheckpointUnavailable";
    case Errc::stray_enter: return "StrayEnter";
    case Errc::launch_failed: return "LaunchFailed";
    case Errc::bad_magic: return "BadMagic";
    case Errc::version_unsupported: return "VersionUnsupported";
    case Errc::override_conflict: return "OverrideConflict";
    case Errc::serialization_failed: return "SerializationFailed";
    case Errc::truncated_image: return "TruncatedImage";
    case Errc::quiesce_timeout: return "QuiesceTimeout";
    case Errc::job_not_found: return "JobNotFound";
    case Errc::manifest_invalid: return "ManifestInvalid";
    case Errc::partition_mismatch: return "PartitionMismatch";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

}  // namespace elastic
