#include "elastic/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <unistd.h>

namespace elastic::ckpt {

Bytes encode_image(const CheckpointImage& image) {
  ByteWriter w;
  w.raw(std::as_bytes(std::span(kMagic)));
  w.u16(image.format_version);
  w.u32(static_cast<std::uint32_t>(image.metadata.size()));
  for (const auto& [k, v] : image.metadata) {
    w.str(k);
    w.str(v);
  }
  w.blob(image.payload);
  return std::move(w).take();
}

CheckpointImage decode_image(std::span<const std::byte> bytes) {
  ByteReader r(bytes, Errc::truncated_image);
  auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw Error(Errc::bad_magic, "not an ELCK image");
  CheckpointImage img;
  img.format_version = r.u16();
  if (img.format_version != kFormatVersion) {
    throw Error(Errc::version_unsupported, "format version " + std::to_string(img.format_version));
  }
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto k = r.str();
    auto v = r.str();
    if (!img.metadata.emplace(std::move(k), std::move(v)).second) {
      throw Error(Errc::truncated_image, "duplicate metadata key");
    }
  }
  img.payload = r.blob();
  r.expect_done();
  return img;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> content) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(content.data()), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(Errc::io_error, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::io_error, "rename " + tmp.string() + ": " + ec.message());
}

void write_image_file(const std::filesystem::path& path, const CheckpointImage& image) {
  write_file_atomic(path, encode_image(image));
}

CheckpointImage read_image_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::checkpoint_unavailable, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_image(std::as_bytes(std::span(raw)));
}

void HookRegistry::register_hook(Phase phase, Hook hook) { list(phase).push_back(std::move(hook)); }

void HookRegistry::run(Phase phase, HookContext& ctx) const {
  for (const auto& h : list(phase)) h(ctx);
}

std::size_t HookRegistry::count(Phase phase) const { return list(phase).size(); }

std::vector<Hook>& HookRegistry::list(Phase phase) {
  return const_cast<std::vector<Hook>&>(std::as_const(*this).list(phase));
}

const std::vector<Hook>& HookRegistry::list(Phase phase) const {
  switch (phase) {
    case Phase::init: return on_init_;
    case Phase::pre_checkpoint: return on_pre_checkpoint_;
    case Phase::restart: return on_restart_;
  }
  return on_init_;
}

CheckpointImage snapshot(const StateCapture& capture, Metadata meta, const HookRegistry* hooks) {
  std::optional<Bytes> state;
  try {
    state = capture();
  } catch (const std::exception& e) {
    throw Error(Errc::serialization_failed, e.what());
  }
  if (!state) throw Error(Errc::serialization_failed, "state capture returned nothing");
  return snapshot(std::move(*state), std::move(meta), hooks);
}

CheckpointImage snapshot(Bytes state, Metadata meta, const HookRegistry* hooks) {
  if (hooks) {
    HookContext ctx{meta, state};
    hooks->run(Phase::pre_checkpoint, ctx);
  }
  for (const auto& [k, v] : meta) {
    if (k.empty()) throw Error(Errc::serialization_failed, "empty metadata key");
  }
  return CheckpointImage{kFormatVersion, std::move(meta), std::move(state)};
}

Restored restore(const CheckpointImage& image, const Metadata& overrides, const HookRegistry* hooks) {
  if (image.format_version != kFormatVersion) {
    throw Error(Errc::version_unsupported, "format version " + std::to_string(image.format_version));
  }
  Restored out{image.payload, image.metadata};
  for (const auto& [k, v] : overrides) {
    bool runtime_key = k == keys::rank || k == keys::world_size || k == keys::epoch || k == keys::pending;
    if (!runtime_key && !image.metadata.contains(k)) {
      throw Error(Errc::override_conflict, "unknown metadata key '" + k + "'");
    }
    out.metadata[k] = v;
  }
  if (hooks) {
    HookContext ctx{out.metadata, out.state};
    hooks->run(Phase::restart, ctx);
  }
  return out;
}

std::string format_manifest(const Manifest& m) {
  std::ostringstream os;
  os << "version " << m.version.str() << " size " << m.size << "\n";
  for (const auto& [rank, file] : m.files) os << "rank " << rank << " " << file << "\n";
  return os.str();
}

Manifest parse_manifest(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string word, tag;
  Manifest m;
  if (!(is >> word >> tag) || word != "version" || tag.size() < 2 || tag[0] != 'v') {
    throw Error(Errc::manifest_invalid, "first line must be 'version v<k> size <n>'");
  }
  try {
    m.version = VersionTag{static_cast<std::uint32_t>(std::stoul(tag.substr(1)))};
  } catch (const std::exception&) {
    throw Error(Errc::manifest_invalid, "bad version tag '" + tag + "'");
  }
  long long size = 0;
  if (!(is >> word >> size) || word != "size" || size <= 0) {
    throw Error(Errc::manifest_invalid, "missing or non-positive size");
  }
  m.size = static_cast<std::uint32_t>(size);
  long long rank = 0;
  std::string file;
  while (is >> word) {
    if (word != "rank" || !(is >> rank >> file) || rank < 0) {
      throw Error(Errc::manifest_invalid, "expected 'rank <r> <filename>'");
    }
    if (static_cast<std::uint64_t>(rank) != m.files.size()) {
      throw Error(Errc::manifest_invalid, "rank lines must list 0..size-1 in order");
    }
    m.files.emplace_back(static_cast<Rank>(rank), file);
  }
  if (m.files.size() != m.size) {
    throw Error(Errc::manifest_invalid, "manifest lists " + std::to_string(m.files.size()) +
                                            " images for size " + std::to_string(m.size));
  }
  return m;
}

void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  auto text = format_manifest(m);
  write_file_atomic(dir / kManifestName, std::as_bytes(std::span(text)));
}

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw Error(Errc::manifest_invalid, "no manifest in " + dir.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto m = parse_manifest(text);
  for (const auto& [rank, file] : m.files) {
    if (!std::filesystem::exists(dir / file)) {
      throw Error(Errc::manifest_invalid, "image for rank " + std::to_string(rank) + " missing: " + file);
    }
  }
  return m;
}

std::filesystem::path default_checkpoint_dir(const std::string& jobid) {
  return std::filesystem::path("ckpt") / jobid;
}

}  // namespace elastic::ckpt
