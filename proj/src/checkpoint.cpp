#include "scenedistill/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "scenedistill/bytes.hpp"
#include "scenedistill/config.hpp"
#include "scenedistill/io.hpp"

namespace scenedistill {

std::string encode_params(const ParamStore& params) {
  ByteWriter w;
  w.raw("SDCK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, e] : params.entries()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u8(static_cast<std::uint8_t>((e.frozen ? 1 : 0) | (e.buffer ? 2 : 0)));
    w.u32(2);
    w.u64(e.value.rows);
    w.u64(e.value.cols);
    for (double v : e.value.data) w.f64(v);
  }
  return std::move(w.str());
}

ParamStore decode_params(std::string_view bytes) {
  ByteReader r(bytes);
  try {
    if (r.raw(4) != "SDCK") throw CheckpointError("checkpoint: bad magic");
    if (const auto v = r.u32(); v != kCheckpointVersion)
      throw CheckpointError("checkpoint: unsupported version " + std::to_string(v));
    const std::uint32_t n = r.u32();
    ParamStore store;
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::string name(r.raw(r.u32()));
      const std::uint8_t flags = r.u8();
      if (r.u32() != 2) throw CheckpointError("checkpoint: entry '" + name + "' has unsupported rank");
      const std::uint64_t rows = r.u64(), cols = r.u64();
      if (cols != 0 && rows > r.remaining() / 8 / cols) throw TruncatedError("truncated payload");
      auto& e = store.add(name, rows, cols);
      e.frozen = flags & 1;
      e.buffer = flags & 2;
      for (double& v : e.value.data) v = r.f64();
    }
    if (r.remaining() != 0) throw CheckpointError("checkpoint: trailing bytes");
    return store;
  } catch (const TruncatedError&) {
    throw CheckpointError("checkpoint: truncated payload");
  }
}

void save_checkpoint(const std::filesystem::path& path, const SceneModel& model) {
  write_file_atomic(path, encode_params(model.params()));
  auto sidecar = path;
  sidecar += ".json";
  write_file_atomic(sidecar, nlohmann::json(model.config()).dump(2) + "\n");
}

SceneModel load_checkpoint(const std::filesystem::path& path) {
  auto sidecar = path;
  sidecar += ".json";
  const std::string bin = read_file(path);
  const std::string meta = read_file(sidecar);
  ModelConfig cfg = nlohmann::json::parse(meta).get<ModelConfig>();
  return SceneModel(std::move(cfg), decode_params(bin));
}

}  // namespace scenedistill
