#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "scenedistill/model.hpp"
#include "scenedistill/param_store.hpp"

namespace scenedistill {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary layout (little-endian):
//   "SDCK" | u32 version | u32 entry_count
//   per entry: u32 name_len | name | u8 flags (bit0 frozen, bit1 buffer)
//              u32 rank (=2) | u64 rows | u64 cols | rows*cols f64
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_params(const ParamStore& params);
ParamStore decode_params(std::string_view bytes);

/// Writes `<path>` (binary) and `<path>.json` (model config sidecar).
void save_checkpoint(const std::filesystem::path& path, const SceneModel& model);
SceneModel load_checkpoint(const std::filesystem::path& path);

}  // namespace scenedistill
