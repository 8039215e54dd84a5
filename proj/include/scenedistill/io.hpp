#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace scenedistill {

/// Input file missing or unreadable. The CLI maps this to exit code 3.
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Write via a sibling temp file and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace scenedistill
