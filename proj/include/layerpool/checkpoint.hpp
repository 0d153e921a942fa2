#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "layerpool/data.hpp"
#include "layerpool/model.hpp"

namespace layerpool {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  Vocab vocab;
  std::map<std::string, std::string> metadata;  // everything in the header, verbatim
};

/// Binary layout is documented in docs/checkpoint_format.md. Parameter
/// values are narrowed to 32-bit floats.
std::string encode_checkpoint(Model& model, const Vocab& vocab,
                              const std::map<std::string, std::string>& extra = {});
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, Model& model, const Vocab& vocab,
                     const std::map<std::string, std::string>& extra = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace layerpool
