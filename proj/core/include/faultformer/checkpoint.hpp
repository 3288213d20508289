#pragma once

#include <iosfwd>
#include <string>

#include "faultformer/config.hpp"
#include "faultformer/model.hpp"

namespace faultformer {

/// Checkpoint layout:
///
///   faultformer-checkpoint 1\n
///   key = value\n ...            model config (and any extra metadata)
///   end-header\n
///   u32 record count, then per record: u32 name length, name bytes, tensor
///
/// Tensors use the flat format of serialize.hpp. Records cover every
/// parameter followed by the batch-norm running statistics, in model order.
void save_checkpoint(std::ostream& out, Model& model, const KeyValues& extra = {});
void save_checkpoint(const std::string& path, Model& model, const KeyValues& extra = {});

struct LoadedCheckpoint {
  Model model;
  KeyValues header;
};

LoadedCheckpoint load_checkpoint(std::istream& in);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace faultformer
