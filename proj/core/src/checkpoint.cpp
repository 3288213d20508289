#include "faultformer/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "faultformer/errors.hpp"
#include "faultformer/serialize.hpp"

namespace faultformer {
namespace {

constexpr const char* kMagic = "faultformer-checkpoint 1";
constexpr const char* kHeaderEnd = "end-header";

}  // namespace

void save_checkpoint(std::ostream& out, Model& model, const KeyValues& extra) {
  KeyValues header = extra;
  for (const auto& [k, v] : model.config().to_key_values()) header[k] = v;
  out << kMagic << '\n';
  write_key_values(out, header);
  out << kHeaderEnd << '\n';

  const auto params = model.parameters();
  const auto buffers = model.buffers();
  write_u32(out, static_cast<std::uint32_t>(params.size() + buffers.size()));
  auto write_name = [&out](const std::string& name) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  };
  for (const auto& p : params) {
    write_name(p.name);
    write_tensor(out, p.tensor);
  }
  for (const auto& b : buffers) {
    write_name(b.name);
    write_tensor(out, Tensor({b.values->size()}, *b.values));
  }
}

void save_checkpoint(const std::string& path, Model& model, const KeyValues& extra) {
  // Write to a sibling file first so an interrupted save never clobbers the
  // previous checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
    save_checkpoint(out, model, extra);
    if (!out) throw ConfigError("failed while writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw ConfigError("cannot move checkpoint into '" + path + "'");
}

LoadedCheckpoint load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw ParseError("not a checkpoint file (bad magic line)");
  std::ostringstream header_text;
  bool closed = false;
  while (std::getline(in, line)) {
    if (line == kHeaderEnd) {
      closed = true;
      break;
    }
    header_text << line << '\n';
  }
  if (!closed) throw ParseError("checkpoint header is not terminated");
  std::istringstream header_stream(header_text.str());
  KeyValues header = parse_key_values(header_stream);

  Model model(ModelConfig::from_key_values(header));
  auto params = model.parameters();
  auto buffers = model.buffers();

  const auto count = read_u32(in);
  if (count != params.size() + buffers.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(count) + " records, config implies " +
                      std::to_string(params.size() + buffers.size()));
  }
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = read_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw ParseError("truncated checkpoint record name");
    Tensor stored = read_tensor(in);
    if (r < params.size()) {
      auto& p = params[r];
      if (p.name != name) throw ConfigError("checkpoint record '" + name + "' where '" + p.name + "' was expected");
      if (p.tensor.shape() != stored.shape()) {
        throw ConfigError("parameter '" + name + "' has shape " + to_string(stored.shape()) + ", model expects " +
                          to_string(p.tensor.shape()));
      }
      std::copy(stored.data().begin(), stored.data().end(), p.tensor.mutable_data().begin());
    } else {
      auto& b = buffers[r - params.size()];
      if (b.name != name) throw ConfigError("checkpoint record '" + name + "' where '" + b.name + "' was expected");
      if (stored.numel() != b.values->size()) throw ConfigError("buffer '" + name + "' has the wrong length");
      std::copy(stored.data().begin(), stored.data().end(), b.values->begin());
    }
  }
  return {std::move(model), std::move(header)};
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace faultformer
