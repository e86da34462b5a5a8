#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "emp/embedder.hpp"
#include "emp/errors.hpp"
#include "emp/io_util.hpp"

namespace emp {

using nlohmann::json;

void save_checkpoint(const std::string& path, const EmbedderParams& params) {
  EmbedderParams copy = params;
  json header;
  header["format"] = "emp-checkpoint";
  header["version"] = 1;
  header["config"] = {{"channels", params.config.channels},
                      {"hidden", params.config.hidden},
                      {"second_stride", params.config.second_stride},
                      {"max_depth", params.config.max_depth}};
  std::vector<float> blob;
  json tensors = json::array();
  for (const TensorView& t : copy.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"offset", blob.size() * sizeof(float)},
                       {"length", t.data.size()}});
    for (double v : t.data) blob.push_back(static_cast<float>(v));
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open checkpoint for writing: " + path);
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_f32_le(out, blob);
  if (!out) throw InvalidArgument("failed writing checkpoint: " + path);
}

EmbedderParams load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) throw ParseError(path + ": truncated header at byte offset 0");
  const std::uint64_t header_len = read_u64_le(bytes.data());
  if (header_len > bytes.size() - 8) {
    throw ParseError(path + ": header length " + std::to_string(header_len) +
                     " exceeds file size at byte offset 0");
  }
  json header;
  try {
    header = json::parse(bytes.substr(8, header_len));
  } catch (const json::exception& e) {
    throw ParseError(path + ": malformed JSON header at byte offset 8: " + e.what());
  }
  const std::size_t data_start = 8 + header_len;

  EmbedderParams params;
  try {
    if (header.at("format") != "emp-checkpoint") throw ParseError(path + ": not a checkpoint");
    const json& c = header.at("config");
    EmbedderConfig cfg;
    cfg.channels = c.at("channels");
    cfg.hidden = c.at("hidden");
    cfg.second_stride = c.at("second_stride");
    cfg.max_depth = c.at("max_depth");
    params = EmbedderParams::zeros(cfg);

    auto views = params.tensors();
    const json& tensors = header.at("tensors");
    if (tensors.size() != views.size()) throw ParseError(path + ": unexpected tensor count");
    for (std::size_t i = 0; i < views.size(); ++i) {
      const json& t = tensors[i];
      if (t.at("name") != views[i].name || t.at("shape").get<std::vector<int>>() != views[i].shape) {
        throw ParseError(path + ": tensor " + std::to_string(i) + " does not match config");
      }
      const std::size_t offset = data_start + t.at("offset").get<std::size_t>();
      const std::size_t len = views[i].data.size();
      if (offset + len * sizeof(float) > bytes.size()) {
        throw ParseError(path + ": truncated tensor '" + views[i].name + "' at byte offset " +
                         std::to_string(offset));
      }
      for (std::size_t k = 0; k < len; ++k) {
        views[i].data[k] = read_f32_le(bytes.data() + offset + k * sizeof(float));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": malformed checkpoint header: " + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(path + ": invalid config: " + e.what());
  }
  return params;
}

}  // namespace emp
