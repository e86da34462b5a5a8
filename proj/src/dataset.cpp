#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "emp/errors.hpp"
#include "emp/io_util.hpp"
#include "emp/simulator.hpp"

namespace emp {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(std::size_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.%s", index, ext);
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_raster(const fs::path& path, const double* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = static_cast<float>(data[i]);
  write_f32_le(out, values);
  if (!out) throw InvalidArgument("failed writing " + path.string());
}

void read_raster(const fs::path& path, double* data, std::size_t count) {
  const std::string bytes = read_file(path.string());
  const std::size_t expected = count * sizeof(float);
  if (bytes.size() != expected) {
    throw ParseError(path.string() + ": raster length mismatch at byte offset " +
                     std::to_string(std::min(bytes.size(), expected)) + " (expected " +
                     std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()) +
                     ")");
  }
  for (std::size_t i = 0; i < count; ++i) data[i] = read_f32_le(bytes.data() + i * sizeof(float));
}

double parse_double(const std::string& field, const std::string& file, std::size_t offset) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw ParseError(file + ": malformed number '" + field + "' at byte offset " +
                     std::to_string(offset));
  }
  return v;
}

}  // namespace

bool Sequence::operator==(const Sequence& other) const {
  if (id != other.id || frames.size() != other.frames.size()) return false;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Frame& a = frames[i];
    const Frame& b = other.frames[i];
    if (!(a.rgb == b.rgb) || !(a.intrinsics == b.intrinsics)) return false;
    if (a.depth.rows() != b.depth.rows() || a.depth.cols() != b.depth.cols() ||
        !(a.depth == b.depth).all()) {
      return false;
    }
    if (a.gt_pose.has_value() != b.gt_pose.has_value()) return false;
    if (a.gt_pose && (a.gt_pose->rotation != b.gt_pose->rotation ||
                      a.gt_pose->translation != b.gt_pose->translation)) {
      return false;
    }
  }
  return true;
}

void write_dataset(const std::vector<Sequence>& sequences, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InvalidArgument("cannot create dataset directory " + dir + ": " + ec.message());

  std::optional<Intrinsics> k;
  for (const Sequence& s : sequences) {
    for (const Frame& f : s.frames) {
      if (!k) k = f.intrinsics;
      if (!(f.intrinsics == *k)) throw InvalidArgument("write_dataset: mixed intrinsics");
    }
  }
  const Intrinsics intr = k.value_or(Intrinsics{});

  json manifest;
  manifest["version"] = 1;
  manifest["width"] = intr.width;
  manifest["height"] = intr.height;
  manifest["intrinsics"] = {{"fx", intr.fx}, {"fy", intr.fy}, {"cx", intr.cx}, {"cy", intr.cy}};
  json seqs = json::array();
  for (const Sequence& s : sequences) {
    seqs.push_back({{"id", s.id}, {"frame_count", s.frames.size()}});
    const fs::path sdir = fs::path(dir) / s.id;
    fs::create_directories(sdir, ec);
    if (ec) throw InvalidArgument("cannot create " + sdir.string() + ": " + ec.message());

    std::ofstream poses(sdir / "poses.csv", std::ios::trunc);
    if (!poses) throw InvalidArgument("cannot write " + (sdir / "poses.csv").string());
    poses << "frame_index,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n";
    for (std::size_t i = 0; i < s.frames.size(); ++i) {
      const Frame& f = s.frames[i];
      write_raster(sdir / frame_name(i, "rgb"), f.rgb.data.data(), f.rgb.data.size());
      write_raster(sdir / frame_name(i, "depth"), f.depth.data(),
                   static_cast<std::size_t>(f.depth.size()));
      if (!f.gt_pose) continue;
      poses << i;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) poses << ',' << format_double(f.gt_pose->rotation(r, c));
      }
      for (int a = 0; a < 3; ++a) poses << ',' << format_double(f.gt_pose->translation(a));
      poses << '\n';
    }
  }
  manifest["sequences"] = seqs;
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write manifest in " + dir);
  out << manifest.dump(2) << '\n';
}

std::vector<Sequence> read_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  const std::string text = read_file(manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": malformed JSON at byte offset " +
                     std::to_string(e.byte));
  }

  std::vector<Sequence> sequences;
  try {
    Intrinsics k;
    k.width = manifest.at("width");
    k.height = manifest.at("height");
    const json& in = manifest.at("intrinsics");
    k.fx = in.at("fx");
    k.fy = in.at("fy");
    k.cx = in.at("cx");
    k.cy = in.at("cy");
    for (const json& entry : manifest.at("sequences")) {
      Sequence s;
      s.id = entry.at("id").get<std::string>();
      const auto count = entry.at("frame_count").get<std::size_t>();
      const fs::path sdir = fs::path(dir) / s.id;
      s.frames.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        Frame& f = s.frames[i];
        f.intrinsics = k;
        f.rgb.height = k.height;
        f.rgb.width = k.width;
        f.rgb.data.resize(static_cast<std::size_t>(k.height) * k.width * 3);
        f.depth.resize(k.height, k.width);
        read_raster(sdir / frame_name(i, "rgb"), f.rgb.data.data(), f.rgb.data.size());
        read_raster(sdir / frame_name(i, "depth"), f.depth.data(),
                    static_cast<std::size_t>(f.depth.size()));
      }

      const fs::path pose_path = sdir / "poses.csv";
      const std::string csv = read_file(pose_path.string());
      std::istringstream lines(csv);
      std::string line;
      std::size_t offset = 0;
      bool header = true;
      while (std::getline(lines, line)) {
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (header) {
          header = false;
          continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 13) {
          throw ParseError(pose_path.string() + ": expected 13 fields at byte offset " +
                           std::to_string(line_offset));
        }
        const double idx = parse_double(fields[0], pose_path.string(), line_offset);
        if (idx < 0 || idx >= static_cast<double>(count) || idx != std::floor(idx)) {
          throw ParseError(pose_path.string() + ": frame index out of range at byte offset " +
                           std::to_string(line_offset));
        }
        Pose p;
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) {
            p.rotation(r, c) = parse_double(fields[1 + 3 * r + c], pose_path.string(), line_offset);
          }
        }
        for (int a = 0; a < 3; ++a) {
          p.translation(a) = parse_double(fields[10 + a], pose_path.string(), line_offset);
        }
        s.frames[static_cast<std::size_t>(idx)].gt_pose = p;
      }
      sequences.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  return sequences;
}

}  // namespace emp
