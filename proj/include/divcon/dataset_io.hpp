#pragma once

#include "divcon/image.hpp"
#include "divcon/scenes.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace divcon {

// On-disk dataset: <dir>/manifest.json plus one PPM per frame. The manifest
// holds version, width, height, focal (pixels), frames [{file, transform,
// split}], t_near, t_far and background. `transform` is the 4x4 row-major
// camera-to-world matrix with the camera looking down its -z axis.

inline constexpr int kManifestVersion = 1;

inline nlohmann::json manifest_json(const DatasetBundle& data, const std::vector<std::string>& files) {
  if (data.cameras.empty()) fail(ErrorCode::InvalidArgument, "dataset has no frames");
  const Intrinsics& k = data.cameras.front().intrinsics();
  nlohmann::json j;
  j["version"] = kManifestVersion;
  j["width"] = k.width;
  j["height"] = k.height;
  j["focal"] = k.focal;
  j["cx"] = k.cx;
  j["cy"] = k.cy;
  j["t_near"] = data.t_near;
  j["t_far"] = data.t_far;
  j["background"] = data.background == Background::White ? "white" : "black";
  j["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < data.cameras.size(); ++i) {
    const Camera& cam = data.cameras[i];
    nlohmann::json t = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        if (r == 3) t.push_back(c == 3 ? 1.0 : 0.0);
        else t.push_back(c == 3 ? cam.center()[r] : cam.rotation()(r, c));
      }
    j["frames"].push_back({{"file", files[i]}, {"transform", t}, {"split", std::string(to_string(data.splits[i]))}});
  }
  return j;
}

inline void save_dataset(const DatasetBundle& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    std::ostringstream name;
    name << to_string(data.splits[i]) << '_' << std::setw(3) << std::setfill('0') << i << ".ppm";
    files.push_back(name.str());
    write_ppm(data.images[i], (std::filesystem::path(dir) / files.back()).string());
  }
  std::ofstream out(std::filesystem::path(dir) / "manifest.json");
  if (!out) fail(ErrorCode::Io, "cannot write manifest in " + dir);
  out << manifest_json(data, files).dump(2) << '\n';
}

inline DatasetBundle load_dataset(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  DatasetBundle data;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("version").get<int>() != kManifestVersion) fail(ErrorCode::BadConfig, "unsupported manifest version");
    Intrinsics k;
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.focal = j.at("focal").get<double>();
    k.cx = j.value("cx", 0.5 * k.width);
    k.cy = j.value("cy", 0.5 * k.height);
    data.t_near = j.at("t_near").get<double>();
    data.t_far = j.at("t_far").get<double>();
    const std::string bg = j.value("background", std::string("black"));
    if (bg != "black" && bg != "white") fail(ErrorCode::BadConfig, "background must be black or white");
    data.background = bg == "white" ? Background::White : Background::Black;
    for (const auto& f : j.at("frames")) {
      const auto& t = f.at("transform");
      if (t.size() != 16) fail(ErrorCode::BadConfig, "transform must have 16 entries");
      Mat3 r;
      Vec3 c;
      for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) r(row, col) = t[row * 4 + col].get<double>();
        c[row] = t[row * 4 + 3].get<double>();
      }
      const std::string split = f.at("split").get<std::string>();
      if (split != "train" && split != "heldout") fail(ErrorCode::BadConfig, "split must be train or heldout");
      Image img = read_ppm((std::filesystem::path(dir) / f.at("file").get<std::string>()).string());
      if (img.width != k.width || img.height != k.height) fail(ErrorCode::ShapeMismatch, "frame size differs from manifest");
      data.cameras.emplace_back(r, c, k);
      data.images.push_back(std::move(img));
      data.splits.push_back(split == "train" ? Split::Train : Split::Heldout);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadConfig, std::string("malformed manifest: ") + e.what());
  }
  return data;
}

}  // namespace divcon
