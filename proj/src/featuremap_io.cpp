// SPDX-License-Identifier: Apache-2.0
#include "gfss/featuremap_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "gfss/errors.hpp"

namespace gfss {
namespace {

constexpr std::size_t kHeaderBytes = 4 + 2 + 3 * 4;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(std::string_view in, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(in[at]) |
                                    (static_cast<unsigned char>(in[at + 1]) << 8));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw DataError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

std::vector<std::uint16_t> to_mask(const std::vector<std::size_t>& labels) {
  std::vector<std::uint16_t> m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = static_cast<std::uint16_t>(labels[i]);
  return m;
}

std::string indexed(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu.gfss", prefix, i);
  return buf;
}

}  // namespace

std::string encode_feature_map(const FeatureMap& map, const std::vector<std::uint16_t>* mask) {
  const std::size_t pixels = map.pixels();
  if (map.features.rows() != pixels) throw ShapeError("feature map rows differ from H*W");
  if (mask && mask->size() != pixels) throw ShapeError("mask size differs from H*W");
  std::string out;
  out.reserve(kHeaderBytes + map.features.size() * 4 + (mask ? pixels * 2 : 0));
  out.append("GFSS", 4);
  put_u16(out, kFeatureMapVersion);
  put_u32(out, checked_u32(map.height, "height"));
  put_u32(out, checked_u32(map.width, "width"));
  put_u32(out, checked_u32(map.feature_dim(), "feature dim"));
  for (double v : map.features.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (mask)
    for (std::uint16_t m : *mask) put_u16(out, m);
  return out;
}

FeatureMapFile decode_feature_map(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes || bytes.substr(0, 4) != "GFSS") throw DataError("not a GFSS feature-map file");
  const std::uint16_t version = get_u16(bytes, 4);
  if (version != kFeatureMapVersion) throw DataError("unsupported feature-map version " + std::to_string(version));
  const std::size_t H = get_u32(bytes, 6), W = get_u32(bytes, 10), F = get_u32(bytes, 14);
  const std::size_t feature_bytes = H * W * F * 4;
  const std::size_t rest = bytes.size() - kHeaderBytes;
  if (rest != feature_bytes && rest != feature_bytes + H * W * 2) {
    throw DataError("feature-map payload is " + std::to_string(rest) + " bytes; header declares " +
                    std::to_string(feature_bytes) + " (+" + std::to_string(H * W * 2) + " for a mask)");
  }
  FeatureMapFile f;
  f.map.height = H;
  f.map.width = W;
  f.map.features = Tensor(Shape::matrix(H * W, F));
  std::size_t at = kHeaderBytes;
  for (double& v : f.map.features.data()) {
    v = static_cast<double>(std::bit_cast<float>(get_u32(bytes, at)));
    at += 4;
  }
  if (rest > feature_bytes) {
    f.mask.emplace(H * W);
    for (auto& m : *f.mask) {
      m = get_u16(bytes, at);
      at += 2;
    }
  }
  return f;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return s;
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_feature_map_file(const std::filesystem::path& path, const FeatureMap& map,
                            const std::vector<std::uint16_t>* mask) {
  write_file(path, encode_feature_map(map, mask));
}

FeatureMapFile read_feature_map_file(const std::filesystem::path& path) { return decode_feature_map(read_file(path)); }

void save_episode(const std::filesystem::path& dir, const GeneratedTask& task, const Tensor& w_base_frozen,
                  const std::string& config_hash, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const Episode& ep = task.episode;
  nlohmann::ordered_json manifest;
  manifest["format"] = "gfss-episode";
  manifest["version"] = kFeatureMapVersion;
  manifest["config_hash"] = config_hash;
  manifest["seed"] = seed;
  manifest["partition"] = {{"n_base", ep.partition.n_base}, {"n_novel", ep.partition.n_novel}};
  manifest["train_histogram"] = ep.train_histogram;
  manifest["base_classifier"] = "base_classifier.gfss";
  auto entries = nlohmann::ordered_json::array();

  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    const auto& s = ep.support[i];
    std::vector<std::uint16_t> mask(s.mask.size());
    for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = s.mask[p] ? static_cast<std::uint16_t>(s.novel_class) : 0;
    const std::string name = indexed("support", i);
    write_feature_map_file(dir / name, s.map, &mask);
    entries.push_back({{"role", "support"}, {"file", name}, {"novel_class", s.novel_class}});
  }
  for (std::size_t i = 0; i < ep.query.size(); ++i) {
    const std::string name = indexed("query", i);
    const auto mask = to_mask(ep.query[i].labels);
    write_feature_map_file(dir / name, ep.query[i].map, &mask);
    entries.push_back({{"role", "query"}, {"file", name}});
  }
  for (std::size_t i = 0; i < task.base.images.size(); ++i) {
    const std::string name = indexed("base", i);
    const auto mask = to_mask(task.base.images[i].labels);
    write_feature_map_file(dir / name, task.base.images[i].map, &mask);
    entries.push_back({{"role", "base-phase"}, {"file", name}});
  }
  manifest["entries"] = entries;

  FeatureMap classifier{w_base_frozen.rows(), 1, w_base_frozen};
  write_feature_map_file(dir / "base_classifier.gfss", classifier);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

StoredEpisode load_episode(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  StoredEpisode out;
  try {
    out.config_hash = manifest.at("config_hash").get<std::string>();
    out.seed = manifest.at("seed").get<std::uint64_t>();
    Episode& ep = out.episode;
    ep.partition.n_base = manifest.at("partition").at("n_base").get<std::size_t>();
    ep.partition.n_novel = manifest.at("partition").at("n_novel").get<std::size_t>();
    ep.train_histogram = manifest.at("train_histogram").get<std::vector<double>>();
    for (const auto& e : manifest.at("entries")) {
      const std::string role = e.at("role").get<std::string>();
      const std::string file = e.at("file").get<std::string>();
      if (role == "base-phase") continue;
      FeatureMapFile f = read_feature_map_file(dir / file);
      if (!f.mask) throw DataError(file + " has no mask section");
      if (role == "support") {
        SupportSample s;
        s.novel_class = e.at("novel_class").get<std::size_t>();
        s.mask.resize(f.mask->size());
        for (std::size_t p = 0; p < s.mask.size(); ++p) s.mask[p] = (*f.mask)[p] == s.novel_class ? 1 : 0;
        s.map = std::move(f.map);
        ep.support.push_back(std::move(s));
      } else if (role == "query") {
        QuerySample q;
        q.labels.assign(f.mask->begin(), f.mask->end());
        q.map = std::move(f.map);
        ep.query.push_back(std::move(q));
        out.query_files.push_back(file);
      } else {
        throw DataError("unknown manifest role '" + role + "'");
      }
    }
    FeatureMapFile w = read_feature_map_file(dir / manifest.at("base_classifier").get<std::string>());
    out.w_base_frozen = w.map.features;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return out;
}

}  // namespace gfss
