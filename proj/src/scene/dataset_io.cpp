#include "artemis/scene/dataset_io.hpp"

#include <json.hpp>

#include "artemis/common/version.hpp"

namespace artemis {

namespace {

constexpr std::string_view kMagic = "ARTSCN01";

void put_vec2(ByteWriter& w, Vec2 v) {
  w.put(v.x);
  w.put(v.y);
}

Vec2 get_vec2(ByteReader& r) {
  const double x = r.get<double>();
  const double y = r.get<double>();
  return {x, y};
}

std::vector<char> encode_scene(const Scene& s) {
  ByteWriter w;
  w.put(s.seed);
  w.put(static_cast<std::uint8_t>(s.kind));
  w.put(static_cast<std::uint8_t>(s.behavior));
  w.put(static_cast<std::uint8_t>(s.command_mismatch ? 1 : 0));
  w.put(static_cast<std::uint8_t>(s.ego.command));
  put_vec2(w, s.ego.velocity);
  put_vec2(w, s.ego.acceleration);
  w.put(static_cast<std::uint32_t>(s.bev_tokens.dim(0)));
  w.put(static_cast<std::uint32_t>(s.bev_tokens.dim(1)));
  w.put_array(s.bev_tokens.data().data(), s.bev_tokens.size());
  w.put(static_cast<std::uint32_t>(s.semantic_map.size()));
  w.put_array(s.semantic_map.data(), s.semantic_map.size());
  w.put(static_cast<std::uint32_t>(s.agents.size()));
  for (const Agent& a : s.agents) {
    put_vec2(w, a.position);
    put_vec2(w, a.velocity);
    put_vec2(w, a.half_extent);
    w.put(a.heading);
  }
  w.put(static_cast<std::uint32_t>(s.route.size()));
  for (Vec2 p : s.route) {
    put_vec2(w, p);
  }
  for (const Pose& p : s.gt) {
    w.put(p.x);
    w.put(p.y);
    w.put(p.heading);
  }
  return std::move(w.bytes());
}

template <typename E>
E get_enum(ByteReader& r, std::size_t count, const char* what) {
  const auto v = r.get<std::uint8_t>();
  if (v >= count) {
    throw FormatError(std::string("dataset: invalid ") + what + " " + std::to_string(v));
  }
  return static_cast<E>(v);
}

Scene decode_scene(ByteReader& r, std::size_t d_feat) {
  Scene s;
  s.seed = r.get<std::uint64_t>();
  s.kind = get_enum<SceneKind>(r, kNumSceneKinds, "scene kind");
  s.behavior = get_enum<Behavior>(r, 3, "behavior");
  s.command_mismatch = get_enum<std::uint8_t>(r, 2, "mismatch flag") != 0;
  s.ego.command = get_enum<Command>(r, kNumCommands, "command");
  s.ego.velocity = get_vec2(r);
  s.ego.acceleration = get_vec2(r);
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  if (rows == 0 || cols != d_feat) {
    throw FormatError("dataset: token block " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " does not match d_feat " + std::to_string(d_feat));
  }
  std::vector<double> tokens(static_cast<std::size_t>(rows) * cols);
  r.get_array(tokens.data(), tokens.size());
  s.bev_tokens = Tensor(Shape{rows, cols}, std::move(tokens));
  const auto cells = r.get<std::uint32_t>();
  if (cells != MapGrid::kCells * MapGrid::kCells) {
    throw FormatError("dataset: semantic map has " + std::to_string(cells) + " cells");
  }
  s.semantic_map.resize(cells);
  r.get_array(s.semantic_map.data(), cells);
  const auto n_agents = r.get<std::uint32_t>();
  if (n_agents > r.remaining() / (7 * sizeof(double))) {
    throw FormatError("dataset: agent count " + std::to_string(n_agents) + " exceeds record");
  }
  for (std::uint32_t i = 0; i < n_agents; ++i) {
    Agent a;
    a.position = get_vec2(r);
    a.velocity = get_vec2(r);
    a.half_extent = get_vec2(r);
    a.heading = r.get<double>();
    s.agents.push_back(a);
  }
  const auto n_route = r.get<std::uint32_t>();
  if (n_route > r.remaining() / (2 * sizeof(double))) {
    throw FormatError("dataset: route length " + std::to_string(n_route) + " exceeds record");
  }
  for (std::uint32_t i = 0; i < n_route; ++i) {
    s.route.push_back(get_vec2(r));
  }
  for (Pose& p : s.gt) {
    p.x = r.get<double>();
    p.y = r.get<double>();
    p.heading = r.get<double>();
  }
  return s;
}

}  // namespace

std::vector<char> serialize_dataset(const Dataset& d) {
  nlohmann::ordered_json header;
  header["version"] = d.version;
  header["seed"] = d.seed;
  header["n"] = d.scenes.size();
  header["d_feat"] = d.d_feat;
  header["c_bev"] = kBevTokens;
  header["mismatch_rate"] = d.mismatch_rate;
  header["config_hash"] = d.config_hash();
  header["tool_version"] = kToolVersion;
  const std::string text = header.dump();

  ByteWriter w;
  w.put_bytes(kMagic);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  for (const Scene& s : d.scenes) {
    const auto rec = encode_scene(s);
    w.put(static_cast<std::uint32_t>(rec.size()));
    w.put_array(rec.data(), rec.size());
  }
  return std::move(w.bytes());
}

Dataset deserialize_dataset(const std::vector<char>& bytes) {
  ByteReader r(bytes.data(), bytes.size(), "dataset");
  if (r.get_bytes(kMagic.size()) != kMagic) {
    throw FormatError("dataset: bad magic, not a scene dataset file");
  }
  const auto header_len = r.get<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.get_bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: malformed header: ") + e.what());
  }
  Dataset d;
  std::size_t n = 0;
  try {
    d.version = header.at("version").get<std::string>();
    if (d.version != kGeneratorVersion) {
      throw VersionError("dataset: version '" + d.version + "' is incompatible with '" + kGeneratorVersion + "'");
    }
    d.seed = header.at("seed").get<std::uint64_t>();
    d.d_feat = header.at("d_feat").get<std::size_t>();
    n = header.at("n").get<std::size_t>();
    d.mismatch_rate = header.at("mismatch_rate").get<double>();
    if (header.at("c_bev").get<std::size_t>() != kBevTokens) {
      throw FormatError("dataset: c_bev " + header.at("c_bev").dump() + " is not supported");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: header field error: ") + e.what());
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = r.get<std::uint32_t>();
    const std::string_view rec = r.get_bytes(len);
    ByteReader rr(rec.data(), rec.size(), "dataset record " + std::to_string(i));
    d.scenes.push_back(decode_scene(rr, d.d_feat));
    if (rr.remaining() != 0) {
      throw FormatError("dataset: record " + std::to_string(i) + " has trailing bytes");
    }
  }
  if (r.remaining() != 0) {
    throw FormatError("dataset: trailing bytes after " + std::to_string(n) + " records");
  }
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) { write_file(path, serialize_dataset(d)); }

Dataset load_dataset(const std::string& path) { return deserialize_dataset(read_file(path)); }

}  // namespace artemis
