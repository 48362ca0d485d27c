#pragma once

// File formats.
//
// Dataset (JSON lines, one demonstration per line):
//   {"version":1,"shape_kind":"T","dt":1,"target":[x,y,theta],
//    "states":[[obj_x,obj_y,obj_theta,pusher_x,pusher_y],...],
//    "controls":[[ux,uy],...],"contact":[true,...],"success":true}
//
// Checkpoint (binary, little endian):
//   offset 0   8 bytes  magic "NCPROBE\0"
//   offset 8   u32      format version
//   offset 12  u64      header length L
//   offset 20  L bytes  JSON header: {"version", "networks": [{"name",
//                       "sizes", "activations"}], "seed", "epoch", "meta"}
//   then       f64[]    parameters; per network, per layer: weight (row
//                       major, out x in) then bias
//   end        u64      parameter count
//
// Metrics: CSV with a header row.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncprobe/demo.hpp"
#include "ncprobe/mlp.hpp"

namespace ncprobe {

using json = nlohmann::json;

inline constexpr int kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'N', 'C', 'P', 'R', 'O', 'B', 'E', '\0'};

enum class FormatErrorCode { kIo, kSyntax, kSchema, kVersionMismatch, kTruncated, kBadMagic, kNonFinite };

inline const char* to_string(FormatErrorCode c) {
  switch (c) {
    case FormatErrorCode::kIo: return "io";
    case FormatErrorCode::kSyntax: return "syntax";
    case FormatErrorCode::kSchema: return "schema";
    case FormatErrorCode::kVersionMismatch: return "version-mismatch";
    case FormatErrorCode::kTruncated: return "truncated";
    case FormatErrorCode::kBadMagic: return "bad-magic";
    case FormatErrorCode::kNonFinite: return "non-finite";
  }
  return "?";
}

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorCode code, const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what + " [" + to_string(code) + "]"), code_(code) {}
  FormatErrorCode code() const { return code_; }

 private:
  FormatErrorCode code_;
};

/// Writes `data` to `path` through a temporary file and a rename.
inline void write_atomic(const std::filesystem::path& path, const std::string& data) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorCode::kIo, path.string(), "cannot open for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw FormatError(FormatErrorCode::kIo, path.string(), "write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorCode::kIo, path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- dataset

inline json demo_to_json(const Demonstration& d) {
  json states = json::array();
  for (const auto& s : d.states) states.push_back({s.object.x, s.object.y, s.object.theta, s.pusher.x(), s.pusher.y()});
  json controls = json::array();
  for (const auto& u : d.controls) controls.push_back({u.x(), u.y()});
  json contact = json::array();
  for (bool c : d.contact) contact.push_back(c);
  return {{"version", kDatasetVersion},
          {"shape_kind", to_string(d.shape)},
          {"dt", d.dt},
          {"target", {d.target.x, d.target.y, d.target.theta}},
          {"states", std::move(states)},
          {"controls", std::move(controls)},
          {"contact", std::move(contact)},
          {"success", d.success}};
}

namespace detail {

inline double number_at(const json& j, const std::string& where) {
  if (!j.is_number()) {
    const FormatErrorCode code = j.is_null() ? FormatErrorCode::kNonFinite : FormatErrorCode::kSchema;
    throw FormatError(code, where, j.is_null() ? "missing or non-finite number" : "expected a number");
  }
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw FormatError(FormatErrorCode::kNonFinite, where, "non-finite number");
  return v;
}

inline const json& field(const json& j, const char* name, const std::string& where) {
  if (!j.is_object() || !j.contains(name)) throw FormatError(FormatErrorCode::kSchema, where, std::string("missing field '") + name + "'");
  return j.at(name);
}

inline const json& array_of(const json& j, std::size_t n, const std::string& where) {
  if (!j.is_array()) throw FormatError(FormatErrorCode::kSchema, where, "expected an array");
  if (n != 0 && j.size() != n) {
    throw FormatError(FormatErrorCode::kSchema, where,
                      "expected " + std::to_string(n) + " entries, found " + std::to_string(j.size()));
  }
  return j;
}

}  // namespace detail

inline Demonstration demo_from_json(const json& j, const std::string& where) {
  using detail::array_of;
  using detail::field;
  using detail::number_at;
  const json& version = field(j, "version", where);
  if (!version.is_number_integer() || version.get<int>() != kDatasetVersion) {
    throw FormatError(FormatErrorCode::kVersionMismatch, where + ".version",
                      "expected version " + std::to_string(kDatasetVersion) + ", found " + version.dump());
  }
  Demonstration d;
  const json& kind = field(j, "shape_kind", where);
  if (!kind.is_string()) throw FormatError(FormatErrorCode::kSchema, where + ".shape_kind", "expected a string");
  try {
    d.shape = shape_from_string(kind.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorCode::kSchema, where + ".shape_kind", e.what());
  }
  d.dt = number_at(field(j, "dt", where), where + ".dt");
  const json& tgt = array_of(field(j, "target", where), 3, where + ".target");
  d.target = Pose2(number_at(tgt[0], where + ".target[0]"), number_at(tgt[1], where + ".target[1]"),
                   number_at(tgt[2], where + ".target[2]"));
  const json& states = array_of(field(j, "states", where), 0, where + ".states");
  for (std::size_t i = 0; i < states.size(); ++i) {
    const std::string w = where + ".states[" + std::to_string(i) + "]";
    const json& s = array_of(states[i], 5, w);
    double v[5];
    for (int k = 0; k < 5; ++k) v[k] = number_at(s[static_cast<std::size_t>(k)], w + "[" + std::to_string(k) + "]");
    d.states.push_back({Pose2(v[0], v[1], v[2]), Vec2(v[3], v[4])});
  }
  const json& controls = array_of(field(j, "controls", where), 0, where + ".controls");
  for (std::size_t i = 0; i < controls.size(); ++i) {
    const std::string w = where + ".controls[" + std::to_string(i) + "]";
    const json& u = array_of(controls[i], 2, w);
    d.controls.emplace_back(number_at(u[0], w + "[0]"), number_at(u[1], w + "[1]"));
  }
  const json& contact = array_of(field(j, "contact", where), 0, where + ".contact");
  for (std::size_t i = 0; i < contact.size(); ++i) {
    if (!contact[i].is_boolean()) {
      throw FormatError(FormatErrorCode::kSchema, where + ".contact[" + std::to_string(i) + "]", "expected a boolean");
    }
    d.contact.push_back(contact[i].get<bool>());
  }
  const json& success = field(j, "success", where);
  if (!success.is_boolean()) throw FormatError(FormatErrorCode::kSchema, where + ".success", "expected a boolean");
  d.success = success.get<bool>();
  if (d.states.size() != d.controls.size() + 1 || d.contact.size() != d.states.size()) {
    throw FormatError(FormatErrorCode::kSchema, where,
                      "inconsistent lengths: " + std::to_string(d.states.size()) + " states, " +
                          std::to_string(d.controls.size()) + " controls, " + std::to_string(d.contact.size()) +
                          " contact flags");
  }
  return d;
}

inline std::string dataset_to_string(const std::vector<Demonstration>& demos) {
  std::string out;
  for (const auto& d : demos) {
    out += demo_to_json(d).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Demonstration> dataset_from_string(const std::string& text, const std::string& name = "dataset") {
  std::vector<Demonstration> demos;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    const std::string line = text.substr(pos, end - pos);
    const std::string where = name + ":" + std::to_string(line_no);
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw FormatError(FormatErrorCode::kSyntax, where + " (byte " + std::to_string(pos + e.byte - 1) + ")", e.what());
      }
      demos.push_back(demo_from_json(j, where));
    }
    pos = end + 1;
  }
  return demos;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<Demonstration>& demos) {
  write_atomic(path, dataset_to_string(demos));
}

inline std::vector<Demonstration> load_dataset(const std::filesystem::path& path) {
  return dataset_from_string(read_file(path), path.string());
}

// ------------------------------------------------------------- checkpoint

struct Checkpoint {
  std::vector<std::pair<std::string, Network>> networks;
  std::uint64_t seed = 0;
  int epoch = 0;
  json meta = json::object();

  const Network& network(const std::string& name) const {
    for (const auto& [n, net] : networks)
      if (n == name) return net;
    throw std::out_of_range("checkpoint has no network named '" + name + "'");
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(const std::string& data, std::string name) : data_(data), name_(std::move(name)) {}
  std::size_t offset() const { return pos_; }
  std::string where() const { return name_ + " (byte " + std::to_string(pos_) + ")"; }

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(FormatErrorCode::kTruncated, where(),
                        std::string("truncated while reading ") + what + ": need " + std::to_string(n) +
                            " bytes, " + std::to_string(data_.size() - pos_) + " left");
    }
  }
  std::uint64_t u(int bytes, const char* what) {
    need(static_cast<std::size_t>(bytes), what);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  double f64(const char* what) {
    const std::size_t at = pos_;
    const double v = std::bit_cast<double>(u(8, what));
    if (!std::isfinite(v)) {
      throw FormatError(FormatErrorCode::kNonFinite, name_ + " (byte " + std::to_string(at) + ")",
                        std::string("non-finite ") + what);
    }
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string checkpoint_to_string(const Checkpoint& ck) {
  json nets = json::array();
  for (const auto& [name, net] : ck.networks) {
    json acts = json::array();
    for (const auto& l : net.layers) acts.push_back(to_string(l.activation));
    nets.push_back({{"name", name}, {"sizes", net.layer_sizes()}, {"activations", acts}});
  }
  const json header = {{"version", kCheckpointVersion},
                       {"networks", nets},
                       {"seed", ck.seed},
                       {"epoch", ck.epoch},
                       {"meta", ck.meta}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, h.size());
  out += h;
  std::uint64_t count = 0;
  for (const auto& [name, net] : ck.networks) {
    for (const auto& l : net.layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::put_f64(out, l.weight(r, c));
      for (Eigen::Index c = 0; c < l.bias.cols(); ++c) detail::put_f64(out, l.bias(0, c));
      count += static_cast<std::uint64_t>(l.weight.size() + l.bias.size());
    }
  }
  detail::put_u64(out, count);
  return out;
}

inline Checkpoint checkpoint_from_string(const std::string& data, const std::string& name = "checkpoint") {
  detail::Reader rd(data, name);
  const std::string magic = rd.bytes(8, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError(FormatErrorCode::kBadMagic, name + " (byte 0)", "not a checkpoint file (bad magic)");
  }
  const std::size_t version_at = rd.offset();
  const auto version = static_cast<std::uint32_t>(rd.u(4, "format version"));
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorCode::kVersionMismatch, name + " (byte " + std::to_string(version_at) + ")",
                      "checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const std::uint64_t header_len = rd.u(8, "header length");
  const std::size_t header_at = rd.offset();
  const std::string text = rd.bytes(header_len, "JSON header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(FormatErrorCode::kSyntax, name + " (byte " + std::to_string(header_at + e.byte - 1) + ")",
                      std::string("corrupt header: ") + e.what());
  }
  const std::string hw = name + " (header at byte " + std::to_string(header_at) + ")";
  Checkpoint ck;
  try {
    if (header.at("version").get<std::uint32_t>() != version) {
      throw FormatError(FormatErrorCode::kVersionMismatch, hw, "header version disagrees with the container");
    }
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.epoch = header.at("epoch").get<int>();
    ck.meta = header.value("meta", json::object());
    for (const auto& n : header.at("networks")) {
      const auto sizes = n.at("sizes").get<std::vector<int>>();
      const auto acts = n.at("activations").get<std::vector<std::string>>();
      if (sizes.size() < 2 || acts.size() + 1 != sizes.size()) {
        throw FormatError(FormatErrorCode::kSchema, hw, "network sizes and activations disagree");
      }
      Network net;
      for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        if (sizes[l] < 1 || sizes[l + 1] < 1) throw FormatError(FormatErrorCode::kSchema, hw, "non-positive layer size");
        Layer layer;
        layer.activation = activation_from_string(acts[l]);
        layer.weight.resize(sizes[l + 1], sizes[l]);
        layer.bias.resize(1, sizes[l + 1]);
        net.layers.push_back(std::move(layer));
      }
      ck.networks.emplace_back(n.at("name").get<std::string>(), std::move(net));
    }
  } catch (const json::exception& e) {
    throw FormatError(FormatErrorCode::kSchema, hw, std::string("bad header field: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorCode::kSchema, hw, e.what());
  }
  std::uint64_t count = 0;
  for (auto& [n, net] : ck.networks) {
    for (auto& l : net.layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = rd.f64("weight");
      for (Eigen::Index c = 0; c < l.bias.cols(); ++c) l.bias(0, c) = rd.f64("bias");
      count += static_cast<std::uint64_t>(l.weight.size() + l.bias.size());
    }
  }
  const std::size_t trailer_at = rd.offset();
  const std::uint64_t stored = rd.u(8, "parameter count");
  if (stored != count) {
    throw FormatError(FormatErrorCode::kSchema, name + " (byte " + std::to_string(trailer_at) + ")",
                      "parameter count " + std::to_string(stored) + " does not match header (" +
                          std::to_string(count) + ")");
  }
  if (!rd.at_end()) throw FormatError(FormatErrorCode::kSchema, rd.where(), "trailing bytes after payload");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_atomic(path, checkpoint_to_string(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_string(read_file(path), path.string());
}

// ---------------------------------------------------------------- metrics

/// Shortest decimal text that reads back to the same double.
inline std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(const std::vector<double>& row) {
    std::vector<std::string> cells;
    cells.reserve(row.size());
    for (double v : row) cells.push_back(format_number(v));
    add(std::move(cells));
  }

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) {
      throw DimensionError("csv row has " + std::to_string(row.size()) + " cells, header has " +
                           std::to_string(header_.size()));
    }
    rows_.push_back(std::move(row));
  }

  std::size_t rows() const { return rows_.size(); }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  void save(const std::filesystem::path& path) const { write_atomic(path, str()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace ncprobe
