// Copyright 2026 The StaRFM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "starfm/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "starfm/error.hpp"

namespace starfm {

static_assert(std::endian::native == std::endian::little, "byte order: little-endian host required");

namespace {

void dump(const Json& j, std::string& out) {
  switch (j.type()) {
    case Json::value_t::object: {
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // std::map: keys already sorted
        if (!first) out += ',';
        first = false;
        out += Json(it.key()).dump();
        out += ':';
        dump(it.value(), out);
      }
      out += '}';
      break;
    }
    case Json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ',';
        dump(j[i], out);
      }
      out += ']';
      break;
    }
    case Json::value_t::number_float:
      out += format_double(j.get<double>());
      break;
    default:
      out += j.dump();
  }
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

struct Reader {
  std::string_view bytes;
  std::size_t pos = 0;

  template <class T>
  T get(const char* field) {
    if (bytes.size() - pos < sizeof(T)) fail(ErrorCode::invalid_input, std::string("checkpoint: truncated at ") + field);
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n, const char* field) {
    if (bytes.size() - pos < n) fail(ErrorCode::invalid_input, std::string("checkpoint: truncated at ") + field);
    auto s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

template <class T>
std::vector<std::string> write_grid(const fs::path& stem, const Grid<T>& v, VolumeDtype dtype) {
  const std::string name = stem.filename().string();
  VolumeHeader h{v.dims, v.spacing, dtype};
  Json hj = volume_header_json(h);
  hj["payload"] = name + ".raw";
  write_file_atomic(fs::path(stem.string() + ".json"), canonical_json(hj) + "\n");
  write_file_atomic(fs::path(stem.string() + ".raw"),
                    std::string_view(reinterpret_cast<const char*>(v.data.data()), v.data.size() * sizeof(T)));
  return {name + ".json", name + ".raw"};
}

template <class T>
Grid<T> read_grid(const fs::path& stem, VolumeDtype want) {
  const fs::path hp(stem.string() + ".json");
  if (!fs::exists(hp)) fail(ErrorCode::invalid_input, "volume header not found: " + hp.string());
  Json hj;
  try {
    hj = read_json_file(hp);
  } catch (const Error& e) {
    fail(ErrorCode::invalid_input, "volume header " + hp.string() + ": " + e.what());
  }
  VolumeHeader h;
  try {
    h = parse_volume_header(hj);
  } catch (const Error& e) {
    fail(e.code(), hp.filename().string() + ": " + e.what());
  }
  if (h.dtype != want)
    fail(ErrorCode::invalid_input, "volume header " + hp.string() + ": field 'dtype' is " +
                                       std::string(to_string(h.dtype)) + ", expected " + std::string(to_string(want)));
  const fs::path rp(stem.string() + ".raw");
  if (!fs::exists(rp)) fail(ErrorCode::invalid_input, "volume payload not found: " + rp.string());
  const std::string payload = read_file(rp);
  if (payload.size() != h.dims.count() * sizeof(T))
    fail(ErrorCode::invalid_input, "volume " + rp.string() + ": payload length " + std::to_string(payload.size()) +
                                       " does not match field 'dims' (" + std::to_string(h.dims.count() * sizeof(T)) +
                                       " bytes expected)");
  Grid<T> g(h.dims, h.spacing);
  std::memcpy(g.data.data(), payload.data(), payload.size());
  return g;
}

}  // namespace

std::string format_double(double v) {
  if (!std::isfinite(v)) fail(ErrorCode::numerical, "canonical json: non-finite number");
  // "-0" would re-parse as the integer 0.
  if (v == 0.0 && std::signbit(v)) return "-0.0";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string canonical_json(const Json& j) {
  std::string out;
  dump(j, out);
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorCode::io, "read failed: " + path.string());
  return ss.str();
}

Json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::invalid_input, "file not found: " + path.string());
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::invalid_input, path.string() + ": malformed JSON: " + e.what());
  }
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorCode::io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorCode::io, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    fail(ErrorCode::io, "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorCode::io, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string to_csv(const CsvTable& rows) {
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out += ',';
      out += r[i];
    }
    out += '\n';
  }
  return out;
}

CsvTable parse_csv(std::string_view text) {
  CsvTable rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) {
      std::vector<std::string> row;
      std::size_t s = 0;
      while (true) {
        const std::size_t c = line.find(',', s);
        row.emplace_back(line.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
        if (c == std::string_view::npos) break;
        s = c + 1;
      }
      rows.push_back(std::move(row));
    }
    pos = eol + 1;
  }
  return rows;
}

std::string_view to_string(VolumeDtype d) { return d == VolumeDtype::float32 ? "float32" : "uint8"; }

Json volume_header_json(const VolumeHeader& h) {
  Json j;
  j["dims"] = {h.dims.nx, h.dims.ny, h.dims.nz};
  j["spacing"] = {h.spacing.sx, h.spacing.sy, h.spacing.sz};
  j["dtype"] = std::string(to_string(h.dtype));
  j["byte_order"] = "little";
  j["element_order"] = "x_fastest";
  return j;
}

VolumeHeader parse_volume_header(const Json& j) {
  auto bad = [](const char* field, const std::string& why) {
    fail(ErrorCode::invalid_input, std::string("volume header: field '") + field + "' " + why);
  };
  if (!j.is_object()) fail(ErrorCode::invalid_input, "volume header: not a JSON object");
  VolumeHeader h;
  auto triple = [&](const char* field) {
    if (!j.contains(field)) bad(field, "is missing");
    const Json& a = j.at(field);
    if (!a.is_array() || a.size() != 3) bad(field, "must be an array of 3 numbers");
    for (const auto& v : a)
      if (!v.is_number()) bad(field, "must be an array of 3 numbers");
    return a;
  };
  const Json& d = triple("dims");
  for (const auto& v : d)
    if (!v.is_number_integer() || v.get<std::int64_t>() <= 0) bad("dims", "must hold positive integers");
  h.dims = {d[0].get<std::size_t>(), d[1].get<std::size_t>(), d[2].get<std::size_t>()};
  const Json& s = triple("spacing");
  for (const auto& v : s)
    if (!(v.get<double>() > 0.0) || !std::isfinite(v.get<double>())) bad("spacing", "must hold positive numbers");
  h.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
  if (!j.contains("dtype") || !j["dtype"].is_string()) bad("dtype", "is missing");
  const auto dt = j["dtype"].get<std::string>();
  if (dt == "float32")
    h.dtype = VolumeDtype::float32;
  else if (dt == "uint8")
    h.dtype = VolumeDtype::uint8;
  else
    bad("dtype", "must be float32 or uint8, got " + dt);
  if (!j.contains("byte_order") || j["byte_order"] != "little") bad("byte_order", "must be \"little\"");
  if (!j.contains("element_order") || j["element_order"] != "x_fastest") bad("element_order", "must be \"x_fastest\"");
  return h;
}

std::vector<std::string> write_volume(const fs::path& stem, const VolumeGrid& v) {
  return write_grid(stem, v, VolumeDtype::float32);
}
std::vector<std::string> write_volume(const fs::path& stem, const MaskVolume& v) {
  return write_grid(stem, v, VolumeDtype::uint8);
}
VolumeGrid read_volume(const fs::path& stem) { return read_grid<float>(stem, VolumeDtype::float32); }
MaskVolume read_mask(const fs::path& stem) { return read_grid<std::uint8_t>(stem, VolumeDtype::uint8); }

std::string checkpoint_bytes(const Model& model) {
  std::string out = "SRFMCKPT";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.kind()));
  put<std::uint64_t>(out, model.dims().input);
  put<std::uint64_t>(out, model.dims().hidden);
  put<std::uint64_t>(out, model.dims().classes);
  put<double>(out, model.temperature());
  const ParamVector& p = model.params();
  put<std::uint64_t>(out, p.size());
  for (double v : p.values) put<double>(out, v);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(p.segments.size()));
  for (const auto& s : p.segments) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
    out += s.name;
    put<std::uint64_t>(out, s.offset);
    put<std::uint64_t>(out, s.length);
  }
  return out;
}

Model checkpoint_model(std::string_view bytes) {
  Reader r{bytes};
  if (r.take(8, "magic") != "SRFMCKPT") fail(ErrorCode::invalid_input, "checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    fail(ErrorCode::invalid_input, "checkpoint: unsupported version " + std::to_string(version));
  const auto kind = r.get<std::uint32_t>("kind");
  if (kind > static_cast<std::uint32_t>(ModelKind::voxel_linear))
    fail(ErrorCode::invalid_input, "checkpoint: unknown model kind " + std::to_string(kind));
  ModelDims dims;
  dims.input = r.get<std::uint64_t>("input");
  dims.hidden = r.get<std::uint64_t>("hidden");
  dims.classes = r.get<std::uint64_t>("classes");
  const double temperature = r.get<double>("temperature");
  const auto count = r.get<std::uint64_t>("parameter count");
  if (count > (bytes.size() - r.pos) / sizeof(double)) fail(ErrorCode::invalid_input, "checkpoint: truncated at parameters");
  ParamVector p;
  p.values.resize(count);
  for (auto& v : p.values) v = r.get<double>("parameters");
  const auto nseg = r.get<std::uint32_t>("segment count");
  for (std::uint32_t i = 0; i < nseg; ++i) {
    const auto len = r.get<std::uint32_t>("segment name length");
    Segment s;
    s.name = std::string(r.take(len, "segment name"));
    s.offset = r.get<std::uint64_t>("segment offset");
    s.length = r.get<std::uint64_t>("segment length");
    p.segments.push_back(std::move(s));
  }
  if (r.pos != bytes.size()) fail(ErrorCode::invalid_input, "checkpoint: trailing bytes");
  return Model::from_params(static_cast<ModelKind>(kind), dims, std::move(p), temperature);
}

void save_checkpoint(const fs::path& path, const Model& model) { write_file_atomic(path, checkpoint_bytes(model)); }

Model load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::invalid_input, "checkpoint not found: " + path.string());
  return checkpoint_model(read_file(path));
}

}  // namespace starfm
