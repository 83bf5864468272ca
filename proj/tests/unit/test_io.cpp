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

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "starfm/io.hpp"
#include "support/gen.hpp"
#include "support/tmpdir.hpp"

using namespace starfm;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string error_of(const std::function<void()>& f, ErrorCode* code = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (code) *code = e.code();
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("canonical json sorts keys and prints floats round-trippably") {
  const Json j = Json::parse(R"({"b": 1, "a": [0.1, 2.5e-300, -0.0], "c": {"z": true, "y": null}})");
  const std::string s = canonical_json(j);
  CHECK(s == R"({"a":[0.10000000000000001,2.5e-300,-0.0],"b":1,"c":{"y":null,"z":true}})");
  CHECK(canonical_json(Json::parse(s)) == s);
  gen::Source g(60);
  for (int i = 0; i < 1000; ++i) {
    const double v = g.normal() * std::pow(10.0, g.uniform(-30, 30));
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK_THROWS_AS(canonical_json(Json(std::numeric_limits<double>::infinity())), Error);
}

TEST_CASE("csv round trip") {
  const CsvTable t{{"a", "b"}, {"1", "x"}, {"", "3.5"}};
  const std::string s = to_csv(t);
  CHECK(s == "a,b\n1,x\n,3.5\n");
  CHECK(parse_csv(s) == t);
  CHECK(parse_csv("a,b\r\n1,2\r\n") == CsvTable{{"a", "b"}, {"1", "2"}});
}

TEST_CASE("atomic write and checksum") {
  gen::TempDir dir("io_atomic");
  const fs::path p = dir.path / "sub" / "f.txt";
  write_file_atomic(p, "hello");
  CHECK(read_file(p) == "hello");
  write_file_atomic(p, "bye");
  CHECK(read_file(p) == "bye");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(p.parent_path())) ++files;
  CHECK(files == 1);
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("missing and malformed json inputs are invalid input") {
  gen::TempDir dir("io_json");
  ErrorCode code{};
  CHECK(error_of([&] { read_json_file(dir.path / "nope.json"); }, &code).find("not found") != std::string::npos);
  CHECK(code == ErrorCode::invalid_input);
  write_text(dir.path / "bad.json", "{\"a\":");
  CHECK(error_of([&] { read_json_file(dir.path / "bad.json"); }, &code).find("malformed") != std::string::npos);
  CHECK(code == ErrorCode::invalid_input);
}

TEST_CASE("volume round trip is bit-exact") {
  gen::TempDir dir("io_vol");
  gen::Source g(61);
  VolumeGrid v = g.image({5, 3, 4});
  v.spacing = {0.5, 1.25, 3.0};
  v.data[0] = -0.0f;
  v.data[1] = std::numeric_limits<float>::denorm_min();
  v.data[2] = std::numeric_limits<float>::max();
  const auto names = write_volume(dir.path / "img", v);
  CHECK(names == std::vector<std::string>{"img.json", "img.raw"});
  const VolumeGrid r = read_volume(dir.path / "img");
  CHECK(r.dims == v.dims);
  CHECK(r.spacing == v.spacing);
  REQUIRE(r.data.size() == v.data.size());
  CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * sizeof(float)) == 0);
  CHECK(fs::file_size(dir.path / "img.raw") == 60 * sizeof(float));

  const MaskVolume m = g.mask({4, 4, 2}, 0.5);
  write_volume(dir.path / "m", m);
  CHECK(read_mask(dir.path / "m").data == m.data);
  CHECK_THROWS_AS(read_mask(dir.path / "img"), Error);
}

TEST_CASE("volume header fields are validated by name") {
  VolumeHeader h{{4, 5, 6}, {1, 1, 2}, VolumeDtype::uint8};
  const Json good = volume_header_json(h);
  CHECK(good["byte_order"] == "little");
  CHECK(good["element_order"] == "x_fastest");
  const VolumeHeader back = parse_volume_header(good);
  CHECK(back.dims == h.dims);
  CHECK(back.spacing == h.spacing);

  auto field_error = [&](const char* field, const Json& value) {
    Json j = good;
    if (value.is_discarded())
      j.erase(field);
    else
      j[field] = value;
    return error_of([&] { parse_volume_header(j); });
  };
  CHECK(field_error("dims", Json::array({4, 0, 6})).find("'dims'") != std::string::npos);
  CHECK(field_error("dims", Json::value_t::discarded).find("'dims'") != std::string::npos);
  CHECK(field_error("spacing", Json::array({1, -1, 1})).find("'spacing'") != std::string::npos);
  CHECK(field_error("dtype", "int16").find("'dtype'") != std::string::npos);
  CHECK(field_error("byte_order", "big").find("'byte_order'") != std::string::npos);
  CHECK(field_error("element_order", "z_fastest").find("'element_order'") != std::string::npos);
}

TEST_CASE("corrupt volume files name the file and field") {
  gen::TempDir dir("io_corrupt");
  gen::Source g(62);
  write_volume(dir.path / "v", g.image({3, 3, 3}));
  Json h = read_json_file(dir.path / "v.json");
  h["dims"] = Json::array({3, 3, 4});
  write_text(dir.path / "v.json", h.dump());
  ErrorCode code{};
  std::string msg = error_of([&] { read_volume(dir.path / "v"); }, &code);
  CHECK(code == ErrorCode::invalid_input);
  CHECK(msg.find("'dims'") != std::string::npos);

  write_text(dir.path / "v.json", "{\"dims\": [3,3,3], \"spacing\": [1,1,1]}");
  msg = error_of([&] { read_volume(dir.path / "v"); }, &code);
  CHECK(msg.find("v.json") != std::string::npos);
  CHECK(msg.find("'dtype'") != std::string::npos);

  fs::remove(dir.path / "v.raw");
  CHECK_THROWS_AS(read_volume(dir.path / "v"), Error);
}

TEST_CASE("checkpoint round trip") {
  gen::TempDir dir("io_ckpt");
  for (ModelKind k : {ModelKind::linear_softmax, ModelKind::mlp1, ModelKind::two_tower, ModelKind::voxel_linear}) {
    const ModelDims d = k == ModelKind::voxel_linear ? ModelDims{3, 0, 2} : ModelDims{4, 6, 3};
    const Model m = Model::create(k, d, 9, 0.25);
    const fs::path p = dir.path / (std::string(to_string(k)) + ".ckpt");
    save_checkpoint(p, m);
    const Model r = load_checkpoint(p);
    CHECK(r.kind() == k);
    CHECK(r.dims() == d);
    CHECK(r.temperature() == 0.25);
    CHECK(r.params().values == m.params().values);
    CHECK(r.params().segments == m.params().segments);
    CHECK(checkpoint_bytes(r) == read_file(p));
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const Model m = Model::create(ModelKind::mlp1, {3, 2, 2}, 1);
  const std::string b = checkpoint_bytes(m);
  CHECK(b.substr(0, 8) == "SRFMCKPT");
  CHECK_THROWS_AS(checkpoint_model("XXXXXXXX" + b.substr(8)), Error);
  CHECK_THROWS_AS(checkpoint_model(b.substr(0, b.size() - 3)), Error);
  CHECK_THROWS_AS(checkpoint_model(b + "x"), Error);
  std::string v = b;
  v[8] = 9;
  CHECK(error_of([&] { checkpoint_model(v); }).find("version") != std::string::npos);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), Error);
}
