// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#include "pointblend/scene_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pointblend/compositor.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary readers assume a little-endian host");

namespace pointblend::io {

namespace fs = std::filesystem;
using nlohmann::json;

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "missing-file";
    case ErrorKind::MalformedHeader: return "malformed-header";
    case ErrorKind::UnsupportedLayout: return "unsupported-layout";
    case ErrorKind::TruncatedBody: return "truncated-body";
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::BadVersion: return "bad-version";
    case ErrorKind::SizeMismatch: return "size-mismatch";
    case ErrorKind::UnsupportedImage: return "unsupported-image";
    case ErrorKind::NonOrthonormalRotation: return "non-orthonormal-rotation";
    case ErrorKind::ParseError: return "parse-error";
    case ErrorKind::BadManifest: return "bad-manifest";
  }
  return "unknown";
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void require_exists(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, "no such file: " + path.string());
}

// ---------------------------------------------------------------------------
// Polygon file format
// ---------------------------------------------------------------------------

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

std::size_t ply_type_size(PlyType t) {
  switch (t) {
    case PlyType::I8:
    case PlyType::U8: return 1;
    case PlyType::I16:
    case PlyType::U16: return 2;
    case PlyType::I32:
    case PlyType::U32:
    case PlyType::F32: return 4;
    case PlyType::F64: return 8;
  }
  return 0;
}

bool parse_ply_type(const std::string& token, PlyType* out) {
  if (token == "char" || token == "int8") *out = PlyType::I8;
  else if (token == "uchar" || token == "uint8") *out = PlyType::U8;
  else if (token == "short" || token == "int16") *out = PlyType::I16;
  else if (token == "ushort" || token == "uint16") *out = PlyType::U16;
  else if (token == "int" || token == "int32") *out = PlyType::I32;
  else if (token == "uint" || token == "uint32") *out = PlyType::U32;
  else if (token == "float" || token == "float32") *out = PlyType::F32;
  else if (token == "double" || token == "float64") *out = PlyType::F64;
  else return false;
  return true;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::F32;
  bool is_list = false;
  PlyType count_type = PlyType::U8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

struct PlyHeader {
  bool binary = false;
  std::vector<PlyElement> elements;
};

PlyHeader parse_ply_header(std::istream& in, const fs::path& path) {
  auto fail = [&](const std::string& why) -> Error {
    return Error(ErrorKind::MalformedHeader, path.string() + ": " + why);
  };

  std::string line;
  if (!std::getline(in, line)) throw fail("empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "ply") throw fail("missing 'ply' magic line");

  PlyHeader header;
  bool have_format = false;
  bool done = false;
  while (!done) {
    if (!std::getline(in, line)) throw fail("header ends before end_header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string keyword;
    if (!(ls >> keyword)) continue;  // blank line
    if (keyword == "comment" || keyword == "obj_info") continue;
    if (keyword == "format") {
      std::string kind, version;
      if (!(ls >> kind >> version)) throw fail("malformed format line");
      if (version != "1.0") throw fail("unsupported format version " + version);
      if (kind == "ascii") header.binary = false;
      else if (kind == "binary_little_endian") header.binary = true;
      else if (kind == "binary_big_endian")
        throw Error(ErrorKind::UnsupportedLayout, path.string() + ": big-endian bodies are not supported");
      else throw fail("unknown format '" + kind + "'");
      have_format = true;
    } else if (keyword == "element") {
      std::string name;
      long long count = -1;
      if (!(ls >> name >> count) || count < 0) throw fail("malformed element line");
      header.elements.push_back({name, static_cast<std::size_t>(count), {}});
    } else if (keyword == "property") {
      if (header.elements.empty()) throw fail("property before any element");
      PlyProperty prop;
      std::string first;
      if (!(ls >> first)) throw fail("malformed property line");
      if (first == "list") {
        prop.is_list = true;
        std::string count_type, value_type;
        if (!(ls >> count_type >> value_type >> prop.name)) throw fail("malformed list property");
        if (!parse_ply_type(count_type, &prop.count_type) || !parse_ply_type(value_type, &prop.type))
          throw fail("unknown property type in list");
      } else {
        if (!parse_ply_type(first, &prop.type)) throw fail("unknown property type '" + first + "'");
        if (!(ls >> prop.name)) throw fail("property has no name");
      }
      header.elements.back().properties.push_back(std::move(prop));
    } else if (keyword == "end_header") {
      done = true;
    } else {
      throw fail("unexpected header keyword '" + keyword + "'");
    }
  }
  if (!have_format) throw fail("missing format line");
  return header;
}

class BinaryCursor {
 public:
  BinaryCursor(const unsigned char* data, std::size_t size, const fs::path& path)
      : data_(data), size_(size), path_(path) {}

  const unsigned char* take(std::size_t bytes) {
    if (pos_ + bytes > size_)
      throw Error(ErrorKind::TruncatedBody, path_.string() + ": body ends mid-element");
    const unsigned char* p = data_ + pos_;
    pos_ += bytes;
    return p;
  }

  double read_value(PlyType t) {
    const unsigned char* p = take(ply_type_size(t));
    switch (t) {
      case PlyType::I8: return static_cast<double>(static_cast<std::int8_t>(p[0]));
      case PlyType::U8: return static_cast<double>(p[0]);
      case PlyType::I16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
      case PlyType::U16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
      case PlyType::I32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
      case PlyType::U32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
      case PlyType::F32: { float v; std::memcpy(&v, p, 4); return v; }
      case PlyType::F64: { double v; std::memcpy(&v, p, 8); return v; }
    }
    return 0.0;
  }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  const fs::path& path_;
};

double ascii_value(std::istream& in, const fs::path& path) {
  double v;
  if (!(in >> v))
    throw Error(ErrorKind::TruncatedBody, path.string() + ": body ends mid-element");
  return v;
}

}  // namespace

PointCloud load_point_cloud(const fs::path& path) {
  require_exists(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  const PlyHeader header = parse_ply_header(in, path);

  const PlyElement* vertex = nullptr;
  for (const auto& e : header.elements)
    if (e.name == "vertex") {
      vertex = &e;
      break;
    }
  if (vertex == nullptr)
    throw Error(ErrorKind::UnsupportedLayout, path.string() + ": no vertex element");
  if (vertex->count == 0)
    throw Error(ErrorKind::UnsupportedLayout, path.string() + ": vertex element declares zero vertices");

  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < vertex->properties.size(); ++i) {
    const PlyProperty& p = vertex->properties[i];
    if (p.is_list) continue;
    if (p.name == "x") ix = static_cast<int>(i);
    else if (p.name == "y") iy = static_cast<int>(i);
    else if (p.name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0)
    throw Error(ErrorKind::UnsupportedLayout,
                path.string() + ": vertex element lacks scalar x/y/z properties");

  PointCloud cloud;
  cloud.positions.resize(vertex->count);

  if (header.binary) {
    std::vector<unsigned char> body((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    BinaryCursor cursor(body.data(), body.size(), path);
    for (const auto& element : header.elements) {
      const bool is_vertex = &element == vertex;
      for (std::size_t n = 0; n < element.count; ++n) {
        double xyz[3] = {0, 0, 0};
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const PlyProperty& prop = element.properties[p];
          if (prop.is_list) {
            const double count = cursor.read_value(prop.count_type);
            for (long long k = 0; k < static_cast<long long>(count); ++k)
              cursor.read_value(prop.type);
          } else {
            const double v = cursor.read_value(prop.type);
            if (is_vertex) {
              if (static_cast<int>(p) == ix) xyz[0] = v;
              else if (static_cast<int>(p) == iy) xyz[1] = v;
              else if (static_cast<int>(p) == iz) xyz[2] = v;
            }
          }
        }
        if (is_vertex) cloud.positions[n] = {xyz[0], xyz[1], xyz[2]};
      }
      if (is_vertex) break;  // later elements are irrelevant to point loading
    }
  } else {
    for (const auto& element : header.elements) {
      const bool is_vertex = &element == vertex;
      for (std::size_t n = 0; n < element.count; ++n) {
        double xyz[3] = {0, 0, 0};
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const PlyProperty& prop = element.properties[p];
          if (prop.is_list) {
            const double count = ascii_value(in, path);
            for (long long k = 0; k < static_cast<long long>(count); ++k) ascii_value(in, path);
          } else {
            const double v = ascii_value(in, path);
            if (is_vertex) {
              if (static_cast<int>(p) == ix) xyz[0] = v;
              else if (static_cast<int>(p) == iy) xyz[1] = v;
              else if (static_cast<int>(p) == iz) xyz[2] = v;
            }
          }
        }
        if (is_vertex) cloud.positions[n] = {xyz[0], xyz[1], xyz[2]};
      }
      if (is_vertex) break;
    }
  }

  try {
    cloud.validate();
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
  return cloud;
}

void save_point_cloud(const PointCloud& cloud, const fs::path& path, bool binary) {
  cloud.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << "ply\n";
  out << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
  out << "element vertex " << cloud.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "end_header\n";
  if (binary) {
    for (const auto& p : cloud.positions) {
      const double xyz[3] = {p.x(), p.y(), p.z()};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
  } else {
    for (const auto& p : cloud.positions)
      out << fmt17(p.x()) << " " << fmt17(p.y()) << " " << fmt17(p.z()) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Cameras
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kCameraHeader = "pointblend-cameras 1";
}

std::vector<NamedCamera> load_cameras(const fs::path& path) {
  require_exists(path);
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line))
    throw Error(ErrorKind::MalformedHeader, path.string() + ": empty camera file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCameraHeader)
    throw Error(ErrorKind::MalformedHeader, path.string() + ": expected '" + kCameraHeader + "'");

  std::vector<NamedCamera> cameras;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    NamedCamera record;
    if (!(ls >> record.id)) continue;  // blank line

    double vals[18];
    int got = 0;
    while (got < 18 && (ls >> vals[got])) ++got;
    std::string extra;
    if (got != 18 || (ls >> extra))
      throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(line_no) +
                                             ": camera record needs id plus 18 numbers");
    Camera& cam = record.camera;
    cam.fx = vals[0];
    cam.fy = vals[1];
    cam.cx = vals[2];
    cam.cy = vals[3];
    cam.width = static_cast<int>(vals[4]);
    cam.height = static_cast<int>(vals[5]);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) cam.rotation(r, c) = vals[6 + r * 4 + c];
      cam.translation(r) = vals[6 + r * 4 + 3];
    }
    try {
      cam.validate();
    } catch (const std::invalid_argument& e) {
      throw Error(ErrorKind::NonOrthonormalRotation,
                  path.string() + ": view '" + record.id + "': " + e.what());
    }
    cameras.push_back(std::move(record));
  }
  if (cameras.empty())
    throw Error(ErrorKind::ParseError, path.string() + ": camera file holds no records");
  return cameras;
}

void save_cameras(const std::vector<NamedCamera>& cameras, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << kCameraHeader << "\n";
  out << "# id fx fy cx cy W H  [R|t] row-major (12 values)\n";
  for (const auto& record : cameras) {
    const Camera& cam = record.camera;
    out << record.id << " " << fmt17(cam.fx) << " " << fmt17(cam.fy) << " " << fmt17(cam.cx) << " "
        << fmt17(cam.cy) << " " << cam.width << " " << cam.height;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << " " << fmt17(cam.rotation(r, c));
      out << " " << fmt17(cam.translation(r));
    }
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Descriptor sets
// ---------------------------------------------------------------------------

namespace {
constexpr char kDescriptorMagic[8] = {'P', 'T', 'B', 'L', 'D', 'E', 'S', 'C'};
constexpr std::uint64_t kDescriptorVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in, const fs::path& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw Error(ErrorKind::SizeMismatch, path.string() + ": descriptor header is truncated");
  return v;
}
}  // namespace

void save_descriptors(const DescriptorSet& set, const fs::path& path) {
  if (set.count() == 0) throw std::invalid_argument("descriptor set must contain at least one row");
  set.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out.write(kDescriptorMagic, sizeof(kDescriptorMagic));
  write_u64(out, kDescriptorVersion);
  write_u64(out, set.count());
  write_u64(out, static_cast<std::uint64_t>(set.dim()));
  std::vector<float> buf(set.values().size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(set.values()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

DescriptorSet load_descriptors(const fs::path& path) {
  require_exists(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kDescriptorMagic, sizeof(magic)) != 0)
    throw Error(ErrorKind::BadMagic, path.string() + ": not a descriptor file");
  const std::uint64_t version = read_u64(in, path);
  if (version != kDescriptorVersion)
    throw Error(ErrorKind::BadVersion,
                path.string() + ": unsupported descriptor version " + std::to_string(version));
  const std::uint64_t count = read_u64(in, path);
  const std::uint64_t dim = read_u64(in, path);
  if (count == 0 || dim < 2)
    throw Error(ErrorKind::SizeMismatch, path.string() + ": degenerate descriptor shape");

  std::vector<float> buf(count * dim);
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float))))
    throw Error(ErrorKind::SizeMismatch,
                path.string() + ": file is smaller than the declared N x M payload");
  char extra;
  if (in.read(&extra, 1))
    throw Error(ErrorKind::SizeMismatch,
                path.string() + ": file is larger than the declared N x M payload");

  DescriptorSet set(count, static_cast<int>(dim));
  for (std::size_t i = 0; i < buf.size(); ++i) set.values()[i] = buf[i];
  return set;
}

// ---------------------------------------------------------------------------
// PNG images
// ---------------------------------------------------------------------------

namespace {

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngReader() {
    if (png != nullptr) png_destroy_read_struct(&png, info != nullptr ? &info : nullptr, nullptr);
    if (fp != nullptr) std::fclose(fp);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngWriter() {
    if (png != nullptr) png_destroy_write_struct(&png, info != nullptr ? &info : nullptr);
    if (fp != nullptr) std::fclose(fp);
  }
};

}  // namespace

Image load_image(const fs::path& path) {
  require_exists(path);
  PngReader r;
  r.fp = std::fopen(path.string().c_str(), "rb");
  if (r.fp == nullptr) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, r.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw Error(ErrorKind::UnsupportedImage, path.string() + ": not a PNG file");

  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  r.info = png_create_info_struct(r.png);
  if (r.png == nullptr || r.info == nullptr)
    throw Error(ErrorKind::UnsupportedImage, "libpng initialization failed");
  if (setjmp(png_jmpbuf(r.png)))
    throw Error(ErrorKind::UnsupportedImage, path.string() + ": PNG decode failed");

  png_init_io(r.png, r.fp);
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);

  const png_uint_32 width = png_get_image_width(r.png, r.info);
  const png_uint_32 height = png_get_image_height(r.png, r.info);
  const int bit_depth = png_get_bit_depth(r.png, r.info);
  const int color_type = png_get_color_type(r.png, r.info);
  if (bit_depth != 8)
    throw Error(ErrorKind::UnsupportedImage,
                path.string() + ": unsupported bit depth " + std::to_string(bit_depth));
  int channels;
  if (color_type == PNG_COLOR_TYPE_RGB) channels = 3;
  else if (color_type == PNG_COLOR_TYPE_RGB_ALPHA) channels = 4;
  else
    throw Error(ErrorKind::UnsupportedImage,
                path.string() + ": only 8-bit RGB/RGBA color types are supported");

  png_set_interlace_handling(r.png);
  png_read_update_info(r.png, r.info);

  std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * channels);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = bytes.data() + static_cast<std::size_t>(y) * width * channels;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);

  Image img(static_cast<int>(width), static_cast<int>(height), channels);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data()[i] = bytes[i] / 255.0;
  return img;
}

void save_image(const Image& image, const fs::path& path) {
  if (image.channels() != 3 && image.channels() != 4)
    throw std::invalid_argument("save_image expects a 3- or 4-channel image");
  if (image.width() < 1 || image.height() < 1)
    throw std::invalid_argument("save_image expects a non-empty image");

  PngWriter w;
  w.fp = std::fopen(path.string().c_str(), "wb");
  if (w.fp == nullptr) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  w.info = png_create_info_struct(w.png);
  if (w.png == nullptr || w.info == nullptr)
    throw Error(ErrorKind::UnsupportedImage, "libpng initialization failed");
  if (setjmp(png_jmpbuf(w.png)))
    throw Error(ErrorKind::UnsupportedImage, path.string() + ": PNG encode failed");

  png_init_io(w.png, w.fp);
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(image.width()),
               static_cast<png_uint_32>(image.height()), 8,
               image.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_RGB_ALPHA,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);

  std::vector<unsigned char> row(static_cast<std::size_t>(image.width()) * image.channels());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < image.channels(); ++c) {
        const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
        row[static_cast<std::size_t>(x) * image.channels() + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

// ---------------------------------------------------------------------------
// Scene bundles
// ---------------------------------------------------------------------------

namespace {

json head_to_json(const HeadConfig& head) {
  json j;
  j["mode"] = head.mode == HeadMode::Passthrough ? "passthrough" : "linear";
  j["input_dim"] = head.input_dim;
  if (head.mode == HeadMode::Linear) {
    j["weights"] = head.weights;
    j["bias"] = head.bias;
  }
  return j;
}

HeadConfig head_from_json(const json& j, const fs::path& path) {
  HeadConfig head;
  const std::string mode = j.value("mode", "passthrough");
  head.input_dim = j.value("input_dim", DescriptorSet::kDefaultDim);
  if (mode == "passthrough") {
    head.mode = HeadMode::Passthrough;
  } else if (mode == "linear") {
    head.mode = HeadMode::Linear;
    head.weights = j.at("weights").get<std::vector<double>>();
    const auto bias = j.at("bias").get<std::vector<double>>();
    if (bias.size() != 4)
      throw Error(ErrorKind::BadManifest, path.string() + ": head bias must have 4 entries");
    std::copy(bias.begin(), bias.end(), head.bias.begin());
  } else {
    throw Error(ErrorKind::BadManifest, path.string() + ": unknown head mode '" + mode + "'");
  }
  try {
    head.validate();
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorKind::BadManifest, path.string() + ": " + e.what());
  }
  return head;
}

json load_json_file(const fs::path& path, ErrorKind kind) {
  require_exists(path);
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(kind, path.string() + ": " + e.what());
  }
}

fs::path resolve_relative(const fs::path& base_file, const fs::path& p) {
  if (p.is_absolute()) return p;
  return base_file.parent_path() / p;
}

}  // namespace

SceneBundle load_scene_bundle(const fs::path& path) {
  const json j = load_json_file(path, ErrorKind::BadManifest);
  if (j.value("format", "") != "pointblend-scene")
    throw Error(ErrorKind::BadMagic, path.string() + ": not a pointblend scene file");
  if (j.value("version", 0) != 1)
    throw Error(ErrorKind::BadVersion, path.string() + ": unsupported scene version");

  SceneBundle bundle;
  bundle.cloud_path = resolve_relative(path, j.at("cloud").get<std::string>());
  bundle.scene.cloud = load_point_cloud(bundle.cloud_path);
  bundle.scene.descriptors =
      load_descriptors(resolve_relative(path, j.at("descriptors").get<std::string>()));
  bundle.scene.jitter_exponent = j.value("mu", 1.0);
  bundle.scene.label = j.value("label", "");
  bundle.head = j.contains("head") ? head_from_json(j.at("head"), path)
                                   : HeadConfig::passthrough(bundle.scene.descriptors.dim());
  try {
    bundle.scene.validate();
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorKind::SizeMismatch, path.string() + ": " + e.what());
  }
  return bundle;
}

void save_scene_bundle(const fs::path& path, const Scene& scene, const HeadConfig& head,
                       const fs::path& cloud_path, const fs::path& descriptors_path) {
  json j;
  j["format"] = "pointblend-scene";
  j["version"] = 1;
  j["cloud"] = cloud_path.string();
  j["descriptors"] = descriptors_path.string();
  j["mu"] = scene.jitter_exponent;
  j["label"] = scene.label;
  j["head"] = head_to_json(head);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

HeadConfig load_head(const fs::path& path) {
  const json j = load_json_file(path, ErrorKind::BadManifest);
  return head_from_json(j, path);
}

void save_head(const HeadConfig& head, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << head_to_json(head).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Composition manifests
// ---------------------------------------------------------------------------

SceneManifest SceneManifest::load(const fs::path& path) {
  const json j = load_json_file(path, ErrorKind::BadManifest);
  if (j.value("format", "") != "pointblend-manifest")
    throw Error(ErrorKind::BadMagic, path.string() + ": not a pointblend manifest");
  if (j.value("version", 0) != 1)
    throw Error(ErrorKind::BadVersion, path.string() + ": unsupported manifest version");
  if (!j.contains("entries") || !j.at("entries").is_array() || j.at("entries").empty())
    throw Error(ErrorKind::BadManifest, path.string() + ": manifest needs a non-empty entries array");

  SceneManifest manifest;
  for (const auto& je : j.at("entries")) {
    ManifestEntry entry;
    entry.cloud = resolve_relative(path, je.at("cloud").get<std::string>());
    if (je.contains("descriptors"))
      entry.descriptors = resolve_relative(path, je.at("descriptors").get<std::string>());
    if (je.contains("transform")) {
      const auto values = je.at("transform").get<std::vector<double>>();
      if (values.size() != 16)
        throw Error(ErrorKind::BadManifest, path.string() + ": transform must hold 16 numbers");
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
          entry.transform(r, c) = values[static_cast<std::size_t>(r) * 4 + c];
    }
    entry.alpha_scale = je.value("alpha_scale", 1.0);
    entry.mu = je.value("mu", 1.0);
    entry.label = je.value("label", "");

    // Rigid (optionally uniformly scaled) transform check.
    const Eigen::Matrix3d a = entry.transform.topLeftCorner<3, 3>();
    const double det = a.determinant();
    if (!(det > 0.0))
      throw Error(ErrorKind::BadManifest, path.string() + ": transform must preserve orientation");
    const double s2 = std::cbrt(det * det);
    const Eigen::Matrix3d gram = a.transpose() * a;
    if ((gram - s2 * Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() >
        1e-5 * std::max(1.0, s2))
      throw Error(ErrorKind::BadManifest,
                  path.string() + ": transform is not rigid (with optional uniform scale)");
    if (std::abs(entry.transform(3, 0)) > 1e-9 || std::abs(entry.transform(3, 1)) > 1e-9 ||
        std::abs(entry.transform(3, 2)) > 1e-9 || std::abs(entry.transform(3, 3) - 1.0) > 1e-9)
      throw Error(ErrorKind::BadManifest, path.string() + ": transform bottom row must be 0 0 0 1");
    if (!(entry.alpha_scale >= 0.0 && entry.alpha_scale <= 1.0))
      throw Error(ErrorKind::BadManifest, path.string() + ": alpha_scale must lie in [0,1]");
    if (!(entry.mu >= 0.0))
      throw Error(ErrorKind::BadManifest, path.string() + ": mu must be >= 0");

    if (!fs::exists(entry.cloud))
      throw Error(ErrorKind::MissingFile, "manifest entry cloud missing: " + entry.cloud.string());
    if (entry.descriptors && !fs::exists(*entry.descriptors))
      throw Error(ErrorKind::MissingFile,
                  "manifest entry descriptors missing: " + entry.descriptors->string());
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void SceneManifest::save(const fs::path& path) const {
  json j;
  j["format"] = "pointblend-manifest";
  j["version"] = 1;
  json je_list = json::array();
  for (const auto& entry : entries) {
    json je;
    je["cloud"] = entry.cloud.string();
    if (entry.descriptors) je["descriptors"] = entry.descriptors->string();
    std::vector<double> values(16);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) values[static_cast<std::size_t>(r) * 4 + c] = entry.transform(r, c);
    je["transform"] = values;
    je["alpha_scale"] = entry.alpha_scale;
    je["mu"] = entry.mu;
    if (!entry.label.empty()) je["label"] = entry.label;
    je_list.push_back(std::move(je));
  }
  j["entries"] = je_list;
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

bool is_manifest_file(const fs::path& path) {
  const json j = load_json_file(path, ErrorKind::BadManifest);
  return j.value("format", "") == "pointblend-manifest";
}

Scene compose_scenes(const SceneManifest& manifest, int descriptor_dim, std::uint64_t seed) {
  if (manifest.entries.empty())
    throw Error(ErrorKind::BadManifest, "manifest holds no entries");

  std::vector<Eigen::Vector3d> positions;
  std::vector<double> values;
  int dim = -1;
  std::string label;

  for (std::size_t e = 0; e < manifest.entries.size(); ++e) {
    const ManifestEntry& entry = manifest.entries[e];
    PointCloud cloud = load_point_cloud(entry.cloud);
    DescriptorSet descriptors =
        entry.descriptors ? load_descriptors(*entry.descriptors)
                          : DescriptorSet::random_init(cloud.size(), descriptor_dim, seed + e);
    if (descriptors.count() != cloud.size())
      throw Error(ErrorKind::SizeMismatch,
                  entry.cloud.string() + ": descriptor rows do not match point count");
    if (dim < 0) dim = descriptors.dim();
    if (descriptors.dim() != dim)
      throw Error(ErrorKind::SizeMismatch, "manifest entries disagree on descriptor dimensionality");

    for (auto& p : cloud.positions) p = (entry.transform * p.homogeneous()).head<3>();

    if (entry.alpha_scale != 1.0) {
      // Manipulation acts on activated alphas; store the result back through
      // the inverse activation (clamped below 1 so atanh stays finite).
      const double factor = std::pow(entry.alpha_scale, entry.mu);
      const int alpha_channel = descriptors.dim() - 1;
      for (std::size_t i = 0; i < descriptors.count(); ++i) {
        double& raw = descriptors.row(i)[alpha_channel];
        const double scaled = std::min(activate_alpha(raw) * factor, 1.0 - 1e-6);
        raw = std::atanh(scaled);
      }
    }

    positions.insert(positions.end(), cloud.positions.begin(), cloud.positions.end());
    values.insert(values.end(), descriptors.values().begin(), descriptors.values().end());
    if (!entry.label.empty()) label += (label.empty() ? "" : "+") + entry.label;
  }

  Scene scene;
  scene.cloud.positions = std::move(positions);
  scene.descriptors = DescriptorSet(scene.cloud.size(), dim);
  scene.descriptors.values() = std::move(values);
  scene.jitter_exponent = 1.0;
  scene.label = label;
  scene.validate();
  return scene;
}

}  // namespace pointblend::io
