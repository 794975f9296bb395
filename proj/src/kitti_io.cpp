#include "hsocc/kitti_io.hpp"

#include <png.h>

#include <charconv>
#include <csetjmp>
#include <cstdlib>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "hsocc/errors.hpp"
#include "hsocc/kernels.hpp"

namespace hsocc {

RemapTable::RemapTable(int num_classes) : num_classes_(num_classes) {
  if (num_classes < 1 || num_classes > 65535) throw ValidationError("num_classes out of range");
}

RemapTable RemapTable::identity(int num_classes, std::uint16_t invalid_raw) {
  RemapTable t(num_classes);
  for (int c = 0; c < num_classes; ++c) t.set(static_cast<std::uint16_t>(c), c);
  if (invalid_raw >= num_classes) t.set(invalid_raw, kInvalid);
  return t;
}

void RemapTable::set(std::uint16_t raw, std::int32_t train_id) {
  if (train_id != kInvalid && (train_id < 0 || train_id >= num_classes_))
    throw ValidationError("train ID " + std::to_string(train_id) + " outside [0, num_classes)");
  table_[raw] = train_id;
}

namespace {

std::uint16_t parse_raw_key(const std::string& key) {
  unsigned value = 0;
  const auto* end = key.data() + key.size();
  const auto res = std::from_chars(key.data(), end, value);
  if (res.ec != std::errc{} || res.ptr != end || value > 65535)
    throw FormatError("remap key is not a u16 label: '" + key + "'");
  return static_cast<std::uint16_t>(value);
}

}  // namespace

RemapTable RemapTable::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("remap json: ") + e.what());
  }
  if (!j.is_object() || !j.contains("num_classes") || !j.contains("learning_map"))
    throw FormatError("remap json needs num_classes and learning_map");
  for (const auto& [key, value] : j.items())
    if (key != "num_classes" && key != "learning_map" && key != "invalid" && key != "class_names")
      throw FormatError("remap json: unknown key '" + key + "'");
  RemapTable t(j.at("num_classes").get<int>());
  for (const auto& [key, value] : j.at("learning_map").items()) t.set(parse_raw_key(key), value.get<std::int32_t>());
  if (j.contains("invalid"))
    for (const auto& raw : j.at("invalid")) t.set(raw.get<std::uint16_t>(), kInvalid);
  if (j.contains("class_names")) t.class_names_ = j.at("class_names").get<std::vector<std::string>>();
  if (!t.class_names_.empty() && static_cast<int>(t.class_names_.size()) != t.num_classes_)
    throw FormatError("remap json: class_names length differs from num_classes");
  return t;
}

RemapTable RemapTable::load(const std::filesystem::path& path) { return from_json(read_text_file(path)); }

const std::vector<std::string>& semantic_kitti_class_names() {
  static const std::vector<std::string> names{
      "empty",   "car",     "bicycle",  "motorcycle", "truck",        "other-vehicle", "person",
      "bicyclist", "motorcyclist", "road", "parking", "sidewalk", "other-ground", "building",
      "fence",   "vegetation", "trunk", "terrain",    "pole",         "traffic-sign"};
  return names;
}

OccupancyGrid read_packed_bitgrid(std::span<const std::uint8_t> bytes, const GridSpec& spec) {
  spec.validate();
  const std::size_t n = spec.voxel_count();
  if (n % 8 != 0) throw FormatError("voxel count is not a multiple of 8");
  if (bytes.size() != n / 8)
    throw FormatError("packed grid has " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(n / 8));
  OccupancyGrid g{spec, std::vector<std::uint8_t>(n)};
  kernels::unpack_bits_msb(bytes, g.occupied);
  return g;
}

std::vector<std::uint8_t> write_packed_bitgrid(const OccupancyGrid& grid) {
  const std::size_t n = grid.spec.voxel_count();
  if (n % 8 != 0 || grid.occupied.size() != n) throw ShapeError("occupancy grid size is not packable");
  std::vector<std::uint8_t> bytes(n / 8);
  kernels::pack_bits_msb(grid.occupied, bytes);
  return bytes;
}

SemanticGrid read_label_grid(std::span<const std::uint8_t> bytes, const GridSpec& spec, const RemapTable& remap) {
  spec.validate();
  const std::size_t n = spec.voxel_count();
  if (bytes.size() != 2 * n)
    throw FormatError("label grid has " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(2 * n));
  SemanticGrid g(spec, remap.num_classes());
  for (std::size_t i = 0; i < n; ++i) {
    const auto raw = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    const std::int32_t id = remap.lookup(raw);
    if (id == RemapTable::kUnmapped) throw FormatError("raw label " + std::to_string(raw) + " missing from remap table");
    if (id == RemapTable::kInvalid) {
      g.valid[i] = 0;
      continue;
    }
    g.labels[i] = static_cast<Label>(id);
  }
  return g;
}

std::vector<std::uint8_t> write_label_grid(const SemanticGrid& grid, std::uint16_t invalid_raw) {
  grid.validate();
  std::vector<std::uint8_t> bytes(2 * grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const std::uint16_t v = grid.valid[i] != 0 ? grid.labels[i] : invalid_raw;
    bytes[2 * i] = static_cast<std::uint8_t>(v & 0xFF);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(v >> 8);
  }
  return bytes;
}

void apply_invalid_mask(SemanticGrid& grid, const OccupancyGrid& invalid) {
  if (invalid.spec.dims != grid.spec.dims) throw ShapeError("invalid mask dims differ from the label grid");
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (invalid.occupied[i] != 0) grid.valid[i] = 0;
}

OccupancyGrid occupancy_of(const SemanticGrid& grid) {
  OccupancyGrid g{grid.spec, std::vector<std::uint8_t>(grid.size(), 0)};
  for (std::size_t i = 0; i < grid.size(); ++i) g.occupied[i] = grid.valid[i] != 0 && grid.labels[i] != kFreeClass;
  return g;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

Mat34 parse_matrix(std::string_view key, std::string_view values) {
  Mat34 m;
  int count = 0;
  const char* p = values.data();
  const char* end = values.data() + values.size();
  while (true) {
    while (p < end && is_space(*p)) ++p;
    if (p == end) break;
    if (count == 12) throw FormatError("calib " + std::string(key) + ": more than 12 values");
    double v = 0.0;
    // from_chars is locale-independent; it rejects a leading '+', so skip it.
    if (*p == '+') ++p;
    const auto res = std::from_chars(p, end, v);
    if (res.ec != std::errc{} || (res.ptr < end && !is_space(*res.ptr)) || !std::isfinite(v))
      throw FormatError("calib " + std::string(key) + ": malformed float");
    m(count / 4, count % 4) = v;
    ++count;
    p = res.ptr;
  }
  if (count != 12) throw FormatError("calib " + std::string(key) + ": expected 12 values, got " + std::to_string(count));
  return m;
}

}  // namespace

Calibration parse_calibration(std::string_view text) {
  Calibration calib;
  bool have_p2 = false, have_tr = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    const std::string_view key = trim(line.substr(0, colon));
    const std::string_view rest = line.substr(colon + 1);
    if (key == "P2") {
      calib.p2 = parse_matrix(key, rest);
      have_p2 = true;
    } else if (key == "Tr" || key == "Tr_velo_to_cam") {
      calib.tr = parse_matrix(key, rest);
      have_tr = true;
    }
  }
  if (!have_p2) throw FormatError("calib: missing key P2");
  if (!have_tr) throw FormatError("calib: missing key Tr");
  return calib;
}

CameraRig read_calibration(std::string_view text, int image_width, int image_height) {
  const Calibration c = parse_calibration(text);
  CameraRig rig;
  rig.projection = c.p2;
  rig.sensor_to_camera = c.tr;
  rig.width = image_width;
  rig.height = image_height;
  rig.validate();
  return rig;
}

namespace {

struct PngReadBuffer {
  std::span<const std::uint8_t> data;
  std::size_t offset = 0;
};

void png_read_from_span(png_structp png, png_bytep out, png_size_t len) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + len > buf->data.size()) png_error(png, "truncated png");
  std::memcpy(out, buf->data.data() + buf->offset, len);
  buf->offset += len;
}

void png_write_to_vector(png_structp png, png_bytep in, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + len);
}

void png_flush_noop(png_structp) {}

// libpng reports errors by longjmp; the message is stashed for the caller.
void png_record_error(png_structp png, png_const_charp msg) {
  auto* slot = static_cast<std::string*>(png_get_error_ptr(png));
  *slot = msg != nullptr ? msg : "unknown error";
  png_longjmp(png, 1);
}

void png_warn_silent(png_structp, png_const_charp) {}

struct DecodedGray16 {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int bit_depth = 0;
  int color = 0;
  int channels = 0;
  std::vector<std::uint8_t> rows;
};

// No C++ objects with nontrivial destructors are created between setjmp and
// a possible longjmp; buffers are sized before the jump point matters.
bool decode_png(PngReadBuffer* buf, DecodedGray16* out, std::string* error) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, error, png_record_error, png_warn_silent);
  if (png == nullptr) {
    *error = "cannot create read struct";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    *error = "cannot create info struct";
    return false;
  }
  png_bytep* volatile ptrs = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    std::free(ptrs);
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, buf, png_read_from_span);
  png_read_info(png, info);
  out->width = png_get_image_width(png, info);
  out->height = png_get_image_height(png, info);
  out->bit_depth = png_get_bit_depth(png, info);
  out->color = png_get_color_type(png, info);
  out->channels = png_get_channels(png, info);
  if (out->bit_depth != 16 || out->color != PNG_COLOR_TYPE_GRAY || out->channels != 1) {
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
  }
  out->rows.resize(static_cast<std::size_t>(out->width) * out->height * 2);
  ptrs = static_cast<png_bytep*>(std::malloc(sizeof(png_bytep) * (out->height > 0 ? out->height : 1)));
  for (png_uint_32 r = 0; r < out->height; ++r) ptrs[r] = out->rows.data() + static_cast<std::size_t>(r) * out->width * 2;
  png_read_image(png, ptrs);
  png_read_end(png, nullptr);
  std::free(ptrs);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool encode_png(const std::vector<std::uint8_t>& rows, int width, int height, std::vector<std::uint8_t>* out,
                std::string* error) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, error, png_record_error, png_warn_silent);
  if (png == nullptr) {
    *error = "cannot create write struct";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    *error = "cannot create info struct";
    return false;
  }
  png_bytep* ptrs = static_cast<png_bytep*>(std::malloc(sizeof(png_bytep) * height));
  if (setjmp(png_jmpbuf(png))) {
    std::free(ptrs);
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, width, height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (int r = 0; r < height; ++r)
    ptrs[r] = const_cast<png_bytep>(rows.data()) + static_cast<std::size_t>(r) * width * 2;
  png_write_info(png, info);
  png_write_image(png, ptrs);
  png_write_end(png, nullptr);
  std::free(ptrs);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

DepthMap read_depth_map(std::span<const std::uint8_t> png_bytes) {
  if (png_bytes.size() < 8 || png_sig_cmp(png_bytes.data(), 0, 8) != 0) throw FormatError("depth map is not a png");
  PngReadBuffer buf{png_bytes, 0};
  DecodedGray16 img;
  std::string error;
  if (!decode_png(&buf, &img, &error)) throw FormatError("png: " + error);
  if (img.bit_depth != 16) throw FormatError("depth png must be 16-bit, got " + std::to_string(img.bit_depth));
  if (img.color != PNG_COLOR_TYPE_GRAY || img.channels != 1)
    throw FormatError("depth png must be single-channel grayscale");
  DepthMap map(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < map.depth.size(); ++i) {
    // PNG stores 16-bit samples big-endian.
    const unsigned v = (img.rows[2 * i] << 8) | img.rows[2 * i + 1];
    map.depth[i] = v / 256.0;
  }
  return map;
}

std::vector<std::uint8_t> write_depth_map(const DepthMap& depth) {
  if (depth.width <= 0 || depth.height <= 0) throw ShapeError("depth map is empty");
  std::vector<std::uint8_t> rows(depth.depth.size() * 2);
  for (std::size_t i = 0; i < depth.depth.size(); ++i) {
    const double d = depth.depth[i];
    if (!(d >= 0.0)) throw ValidationError("negative depth");
    const auto v = static_cast<unsigned>(std::min(65535.0, std::round(d * 256.0)));
    rows[2 * i] = static_cast<std::uint8_t>(v >> 8);
    rows[2 * i + 1] = static_cast<std::uint8_t>(v & 0xFF);
  }
  std::vector<std::uint8_t> out;
  std::string error;
  if (!encode_png(rows, depth.width, depth.height, &out, &error)) throw FormatError("png: " + error);
  return out;
}

PointCloud read_lidar_points(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 16 != 0) throw FormatError("lidar buffer length is not a multiple of 16");
  PointCloud cloud;
  cloud.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    float v[4];
    for (int k = 0; k < 4; ++k) {
      const std::uint8_t* b = bytes.data() + 16 * i + 4 * k;
      const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      std::memcpy(&v[k], &bits, 4);
    }
    cloud.points[i] = {v[0], v[1], v[2], v[3]};
  }
  return cloud;
}

std::vector<std::uint8_t> write_lidar_points(const PointCloud& cloud) {
  std::vector<std::uint8_t> out(cloud.points.size() * 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const float v[4] = {cloud.points[i].x, cloud.points[i].y, cloud.points[i].z, cloud.points[i].intensity};
    for (int k = 0; k < 4; ++k) {
      std::uint32_t bits;
      std::memcpy(&bits, &v[k], 4);
      for (int b = 0; b < 4; ++b) out[16 * i + 4 * k + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
    throw FormatError("cannot read " + path.string());
  return bytes;
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("cannot write " + path.string());
}

}  // namespace hsocc
