#include "rshaze/data.hpp"

#include <png.h>

#include <algorithm>
#include <optional>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rshaze::data {

namespace fs = std::filesystem;

// ---- codec ----

namespace {

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor32 rgb8_to_tensor(const unsigned char* rgb, int h, int w) {
  Tensor32 t(1, 3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) = rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return t;
}

std::vector<unsigned char> tensor_to_rgb8(const Tensor32& t) {
  std::vector<unsigned char> rgb(static_cast<std::size_t>(t.h()) * t.w() * 3);
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(t.at(0, c, y, x), 0.0f, 1.0f);
        rgb[(static_cast<std::size_t>(y) * t.w() + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  return rgb;
}

Tensor32 load_ppm(const std::vector<unsigned char>& bytes, const fs::path& path) {
  std::size_t pos = 2;  // past "P6"
  auto next_int = [&]() -> int {
    // skip whitespace and '#' comments
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    int value = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw std::runtime_error("truncated PPM header: " + path.string());
    return value;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval != 255)
    throw std::runtime_error("unsupported PPM maxval " + std::to_string(maxval) + ": " +
                             path.string());
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + need)
    throw std::runtime_error("truncated PPM payload: " + path.string());
  return rgb8_to_tensor(bytes.data() + pos, h, w);
}

Tensor32 load_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("truncated or invalid PNG " + path.string() + ": " + msg);
  }
  return rgb8_to_tensor(rgb.data(), static_cast<int>(image.height),
                        static_cast<int>(image.width));
}

}  // namespace

Tensor32 load_image(const fs::path& path) {
  std::vector<unsigned char> head = read_file(path);
  if (head.size() >= 2 && head[0] == 'P' && head[1] == '6') return load_ppm(head, path);
  if (head.size() >= 8 && head[0] == 0x89 && head[1] == 'P') return load_png(path);
  throw std::runtime_error("unsupported image format: " + path.string());
}

void save_image(const Tensor32& t, const fs::path& path) {
  if (t.n() != 1 || t.c() != 3)
    throw std::invalid_argument("save_image: expected (1,3,h,w), got " + t.shape().str());
  const std::vector<unsigned char> rgb = tensor_to_rgb8(t);
  if (path.extension() == ".ppm") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << t.w() << " " << t.h() << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw std::runtime_error("short write: " + path.string());
    return;
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(t.w());
  image.height = static_cast<png_uint_32>(t.h());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
}

// ---- synthetic haze ----

Tensor32 make_depth(int h, int w, DepthKind kind, double constant_depth) {
  Tensor32 d(1, 1, h, w);
  switch (kind) {
    case DepthKind::Constant:
      d.fill(static_cast<float>(constant_depth));
      break;
    case DepthKind::Ramp:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          d.at(0, 0, y, x) = w > 1 ? static_cast<float>(x) / (w - 1) : 1.0f;
      break;
    case DepthKind::Radial: {
      const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
      const double rmax = std::max(1.0, std::hypot(cy, cx));
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double r = std::hypot(y - cy, x - cx) / rmax;
          d.at(0, 0, y, x) = static_cast<float>(1.0 - r * r);  // bump peaking at the center
        }
      break;
    }
  }
  return d;
}

ImagePair synthesize_haze(const Tensor32& clean, double beta, double atmosphere,
                          DepthKind depth_kind, std::mt19937_64& rng, const std::string& id,
                          std::optional<double> constant_depth) {
  if (beta < 0) throw std::invalid_argument("synthesize_haze: beta must be >= 0");
  if (atmosphere < 0.7 || atmosphere > 1.0)
    throw std::invalid_argument("synthesize_haze: atmosphere must lie in [0.7, 1.0]");
  if (clean.n() != 1 || clean.c() != 3)
    throw std::invalid_argument("synthesize_haze: expected (1,3,h,w), got " +
                                clean.shape().str());

  double level = constant_depth.value_or(1.0);
  if (depth_kind == DepthKind::Constant && !constant_depth) {
    std::uniform_real_distribution<double> dist(0.5, 1.0);
    level = dist(rng);
  }
  const Tensor32 depth = make_depth(clean.h(), clean.w(), depth_kind, level);

  ImagePair pair;
  pair.id = id;
  pair.clean = clean;
  pair.hazy = Tensor32(clean.shape());
  pair.provenance = {true, "", beta, atmosphere, depth_kind};
  for (int y = 0; y < clean.h(); ++y)
    for (int x = 0; x < clean.w(); ++x) {
      const float t = static_cast<float>(std::exp(-beta * depth.at(0, 0, y, x)));
      for (int c = 0; c < 3; ++c) {
        const float v = clean.at(0, c, y, x) * t + static_cast<float>(atmosphere) * (1.0f - t);
        pair.hazy.at(0, c, y, x) = std::clamp(v, 0.0f, 1.0f);
      }
    }
  return pair;
}

Tensor32 synthetic_clean_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  Tensor32 img(1, 3, h, w);

  for (int c = 0; c < 3; ++c) {
    const double base = 0.25 + 0.5 * unit(rng);
    const double gx = 0.4 * sym(rng), gy = 0.4 * sym(rng);
    const double fx = 1.0 + 2.0 * unit(rng), fy = 1.0 + 2.0 * unit(rng);
    const double amp = 0.15 * unit(rng), phase = 6.2831853 * unit(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double u = w > 1 ? static_cast<double>(x) / (w - 1) : 0.0;
        const double v = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
        img.at(0, c, y, x) = static_cast<float>(
            base + gx * u + gy * v + amp * std::sin(6.2831853 * (fx * u + fy * v) + phase));
      }
  }

  std::uniform_int_distribution<int> shape_count(2, 4);
  const int shapes = shape_count(rng);
  for (int s = 0; s < shapes; ++s) {
    const double cy = unit(rng) * (h - 1), cx = unit(rng) * (w - 1);
    const double radius = (0.1 + 0.2 * unit(rng)) * std::max(h, w);
    const std::array<double, 3> color{unit(rng), unit(rng), unit(rng)};
    const double hardness = 2.0 + 6.0 * unit(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double r = std::hypot(y - cy, x - cx) / radius;
        const double blend = std::exp(-hardness * r * r);
        for (int c = 0; c < 3; ++c)
          img.at(0, c, y, x) = static_cast<float>((1.0 - blend) * img.at(0, c, y, x) +
                                                  blend * color[c]);
      }
  }

  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
  return img;
}

HazeRange haze_preset(const std::string& name) {
  if (name == "thin") return {0.5, 1.0};
  if (name == "moderate") return {1.0, 2.0};
  if (name == "thick") return {2.0, 4.0};
  if (name == "mixed") return {0.5, 4.0};
  throw std::invalid_argument("unknown haze preset: " + name);
}

// ---- dataset ----

namespace {

void apply_split(Dataset* ds, const SplitFractions& split) {
  const std::size_t n = ds->pairs.size();
  const auto n_train = static_cast<std::size_t>(std::llround(split.train * n));
  const auto n_val = static_cast<std::size_t>(std::llround(split.val * n));
  if (n_train + n_val > n)
    throw std::invalid_argument("split fractions exceed dataset size");
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      ds->train.push_back(i);
    else if (i < n_train + n_val)
      ds->val.push_back(i);
    else
      ds->test.push_back(i);
  }
}

bool is_image_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".png" || ext == ".ppm";
}

}  // namespace

Dataset load_directory_dataset(const fs::path& root, const SplitFractions& split) {
  const fs::path hazy_dir = root / "hazy";
  const fs::path clean_dir = root / "clean";
  if (!fs::is_directory(hazy_dir) || !fs::is_directory(clean_dir))
    throw std::runtime_error("dataset root must contain hazy/ and clean/: " + root.string());

  std::vector<fs::path> hazy_files;
  for (const auto& entry : fs::directory_iterator(hazy_dir))
    if (entry.is_regular_file() && is_image_file(entry.path()))
      hazy_files.push_back(entry.path());
  std::sort(hazy_files.begin(), hazy_files.end());
  if (hazy_files.empty()) throw std::runtime_error("empty dataset: " + hazy_dir.string());

  Dataset ds;
  for (const fs::path& hazy_path : hazy_files) {
    const fs::path clean_path = clean_dir / hazy_path.filename();
    if (!fs::exists(clean_path))
      throw std::runtime_error("unpaired hazy file (no clean counterpart): " +
                               hazy_path.string());
    ImagePair pair;
    pair.id = hazy_path.stem().string();
    pair.hazy = load_image(hazy_path);
    pair.clean = load_image(clean_path);
    pair.provenance.file = hazy_path.string();
    if (!(pair.hazy.shape() == pair.clean.shape()))
      throw std::runtime_error("pair size mismatch for " + hazy_path.string() + ": " +
                               pair.hazy.shape().str() + " vs " + pair.clean.shape().str());
    ds.pairs.push_back(std::move(pair));
  }
  apply_split(&ds, split);
  return ds;
}

Dataset make_synthetic_dataset(int count, int h, int w, const HazeRange& range,
                               std::uint64_t seed, const SplitFractions& split) {
  if (count <= 0) throw std::invalid_argument("synthetic dataset needs count > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> beta_dist(range.beta_min, range.beta_max);
  std::uniform_real_distribution<double> a_dist(0.8, 0.95);
  const DepthKind kinds[] = {DepthKind::Constant, DepthKind::Ramp, DepthKind::Radial};

  Dataset ds;
  for (int i = 0; i < count; ++i) {
    const Tensor32 clean = synthetic_clean_image(h, w, rng);
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%04d", i);
    ds.pairs.push_back(
        synthesize_haze(clean, beta_dist(rng), a_dist(rng), kinds[i % 3], rng, id));
  }
  apply_split(&ds, split);
  return ds;
}

// ---- checkpoint ----

std::uint32_t crc32(const void* bytes, std::size_t len, std::uint32_t seed) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = seed ^ 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

namespace {

void put_u32(std::vector<unsigned char>* buf, std::uint32_t v) {
  buf->push_back(static_cast<unsigned char>(v & 0xFF));
  buf->push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
  buf->push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
  buf->push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

void put_f32(std::vector<unsigned char>* buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const std::vector<unsigned char>& buf;
  std::size_t pos = 0;
  const std::string& origin;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw checkpoint_error(CheckpointError::Truncated, "truncated checkpoint: " + origin);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = static_cast<std::uint32_t>(buf[pos]) |
                      (static_cast<std::uint32_t>(buf[pos + 1]) << 8) |
                      (static_cast<std::uint32_t>(buf[pos + 2]) << 16) |
                      (static_cast<std::uint32_t>(buf[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

void put_config(std::vector<unsigned char>* buf, const NetConfig& cfg) {
  put_u32(buf, static_cast<std::uint32_t>(cfg.base_channels));
  for (int d : cfg.depths) put_u32(buf, static_cast<std::uint32_t>(d));
  put_u32(buf, static_cast<std::uint32_t>(cfg.levels));
  buf->push_back(cfg.block == BlockKind::Mpeb ? 0 : 1);
  buf->push_back(cfg.fusion == FusionKind::Itfm ? 0 : 1);
  buf->push_back(cfg.cmim_enabled ? 1 : 0);
  buf->push_back(cfg.src_enabled ? 1 : 0);
  buf->push_back(static_cast<unsigned char>(cfg.pool));
  buf->push_back(cfg.activation == Activation::Gelu ? 0 : 1);
}

NetConfig read_config(Reader* r) {
  NetConfig cfg;
  cfg.base_channels = static_cast<int>(r->u32());
  for (int i = 0; i < 3; ++i) cfg.depths[i] = static_cast<int>(r->u32());
  cfg.levels = static_cast<int>(r->u32());
  r->need(6);
  cfg.block = r->buf[r->pos++] == 0 ? BlockKind::Mpeb : BlockKind::Fnb;
  cfg.fusion = r->buf[r->pos++] == 0 ? FusionKind::Itfm : FusionKind::Conv1x1;
  cfg.cmim_enabled = r->buf[r->pos++] != 0;
  cfg.src_enabled = r->buf[r->pos++] != 0;
  cfg.pool = r->buf[r->pos++];
  cfg.activation = r->buf[r->pos++] == 0 ? Activation::Gelu : Activation::Relu;
  return cfg;
}

}  // namespace

void save_checkpoint(const fs::path& path, const NetConfig& cfg, const ParamStore32& params) {
  std::vector<unsigned char> body;
  put_u32(&body, kCheckpointVersion);
  put_config(&body, cfg);
  put_u32(&body, static_cast<std::uint32_t>(params.tensor_count()));
  for (const auto& e : params.entries()) {
    put_u32(&body, static_cast<std::uint32_t>(e.name.size()));
    body.insert(body.end(), e.name.begin(), e.name.end());
    const Shape s = e.value.shape();
    put_u32(&body, static_cast<std::uint32_t>(s.n));
    put_u32(&body, static_cast<std::uint32_t>(s.c));
    put_u32(&body, static_cast<std::uint32_t>(s.h));
    put_u32(&body, static_cast<std::uint32_t>(s.w));
    for (std::size_t i = 0; i < e.value.size(); ++i) put_f32(&body, e.value[i]);
  }
  const std::uint32_t checksum = crc32(body.data(), body.size());

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(kCheckpointMagic, 4);
    out.write(reinterpret_cast<const char*>(body.data()),
              static_cast<std::streamsize>(body.size()));
    std::vector<unsigned char> tail;
    put_u32(&tail, checksum);
    out.write(reinterpret_cast<const char*>(tail.data()), 4);
    if (!out) throw std::runtime_error("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string origin = path.string();
  const std::vector<unsigned char> raw = read_file(path);
  if (raw.size() < 8 || std::memcmp(raw.data(), kCheckpointMagic, 4) != 0)
    throw checkpoint_error(CheckpointError::BadMagic, "not a checkpoint file: " + origin);

  const std::vector<unsigned char> body(raw.begin() + 4, raw.end() - 4);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(raw[raw.size() - 4 + i]) << (8 * i);
  if (crc32(body.data(), body.size()) != stored)
    throw checkpoint_error(CheckpointError::BadChecksum, "checksum mismatch: " + origin);

  Reader r{body, 0, origin};
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw checkpoint_error(CheckpointError::BadVersion,
                           "unsupported checkpoint version " + std::to_string(version) + ": " +
                               origin);

  Checkpoint ckpt;
  ckpt.config = read_config(&r);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    Shape s;
    s.n = static_cast<int>(r.u32());
    s.c = static_cast<int>(r.u32());
    s.h = static_cast<int>(r.u32());
    s.w = static_cast<int>(r.u32());
    Tensor32 value(s);
    for (std::size_t j = 0; j < value.size(); ++j) value[j] = r.f32();
    ckpt.params.create(name, std::move(value));
  }
  return ckpt;
}

}  // namespace rshaze::data
