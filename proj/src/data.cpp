#include "segrob/data.hpp"

#include "segrob/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace segrob {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset Dataset::subset(std::size_t count) const {
  Dataset out = *this;
  count = std::min(count, size());
  out.images.assign(images.begin(), images.begin() + long(count));
  out.labels.assign(labels.begin(), labels.begin() + long(count));
  out.ids.assign(ids.begin(), ids.begin() + long(count));
  return out;
}

Vector class_fill_color(int class_id, int num_classes) {
  check(class_id >= 0 && class_id < num_classes, "class_fill_color: id out of range");
  // sign patterns of +-0.05 around mid gray; any two classes differ by 0.10
  // in at least one channel; per-pixel flip radii then spread over ~5-20/255
  static const int patterns[8][3] = {{+1, +1, +1}, {+1, -1, -1}, {-1, +1, -1}, {-1, -1, +1},
                                     {+1, +1, -1}, {+1, -1, +1}, {-1, +1, +1}, {-1, -1, -1}};
  const int slot = class_id == num_classes - 1 ? 7 : class_id % 7;
  const double amp = 0.05 * (1 + class_id / 7);
  Vector rgb(3);
  for (int c = 0; c < 3; ++c) rgb[c] = 0.5 + amp * patterns[slot][c];
  return rgb;
}

Vector class_color(int class_id, int num_classes) {
  check(class_id >= 0 && class_id < num_classes, "class_color: id out of range");
  // background (last id) is a dim gray; foreground classes get saturated hues
  Vector rgb(3);
  if (class_id == num_classes - 1) {
    rgb << 0.35, 0.35, 0.35;
    return rgb;
  }
  const double hue = 360.0 * class_id / std::max(1, num_classes - 1);
  const double h = hue / 60.0;
  const double x = 0.85 * (1.0 - std::fabs(std::fmod(h, 2.0) - 1.0));
  const double c = 0.85;
  double r = 0, g = 0, b = 0;
  switch (int(h) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  rgb << 0.1 + r, 0.1 + g, 0.1 + b;
  return rgb.cwiseMin(1.0);
}

SceneSpec sample_scene(std::uint64_t seed, int index, int height, int width, int num_classes) {
  check(num_classes >= 2, "sample_scene: need at least 2 classes");
  check(height >= 16 && width >= 16, "sample_scene: canvas too small");
  SceneSpec scene;
  scene.seed = derive_seed(seed, "scene", std::uint64_t(index));
  scene.background_class = num_classes - 1;
  Rng rng(scene.seed);
  const int n_shapes = 3 + int(rng.uniform_index(3));
  const int foreground = num_classes - 1;
  for (int s = 0; s < n_shapes; ++s) {
    ShapeSpec shape;
    shape.kind = ShapeKind(rng.uniform_index(3));
    // first shape of image i cycles through the classes so every foreground
    // class appears in any split with >= K-1 images
    shape.class_id = s == 0 ? index % foreground : int(rng.uniform_index(foreground));
    shape.half_h = 3 + int(rng.uniform_index(std::uint64_t(std::max(2, height / 3))));
    shape.half_w = 3 + int(rng.uniform_index(std::uint64_t(std::max(2, width / 3))));
    if (shape.kind == ShapeKind::Disk) shape.half_h = shape.half_w;
    shape.center_y = shape.half_h + int(rng.uniform_index(std::uint64_t(
                                        std::max(1, height - 2 * shape.half_h))));
    shape.center_x = shape.half_w + int(rng.uniform_index(std::uint64_t(
                                        std::max(1, width - 2 * shape.half_w))));
    scene.shapes.push_back(shape);
  }
  return scene;
}

namespace {

bool inside_shape(const ShapeSpec& s, int y, int x) {
  const int dy = y - s.center_y;
  const int dx = x - s.center_x;
  switch (s.kind) {
    case ShapeKind::Rectangle:
      return std::abs(dy) <= s.half_h && std::abs(dx) <= s.half_w;
    case ShapeKind::Disk:
      return dy * dy + dx * dx <= s.half_w * s.half_w;
    case ShapeKind::Triangle: {
      // apex up: row r in [-half_h, half_h], width grows linearly toward the base
      if (dy < -s.half_h || dy > s.half_h) return false;
      const double frac = double(dy + s.half_h) / double(2 * s.half_h);
      return std::abs(dx) <= frac * s.half_w;
    }
  }
  return false;
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

void render_scene(const SceneSpec& scene, int height, int width, int num_classes,
                  ImageTensor& image, LabelMap& labels) {
  image = ImageTensor(height, width, 3);
  labels = LabelMap(height, width);
  Rng rng(derive_seed(scene.seed, "render"));
  const Vector bg = class_fill_color(scene.background_class, num_classes);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int a = y * width + x;
      int label = scene.background_class;
      // later shapes draw over earlier ones
      for (const auto& s : scene.shapes)
        if (inside_shape(s, y, x)) label = s.class_id;
      labels.labels[a] = label;
      const Vector base =
          label == scene.background_class ? bg : class_fill_color(label, num_classes);
      const double amp = label == scene.background_class ? scene.noise_amplitude
                                                         : scene.color_jitter;
      for (int c = 0; c < 3; ++c)
        image.data(a, c) = clamp01(base[c] + rng.uniform(-amp, amp));
    }
  }
}

Dataset generate_dataset(std::uint64_t seed, int n_images, int height, int width, int num_classes) {
  check(n_images >= 1, "generate_dataset: need at least one image");
  Dataset data;
  data.height = height;
  data.width = width;
  data.num_classes = num_classes;
  for (int i = 0; i < n_images; ++i) {
    const SceneSpec scene = sample_scene(seed, i, height, width, num_classes);
    ImageTensor image;
    LabelMap labels;
    render_scene(scene, height, width, num_classes, image, labels);
    data.images.push_back(std::move(image));
    data.labels.push_back(std::move(labels));
    char id[32];
    std::snprintf(id, sizeof(id), "img_%04d", i);
    data.ids.push_back(id);
  }
  return data;
}

namespace {

std::uint8_t quantize(double v) {
  return std::uint8_t(std::lround(clamp01(v) * 255.0));
}

void write_binary(const std::string& path, const std::string& header,
                  const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << header;
  out.write(reinterpret_cast<const char*>(bytes.data()), long(bytes.size()));
}

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  std::streampos data_start;
};

PnmHeader read_pnm_header(std::ifstream& in, const std::string& path) {
  PnmHeader h;
  in >> h.magic >> h.width >> h.height >> h.maxval;
  if (!in || (h.magic != "P6" && h.magic != "P5") || h.maxval != 255 || h.width <= 0 ||
      h.height <= 0)
    throw std::runtime_error("malformed image file: " + path);
  in.get();  // single whitespace after maxval
  return h;
}

}  // namespace

void save_image_ppm(const ImageTensor& image, const std::string& path) {
  check(image.channels == 3, "save_image_ppm: need 3 channels");
  std::vector<std::uint8_t> bytes(size_t(image.pixels()) * 3);
  for (int a = 0; a < image.pixels(); ++a)
    for (int c = 0; c < 3; ++c) bytes[size_t(a) * 3 + size_t(c)] = quantize(image.data(a, c));
  write_binary(path, "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                         "\n255\n",
               bytes);
}

ImageTensor load_image_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  const PnmHeader h = read_pnm_header(in, path);
  if (h.magic != "P6") throw std::runtime_error("not a P6 image: " + path);
  std::vector<std::uint8_t> bytes(size_t(h.width) * size_t(h.height) * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), long(bytes.size()));
  if (!in) throw std::runtime_error("truncated image file: " + path);
  ImageTensor image(h.height, h.width, 3);
  for (int a = 0; a < image.pixels(); ++a)
    for (int c = 0; c < 3; ++c) image.data(a, c) = double(bytes[size_t(a) * 3 + size_t(c)]) / 255.0;
  return image;
}

void save_mask_pgm(const LabelMap& mask, const std::string& path) {
  std::vector<std::uint8_t> bytes(size_t(mask.pixels()));
  for (int a = 0; a < mask.pixels(); ++a) {
    check(mask.labels[a] >= 0 && mask.labels[a] <= 255, "save_mask_pgm: label exceeds 8 bits");
    bytes[size_t(a)] = std::uint8_t(mask.labels[a]);
  }
  write_binary(path, "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) +
                         "\n255\n",
               bytes);
}

LabelMap load_mask_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  const PnmHeader h = read_pnm_header(in, path);
  if (h.magic != "P5") throw std::runtime_error("not a P5 mask: " + path);
  std::vector<std::uint8_t> bytes(size_t(h.width) * size_t(h.height));
  in.read(reinterpret_cast<char*>(bytes.data()), long(bytes.size()));
  if (!in) throw std::runtime_error("truncated mask file: " + path);
  LabelMap mask(h.height, h.width);
  for (int a = 0; a < mask.pixels(); ++a) mask.labels[a] = int(bytes[size_t(a)]);
  return mask;
}

void save_mask_visualization(const LabelMap& mask, int num_classes, const std::string& path) {
  ImageTensor vis(mask.height, mask.width, 3);
  for (int a = 0; a < mask.pixels(); ++a) {
    const Vector rgb = class_color(mask.labels[a], num_classes);
    for (int c = 0; c < 3; ++c) vis.data(a, c) = rgb[c];
  }
  save_image_ppm(vis, path);
}

void save_image_f64(const ImageTensor& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const std::int32_t dims[3] = {image.height, image.width, image.channels};
  out.write("SRF64\n", 6);
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(image.data.data()),
            long(image.data.size()) * long(sizeof(double)));
}

ImageTensor load_image_f64(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::string(magic, 6) != "SRF64\n")
    throw std::runtime_error("malformed f64 image: " + path);
  std::int32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  check(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, "load_image_f64: bad dimensions");
  ImageTensor image(dims[0], dims[1], dims[2]);
  in.read(reinterpret_cast<char*>(image.data.data()),
          long(image.data.size()) * long(sizeof(double)));
  if (!in) throw std::runtime_error("truncated f64 image: " + path);
  return image;
}

ImageTensor flip_horizontal(const ImageTensor& image) {
  ImageTensor out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      out.data.row(y * image.width + x) = image.data.row(y * image.width + (image.width - 1 - x));
  return out;
}

LabelMap flip_horizontal(const LabelMap& mask) {
  LabelMap out = mask;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      out.labels[y * mask.width + x] = mask.labels[y * mask.width + (mask.width - 1 - x)];
  return out;
}

DatasetManifest write_dataset(const Dataset& data, std::uint64_t seed, const std::string& dir,
                              const std::string& split) {
  const fs::path root = fs::path(dir) / split;
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  fs::create_directories(root / "masks_vis");

  DatasetManifest m;
  m.split = split;
  m.count = int(data.size());
  m.height = data.height;
  m.width = data.width;
  m.num_classes = data.num_classes;
  m.seed = seed;
  m.class_stats = class_pixel_counts(data.labels, data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string& id = data.ids[i];
    const std::string image_rel = "images/" + id + ".ppm";
    const std::string mask_rel = "masks/" + id + ".pgm";
    save_image_ppm(data.images[i], (root / image_rel).string());
    save_mask_pgm(data.labels[i], (root / mask_rel).string());
    save_mask_visualization(data.labels[i], data.num_classes, (root / "masks_vis" / (id + ".ppm")).string());
    m.ids.push_back(id);
    m.image_files.push_back(image_rel);
    m.mask_files.push_back(mask_rel);
  }

  json j{{"split", m.split},
         {"count", m.count},
         {"height", m.height},
         {"width", m.width},
         {"num_classes", m.num_classes},
         {"seed", m.seed},
         {"ids", m.ids},
         {"image_files", m.image_files},
         {"mask_files", m.mask_files},
         {"pixels_per_class",
          std::vector<std::int64_t>(m.class_stats.pixels_per_class.data(),
                                    m.class_stats.pixels_per_class.data() +
                                        m.class_stats.pixels_per_class.size())}};
  std::ofstream out(root / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest under " + root.string());
  out << j.dump(2) << "\n";
  return m;
}

DatasetManifest load_manifest(const std::string& split_dir) {
  std::ifstream in(fs::path(split_dir) / "manifest.json", std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest under " + split_dir);
  const json j = json::parse(in);
  DatasetManifest m;
  m.split = j.at("split").get<std::string>();
  m.count = j.at("count").get<int>();
  m.height = j.at("height").get<int>();
  m.width = j.at("width").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.ids = j.at("ids").get<std::vector<std::string>>();
  m.image_files = j.at("image_files").get<std::vector<std::string>>();
  m.mask_files = j.at("mask_files").get<std::vector<std::string>>();
  const auto counts = j.at("pixels_per_class").get<std::vector<std::int64_t>>();
  m.class_stats.pixels_per_class =
      Eigen::Map<const Eigen::VectorX<std::int64_t>>(counts.data(), long(counts.size()));
  check(int(m.ids.size()) == m.count, "manifest: id count mismatch");
  return m;
}

Dataset load_dataset(const std::string& split_dir) {
  const DatasetManifest m = load_manifest(split_dir);
  Dataset data;
  data.height = m.height;
  data.width = m.width;
  data.num_classes = m.num_classes;
  data.ids = m.ids;
  for (int i = 0; i < m.count; ++i) {
    ImageTensor image = load_image_ppm((fs::path(split_dir) / m.image_files[size_t(i)]).string());
    LabelMap mask = load_mask_pgm((fs::path(split_dir) / m.mask_files[size_t(i)]).string());
    check(image.height == m.height && image.width == m.width, "dataset: image shape mismatch");
    check(mask.height == m.height && mask.width == m.width, "dataset: mask shape mismatch");
    mask.validate_range(m.num_classes);
    data.images.push_back(std::move(image));
    data.labels.push_back(std::move(mask));
  }
  return data;
}

PatchDataset make_patch_dataset(const Dataset& source, int patch, int per_image,
                                std::uint64_t seed) {
  check(patch >= 4 && patch <= source.height && patch <= source.width,
        "make_patch_dataset: bad patch size");
  PatchDataset out;
  out.patch = patch;
  out.num_classes = source.num_classes;
  Rng rng(derive_seed(seed, "patches"));
  for (std::size_t i = 0; i < source.size(); ++i) {
    for (int p = 0; p < per_image; ++p) {
      const int y0 = int(rng.uniform_index(std::uint64_t(source.height - patch + 1)));
      const int x0 = int(rng.uniform_index(std::uint64_t(source.width - patch + 1)));
      ImageTensor crop(patch, patch, source.images[i].channels);
      std::vector<std::int64_t> histogram(size_t(source.num_classes), 0);
      for (int y = 0; y < patch; ++y) {
        for (int x = 0; x < patch; ++x) {
          const int src = (y0 + y) * source.width + (x0 + x);
          crop.data.row(y * patch + x) = source.images[i].data.row(src);
          histogram[size_t(source.labels[i].labels[src])] += 1;
        }
      }
      const int dominant =
          int(std::max_element(histogram.begin(), histogram.end()) - histogram.begin());
      out.patches.push_back(std::move(crop));
      out.labels.push_back(dominant);
    }
  }
  return out;
}

}  // namespace segrob
