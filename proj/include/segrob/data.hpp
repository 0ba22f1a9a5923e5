#pragma once

#include "segrob/metrics.hpp"
#include "segrob/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace segrob {

/// In-memory split: images, exact masks, stable ids.
struct Dataset {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<ImageTensor> images;
  std::vector<LabelMap> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return images.size(); }
  Dataset subset(std::size_t count) const;
};

enum class ShapeKind { Rectangle, Disk, Triangle };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::Rectangle;
  int class_id = 0;
  int center_y = 0, center_x = 0;
  int half_h = 0, half_w = 0;  // disk uses half_w as the radius
};

/// Recipe for one synthetic image: shapes over a textured background.
struct SceneSpec {
  std::vector<ShapeSpec> shapes;
  int background_class = 0;
  double color_jitter = 0.03;
  double noise_amplitude = 0.04;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::string split;
  int count = 0;
  int height = 0, width = 0, num_classes = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
  std::vector<std::string> image_files;
  std::vector<std::string> mask_files;
  ClassStats class_stats;
};

/// Scene fill color of a class: sign patterns around mid gray, so class
/// margins sit at attack scale instead of being trivially separable.
Vector class_fill_color(int class_id, int num_classes);

/// Fixed K-entry saturated palette for mask visualizations.
Vector class_color(int class_id, int num_classes);

/// Deterministic scene sampling + rasterization.
SceneSpec sample_scene(std::uint64_t seed, int index, int height, int width, int num_classes);
void render_scene(const SceneSpec& scene, int height, int width, int num_classes,
                  ImageTensor& image, LabelMap& labels);

Dataset generate_dataset(std::uint64_t seed, int n_images, int height, int width, int num_classes);

/// Generate and persist one split under dir/<split>/ (8-bit images, indexed
/// masks, palette visualization, manifest.json). Same seed, same bytes.
DatasetManifest write_dataset(const Dataset& data, std::uint64_t seed, const std::string& dir,
                              const std::string& split);

Dataset load_dataset(const std::string& split_dir);
DatasetManifest load_manifest(const std::string& split_dir);

// image/mask IO: binary PPM (P6) for RGB, PGM (P5) for class indices
void save_image_ppm(const ImageTensor& image, const std::string& path);
ImageTensor load_image_ppm(const std::string& path);
void save_mask_pgm(const LabelMap& mask, const std::string& path);
LabelMap load_mask_pgm(const std::string& path);
void save_mask_visualization(const LabelMap& mask, int num_classes, const std::string& path);

// lossless f64 image container for adversarial dumps consumed by transfer runs
void save_image_f64(const ImageTensor& image, const std::string& path);
ImageTensor load_image_f64(const std::string& path);

ImageTensor flip_horizontal(const ImageTensor& image);
LabelMap flip_horizontal(const LabelMap& mask);

/// Patch-classification split for backbone pretraining: crops of the source
/// images labeled with the dominant class of the crop.
struct PatchDataset {
  int patch = 0;
  int num_classes = 0;
  std::vector<ImageTensor> patches;
  std::vector<int> labels;
};

PatchDataset make_patch_dataset(const Dataset& source, int patch, int per_image, std::uint64_t seed);

}  // namespace segrob
