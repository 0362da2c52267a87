#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmim/image.hpp"
#include "pmim/mat.hpp"

namespace pmim {

// Shape kind ids are stable: 0 = rectangle, 1 = disk.
extern const std::vector<std::string> kShapeKinds;
int shape_kind_id(const std::string& name);

struct SynthConfig {
  int image_size = 32;
  int n_images = 256;
  int min_shapes = 1;
  int max_shapes = 3;
  std::vector<std::string> kinds = {"rectangle", "disk"};
  std::vector<std::array<float, 3>> palette;  // empty -> default 6 colors
  double min_shape_frac = 0.25;               // shape extent as fraction of side
  double max_shape_frac = 0.55;
  double background_amplitude = 0.03;
  uint64_t seed = 7;

  void validate() const;
  std::vector<std::array<float, 3>> effective_palette() const;
};

struct LabeledImage {
  Image image;
  int class_label = 0;  // dominant visible shape kind
  int label_rows = 0, label_cols = 0;
  std::vector<int32_t> patch_labels;  // object id at patch center, 0 = background
  std::vector<int32_t> object_kinds;  // kind id of object with id i+1
};

// Number of classes for the per-patch probe: background plus each kind.
inline int n_patch_classes() { return 1 + static_cast<int>(kShapeKinds.size()); }
int patch_class(const LabeledImage& li, int patch_index);

std::vector<LabeledImage> generate_synthetic(const SynthConfig& cfg, int patch_size);

// All patches of all images stacked row-wise; codebook training input.
Matf dataset_patches(const std::vector<LabeledImage>& data, int patch_size);

// Lloyd's k-means with seeded distance-weighted init; empty clusters are
// reseeded to the point farthest from its assigned centroid.
Matf train_codebook(const Matf& points, int k, int iterations, uint64_t seed);
double codebook_objective(const Matf& points, const Matf& codebook);

// On-disk dataset: PPM images, per-image patch-label raw tensors, and a
// JSON index with class labels and generator metadata.
void write_dataset(const std::string& dir, const std::vector<LabeledImage>& data,
                   const nlohmann::json& meta);
std::vector<LabeledImage> load_dataset(const std::string& dir);
nlohmann::json read_dataset_index(const std::string& dir);

}  // namespace pmim
