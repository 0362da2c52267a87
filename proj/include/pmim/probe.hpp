#pragma once

#include <string>
#include <vector>

#include "pmim/data.hpp"
#include "pmim/model.hpp"

namespace pmim {

// Mirrors the 7th-of-12-layers feature choice proportionally.
int default_probe_layer(int depth);

struct FeatureSpec {
  int layer = -1;  // -1: default_probe_layer(depth)
  std::string pooling = "mean_img_tokens";  // or "cls_token"
  int cls_index = 0;
  bool normalize = true;

  int resolve_layer(int depth) const;
  void validate(const ModelConfig& cfg) const;
};

// One row per image: mean of image-token states at the chosen layer, or a
// single proxy-token row. Layer 0 is the embedding, layer depth is after
// the final norm.
Matf extract_features(Model<float>& model, const std::vector<LabeledImage>& images,
                      const FeatureSpec& spec, int batch_size = 64);

// One row per (image, patch): the image-token state itself.
Matf extract_patch_features(Model<float>& model,
                            const std::vector<LabeledImage>& images, int layer,
                            bool normalize, int batch_size = 64);

std::vector<int> image_labels(const std::vector<LabeledImage>& images);
// Per-patch class: 0 background, 1 + kind otherwise.
std::vector<int> patch_labels_by_kind(const std::vector<LabeledImage>& images);

struct ProbeConfig {
  int epochs = 200;
  double lr = 0.5;
  double lr_bias = 0.5;  // kept separate so feature rescaling is testable
};

struct ProbeResult {
  double accuracy = 0;
  Matd weights;  // classes x dim
  Matd bias;     // 1 x classes
};

// Full-batch softmax-regression training from zero init with cosine-decayed
// learning rate; reports eval top-1.
ProbeResult linear_probe(const Matf& train_x, const std::vector<int>& train_y,
                         const Matf& eval_x, const std::vector<int>& eval_y,
                         int n_classes, const ProbeConfig& cfg);

std::vector<int> classify(const Matf& x, const Matd& w, const Matd& b);
double top1_accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

}  // namespace pmim
