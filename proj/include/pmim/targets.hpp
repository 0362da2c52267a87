#pragma once

#include <vector>

#include "pmim/image.hpp"
#include "pmim/mat.hpp"
#include "pmim/patchify.hpp"

namespace pmim {

enum class TargetKind { pixel, hog, code };

const char* target_kind_name(TargetKind k);
TargetKind target_kind_from_name(const std::string& name);

// Dense supervision for the masked positions, ordered to match
// MaskingPlan.masked. For `code`, `codes` holds the class indices and
// `vectors` is unused.
struct TargetBatch {
  TargetKind kind = TargetKind::pixel;
  Matd vectors;            // |masked| x target_dim
  std::vector<int> codes;  // |masked|, only for kind == code
  int codebook_size = 0;
};

struct HogConfig {
  int n_bins = 9;
  int cell_size = 8;
  bool signed_orientation = false;  // default unsigned, [0, 180)
  double epsilon = 1e-6;
};

int hog_dim(const HogConfig& cfg, int patch_size);

// Raw (optionally per-patch standardized) pixels of the masked patches.
TargetBatch pixel_target(const Image& image, const MaskingPlan& plan,
                         int patch_size, bool normalize_per_patch);

// Per-patch histogram-of-oriented-gradients descriptor: luma conversion,
// central differences with replicate padding at patch borders, per-cell
// orientation histograms with linear bin interpolation (bin centers at
// i*bin_width), magnitude-weighted votes, and a single L2 normalization
// of the concatenated cell histograms with epsilon guard.
TargetBatch hog_target(const Image& image, const MaskingPlan& plan,
                       int patch_size, const HogConfig& cfg);

// Nearest codebook row by Euclidean distance; ties break to the lowest
// index.
TargetBatch codebook_target(const Image& image, const MaskingPlan& plan,
                            int patch_size, const Matd& codebook);

// Mean absolute error for pixel/hog targets, mean cross-entropy over
// logits for code targets. Mean reduction over all positions and
// dimensions, so the magnitude is mask-ratio-invariant.
double masked_objective(const Matd& predictions, const TargetBatch& targets);

}  // namespace pmim
