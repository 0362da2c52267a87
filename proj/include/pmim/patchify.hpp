#pragma once

#include <cstdint>
#include <vector>

#include "pmim/image.hpp"
#include "pmim/mat.hpp"
#include "pmim/rng.hpp"

namespace pmim {

// Non-overlapping patch tiling. patches.row(i) is the flattened patch for
// grid cell (i / cols, i % cols), laid out (dy, dx, channel)-interleaved,
// i.e. exactly the image memory order restricted to the tile.
struct PatchGrid {
  int patch_size = 0;
  int rows = 0;
  int cols = 0;
  int channels = 0;
  Matf patches;  // N x (patch_size^2 * channels)

  int n() const { return rows * cols; }
  int patch_dim() const { return patch_size * patch_size * channels; }
};

// Index partition of {0..n_total-1} into retained and masked positions.
// Both lists are sorted. With `overlap` (experimental) the retained list
// keeps all positions and only the masked list is sampled, so the two
// sets are no longer disjoint.
struct MaskingPlan {
  int n_total = 0;
  std::vector<int> retained;
  std::vector<int> masked;
  double mask_ratio = 0.0;
  bool overlap = false;
};

PatchGrid patchify(const Image& image, int patch_size);
Image unpatchify(const PatchGrid& grid);

// round-half-up(mask_ratio * n_total) positions are masked, uniformly at
// random; deterministic given the rng state.
MaskingPlan sample_masking_plan(int n_total, double mask_ratio, Rng& rng,
                                bool allow_overlap = false);

// Throws on violated invariants (partition, sortedness, count).
void validate_plan(const MaskingPlan& plan);

int round_half_up(double x);

}  // namespace pmim
