#include "pmim/patchify.hpp"

#include <algorithm>
#include <cmath>

#include "pmim/errors.hpp"

namespace pmim {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

PatchGrid patchify(const Image& image, int patch_size) {
  PMIM_CHECK_CONFIG(patch_size > 0, "patch_size must be positive");
  PMIM_CHECK_DATA(image.height % patch_size == 0 && image.width % patch_size == 0,
                  "image ", image.height, "x", image.width,
                  " not divisible by patch size ", patch_size);
  PatchGrid grid;
  grid.patch_size = patch_size;
  grid.rows = image.height / patch_size;
  grid.cols = image.width / patch_size;
  grid.channels = image.channels;
  grid.patches.resize(grid.n(), grid.patch_dim());
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      float* dst = grid.patches.row(r * grid.cols + c).data();
      for (int dy = 0; dy < patch_size; ++dy) {
        const float* src =
            &image.pixels[static_cast<size_t>(((r * patch_size + dy) * image.width +
                                               c * patch_size)) *
                          image.channels];
        std::copy(src, src + static_cast<size_t>(patch_size) * image.channels, dst);
        dst += static_cast<size_t>(patch_size) * image.channels;
      }
    }
  }
  return grid;
}

Image unpatchify(const PatchGrid& grid) {
  const int p = grid.patch_size;
  Image img = make_image(grid.rows * p, grid.cols * p, grid.channels);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const float* src = grid.patches.row(r * grid.cols + c).data();
      for (int dy = 0; dy < p; ++dy) {
        float* dst = &img.pixels[static_cast<size_t>(((r * p + dy) * img.width + c * p)) *
                                 img.channels];
        std::copy(src, src + static_cast<size_t>(p) * img.channels, dst);
        src += static_cast<size_t>(p) * img.channels;
      }
    }
  }
  return img;
}

MaskingPlan sample_masking_plan(int n_total, double mask_ratio, Rng& rng,
                                bool allow_overlap) {
  PMIM_CHECK_CONFIG(n_total >= 1, "n_total must be >= 1");
  PMIM_CHECK_CONFIG(mask_ratio >= 0.0 && mask_ratio <= 1.0,
                    "mask_ratio must be in [0,1], got ", mask_ratio);
  const int k = round_half_up(mask_ratio * n_total);

  MaskingPlan plan;
  plan.n_total = n_total;
  plan.mask_ratio = mask_ratio;
  plan.overlap = allow_overlap;
  plan.masked = rng.sample_without_replacement(n_total, k);
  std::sort(plan.masked.begin(), plan.masked.end());

  if (allow_overlap) {
    plan.retained.resize(n_total);
    for (int i = 0; i < n_total; ++i) plan.retained[i] = i;
  } else {
    std::vector<char> is_masked(n_total, 0);
    for (int m : plan.masked) is_masked[m] = 1;
    plan.retained.reserve(n_total - k);
    for (int i = 0; i < n_total; ++i)
      if (!is_masked[i]) plan.retained.push_back(i);
  }
  return plan;
}

void validate_plan(const MaskingPlan& plan) {
  PMIM_CHECK(std::is_sorted(plan.retained.begin(), plan.retained.end()),
             "retained not sorted");
  PMIM_CHECK(std::is_sorted(plan.masked.begin(), plan.masked.end()),
             "masked not sorted");
  std::vector<int> cover(plan.n_total, 0);
  for (int i : plan.retained) {
    PMIM_CHECK(i >= 0 && i < plan.n_total, "retained index out of range");
    cover[i] += 1;
  }
  for (int i : plan.masked) {
    PMIM_CHECK(i >= 0 && i < plan.n_total, "masked index out of range");
    cover[i] += plan.overlap ? 0 : 1;
  }
  for (int i = 0; i < plan.n_total; ++i)
    PMIM_CHECK(cover[i] == 1, "index ", i, " not covered exactly once");
  PMIM_CHECK(static_cast<int>(plan.masked.size()) ==
                 round_half_up(plan.mask_ratio * plan.n_total),
             "mask count mismatch");
}

}  // namespace pmim
