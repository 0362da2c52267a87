#pragma once

#include <string>
#include <vector>

#include "pmim/image.hpp"
#include "pmim/mat.hpp"

namespace pmim {

struct AttentionQuery {
  enum class Kind { patch, proxy };
  Kind kind = Kind::patch;
  int index = 0;
};

// One layer's recorded self-attention for one image: per-head square
// matrices over [image tokens | proxy tokens]. The query row, restricted
// to image-token keys; heads averaged when head < 0; renormalized to sum
// to 1; reshaped to the patch grid.
Matd attention_map(const std::vector<Matf>& heads, int grid_rows, int grid_cols,
                   int proxy_count, const AttentionQuery& query, int head);

// Element-wise mean of each proxy's attention map (heads averaged) over an
// image set. Input: per image, the per-head matrices of one layer.
std::vector<Matd> mean_proxy_heatmaps(
    const std::vector<std::vector<Matf>>& per_image_heads, int grid_rows,
    int grid_cols, int proxy_count);

// Per (layer, head): mean over image-token queries of the attention-weighted
// distance between patch centers, in pixels. Proxy rows and columns are
// excluded; rows are renormalized over image keys. attn layout:
// [layer][image][head].
std::vector<std::vector<double>> attention_distance(
    const std::vector<std::vector<std::vector<Matf>>>& attn, int grid_rows,
    int grid_cols, int proxy_count, int patch_size);

// Shannon entropy (nats) of a nonnegative map, normalized to sum 1 first.
double map_entropy(const Matd& map);

// Min-max normalized, nearest-neighbor upsampled by patch_size. Without a
// base image: 8-bit PGM. With one: PPM blending base 50% with a red heat
// layer. A constant map renders mid-gray (128).
void render_heatmap(const Matd& map, int patch_size, const std::string& path,
                    const Image* base = nullptr);

}  // namespace pmim
