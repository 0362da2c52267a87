#include "pmim/analysis.hpp"

#include <cmath>

#include "pmim/errors.hpp"

namespace pmim {

namespace {

void check_head_mats(const std::vector<Matf>& heads, int n, int proxy_count) {
  PMIM_CHECK_CONFIG(!heads.empty(), "no attention heads recorded");
  const int t = n + proxy_count;
  for (const auto& h : heads)
    PMIM_CHECK_CONFIG(h.rows() == t && h.cols() == t,
                      "attention matrix is ", h.rows(), "x", h.cols(),
                      ", expected ", t, "x", t,
                      " (grid and proxy count must match the recording)");
}

}  // namespace

Matd attention_map(const std::vector<Matf>& heads, int grid_rows, int grid_cols,
                   int proxy_count, const AttentionQuery& query, int head) {
  const int n = grid_rows * grid_cols;
  check_head_mats(heads, n, proxy_count);
  const int n_heads = static_cast<int>(heads.size());
  PMIM_CHECK_CONFIG(head >= -1 && head < n_heads, "head ", head,
                    " out of range [0,", n_heads, ") (-1 for mean)");
  int row;
  if (query.kind == AttentionQuery::Kind::patch) {
    PMIM_CHECK_CONFIG(query.index >= 0 && query.index < n, "patch query ",
                      query.index, " out of range [0,", n, ")");
    row = query.index;
  } else {
    PMIM_CHECK_CONFIG(query.index >= 0 && query.index < proxy_count,
                      "proxy query ", query.index, " out of range [0,",
                      proxy_count, ")");
    row = n + query.index;
  }

  Vec<double> acc = Vec<double>::Zero(n);
  int used = 0;
  for (int h = 0; h < n_heads; ++h) {
    if (head >= 0 && h != head) continue;
    acc += heads[static_cast<size_t>(h)].row(row).head(n).cast<double>();
    ++used;
  }
  acc /= used;
  const double sum = acc.sum();
  PMIM_CHECK_NUMERIC(sum > 0, "attention mass over image keys is zero");
  acc /= sum;

  Matd map(grid_rows, grid_cols);
  for (int r = 0; r < grid_rows; ++r)
    for (int c = 0; c < grid_cols; ++c) map(r, c) = acc(r * grid_cols + c);
  return map;
}

std::vector<Matd> mean_proxy_heatmaps(
    const std::vector<std::vector<Matf>>& per_image_heads, int grid_rows,
    int grid_cols, int proxy_count) {
  PMIM_CHECK_CONFIG(!per_image_heads.empty(), "no images given");
  PMIM_CHECK_CONFIG(proxy_count >= 1, "model has no proxy tokens");
  std::vector<Matd> maps(static_cast<size_t>(proxy_count),
                         Matd::Zero(grid_rows, grid_cols));
  for (const auto& heads : per_image_heads) {
    for (int p = 0; p < proxy_count; ++p) {
      AttentionQuery q{AttentionQuery::Kind::proxy, p};
      maps[static_cast<size_t>(p)] +=
          attention_map(heads, grid_rows, grid_cols, proxy_count, q, -1);
    }
  }
  for (auto& m : maps) m /= static_cast<double>(per_image_heads.size());
  return maps;
}

std::vector<std::vector<double>> attention_distance(
    const std::vector<std::vector<std::vector<Matf>>>& attn, int grid_rows,
    int grid_cols, int proxy_count, int patch_size) {
  PMIM_CHECK_CONFIG(!attn.empty() && !attn[0].empty(), "no attention recorded");
  const int n = grid_rows * grid_cols;
  Matd dist(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const double dy = (a / grid_cols - b / grid_cols) * static_cast<double>(patch_size);
      const double dx = (a % grid_cols - b % grid_cols) * static_cast<double>(patch_size);
      dist(a, b) = std::sqrt(dy * dy + dx * dx);
    }

  std::vector<std::vector<double>> profile;
  for (const auto& per_image : attn) {
    PMIM_CHECK_CONFIG(!per_image.empty(), "layer with no recorded images");
    const int n_heads = static_cast<int>(per_image[0].size());
    std::vector<double> layer_out(static_cast<size_t>(n_heads), 0.0);
    for (const auto& heads : per_image) {
      PMIM_CHECK_CONFIG(static_cast<int>(heads.size()) == n_heads,
                        "inconsistent head count across images");
      check_head_mats(heads, n, proxy_count);
      for (int h = 0; h < n_heads; ++h) {
        double mean_q = 0;
        for (int q = 0; q < n; ++q) {
          const auto row = heads[static_cast<size_t>(h)].row(q).head(n).cast<double>();
          const double mass = row.sum();
          PMIM_CHECK_NUMERIC(mass > 0, "attention mass over image keys is zero");
          mean_q += row.cwiseProduct(dist.row(q)).sum() / mass;
        }
        layer_out[static_cast<size_t>(h)] += mean_q / n;
      }
    }
    for (auto& v : layer_out) v /= static_cast<double>(per_image.size());
    profile.push_back(std::move(layer_out));
  }
  return profile;
}

double map_entropy(const Matd& map) {
  const double total = map.sum();
  PMIM_CHECK_NUMERIC(total > 0 && map.minCoeff() >= 0,
                     "entropy needs a nonnegative map with positive mass");
  double h = 0;
  for (int i = 0; i < map.rows(); ++i)
    for (int j = 0; j < map.cols(); ++j) {
      const double p = map(i, j) / total;
      if (p > 0) h -= p * std::log(p);
    }
  return h;
}

void render_heatmap(const Matd& map, int patch_size, const std::string& path,
                    const Image* base) {
  PMIM_CHECK_CONFIG(map.rows() >= 1 && map.cols() >= 1 && patch_size >= 1,
                    "empty heatmap or bad patch size");
  PMIM_CHECK_NUMERIC(map.allFinite(), "heatmap contains non-finite values");
  const double lo = map.minCoeff(), hi = map.maxCoeff();
  const int h = static_cast<int>(map.rows()) * patch_size;
  const int w = static_cast<int>(map.cols()) * patch_size;

  // normalized per-pixel heat in [0,1]; constant maps render mid-gray
  auto heat = [&](int y, int x) {
    const double v = map(y / patch_size, x / patch_size);
    return hi > lo ? (v - lo) / (hi - lo) : 128.0 / 255.0;
  };

  if (!base) {
    Image out = make_image(h, w, 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(y, x, 0) =
            static_cast<float>(std::lround(heat(y, x) * 255.0) / 255.0);
    write_pnm(out, path);
    return;
  }
  PMIM_CHECK_CONFIG(base->height == h && base->width == w && base->channels == 3,
                    "overlay base image must be ", h, "x", w, " RGB");
  Image out = make_image(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float hv = static_cast<float>(heat(y, x));
      out.at(y, x, 0) = 0.5f * base->at(y, x, 0) + 0.5f * hv;
      out.at(y, x, 1) = 0.5f * base->at(y, x, 1);
      out.at(y, x, 2) = 0.5f * base->at(y, x, 2);
    }
  write_pnm(out, path);
}

}  // namespace pmim
