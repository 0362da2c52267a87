#include "pmim/targets.hpp"

#include <algorithm>
#include <cmath>

#include "pmim/errors.hpp"

namespace pmim {

const char* target_kind_name(TargetKind k) {
  switch (k) {
    case TargetKind::pixel: return "pixel";
    case TargetKind::hog: return "hog";
    case TargetKind::code: return "code";
  }
  return "?";
}

TargetKind target_kind_from_name(const std::string& name) {
  if (name == "pixel") return TargetKind::pixel;
  if (name == "hog") return TargetKind::hog;
  if (name == "code") return TargetKind::code;
  throw config_error("unknown target kind '" + name + "' (pixel|hog|code)");
}

int hog_dim(const HogConfig& cfg, int patch_size) {
  PMIM_CHECK_CONFIG(cfg.cell_size > 0 && patch_size % cfg.cell_size == 0,
                    "cell_size ", cfg.cell_size, " must divide patch size ",
                    patch_size);
  PMIM_CHECK_CONFIG(cfg.n_bins >= 2, "n_bins must be >= 2");
  const int cells = patch_size / cfg.cell_size;
  return cells * cells * cfg.n_bins;
}

TargetBatch pixel_target(const Image& image, const MaskingPlan& plan,
                         int patch_size, bool normalize_per_patch) {
  const PatchGrid grid = patchify(image, patch_size);
  PMIM_CHECK(grid.n() == plan.n_total, "plan does not match image grid");
  TargetBatch out;
  out.kind = TargetKind::pixel;
  const int d = grid.patch_dim();
  out.vectors.resize(static_cast<int>(plan.masked.size()), d);
  for (size_t i = 0; i < plan.masked.size(); ++i) {
    Vec<double> v = grid.patches.row(plan.masked[i]).cast<double>();
    if (normalize_per_patch) {
      const double mean = v.mean();
      const double var = (v.array() - mean).square().mean();
      v = (v.array() - mean) / std::sqrt(var + 1e-6);
    }
    out.vectors.row(static_cast<int>(i)) = v.transpose();
  }
  return out;
}

TargetBatch hog_target(const Image& image, const MaskingPlan& plan,
                       int patch_size, const HogConfig& cfg) {
  const int d = hog_dim(cfg, patch_size);
  const int p = patch_size;
  const int cells = p / cfg.cell_size;
  const int n_patches = (image.height / p) * (image.width / p);
  PMIM_CHECK(n_patches == plan.n_total, "plan does not match image grid");

  const std::vector<float> gray = to_grayscale(image);
  const int grid_cols = image.width / p;
  const double range = cfg.signed_orientation ? 2.0 * M_PI : M_PI;
  const double bin_width = range / cfg.n_bins;

  TargetBatch out;
  out.kind = TargetKind::hog;
  out.vectors.setZero(static_cast<int>(plan.masked.size()), d);

  std::vector<double> patch(static_cast<size_t>(p) * p);
  for (size_t mi = 0; mi < plan.masked.size(); ++mi) {
    const int idx = plan.masked[mi];
    const int r0 = (idx / grid_cols) * p;
    const int c0 = (idx % grid_cols) * p;
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x)
        patch[static_cast<size_t>(y) * p + x] =
            gray[static_cast<size_t>(r0 + y) * image.width + (c0 + x)];

    Eigen::RowVectorXd desc = Eigen::RowVectorXd::Zero(d);
    for (int y = 0; y < p; ++y) {
      for (int x = 0; x < p; ++x) {
        const int xm = std::max(x - 1, 0), xp = std::min(x + 1, p - 1);
        const int ym = std::max(y - 1, 0), yp = std::min(y + 1, p - 1);
        const double gx = patch[static_cast<size_t>(y) * p + xp] -
                          patch[static_cast<size_t>(y) * p + xm];
        const double gy = patch[static_cast<size_t>(yp) * p + x] -
                          patch[static_cast<size_t>(ym) * p + x];
        const double mag = std::sqrt(gx * gx + gy * gy);
        if (mag == 0.0) continue;
        double theta = std::atan2(gy, gx);
        if (theta < 0.0) theta += 2.0 * M_PI;
        if (!cfg.signed_orientation && theta >= M_PI) theta -= M_PI;
        double b = theta / bin_width;
        if (b >= cfg.n_bins) b -= cfg.n_bins;
        const int j0 = static_cast<int>(b);
        const double frac = b - j0;
        const int cell = (y / cfg.cell_size) * cells + (x / cfg.cell_size);
        desc(cell * cfg.n_bins + j0) += mag * (1.0 - frac);
        desc(cell * cfg.n_bins + (j0 + 1) % cfg.n_bins) += mag * frac;
      }
    }
    desc /= std::sqrt(desc.squaredNorm() + cfg.epsilon * cfg.epsilon);
    out.vectors.row(static_cast<int>(mi)) = desc;
  }
  return out;
}

TargetBatch codebook_target(const Image& image, const MaskingPlan& plan,
                            int patch_size, const Matd& codebook) {
  PMIM_CHECK_CONFIG(codebook.rows() > 0, "codebook is empty");
  const PatchGrid grid = patchify(image, patch_size);
  PMIM_CHECK(grid.n() == plan.n_total, "plan does not match image grid");
  PMIM_CHECK(codebook.cols() == grid.patch_dim(),
             "codebook dim ", codebook.cols(), " != patch dim ", grid.patch_dim());

  TargetBatch out;
  out.kind = TargetKind::code;
  out.codebook_size = static_cast<int>(codebook.rows());
  out.codes.resize(plan.masked.size());
  for (size_t i = 0; i < plan.masked.size(); ++i) {
    const Vec<double> v = grid.patches.row(plan.masked[i]).cast<double>();
    int best = 0;
    double best_d = (codebook.row(0).transpose() - v).squaredNorm();
    for (int k = 1; k < codebook.rows(); ++k) {
      const double dk = (codebook.row(k).transpose() - v).squaredNorm();
      if (dk < best_d) {
        best_d = dk;
        best = k;
      }
    }
    out.codes[i] = best;
  }
  return out;
}

double masked_objective(const Matd& predictions, const TargetBatch& targets) {
  if (targets.kind == TargetKind::code) {
    PMIM_CHECK(predictions.rows() == static_cast<int>(targets.codes.size()),
               "prediction count mismatch");
    PMIM_CHECK(predictions.cols() == targets.codebook_size,
               "logit dim ", predictions.cols(), " != codebook size ",
               targets.codebook_size);
    double total = 0.0;
    for (int i = 0; i < predictions.rows(); ++i) {
      const auto z = predictions.row(i);
      const double zmax = z.maxCoeff();
      const double lse = std::log((z.array() - zmax).exp().sum()) + zmax;
      total += lse - z(targets.codes[static_cast<size_t>(i)]);
    }
    return total / static_cast<double>(predictions.rows());
  }
  PMIM_CHECK(predictions.rows() == targets.vectors.rows() &&
                 predictions.cols() == targets.vectors.cols(),
             "prediction shape ", predictions.rows(), "x", predictions.cols(),
             " != target shape ", targets.vectors.rows(), "x",
             targets.vectors.cols());
  return (predictions - targets.vectors).cwiseAbs().mean();
}

}  // namespace pmim
