#include "pmim/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "pmim/errors.hpp"
#include "pmim/patchify.hpp"
#include "pmim/rng.hpp"
#include "pmim/serialize.hpp"

namespace fs = std::filesystem;

namespace pmim {

const std::vector<std::string> kShapeKinds = {"rectangle", "disk"};

int shape_kind_id(const std::string& name) {
  for (size_t i = 0; i < kShapeKinds.size(); ++i)
    if (kShapeKinds[i] == name) return static_cast<int>(i);
  throw config_error("unknown shape kind '" + name + "'");
}

void SynthConfig::validate() const {
  PMIM_CHECK_CONFIG(image_size >= 8, "image_size must be at least 8");
  PMIM_CHECK_CONFIG(n_images >= 1, "n_images must be at least 1");
  PMIM_CHECK_CONFIG(min_shapes >= 1 && min_shapes <= max_shapes,
                    "need 1 <= min_shapes <= max_shapes (got ", min_shapes, "..",
                    max_shapes, ")");
  PMIM_CHECK_CONFIG(!kinds.empty(), "at least one shape kind required");
  for (const auto& k : kinds) shape_kind_id(k);
  PMIM_CHECK_CONFIG(min_shape_frac > 0 && min_shape_frac <= max_shape_frac &&
                        max_shape_frac <= 1.0,
                    "shape size fractions must satisfy 0 < min <= max <= 1");
  PMIM_CHECK_CONFIG(background_amplitude >= 0 && background_amplitude <= 0.5,
                    "background_amplitude must be in [0, 0.5]");
  for (const auto& c : palette)
    for (float v : c)
      PMIM_CHECK_CONFIG(v >= 0.0f && v <= 1.0f, "palette values must be in [0,1]");
}

std::vector<std::array<float, 3>> SynthConfig::effective_palette() const {
  if (!palette.empty()) return palette;
  return {{0.90f, 0.20f, 0.20f}, {0.20f, 0.80f, 0.25f}, {0.20f, 0.35f, 0.90f},
          {0.90f, 0.85f, 0.20f}, {0.85f, 0.25f, 0.80f}, {0.20f, 0.80f, 0.85f}};
}

int patch_class(const LabeledImage& li, int patch_index) {
  PMIM_CHECK(patch_index >= 0 &&
                 patch_index < static_cast<int>(li.patch_labels.size()),
             "patch index out of range");
  const int32_t obj = li.patch_labels[static_cast<size_t>(patch_index)];
  if (obj == 0) return 0;
  PMIM_CHECK_DATA(obj >= 1 && obj <= static_cast<int32_t>(li.object_kinds.size()),
                  "patch label ", obj, " has no object kind entry");
  return 1 + li.object_kinds[static_cast<size_t>(obj - 1)];
}

namespace {

struct Shape {
  int kind;  // global kind id
  std::array<float, 3> color;
  // rectangle: [x0,x1) x [y0,y1); disk: center/radius
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double cx = 0, cy = 0, r = 0;

  bool contains(int y, int x) const {
    if (kind == 0) return x >= x0 && x < x1 && y >= y0 && y < y1;
    const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
    return dy * dy + dx * dx <= r * r;
  }
};

LabeledImage make_one(const SynthConfig& cfg, int patch_size, uint64_t index,
                      const std::vector<std::array<float, 3>>& palette) {
  Rng rng = Rng::substream(cfg.seed, "image", index);
  const int s = cfg.image_size;

  LabeledImage li;
  li.image = make_image(s, s, 3);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const float v = static_cast<float>(
          std::clamp(0.5 + cfg.background_amplitude * (2.0 * rng.uniform() - 1.0),
                     0.0, 1.0));
      for (int c = 0; c < 3; ++c) li.image.at(y, x, c) = v;
    }

  const int n_shapes =
      cfg.min_shapes + static_cast<int>(rng.below(
                           static_cast<uint64_t>(cfg.max_shapes - cfg.min_shapes + 1)));
  std::vector<Shape> shapes;
  for (int i = 0; i < n_shapes; ++i) {
    Shape sh;
    sh.kind = shape_kind_id(cfg.kinds[static_cast<size_t>(
        rng.below(static_cast<uint64_t>(cfg.kinds.size())))]);
    sh.color = palette[static_cast<size_t>(
        rng.below(static_cast<uint64_t>(palette.size())))];
    auto extent = [&]() {
      const double f =
          cfg.min_shape_frac + rng.uniform() * (cfg.max_shape_frac - cfg.min_shape_frac);
      return std::clamp(static_cast<int>(std::lround(f * s)), 1, s);
    };
    if (sh.kind == 0) {
      const int w = extent(), h = extent();
      sh.x0 = static_cast<int>(rng.below(static_cast<uint64_t>(s - w + 1)));
      sh.y0 = static_cast<int>(rng.below(static_cast<uint64_t>(s - h + 1)));
      sh.x1 = sh.x0 + w;
      sh.y1 = sh.y0 + h;
    } else {
      sh.r = extent() / 2.0;
      sh.cx = sh.r + rng.uniform() * (s - 2.0 * sh.r);
      sh.cy = sh.r + rng.uniform() * (s - 2.0 * sh.r);
    }
    shapes.push_back(sh);
    li.object_kinds.push_back(sh.kind);
  }

  // paint in order; later shapes occlude earlier ones
  std::vector<int32_t> object_map(static_cast<size_t>(s) * s, 0);
  for (size_t i = 0; i < shapes.size(); ++i)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        if (shapes[i].contains(y, x)) {
          object_map[static_cast<size_t>(y) * s + x] = static_cast<int32_t>(i + 1);
          for (int c = 0; c < 3; ++c) li.image.at(y, x, c) = shapes[i].color[c];
        }

  std::vector<int64_t> kind_pixels(kShapeKinds.size(), 0);
  for (int32_t id : object_map)
    if (id > 0) ++kind_pixels[static_cast<size_t>(li.object_kinds[id - 1])];
  li.class_label = static_cast<int>(
      std::max_element(kind_pixels.begin(), kind_pixels.end()) - kind_pixels.begin());

  PMIM_CHECK_CONFIG(s % patch_size == 0, "patch size ", patch_size,
                    " does not divide image size ", s);
  li.label_rows = li.label_cols = s / patch_size;
  li.patch_labels.resize(static_cast<size_t>(li.label_rows) * li.label_cols);
  for (int pr = 0; pr < li.label_rows; ++pr)
    for (int pc = 0; pc < li.label_cols; ++pc) {
      const int cy = pr * patch_size + patch_size / 2;
      const int cx = pc * patch_size + patch_size / 2;
      li.patch_labels[static_cast<size_t>(pr) * li.label_cols + pc] =
          object_map[static_cast<size_t>(cy) * s + cx];
    }
  return li;
}

}  // namespace

std::vector<LabeledImage> generate_synthetic(const SynthConfig& cfg, int patch_size) {
  cfg.validate();
  PMIM_CHECK_CONFIG(patch_size >= 1 && cfg.image_size % patch_size == 0,
                    "patch size ", patch_size, " does not divide image size ",
                    cfg.image_size);
  const auto palette = cfg.effective_palette();
  std::vector<LabeledImage> out;
  out.reserve(static_cast<size_t>(cfg.n_images));
  for (int i = 0; i < cfg.n_images; ++i)
    out.push_back(make_one(cfg, patch_size, static_cast<uint64_t>(i), palette));
  return out;
}

Matf dataset_patches(const std::vector<LabeledImage>& data, int patch_size) {
  PMIM_CHECK_DATA(!data.empty(), "dataset is empty");
  const PatchGrid first = patchify(data[0].image, patch_size);
  Matf all(static_cast<int>(data.size()) * first.n(), first.patch_dim());
  int row = 0;
  for (const auto& li : data) {
    const PatchGrid g = patchify(li.image, patch_size);
    PMIM_CHECK_DATA(g.n() == first.n() && g.patch_dim() == first.patch_dim(),
                    "dataset images disagree on patch grid shape");
    all.middleRows(row, g.n()) = g.patches;
    row += g.n();
  }
  return all;
}

namespace {

size_t distinct_rows(const Matf& points) {
  std::unordered_set<uint64_t> seen;
  for (int i = 0; i < points.rows(); ++i)
    seen.insert(fnv1a64(std::string_view(
        reinterpret_cast<const char*>(points.row(i).data()),
        sizeof(float) * static_cast<size_t>(points.cols()))));
  return seen.size();
}

int nearest_row(const Matf& codebook, const Eigen::RowVectorXf& p) {
  int best = 0;
  float best_d = std::numeric_limits<float>::max();
  for (int c = 0; c < codebook.rows(); ++c) {
    const float d = (codebook.row(c) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

Matf train_codebook(const Matf& points, int k, int iterations, uint64_t seed) {
  PMIM_CHECK_CONFIG(k >= 1, "codebook size must be at least 1");
  PMIM_CHECK_CONFIG(iterations >= 1, "k-means needs at least one iteration");
  PMIM_CHECK_DATA(points.rows() >= 1, "no points to train a codebook on");
  PMIM_CHECK_DATA(distinct_rows(points) >= static_cast<size_t>(k),
                  "codebook size ", k, " exceeds the number of distinct points");
  const int n = static_cast<int>(points.rows());
  Rng rng(seed);

  // distance-weighted seeding
  Matf centers(k, points.cols());
  centers.row(0) = points.row(static_cast<int>(rng.below(static_cast<uint64_t>(n))));
  std::vector<double> d2(static_cast<size_t>(n));
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (int j = 0; j < c; ++j)
        best = std::min(best,
                        static_cast<double>((points.row(i) - centers.row(j)).squaredNorm()));
      d2[static_cast<size_t>(i)] = best;
      total += best;
    }
    int pick = -1;
    if (total > 0) {
      double x = rng.uniform() * total;
      for (int i = 0; i < n; ++i) {
        x -= d2[static_cast<size_t>(i)];
        if (x <= 0) {
          pick = i;
          break;
        }
      }
    }
    if (pick < 0) pick = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
    centers.row(c) = points.row(pick);
  }

  std::vector<int> assign(static_cast<size_t>(n), 0);
  std::vector<float> dist(static_cast<size_t>(n), 0.0f);
  for (int it = 0; it < iterations; ++it) {
    for (int i = 0; i < n; ++i) {
      assign[static_cast<size_t>(i)] = nearest_row(centers, points.row(i));
      dist[static_cast<size_t>(i)] =
          (points.row(i) - centers.row(assign[static_cast<size_t>(i)])).squaredNorm();
    }
    Matf sums = Matf::Zero(k, points.cols());
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      sums.row(assign[static_cast<size_t>(i)]) += points.row(i);
      ++counts[static_cast<size_t>(assign[static_cast<size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<float>(counts[static_cast<size_t>(c)]);
      } else {
        // steal the point farthest from its current centroid
        int far = static_cast<int>(
            std::max_element(dist.begin(), dist.end()) - dist.begin());
        centers.row(c) = points.row(far);
        assign[static_cast<size_t>(far)] = c;
        dist[static_cast<size_t>(far)] = 0.0f;
      }
    }
  }
  return centers;
}

double codebook_objective(const Matf& points, const Matf& codebook) {
  PMIM_CHECK_DATA(points.rows() >= 1 && codebook.rows() >= 1,
                  "empty points or codebook");
  double total = 0;
  for (int i = 0; i < points.rows(); ++i) {
    const int c = nearest_row(codebook, points.row(i));
    total += static_cast<double>((points.row(i) - codebook.row(c)).squaredNorm());
  }
  return total / points.rows();
}

namespace {

std::string image_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%06zu.ppm", i);
  return buf;
}

std::string label_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%06zu.labels.rten", i);
  return buf;
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<LabeledImage>& data,
                   const nlohmann::json& meta) {
  PMIM_CHECK_DATA(!data.empty(), "refusing to write an empty dataset");
  fs::create_directories(dir);
  nlohmann::json index = meta;
  index["format"] = 1;
  index["class_names"] = kShapeKinds;
  nlohmann::json entries = nlohmann::json::array();
  for (size_t i = 0; i < data.size(); ++i) {
    const LabeledImage& li = data[i];
    write_pnm(li.image, (fs::path(dir) / image_name(i)).string());
    write_raw_tensor((fs::path(dir) / label_name(i)).string(),
                     tensor_from_ints(li.patch_labels,
                                      {static_cast<uint64_t>(li.label_rows),
                                       static_cast<uint64_t>(li.label_cols)}));
    entries.push_back({{"file", image_name(i)},
                       {"labels", label_name(i)},
                       {"class_label", li.class_label},
                       {"object_kinds", li.object_kinds}});
  }
  index["images"] = std::move(entries);
  auto out = io::open_output((fs::path(dir) / "index.json").string());
  out << index.dump(2) << "\n";
}

nlohmann::json read_dataset_index(const std::string& dir) {
  auto in = io::open_input((fs::path(dir) / "index.json").string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error(dir + "/index.json is not valid JSON: " + e.what());
  }
}

std::vector<LabeledImage> load_dataset(const std::string& dir) {
  const nlohmann::json index = read_dataset_index(dir);
  PMIM_CHECK_DATA(index.contains("images") && index["images"].is_array(),
                  dir, "/index.json has no image list");
  std::vector<LabeledImage> out;
  for (const auto& e : index["images"]) {
    LabeledImage li;
    try {
      li.image = read_pnm((fs::path(dir) / e.at("file").get<std::string>()).string());
      const RawTensor t = read_raw_tensor(
          (fs::path(dir) / e.at("labels").get<std::string>()).string());
      PMIM_CHECK_DATA(t.dims.size() == 2, "label tensor must have rank 2");
      li.label_rows = static_cast<int>(t.dims[0]);
      li.label_cols = static_cast<int>(t.dims[1]);
      li.patch_labels = ints_from_tensor(t, "patch labels");
      li.class_label = e.at("class_label").get<int>();
      li.object_kinds = e.at("object_kinds").get<std::vector<int32_t>>();
    } catch (const nlohmann::json::exception& ex) {
      throw data_error(dir + "/index.json: malformed image entry: " + ex.what());
    }
    PMIM_CHECK_DATA(li.label_rows > 0 && li.label_cols > 0 &&
                        li.image.height % li.label_rows == 0 &&
                        li.image.width % li.label_cols == 0,
                    "label grid does not divide the image dimensions");
    for (int32_t obj : li.patch_labels)
      PMIM_CHECK_DATA(obj >= 0 && obj <= static_cast<int32_t>(li.object_kinds.size()),
                      "patch label ", obj, " out of range");
    out.push_back(std::move(li));
  }
  PMIM_CHECK_DATA(!out.empty(), "dataset at ", dir, " contains no images");
  return out;
}

}  // namespace pmim
