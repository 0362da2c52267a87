#include "pmim/probe.hpp"

#include <cmath>

#include "pmim/patchify.hpp"

namespace pmim {

int default_probe_layer(int depth) { return round_half_up(depth * 7.0 / 12.0); }

int FeatureSpec::resolve_layer(int depth) const {
  return layer < 0 ? default_probe_layer(depth) : layer;
}

void FeatureSpec::validate(const ModelConfig& cfg) const {
  const int l = resolve_layer(cfg.depth);
  PMIM_CHECK_CONFIG(l >= 0 && l <= cfg.depth, "probe layer ", l,
                    " out of range [0,", cfg.depth, "]");
  PMIM_CHECK_CONFIG(pooling == "mean_img_tokens" || pooling == "cls_token",
                    "unknown pooling '", pooling,
                    "' (expected mean_img_tokens|cls_token)");
  if (pooling == "cls_token")
    PMIM_CHECK_CONFIG(cls_index >= 0 && cls_index < cfg.proxy_count,
                      "cls index ", cls_index, " out of range [0,",
                      cfg.proxy_count, ")");
}

namespace {

// Full-image forward (every patch retained, nothing masked) through one
// batch; returns the recorded layer states.
Trace<float> forward_full(Model<float>& model,
                          const std::vector<const LabeledImage*>& batch) {
  const int n = model.cfg.n_patches();
  TokenBatch<float> tb;
  tb.batch = static_cast<int>(batch.size());
  tb.retained_per_image = n;
  tb.masked_per_image = 0;
  tb.patches.resize(tb.batch * n, model.cfg.patch_dim());
  tb.img_pos.resize(static_cast<size_t>(tb.batch) * n);
  for (int i = 0; i < tb.batch; ++i) {
    const PatchGrid grid = patchify(batch[static_cast<size_t>(i)]->image,
                                    model.cfg.patch_size);
    tb.patches.middleRows(i * n, n) = grid.patches;
    for (int j = 0; j < n; ++j) tb.img_pos[static_cast<size_t>(i) * n + j] = j;
  }
  Graph<float> g;
  Trace<float> trace;
  model.forward(g, tb, false, nullptr, &trace);
  return trace;
}

void l2_normalize_rows(Matf& x) {
  for (int i = 0; i < x.rows(); ++i) {
    const float norm = x.row(i).norm();
    if (norm > 0) x.row(i) /= norm;
  }
}

}  // namespace

Matf extract_features(Model<float>& model, const std::vector<LabeledImage>& images,
                      const FeatureSpec& spec, int batch_size) {
  spec.validate(model.cfg);
  PMIM_CHECK_DATA(!images.empty(), "no images to extract features from");
  const int layer = spec.resolve_layer(model.cfg.depth);
  const int n = model.cfg.n_patches();
  Matf feats(static_cast<int>(images.size()), model.cfg.dim);
  for (size_t at = 0; at < images.size(); at += static_cast<size_t>(batch_size)) {
    std::vector<const LabeledImage*> batch;
    for (size_t i = at; i < std::min(images.size(), at + batch_size); ++i)
      batch.push_back(&images[i]);
    const Trace<float> trace = forward_full(model, batch);
    for (size_t i = 0; i < batch.size(); ++i) {
      const int row = static_cast<int>(at + i);
      if (spec.pooling == "mean_img_tokens") {
        feats.row(row) = trace.img_states[static_cast<size_t>(layer)]
                             .middleRows(static_cast<int>(i) * n, n)
                             .colwise()
                             .mean();
      } else {
        feats.row(row) = trace.proxy_states[static_cast<size_t>(layer)].row(
            static_cast<int>(i) * model.cfg.proxy_count + spec.cls_index);
      }
    }
  }
  if (spec.normalize) l2_normalize_rows(feats);
  return feats;
}

Matf extract_patch_features(Model<float>& model,
                            const std::vector<LabeledImage>& images, int layer,
                            bool normalize, int batch_size) {
  PMIM_CHECK_CONFIG(layer >= 0 && layer <= model.cfg.depth, "probe layer ", layer,
                    " out of range [0,", model.cfg.depth, "]");
  PMIM_CHECK_DATA(!images.empty(), "no images to extract features from");
  const int n = model.cfg.n_patches();
  Matf feats(static_cast<int>(images.size()) * n, model.cfg.dim);
  for (size_t at = 0; at < images.size(); at += static_cast<size_t>(batch_size)) {
    std::vector<const LabeledImage*> batch;
    for (size_t i = at; i < std::min(images.size(), at + batch_size); ++i)
      batch.push_back(&images[i]);
    const Trace<float> trace = forward_full(model, batch);
    feats.middleRows(static_cast<int>(at) * n,
                     static_cast<int>(batch.size()) * n) =
        trace.img_states[static_cast<size_t>(layer)];
  }
  if (normalize) l2_normalize_rows(feats);
  return feats;
}

std::vector<int> image_labels(const std::vector<LabeledImage>& images) {
  std::vector<int> y;
  y.reserve(images.size());
  for (const auto& li : images) y.push_back(li.class_label);
  return y;
}

std::vector<int> patch_labels_by_kind(const std::vector<LabeledImage>& images) {
  std::vector<int> y;
  for (const auto& li : images)
    for (size_t p = 0; p < li.patch_labels.size(); ++p)
      y.push_back(patch_class(li, static_cast<int>(p)));
  return y;
}

std::vector<int> classify(const Matf& x, const Matd& w, const Matd& b) {
  const Matd logits =
      (x.cast<double>() * w.transpose()).rowwise() + b.row(0);
  std::vector<int> pred(static_cast<size_t>(x.rows()));
  for (int i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    pred[static_cast<size_t>(i)] = best;
  }
  return pred;
}

double top1_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  PMIM_CHECK(pred.size() == truth.size() && !pred.empty(),
             "prediction/label size mismatch");
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ProbeResult linear_probe(const Matf& train_x, const std::vector<int>& train_y,
                         const Matf& eval_x, const std::vector<int>& eval_y,
                         int n_classes, const ProbeConfig& cfg) {
  PMIM_CHECK_CONFIG(n_classes >= 2, "probe needs at least 2 classes");
  PMIM_CHECK_CONFIG(cfg.epochs >= 1 && cfg.lr > 0 && cfg.lr_bias > 0,
                    "probe epochs/lr must be positive");
  PMIM_CHECK_DATA(train_x.rows() == static_cast<int>(train_y.size()) &&
                      eval_x.rows() == static_cast<int>(eval_y.size()),
                  "feature/label count mismatch");
  PMIM_CHECK_DATA(train_x.rows() >= 1 && eval_x.rows() >= 1,
                  "empty probe split");
  PMIM_CHECK_DATA(train_x.cols() == eval_x.cols(),
                  "train/eval feature dims differ");
  for (int y : train_y)
    PMIM_CHECK_DATA(y >= 0 && y < n_classes, "train label ", y,
                    " outside class range [0,", n_classes, ")");
  for (int y : eval_y)
    PMIM_CHECK_DATA(y >= 0 && y < n_classes, "eval label ", y,
                    " outside class range [0,", n_classes, ")");

  const Matd x = train_x.cast<double>();
  const int n = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
  Matd w = Matd::Zero(n_classes, d);
  Matd b = Matd::Zero(1, n_classes);
  for (int e = 0; e < cfg.epochs; ++e) {
    const double decay = 0.5 * (1.0 + std::cos(M_PI * e / cfg.epochs));
    Matd logits = (x * w.transpose()).rowwise() + b.row(0);
    // softmax rows minus one-hot, averaged
    for (int i = 0; i < n; ++i) {
      const double m = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - m).exp();
      logits.row(i) /= logits.row(i).sum();
      logits(i, train_y[static_cast<size_t>(i)]) -= 1.0;
    }
    logits /= static_cast<double>(n);
    w.noalias() -= cfg.lr * decay * (logits.transpose() * x);
    b.row(0) -= cfg.lr_bias * decay * logits.colwise().sum();
  }

  ProbeResult res;
  res.weights = std::move(w);
  res.bias = std::move(b);
  res.accuracy = top1_accuracy(classify(eval_x, res.weights, res.bias), eval_y);
  return res;
}

}  // namespace pmim
