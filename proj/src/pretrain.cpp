#include "pmim/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "pmim/patchify.hpp"

namespace fs = std::filesystem;

namespace pmim {

void Recipe::validate() const {
  PMIM_CHECK_CONFIG(epochs >= 1, "epochs must be >= 1");
  PMIM_CHECK_CONFIG(batch_size >= 1, "batch_size must be >= 1");
  PMIM_CHECK_CONFIG(min_lr > 0 && min_lr <= peak_lr,
                    "need 0 < min_lr <= peak_lr (got ", min_lr, ", ", peak_lr, ")");
  PMIM_CHECK_CONFIG(warmup_epochs >= 0 && warmup_epochs < epochs,
                    "warmup_epochs must be in [0, epochs)");
  PMIM_CHECK_CONFIG(schedule == "cosine", "unknown schedule '", schedule,
                    "' (only cosine is supported)");
  PMIM_CHECK_CONFIG(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                    "adam betas must be in [0,1)");
  PMIM_CHECK_CONFIG(adam_eps > 0, "adam_eps must be positive");
  PMIM_CHECK_CONFIG(weight_decay >= 0, "weight_decay must be >= 0");
  PMIM_CHECK_CONFIG(grad_clip >= 0, "grad_clip must be >= 0 (0 disables)");
  PMIM_CHECK_CONFIG(mask_ratio >= 0 && mask_ratio <= 1,
                    "mask_ratio must be in [0,1]");
  PMIM_CHECK_CONFIG(crop_min > 0 && crop_min <= crop_max && crop_max <= 1,
                    "crop range must satisfy 0 < min <= max <= 1");
  PMIM_CHECK_CONFIG(flip_prob >= 0 && flip_prob <= 1, "flip_prob must be in [0,1]");
  PMIM_CHECK_CONFIG(color_jitter >= 0 && color_jitter <= 1,
                    "color_jitter must be in [0,1]");
  target_kind_from_name(target);
  PMIM_CHECK_CONFIG(codebook_size >= 1, "codebook_size must be >= 1");
  PMIM_CHECK_CONFIG(codebook_iters >= 1, "codebook_iters must be >= 1");
  PMIM_CHECK_CONFIG(max_steps >= 0, "max_steps must be >= 0");
  PMIM_CHECK_CONFIG(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  PMIM_CHECK_CONFIG(log_every >= 1, "log_every must be >= 1");
}

int target_dim(const Recipe& recipe, int patch_size, int channels,
               int codebook_rows) {
  switch (recipe.target_kind()) {
    case TargetKind::pixel:
      return patch_size * patch_size * channels;
    case TargetKind::hog:
      return hog_dim(recipe.hog, patch_size);
    case TargetKind::code:
      PMIM_CHECK_CONFIG(codebook_rows >= 1, "code target needs a codebook");
      return codebook_rows;
  }
  throw config_error("unreachable target kind");
}

Image augment(const Image& img, const Recipe& recipe, Rng& rng) {
  Image out = img;
  if (recipe.crop_min < 1.0 || recipe.crop_max < 1.0) {
    const double area = static_cast<double>(img.height) * img.width;
    bool done = false;
    for (int attempt = 0; attempt < 10 && !done; ++attempt) {
      const double target_area = area * rng.uniform(recipe.crop_min, recipe.crop_max);
      const double ratio = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
      const int w = static_cast<int>(std::lround(std::sqrt(target_area * ratio)));
      const int h = static_cast<int>(std::lround(std::sqrt(target_area / ratio)));
      if (w >= 1 && h >= 1 && w <= img.width && h <= img.height) {
        const int x0 = rng.below_int(img.width - w + 1);
        const int y0 = rng.below_int(img.height - h + 1);
        out = resize_bilinear(crop(img, y0, x0, h, w), img.height, img.width);
        done = true;
      }
    }
    if (!done) {
      const int side = std::min(img.height, img.width);
      out = resize_bilinear(crop(img, (img.height - side) / 2,
                                 (img.width - side) / 2, side, side),
                            img.height, img.width);
    }
  }
  if (recipe.flip_prob > 0 && rng.bernoulli(recipe.flip_prob)) out = hflip(out);
  if (recipe.color_jitter > 0) {
    const double s = recipe.color_jitter;
    const float fb = static_cast<float>(rng.uniform(std::max(0.0, 1 - s), 1 + s));
    const float fc = static_cast<float>(rng.uniform(std::max(0.0, 1 - s), 1 + s));
    const float fs = static_cast<float>(rng.uniform(std::max(0.0, 1 - s), 1 + s));
    for (auto& v : out.pixels) v *= fb;
    const auto gray = to_grayscale(out);
    float mean = 0;
    for (float g : gray) mean += g;
    mean /= static_cast<float>(gray.size());
    for (auto& v : out.pixels) v = mean + fc * (v - mean);
    if (out.channels == 3) {
      const auto luma = to_grayscale(out);
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
          const float l = luma[static_cast<size_t>(y) * out.width + x];
          for (int c = 0; c < 3; ++c)
            out.at(y, x, c) = l + fs * (out.at(y, x, c) - l);
        }
    }
    for (auto& v : out.pixels) v = std::clamp(v, 0.f, 1.f);
  }
  return out;
}

void write_codebook(const std::string& path, const Matf& codebook) {
  Checkpoint ck;
  ck.meta["kind"] = "codebook";
  ck.add("codebook", tensor_from_matrix(codebook));
  write_checkpoint(path, ck);
}

Matf read_codebook(const std::string& path) {
  const Checkpoint ck = read_checkpoint(path);
  const NamedTensor* t = ck.find("codebook");
  PMIM_CHECK_DATA(t != nullptr, path, ": no 'codebook' tensor present");
  return matrix_from_tensor<float>(t->tensor, "codebook");
}

Trainer::Trainer(Model<float>& model, const std::vector<LabeledImage>& data,
                 Recipe recipe, Matf codebook, nlohmann::json run_meta)
    : model_(model),
      data_(data),
      recipe_(std::move(recipe)),
      codebook_(std::move(codebook)),
      run_meta_(std::move(run_meta)),
      opt_(model.params, recipe_.beta1, recipe_.beta2, recipe_.adam_eps,
           recipe_.weight_decay) {
  recipe_.validate();
  PMIM_CHECK_DATA(!data_.empty(), "training dataset is empty");
  const int n = model_.cfg.n_patches();
  const int masked = round_half_up(recipe_.mask_ratio * n);
  const int retained = recipe_.allow_overlap ? n : n - masked;
  PMIM_CHECK_CONFIG(masked >= 1, "mask_ratio ", recipe_.mask_ratio, " masks none of ",
                    n, " patches");
  PMIM_CHECK_CONFIG(retained >= 1, "mask_ratio ", recipe_.mask_ratio,
                    " retains none of ", n, " patches");
  PMIM_CHECK_CONFIG(model_.cfg.with_mask_path,
                    "training requires the reconstruction path");
  const int want = target_dim(recipe_, model_.cfg.patch_size, model_.cfg.channels,
                              static_cast<int>(codebook_.rows()));
  PMIM_CHECK_CONFIG(model_.cfg.head_out == want, "model head width ",
                    model_.cfg.head_out, " does not match target dim ", want);
  if (recipe_.target_kind() == TargetKind::code) {
    PMIM_CHECK_CONFIG(codebook_.rows() >= 1, "code target needs a codebook");
    codebook_d_ = codebook_.cast<double>();
  }
  for (const auto& li : data_)
    PMIM_CHECK_DATA(li.image.height == model_.cfg.image_size &&
                        li.image.width == model_.cfg.image_size &&
                        li.image.channels == model_.cfg.channels,
                    "dataset image shape does not match the model config");
  spe_ = std::max<int>(1, static_cast<int>(data_.size()) / recipe_.batch_size);
  total_ = recipe_.max_steps > 0
               ? recipe_.max_steps
               : static_cast<std::int64_t>(recipe_.epochs) * spe_;
  warmup_steps_ = static_cast<double>(recipe_.warmup_epochs) * spe_;
}

TokenBatch<float> Trainer::build_batch(const std::vector<int>& indices,
                                       Rng& rng_aug, Rng& rng_mask,
                                       Matd* target_vectors,
                                       std::vector<int>* target_codes) const {
  const int b = static_cast<int>(indices.size());
  const int n = model_.cfg.n_patches();
  const int m = round_half_up(recipe_.mask_ratio * n);
  const int r = recipe_.allow_overlap ? n : n - m;
  const int ps = model_.cfg.patch_size;

  TokenBatch<float> tb;
  tb.batch = b;
  tb.retained_per_image = r;
  tb.masked_per_image = m;
  tb.patches.resize(b * r, model_.cfg.patch_dim());
  tb.img_pos.resize(static_cast<size_t>(b) * r);
  tb.mask_pos.resize(static_cast<size_t>(b) * m);

  int target_cols = model_.cfg.head_out;
  if (recipe_.target_kind() == TargetKind::code) target_cols = 0;
  target_vectors->resize(b * m, target_cols);
  target_codes->clear();

  for (int i = 0; i < b; ++i) {
    const LabeledImage& li = data_[static_cast<size_t>(indices[static_cast<size_t>(i)])];
    const Image img = augment(li.image, recipe_, rng_aug);
    const PatchGrid grid = patchify(img, ps);
    const MaskingPlan plan =
        sample_masking_plan(n, recipe_.mask_ratio, rng_mask, recipe_.allow_overlap);
    for (int j = 0; j < r; ++j) {
      tb.patches.row(i * r + j) = grid.patches.row(plan.retained[static_cast<size_t>(j)]);
      tb.img_pos[static_cast<size_t>(i) * r + j] = plan.retained[static_cast<size_t>(j)];
    }
    for (int j = 0; j < m; ++j)
      tb.mask_pos[static_cast<size_t>(i) * m + j] = plan.masked[static_cast<size_t>(j)];

    switch (recipe_.target_kind()) {
      case TargetKind::pixel: {
        const TargetBatch t =
            pixel_target(img, plan, ps, recipe_.normalize_pixel_target);
        target_vectors->middleRows(i * m, m) = t.vectors;
        break;
      }
      case TargetKind::hog: {
        const TargetBatch t = hog_target(img, plan, ps, recipe_.hog);
        target_vectors->middleRows(i * m, m) = t.vectors;
        break;
      }
      case TargetKind::code: {
        const TargetBatch t = codebook_target(img, plan, ps, codebook_d_);
        target_codes->insert(target_codes->end(), t.codes.begin(), t.codes.end());
        break;
      }
    }
  }
  return tb;
}

StepLog Trainer::train_step() {
  const std::int64_t s = step_;
  PMIM_CHECK(s < total_, "training already finished");
  const std::int64_t epoch = s / spe_;
  const int offset = static_cast<int>(s % spe_);
  if (epoch != cached_epoch_) {
    epoch_order_.resize(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) epoch_order_[i] = static_cast<int>(i);
    Rng order_rng = Rng::substream(recipe_.seed, "order",
                                   static_cast<std::uint64_t>(epoch));
    order_rng.shuffle(epoch_order_);
    cached_epoch_ = epoch;
  }
  const int b = recipe_.batch_size;
  std::vector<int> indices(
      epoch_order_.begin() + static_cast<std::ptrdiff_t>(offset) * b,
      epoch_order_.begin() + static_cast<std::ptrdiff_t>(offset + 1) * b);

  Rng rng_mask = Rng::substream(recipe_.seed, "mask", static_cast<std::uint64_t>(s));
  Rng rng_aug =
      Rng::substream(recipe_.seed, "augment", static_cast<std::uint64_t>(s));
  Rng rng_drop =
      Rng::substream(recipe_.seed, "droppath", static_cast<std::uint64_t>(s));

  Matd targets;
  std::vector<int> codes;
  const TokenBatch<float> tb = build_batch(indices, rng_aug, rng_mask, &targets, &codes);

  Graph<float> g;
  const ForwardOut<float> out = model_.forward(g, tb, true, &rng_drop);
  Node<float>* loss = recipe_.target_kind() == TargetKind::code
                          ? g.softmax_ce_mean(out.pred, codes)
                          : g.l1_mean(out.pred, targets.cast<float>());
  const double loss_value = static_cast<double>(loss->value()(0, 0));
  if (!std::isfinite(loss_value)) {
    for (const auto& p : model_.params)
      PMIM_CHECK_NUMERIC(p.value.allFinite(), "non-finite values in tensor '",
                         p.name, "' at step ", s);
    throw numeric_error(detail::format_msg("non-finite loss at step ", s));
  }
  model_.params.zero_grads();
  g.backward(loss);
  for (const auto& p : model_.params)
    PMIM_CHECK_NUMERIC(p.grad.allFinite(), "non-finite gradient in tensor '",
                       p.name, "' at step ", s);
  const double gnorm = clip_gradients(model_.params, recipe_.grad_clip);
  const double lr = lr_schedule(static_cast<double>(s), static_cast<double>(total_),
                                warmup_steps_, recipe_.peak_lr, recipe_.min_lr);
  opt_.step(model_.params, lr);
  ++step_;
  return {s, lr, loss_value, gnorm};
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ck;
  ck.meta = run_meta_;
  ck.meta["step"] = step_;
  ck.meta["rng"] = {{"seed", recipe_.seed}, {"streams", "derived per step"}};
  checkpoint_put_model(ck, model_);
  checkpoint_put_optimizer(ck, model_, opt_);
  return ck;
}

void Trainer::resume(const Checkpoint& ckpt) {
  PMIM_CHECK_DATA(ckpt.meta.contains("step"), "checkpoint has no step counter");
  if (ckpt.meta.contains("model") && run_meta_.contains("model"))
    PMIM_CHECK_CONFIG(ckpt.meta["model"] == run_meta_["model"],
                      "checkpoint model config differs from the current run");
  checkpoint_get_model(ckpt, model_);
  checkpoint_get_optimizer(ckpt, model_, opt_);
  step_ = ckpt.meta["step"].get<std::int64_t>();
  PMIM_CHECK_DATA(step_ >= 0 && step_ <= total_, "checkpoint step ", step_,
                  " outside this run's range");
}

StepLog Trainer::run(const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  std::ofstream log(log_path, step_ > 0 ? std::ios::app : std::ios::trunc);
  PMIM_CHECK_CONFIG(log.is_open(), "cannot open '", log_path, "' for writing");
  if (step_ == 0) log << "step,lr,loss\n";

  StepLog last{};
  char row[128];
  while (step_ < total_) {
    last = train_step();
    if (last.step % recipe_.log_every == 0 || last.step + 1 == total_) {
      std::snprintf(row, sizeof(row), "%lld,%.9g,%.9g\n",
                    static_cast<long long>(last.step), last.lr, last.loss);
      log << row;
      log.flush();
    }
    if (recipe_.checkpoint_every > 0 && step_ % recipe_.checkpoint_every == 0 &&
        step_ < total_) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_%08lld.pmim",
                    static_cast<long long>(step_));
      write_checkpoint((fs::path(out_dir) / name).string(), make_checkpoint());
    }
  }
  write_checkpoint((fs::path(out_dir) / "ckpt_final.pmim").string(),
                   make_checkpoint());
  return last;
}

}  // namespace pmim
