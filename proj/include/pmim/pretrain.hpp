#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmim/checkpoint.hpp"
#include "pmim/data.hpp"
#include "pmim/model.hpp"
#include "pmim/optim.hpp"
#include "pmim/targets.hpp"

namespace pmim {

struct Recipe {
  int epochs = 20;
  int batch_size = 64;
  double peak_lr = 1.5e-3;
  double min_lr = 1e-5;
  int warmup_epochs = 1;
  std::string schedule = "cosine";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.05;
  double grad_clip = 3.0;  // global l2 max-norm; 0 disables
  double mask_ratio = 0.6;
  bool allow_overlap = false;
  double crop_min = 0.4;
  double crop_max = 1.0;
  double flip_prob = 0.5;
  double color_jitter = 0.0;
  std::string target = "pixel";
  bool normalize_pixel_target = false;
  HogConfig hog;
  std::string codebook_path;  // target=code: load from here if set
  int codebook_size = 16;
  int codebook_iters = 25;
  std::uint64_t seed = 42;
  int max_steps = 0;        // 0: epochs decide
  int checkpoint_every = 0;  // steps; 0: final checkpoint only
  int log_every = 1;

  void validate() const;
  TargetKind target_kind() const { return target_kind_from_name(target); }
};

// Head output width implied by the reconstruction target.
int target_dim(const Recipe& recipe, int patch_size, int channels,
               int codebook_rows);

// Random-resized-crop (area in [crop_min, crop_max], aspect in [3/4, 4/3]),
// horizontal flip, optional color jitter. Identity when crop range is
// (1,1), flip_prob 0 and jitter 0.
Image augment(const Image& img, const Recipe& recipe, Rng& rng);

// Codebooks are persisted as single-tensor checkpoint files.
void write_codebook(const std::string& path, const Matf& codebook);
Matf read_codebook(const std::string& path);

struct StepLog {
  std::int64_t step = 0;
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;
};

class Trainer {
 public:
  // model and data are borrowed; run_meta is copied into every checkpoint
  // (expects at least {"model":..., "recipe":..., "config_hash":...}).
  Trainer(Model<float>& model, const std::vector<LabeledImage>& data,
          Recipe recipe, Matf codebook, nlohmann::json run_meta);

  int steps_per_epoch() const { return spe_; }
  std::int64_t total_steps() const { return total_; }
  std::int64_t next_step() const { return step_; }
  const Recipe& recipe() const { return recipe_; }

  StepLog train_step();

  Checkpoint make_checkpoint() const;
  void resume(const Checkpoint& ckpt);

  // Full loop: CSV log (step,lr,loss), periodic and final checkpoints.
  // Returns the last step's log entry.
  StepLog run(const std::string& out_dir);

 private:
  TokenBatch<float> build_batch(const std::vector<int>& indices, Rng& rng_aug,
                                Rng& rng_mask, Matd* target_vectors,
                                std::vector<int>* target_codes) const;

  Model<float>& model_;
  const std::vector<LabeledImage>& data_;
  Recipe recipe_;
  Matf codebook_;
  Matd codebook_d_;
  nlohmann::json run_meta_;
  AdamW<float> opt_;
  std::int64_t step_ = 0;
  int spe_ = 1;
  std::int64_t total_ = 0;
  double warmup_steps_ = 0;
  std::int64_t cached_epoch_ = -1;
  std::vector<int> epoch_order_;
};

}  // namespace pmim
