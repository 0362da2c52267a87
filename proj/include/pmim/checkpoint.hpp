#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "pmim/model.hpp"
#include "pmim/optim.hpp"
#include "pmim/serialize.hpp"

namespace pmim {

struct NamedTensor {
  std::string name;
  RawTensor tensor;
};

// In-memory checkpoint: JSON metadata (recipe, model shape, step, rng seed)
// plus an ordered named-tensor directory.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  NamedTensor* find(const std::string& name);
  const NamedTensor* find(const std::string& name) const;
  void add(const std::string& name, RawTensor t);
};

// File layout: "PMIM" | u32 version | u64 metadata length | UTF-8 JSON
// metadata (including the tensor directory with byte offsets) | raw
// little-endian payloads in directory order.
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

inline bool is_optimizer_tensor(const std::string& name) {
  return name.rfind("opt.", 0) == 0;
}

// Drops the reconstruction-side tensors (and their optimizer moments) so
// the remaining file is a pure feature-extraction encoder.
void strip_mask_path(Checkpoint& ckpt);

template <class S>
void checkpoint_put_model(Checkpoint& ckpt, const Model<S>& model) {
  for (const auto& p : model.params) ckpt.add(p.name, tensor_from_matrix(p.value));
}

template <class S>
void checkpoint_get_model(const Checkpoint& ckpt, Model<S>& model) {
  for (auto& p : model.params) {
    const NamedTensor* t = ckpt.find(p.name);
    PMIM_CHECK_DATA(t != nullptr, "checkpoint is missing tensor '", p.name, "'");
    Mat<S> m = matrix_from_tensor<S>(t->tensor, "tensor '" + p.name + "'");
    PMIM_CHECK_DATA(m.rows() == p.value.rows() && m.cols() == p.value.cols(),
                    "tensor '", p.name, "' has shape ", m.rows(), "x", m.cols(),
                    ", expected ", p.value.rows(), "x", p.value.cols());
    p.value = std::move(m);
  }
  for (const auto& nt : ckpt.tensors) {
    if (is_optimizer_tensor(nt.name)) continue;
    PMIM_CHECK_DATA(model.params.find(nt.name) != nullptr,
                    "checkpoint contains unknown tensor '", nt.name, "'");
  }
}

template <class S>
void checkpoint_put_optimizer(Checkpoint& ckpt, const Model<S>& model,
                              const AdamW<S>& opt) {
  PMIM_CHECK(opt.size() == model.params.size(), "optimizer size mismatch");
  size_t i = 0;
  for (const auto& p : model.params) {
    ckpt.add("opt.m." + p.name, tensor_from_matrix(opt.first_moment(i)));
    ckpt.add("opt.v." + p.name, tensor_from_matrix(opt.second_moment(i)));
    ++i;
  }
  ckpt.meta["opt"] = {{"steps_taken", opt.steps_taken()}};
}

template <class S>
void checkpoint_get_optimizer(const Checkpoint& ckpt, const Model<S>& model,
                              AdamW<S>& opt) {
  PMIM_CHECK(opt.size() == model.params.size(), "optimizer size mismatch");
  size_t i = 0;
  for (const auto& p : model.params) {
    for (const char* kind : {"m", "v"}) {
      const std::string name = std::string("opt.") + kind + "." + p.name;
      const NamedTensor* t = ckpt.find(name);
      PMIM_CHECK_DATA(t != nullptr, "checkpoint is missing tensor '", name, "'");
      Mat<S>& dst = kind[0] == 'm' ? opt.first_moment(i) : opt.second_moment(i);
      dst = matrix_from_tensor<S>(t->tensor, "tensor '" + name + "'");
      PMIM_CHECK_DATA(dst.rows() == p.value.rows() && dst.cols() == p.value.cols(),
                      "tensor '", name, "' shape mismatch");
    }
    ++i;
  }
  PMIM_CHECK_DATA(ckpt.meta.contains("opt") && ckpt.meta["opt"].contains("steps_taken"),
                  "checkpoint metadata is missing optimizer step count");
  opt.set_steps_taken(ckpt.meta["opt"]["steps_taken"].get<int64_t>());
}

}  // namespace pmim
