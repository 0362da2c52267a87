#pragma once

#include <string>
#include <vector>

#include "pmim/autodiff.hpp"
#include "pmim/errors.hpp"
#include "pmim/mat.hpp"
#include "pmim/rng.hpp"

namespace pmim {

enum class Arch { proxy, vanilla };

inline std::string arch_name(Arch a) { return a == Arch::proxy ? "proxy" : "vanilla"; }

inline Arch arch_from_name(const std::string& s) {
  if (s == "proxy") return Arch::proxy;
  if (s == "vanilla") return Arch::vanilla;
  throw config_error("unknown arch '" + s + "' (expected proxy|vanilla)");
}

struct ModelConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int dim = 64;
  int depth = 4;
  int heads = 4;
  int proxy_count = 8;
  int mlp_ratio = 4;
  int head_out = 192;
  Arch arch = Arch::proxy;
  double drop_path = 0.0;
  double ln_eps = 1e-6;
  bool with_mask_path = true;  // mask token, cross path, prediction head

  int grid_side() const { return image_size / patch_size; }
  int n_patches() const { return grid_side() * grid_side(); }
  int patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const {
    PMIM_CHECK_CONFIG(image_size > 0 && patch_size > 0 && channels > 0,
                      "image/patch/channel sizes must be positive");
    PMIM_CHECK_CONFIG(image_size % patch_size == 0, "patch size ", patch_size,
                      " does not divide image size ", image_size);
    PMIM_CHECK_CONFIG(dim > 0 && heads > 0 && dim % heads == 0, "dim ", dim,
                      " must be positive and divisible by heads ", heads);
    PMIM_CHECK_CONFIG(depth >= 1, "depth must be >= 1");
    PMIM_CHECK_CONFIG(proxy_count >= 0, "proxy_count must be >= 0");
    PMIM_CHECK_CONFIG(arch == Arch::proxy || proxy_count == 0,
                      "vanilla arch takes no proxy tokens");
    PMIM_CHECK_CONFIG(mlp_ratio >= 1, "mlp_ratio must be >= 1");
    PMIM_CHECK_CONFIG(head_out >= 1, "head output dim must be >= 1");
    PMIM_CHECK_CONFIG(drop_path >= 0.0 && drop_path < 1.0,
                      "drop_path must be in [0,1)");
  }
};

// True for tensors that exist only to train the reconstruction side; a
// feature-extraction checkpoint drops them.
inline bool is_mask_path_tensor(const std::string& name) {
  if (name == "embed.mask_token") return true;
  if (name.rfind("head.", 0) == 0) return true;
  return name.find(".ln_cross.") != std::string::npos ||
         name.find(".cross.") != std::string::npos ||
         name.find(".ln_mlp2.") != std::string::npos ||
         name.find(".mlp2.") != std::string::npos;
}

template <class S>
struct AttnParams {
  Param<S>*wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

template <class S>
struct MlpParams {
  Param<S>*w1, *b1, *w2, *b2;
};

template <class S>
struct LayerParams {
  Param<S>*ln1_g, *ln1_b;
  AttnParams<S> attn{};
  Param<S>*ln2_g, *ln2_b;
  MlpParams<S> mlp1{};
  // reconstruction path; null when absent
  Param<S>* lnc_g = nullptr;
  Param<S>* lnc_b = nullptr;
  AttnParams<S> cross{};
  Param<S>* ln3_g = nullptr;
  Param<S>* ln3_b = nullptr;
  MlpParams<S> mlp2{};
};

// Per-forward capture of activations and attention, for probing and the
// analysis tools. States are stored for layer index 0 (embeddings) through
// depth (after the final norm).
template <class S>
struct Trace {
  std::vector<Mat<S>> img_states, proxy_states, mask_states;
  std::vector<std::vector<std::vector<Mat<S>>>> self_attn;   // [layer][image][head]
  std::vector<std::vector<std::vector<Mat<S>>>> cross_attn;  // [layer][image][head]
};

template <class S>
struct ForwardOut {
  Node<S>* img = nullptr;    // (B*R) x D, after final norm
  Node<S>* proxy = nullptr;  // (B*P) x D, after final norm
  Node<S>* mask = nullptr;   // (B*M) x D, after final norm
  Node<S>* pred = nullptr;   // (B*M) x head_out
};

// One training/eval batch in flat token layout: rows grouped per image.
template <class S>
struct TokenBatch {
  int batch = 0;
  int retained_per_image = 0;
  int masked_per_image = 0;
  Mat<S> patches;             // (batch*retained) x patch_dim
  std::vector<int> img_pos;   // batch*retained indices into the position table
  std::vector<int> mask_pos;  // batch*masked indices into the position table
};

template <class S>
class Model {
 public:
  ModelConfig cfg;
  ParamStore<S> params;

  Param<S>*patch_w, *patch_b;
  Param<S>* pos;
  Param<S>* proxy_embed = nullptr;
  Param<S>* mask_token = nullptr;
  std::vector<LayerParams<S>> layers;
  Param<S>*final_g, *final_b;
  Param<S>* head_w = nullptr;
  Param<S>* head_b = nullptr;

  explicit Model(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    const int d = cfg.dim, hd = cfg.mlp_ratio * d;
    patch_w = params.add("embed.patch.w", d, cfg.patch_dim());
    patch_b = params.add("embed.patch.b", 1, d);
    pos = params.add("embed.pos", cfg.n_patches(), d);
    if (cfg.proxy_count > 0) proxy_embed = params.add("embed.proxy", cfg.proxy_count, d);
    if (cfg.with_mask_path) mask_token = params.add("embed.mask_token", 1, d);
    layers.resize(static_cast<size_t>(cfg.depth));
    for (int l = 0; l < cfg.depth; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      LayerParams<S>& lp = layers[static_cast<size_t>(l)];
      lp.ln1_g = params.add(p + "ln1.g", 1, d);
      lp.ln1_b = params.add(p + "ln1.b", 1, d);
      add_attn(lp.attn, p + "attn.", d);
      lp.ln2_g = params.add(p + "ln2.g", 1, d);
      lp.ln2_b = params.add(p + "ln2.b", 1, d);
      add_mlp(lp.mlp1, p + "mlp1.", d, hd);
      if (cfg.arch == Arch::proxy && cfg.with_mask_path) {
        lp.lnc_g = params.add(p + "ln_cross.g", 1, d);
        lp.lnc_b = params.add(p + "ln_cross.b", 1, d);
        add_attn(lp.cross, p + "cross.", d);
        lp.ln3_g = params.add(p + "ln_mlp2.g", 1, d);
        lp.ln3_b = params.add(p + "ln_mlp2.b", 1, d);
        add_mlp(lp.mlp2, p + "mlp2.", d, hd);
      }
    }
    final_g = params.add("final_norm.g", 1, d);
    final_b = params.add("final_norm.b", 1, d);
    if (cfg.with_mask_path) {
      head_w = params.add("head.w", cfg.head_out, d);
      head_b = params.add("head.b", 1, cfg.head_out);
    }
  }

  // Truncated-normal(0.02) weights, unit norm scales, zero offsets/biases.
  void init_weights(uint64_t seed) {
    Rng rng = Rng::substream(seed, "init");
    for (auto& p : params) {
      const bool norm_scale = ends_with(p.name, ".g");
      const bool offset = ends_with(p.name, ".b");
      for (int i = 0; i < p.value.rows(); ++i)
        for (int j = 0; j < p.value.cols(); ++j) {
          if (norm_scale)
            p.value(i, j) = S(1);
          else if (offset)
            p.value(i, j) = S(0);
          else
            p.value(i, j) = static_cast<S>(rng.trunc_normal(0.02));
        }
    }
  }

  ForwardOut<S> forward(Graph<S>& g, const TokenBatch<S>& in, bool training = false,
                        Rng* rng = nullptr, Trace<S>* trace = nullptr) {
    const int b = in.batch, r = in.retained_per_image, m = in.masked_per_image;
    const int p = cfg.proxy_count, d = cfg.dim;
    PMIM_CHECK(b > 0 && r > 0, "forward: need at least one image token");
    PMIM_CHECK(in.patches.rows() == b * r && in.patches.cols() == cfg.patch_dim(),
               "forward: patch matrix shape mismatch");
    PMIM_CHECK(static_cast<int>(in.img_pos.size()) == b * r, "forward: img_pos size");
    PMIM_CHECK(static_cast<int>(in.mask_pos.size()) == b * m, "forward: mask_pos size");
    PMIM_CHECK(m == 0 || cfg.with_mask_path,
               "forward: masked tokens given but mask path absent");
    const S eps = static_cast<S>(cfg.ln_eps);

    Node<S>* img = g.add(g.linear(g.constant(in.patches), g.leaf(*patch_w),
                                  g.leaf(*patch_b)),
                         g.gather_rows(g.leaf(*pos), in.img_pos));
    Node<S>* proxy = nullptr;
    if (p > 0) {
      std::vector<int> tile(static_cast<size_t>(b) * p);
      for (int im = 0; im < b; ++im)
        for (int j = 0; j < p; ++j) tile[static_cast<size_t>(im) * p + j] = j;
      proxy = g.gather_rows(g.leaf(*proxy_embed), tile);
    }
    Node<S>* mask = nullptr;
    if (m > 0) {
      std::vector<int> zeros(static_cast<size_t>(b) * m, 0);
      mask = g.add(g.gather_rows(g.leaf(*mask_token), zeros),
                   g.gather_rows(g.leaf(*pos), in.mask_pos));
    }

    if (trace) {
      *trace = Trace<S>{};
      record_states(*trace, img, proxy, mask, d);
      trace->self_attn.resize(static_cast<size_t>(cfg.depth));
      trace->cross_attn.resize(static_cast<size_t>(cfg.depth));
    }

    for (int l = 0; l < cfg.depth; ++l) {
      const LayerParams<S>& lp = layers[static_cast<size_t>(l)];
      const S rate = drop_rate(l);
      auto* self_cap = trace ? &trace->self_attn[static_cast<size_t>(l)] : nullptr;
      auto* cross_cap = trace ? &trace->cross_attn[static_cast<size_t>(l)] : nullptr;

      if (cfg.arch == Arch::vanilla) {
        // joint self-attention over [img | mask]; proxies pass through
        Node<S>* h = m > 0 ? g.concat_tokens(img, mask, b, r, m) : img;
        h = pre_norm_attn(g, h, h, lp.ln1_g, lp.ln1_b, lp.attn, b, eps, rate,
                          training, rng, self_cap);
        h = pre_norm_mlp(g, h, lp.ln2_g, lp.ln2_b, lp.mlp1, b, eps, rate, training,
                         rng);
        if (m > 0) {
          img = g.slice_tokens(h, b, r + m, 0, r);
          mask = g.slice_tokens(h, b, r + m, r, m);
        } else {
          img = h;
        }
      } else {
        // compression: self-attention over [img | proxy], mask invisible
        Node<S>* h = p > 0 ? g.concat_tokens(img, proxy, b, r, p) : img;
        h = pre_norm_attn(g, h, h, lp.ln1_g, lp.ln1_b, lp.attn, b, eps, rate,
                          training, rng, self_cap);
        h = pre_norm_mlp(g, h, lp.ln2_g, lp.ln2_b, lp.mlp1, b, eps, rate, training,
                         rng);
        if (p > 0) {
          img = g.slice_tokens(h, b, r + p, 0, r);
          proxy = g.slice_tokens(h, b, r + p, r, p);
        } else {
          img = h;
        }
        // reconstruction: mask queries read [proxy' | mask]
        if (m > 0) {
          Node<S>* kv = p > 0 ? g.concat_tokens(proxy, mask, b, p, m) : mask;
          mask = pre_norm_attn(g, mask, kv, lp.lnc_g, lp.lnc_b, lp.cross, b, eps,
                               rate, training, rng, cross_cap);
          mask = pre_norm_mlp(g, mask, lp.ln3_g, lp.ln3_b, lp.mlp2, b, eps, rate,
                              training, rng);
        }
      }
      if (trace && l + 1 < cfg.depth) record_states(*trace, img, proxy, mask, d);
    }

    ForwardOut<S> out;
    out.img = g.layernorm(img, g.leaf(*final_g), g.leaf(*final_b), eps);
    if (proxy) out.proxy = g.layernorm(proxy, g.leaf(*final_g), g.leaf(*final_b), eps);
    if (mask) {
      out.mask = g.layernorm(mask, g.leaf(*final_g), g.leaf(*final_b), eps);
      out.pred = g.linear(out.mask, g.leaf(*head_w), g.leaf(*head_b));
    }
    if (trace) record_states(*trace, out.img, out.proxy, out.mask, d);
    return out;
  }

 private:
  void add_attn(AttnParams<S>& a, const std::string& p, int d) {
    a.wq = params.add(p + "q.w", d, d);
    a.bq = params.add(p + "q.b", 1, d);
    a.wk = params.add(p + "k.w", d, d);
    a.bk = params.add(p + "k.b", 1, d);
    a.wv = params.add(p + "v.w", d, d);
    a.bv = params.add(p + "v.b", 1, d);
    a.wo = params.add(p + "out.w", d, d);
    a.bo = params.add(p + "out.b", 1, d);
  }

  void add_mlp(MlpParams<S>& m, const std::string& p, int d, int hidden) {
    m.w1 = params.add(p + "fc1.w", hidden, d);
    m.b1 = params.add(p + "fc1.b", 1, hidden);
    m.w2 = params.add(p + "fc2.w", d, hidden);
    m.b2 = params.add(p + "fc2.b", 1, d);
  }

  S drop_rate(int layer) const {
    if (cfg.depth <= 1 || cfg.drop_path <= 0.0) return S(0);
    return static_cast<S>(cfg.drop_path * layer / (cfg.depth - 1));
  }

  Node<S>* residual(Graph<S>& g, Node<S>* h, Node<S>* branch, int batch, S rate,
                    bool training, Rng* rng) {
    if (training && rng && rate > S(0)) {
      std::vector<S> f(static_cast<size_t>(batch));
      for (auto& v : f)
        v = rng->uniform() < static_cast<double>(rate) ? S(0) : S(1) / (S(1) - rate);
      branch = g.scale_tokens(branch, batch, std::move(f));
    }
    return g.add(h, branch);
  }

  Node<S>* pre_norm_attn(Graph<S>& g, Node<S>* queries, Node<S>* keys,
                         Param<S>* ln_g, Param<S>* ln_b, const AttnParams<S>& a,
                         int batch, S eps, S rate, bool training, Rng* rng,
                         std::vector<std::vector<Mat<S>>>* capture) {
    Node<S>* qn = g.layernorm(queries, g.leaf(*ln_g), g.leaf(*ln_b), eps);
    Node<S>* kn = keys == queries
                      ? qn
                      : g.layernorm(keys, g.leaf(*ln_g), g.leaf(*ln_b), eps);
    Node<S>* q = g.linear(qn, g.leaf(*a.wq), g.leaf(*a.bq));
    Node<S>* k = g.linear(kn, g.leaf(*a.wk), g.leaf(*a.bk));
    Node<S>* v = g.linear(kn, g.leaf(*a.wv), g.leaf(*a.bv));
    Node<S>* o = g.attention(q, k, v, batch, cfg.heads, capture);
    o = g.linear(o, g.leaf(*a.wo), g.leaf(*a.bo));
    return residual(g, queries, o, batch, rate, training, rng);
  }

  Node<S>* pre_norm_mlp(Graph<S>& g, Node<S>* h, Param<S>* ln_g, Param<S>* ln_b,
                        const MlpParams<S>& m, int batch, S eps, S rate,
                        bool training, Rng* rng) {
    Node<S>* u = g.layernorm(h, g.leaf(*ln_g), g.leaf(*ln_b), eps);
    u = g.linear(u, g.leaf(*m.w1), g.leaf(*m.b1));
    u = g.gelu(u);
    u = g.linear(u, g.leaf(*m.w2), g.leaf(*m.b2));
    return residual(g, h, u, batch, rate, training, rng);
  }

  void record_states(Trace<S>& t, Node<S>* img, Node<S>* proxy, Node<S>* mask,
                     int d) const {
    t.img_states.push_back(img->value());
    t.proxy_states.push_back(proxy ? proxy->value() : Mat<S>(0, d));
    t.mask_states.push_back(mask ? mask->value() : Mat<S>(0, d));
  }

  static bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  }
};

}  // namespace pmim
