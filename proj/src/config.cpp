#include "pmim/config.hpp"

#include <fstream>
#include <set>

namespace pmim {

namespace {

using nlohmann::json;

// Tracks consumed keys so anything unrecognized is reported with its path.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    PMIM_CHECK_CONFIG(j_.is_object(), path_, ": expected a JSON object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  T get(const char* key, T def, const char* type_name) {
    if (!has(key)) return def;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw config_error(path_ + "." + key + ": expected " + type_name);
    }
  }

  int geti(const char* key, int def) { return get<int>(key, def, "an integer"); }
  double getd(const char* key, double def) {
    return get<double>(key, def, "a number");
  }
  bool getb(const char* key, bool def) { return get<bool>(key, def, "a boolean"); }
  std::string gets(const char* key, const std::string& def) {
    return get<std::string>(key, def, "a string");
  }
  std::uint64_t getu(const char* key, std::uint64_t def) {
    return get<std::uint64_t>(key, def, "a nonnegative integer");
  }

  json object(const char* key) {
    if (!has(key)) return json::object();
    PMIM_CHECK_CONFIG(j_.at(key).is_object(), path_, ".", key,
                      ": expected a JSON object");
    return j_.at(key);
  }

  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      PMIM_CHECK_CONFIG(seen_.count(it.key()) > 0, path_, ": unknown key '",
                        it.key(), "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

HogConfig hog_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  HogConfig h;
  h.n_bins = s.geti("n_bins", h.n_bins);
  h.cell_size = s.geti("cell_size", h.cell_size);
  h.signed_orientation = s.getb("signed_orientation", h.signed_orientation);
  h.epsilon = s.getd("epsilon", h.epsilon);
  s.finish();
  return h;
}

json hog_to_json(const HogConfig& h) {
  return {{"n_bins", h.n_bins},
          {"cell_size", h.cell_size},
          {"signed_orientation", h.signed_orientation},
          {"epsilon", h.epsilon}};
}

}  // namespace

nlohmann::json model_to_json(const ModelConfig& m, bool include_derived) {
  json j = {{"image_size", m.image_size}, {"patch_size", m.patch_size},
            {"channels", m.channels},     {"dim", m.dim},
            {"depth", m.depth},           {"heads", m.heads},
            {"proxy_count", m.proxy_count}, {"mlp_ratio", m.mlp_ratio},
            {"arch", arch_name(m.arch)},  {"drop_path", m.drop_path}};
  if (include_derived) {
    j["head_out"] = m.head_out;
    j["with_mask_path"] = m.with_mask_path;
  }
  return j;
}

ModelConfig model_from_json(const nlohmann::json& j) {
  Section s(j, "model");
  ModelConfig m;
  m.image_size = s.geti("image_size", m.image_size);
  m.patch_size = s.geti("patch_size", m.patch_size);
  m.channels = s.geti("channels", m.channels);
  m.dim = s.geti("dim", m.dim);
  m.depth = s.geti("depth", m.depth);
  m.heads = s.geti("heads", m.heads);
  m.proxy_count = s.geti("proxy_count", m.proxy_count);
  m.mlp_ratio = s.geti("mlp_ratio", m.mlp_ratio);
  m.arch = arch_from_name(s.gets("arch", arch_name(m.arch)));
  m.drop_path = s.getd("drop_path", m.drop_path);
  m.head_out = s.geti("head_out", m.head_out);
  m.with_mask_path = s.getb("with_mask_path", m.with_mask_path);
  s.finish();
  m.validate();
  return m;
}

nlohmann::json recipe_to_json(const Recipe& r) {
  return {{"epochs", r.epochs},
          {"batch_size", r.batch_size},
          {"peak_lr", r.peak_lr},
          {"min_lr", r.min_lr},
          {"warmup_epochs", r.warmup_epochs},
          {"schedule", r.schedule},
          {"beta1", r.beta1},
          {"beta2", r.beta2},
          {"adam_eps", r.adam_eps},
          {"weight_decay", r.weight_decay},
          {"grad_clip", r.grad_clip},
          {"mask_ratio", r.mask_ratio},
          {"allow_overlap", r.allow_overlap},
          {"crop_min", r.crop_min},
          {"crop_max", r.crop_max},
          {"flip_prob", r.flip_prob},
          {"color_jitter", r.color_jitter},
          {"target", r.target},
          {"normalize_pixel_target", r.normalize_pixel_target},
          {"hog", hog_to_json(r.hog)},
          {"codebook_path", r.codebook_path},
          {"codebook_size", r.codebook_size},
          {"codebook_iters", r.codebook_iters},
          {"seed", r.seed},
          {"max_steps", r.max_steps},
          {"checkpoint_every", r.checkpoint_every},
          {"log_every", r.log_every}};
}

Recipe recipe_from_json(const nlohmann::json& j) {
  Section s(j, "recipe");
  Recipe r;
  r.epochs = s.geti("epochs", r.epochs);
  r.batch_size = s.geti("batch_size", r.batch_size);
  r.peak_lr = s.getd("peak_lr", r.peak_lr);
  r.min_lr = s.getd("min_lr", r.min_lr);
  r.warmup_epochs = s.geti("warmup_epochs", r.warmup_epochs);
  r.schedule = s.gets("schedule", r.schedule);
  r.beta1 = s.getd("beta1", r.beta1);
  r.beta2 = s.getd("beta2", r.beta2);
  r.adam_eps = s.getd("adam_eps", r.adam_eps);
  r.weight_decay = s.getd("weight_decay", r.weight_decay);
  r.grad_clip = s.getd("grad_clip", r.grad_clip);
  r.mask_ratio = s.getd("mask_ratio", r.mask_ratio);
  r.allow_overlap = s.getb("allow_overlap", r.allow_overlap);
  r.crop_min = s.getd("crop_min", r.crop_min);
  r.crop_max = s.getd("crop_max", r.crop_max);
  r.flip_prob = s.getd("flip_prob", r.flip_prob);
  r.color_jitter = s.getd("color_jitter", r.color_jitter);
  r.target = s.gets("target", r.target);
  r.normalize_pixel_target = s.getb("normalize_pixel_target", r.normalize_pixel_target);
  if (s.has("hog")) r.hog = hog_from_json(j.at("hog"), "recipe.hog");
  r.codebook_path = s.gets("codebook_path", r.codebook_path);
  r.codebook_size = s.geti("codebook_size", r.codebook_size);
  r.codebook_iters = s.geti("codebook_iters", r.codebook_iters);
  r.seed = s.getu("seed", r.seed);
  r.max_steps = s.geti("max_steps", r.max_steps);
  r.checkpoint_every = s.geti("checkpoint_every", r.checkpoint_every);
  r.log_every = s.geti("log_every", r.log_every);
  s.finish();
  r.validate();
  return r;
}

nlohmann::json synth_to_json(const SynthConfig& c) {
  json palette = json::array();
  for (const auto& p : c.palette) palette.push_back({p[0], p[1], p[2]});
  return {{"image_size", c.image_size},
          {"n_images", c.n_images},
          {"min_shapes", c.min_shapes},
          {"max_shapes", c.max_shapes},
          {"kinds", c.kinds},
          {"palette", palette},
          {"min_shape_frac", c.min_shape_frac},
          {"max_shape_frac", c.max_shape_frac},
          {"background_amplitude", c.background_amplitude},
          {"seed", c.seed}};
}

SynthConfig synth_from_json(const nlohmann::json& j) {
  Section s(j, "data");
  SynthConfig c;
  c.image_size = s.geti("image_size", c.image_size);
  c.n_images = s.geti("n_images", c.n_images);
  c.min_shapes = s.geti("min_shapes", c.min_shapes);
  c.max_shapes = s.geti("max_shapes", c.max_shapes);
  if (s.has("kinds")) {
    try {
      c.kinds = j.at("kinds").get<std::vector<std::string>>();
    } catch (const json::exception&) {
      throw config_error("data.kinds: expected an array of strings");
    }
  }
  if (s.has("palette")) {
    try {
      c.palette = j.at("palette").get<std::vector<std::array<float, 3>>>();
    } catch (const json::exception&) {
      throw config_error("data.palette: expected an array of [r,g,b] triples");
    }
  }
  c.min_shape_frac = s.getd("min_shape_frac", c.min_shape_frac);
  c.max_shape_frac = s.getd("max_shape_frac", c.max_shape_frac);
  c.background_amplitude = s.getd("background_amplitude", c.background_amplitude);
  c.seed = s.getu("seed", c.seed);
  s.finish();
  c.validate();
  return c;
}

namespace {

void parse_probe(const json& j, RunConfig& rc) {
  Section s(j, "probe");
  FeatureSpec& f = rc.probe_spec;
  if (s.has("layer")) {
    const json& v = j.at("layer");
    if (v.is_string()) {
      PMIM_CHECK_CONFIG(v.get<std::string>() == "default",
                        "probe.layer: expected an integer or \"default\"");
      f.layer = -1;
    } else {
      PMIM_CHECK_CONFIG(v.is_number_integer() && v.get<int>() >= 0,
                        "probe.layer: expected a nonnegative integer");
      f.layer = v.get<int>();
    }
  }
  f.pooling = s.gets("pooling", f.pooling);
  f.cls_index = s.geti("cls_index", f.cls_index);
  f.normalize = s.getb("normalize", f.normalize);
  rc.probe_task = s.gets("task", rc.probe_task);
  PMIM_CHECK_CONFIG(rc.probe_task == "image" || rc.probe_task == "patch",
                    "probe.task: expected image|patch");
  rc.probe_train.epochs = s.geti("epochs", rc.probe_train.epochs);
  rc.probe_train.lr = s.getd("lr", rc.probe_train.lr);
  rc.probe_train.lr_bias = s.getd("lr_bias", rc.probe_train.lr_bias);
  PMIM_CHECK_CONFIG(rc.probe_train.epochs >= 1 && rc.probe_train.lr > 0 &&
                        rc.probe_train.lr_bias > 0,
                    "probe.epochs/lr/lr_bias must be positive");
  s.finish();
}

void check_layer_or(const std::string& v, const char* keyword, const char* path) {
  if (v == keyword) return;
  for (char ch : v)
    PMIM_CHECK_CONFIG(ch >= '0' && ch <= '9', path, ": expected \"", keyword,
                      "\" or a nonnegative integer");
  PMIM_CHECK_CONFIG(!v.empty(), path, ": empty value");
}

void parse_analysis(const json& j, RunConfig& rc) {
  Section s(j, "analysis");
  rc.analysis.layer = s.has("layer") ? (j.at("layer").is_string()
                                            ? j.at("layer").get<std::string>()
                                            : std::to_string(j.at("layer").get<int>()))
                                     : rc.analysis.layer;
  rc.analysis.head = s.has("head") ? (j.at("head").is_string()
                                          ? j.at("head").get<std::string>()
                                          : std::to_string(j.at("head").get<int>()))
                                   : rc.analysis.head;
  check_layer_or(rc.analysis.layer, "last", "analysis.layer");
  check_layer_or(rc.analysis.head, "mean", "analysis.head");
  s.finish();
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc) {
  Section top(doc, "config");
  RunConfig rc;
  if (top.has("data")) rc.data = synth_from_json(doc.at("data"));
  if (top.has("model")) rc.model = model_from_json(doc.at("model"));
  if (top.has("recipe")) rc.recipe = recipe_from_json(doc.at("recipe"));
  if (top.has("probe")) parse_probe(doc.at("probe"), rc);
  if (top.has("analysis")) parse_analysis(doc.at("analysis"), rc);
  top.finish();

  rc.canonical = {{"data", synth_to_json(rc.data)},
                  {"model", model_to_json(rc.model, false)},
                  {"recipe", recipe_to_json(rc.recipe)},
                  {"probe",
                   {{"layer", rc.probe_spec.layer < 0
                                  ? json("default")
                                  : json(rc.probe_spec.layer)},
                    {"pooling", rc.probe_spec.pooling},
                    {"cls_index", rc.probe_spec.cls_index},
                    {"normalize", rc.probe_spec.normalize},
                    {"task", rc.probe_task},
                    {"epochs", rc.probe_train.epochs},
                    {"lr", rc.probe_train.lr},
                    {"lr_bias", rc.probe_train.lr_bias}}},
                  {"analysis",
                   {{"layer", rc.analysis.layer}, {"head", rc.analysis.head}}}};
  rc.hash = config_hash(rc.canonical);
  return rc;
}

nlohmann::json read_config_file(const std::string& path) {
  std::ifstream in(path);
  PMIM_CHECK_CONFIG(in.is_open(), "cannot open config file '", path, "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(path + ": " + e.what());
  }
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  PMIM_CHECK_CONFIG(eq != std::string::npos && eq > 0,
                    "override '", assignment, "' is not of the form path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  nlohmann::json* at = &doc;
  size_t begin = 0;
  while (true) {
    const size_t dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot - begin);
    PMIM_CHECK_CONFIG(!key.empty(), "override path '", path, "' has an empty segment");
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*at)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    if (!at->contains(key) || !(*at)[key].is_object())
      (*at)[key] = nlohmann::json::object();
    at = &(*at)[key];
    begin = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  nlohmann::json doc =
      path.empty() ? nlohmann::json::object() : read_config_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

std::string config_hash(const nlohmann::json& canonical) {
  return hash_hex(fnv1a64(canonical.dump()));
}

}  // namespace pmim
