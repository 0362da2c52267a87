// pmim: synthetic datasets, masked pretraining with proxy-token
// compression, linear probes, and attention analysis artifacts.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pmim/analysis.hpp"
#include "pmim/checkpoint.hpp"
#include "pmim/config.hpp"
#include "pmim/data.hpp"
#include "pmim/patchify.hpp"
#include "pmim/pretrain.hpp"
#include "pmim/probe.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pmim;

namespace {

// Relative output paths land under PMIM_OUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  const char* root = std::getenv("PMIM_OUT_ROOT");
  if (!root || !*root) return path;
  return (fs::path(root) / path).string();
}

// Every artifact directory carries the producing config (and its hash).
void write_run_stamp(const std::string& dir, const RunConfig& rc,
                     const json& extra = json::object()) {
  fs::create_directories(dir);
  json j = {{"hash", rc.hash}, {"config", rc.canonical}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  auto out = io::open_output((fs::path(dir) / "run_config.json").string());
  out << j.dump(2) << "\n";
}

std::ofstream open_csv_append(const std::string& path, const char* header) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  fs::path dir = fs::path(path).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::app);
  PMIM_CHECK_CONFIG(out.is_open(), "cannot open '", path, "' for writing");
  if (fresh) out << header << "\n";
  return out;
}

ModelConfig checkpoint_model_config(const Checkpoint& ck) {
  PMIM_CHECK_DATA(ck.meta.contains("model"),
                  "checkpoint has no model metadata");
  return model_from_json(ck.meta.at("model"));
}

std::string checkpoint_hash(const Checkpoint& ck) {
  return ck.meta.contains("config_hash") ? ck.meta["config_hash"].get<std::string>()
                                         : std::string();
}

void check_dataset_matches(const ModelConfig& cfg,
                           const std::vector<LabeledImage>& data) {
  for (const auto& li : data)
    PMIM_CHECK_DATA(li.image.height == cfg.image_size &&
                        li.image.width == cfg.image_size &&
                        li.image.channels == cfg.channels,
                    "dataset image shape ", li.image.height, "x", li.image.width,
                    "x", li.image.channels, " does not match the model (",
                    cfg.image_size, "x", cfg.image_size, "x", cfg.channels, ")");
}

// ---------------------------------------------------------------- synth --

void cmd_synth(const RunConfig& rc, const std::string& out_arg, bool force) {
  const std::string out = resolve_out(out_arg);
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw config_error("output directory '" + out +
                       "' is not empty (pass --force to overwrite)");
  const auto data = generate_synthetic(rc.data, rc.model.patch_size);
  write_dataset(out, data,
                {{"config_hash", rc.hash},
                 {"patch_size", rc.model.patch_size},
                 {"generator", synth_to_json(rc.data)}});
  write_run_stamp(out, rc);
  std::printf("wrote %d images to %s\n", rc.data.n_images, out.c_str());
}

// ------------------------------------------------------------- pretrain --

// Loads the codebook named by the recipe, or trains one from the dataset
// and saves it next to the checkpoints.
Matf prepare_codebook(const RunConfig& rc, const std::vector<LabeledImage>& data,
                      const std::string& out_dir) {
  if (rc.recipe.target_kind() != TargetKind::code) return Matf(0, 0);
  if (!rc.recipe.codebook_path.empty())
    return read_codebook(rc.recipe.codebook_path);
  const Matf points = dataset_patches(data, rc.model.patch_size);
  const Matf cb = train_codebook(points, rc.recipe.codebook_size,
                                 rc.recipe.codebook_iters,
                                 fnv1a64("codebook", rc.recipe.seed));
  fs::create_directories(out_dir);
  write_codebook((fs::path(out_dir) / "codebook.pmim").string(), cb);
  return cb;
}

ModelConfig trained_model_config(const RunConfig& rc, int codebook_rows) {
  ModelConfig mc = rc.model;
  mc.head_out = target_dim(rc.recipe, mc.patch_size, mc.channels, codebook_rows);
  mc.with_mask_path = true;
  return mc;
}

json training_meta(const RunConfig& rc, const ModelConfig& mc) {
  return {{"model", model_to_json(mc, true)},
          {"recipe", recipe_to_json(rc.recipe)},
          {"config_hash", rc.hash}};
}

struct ProbeOutcome {
  double accuracy = 0;
  int layer = 0;
  std::string pooling;
  std::string task;
  int train_rows = 0;
  int eval_rows = 0;
};

// Features from a frozen encoder, deterministic 80/20 split at image
// granularity (every 5th image evaluates), full-batch softmax regression.
ProbeOutcome probe_model(Model<float>& model, const std::vector<LabeledImage>& data,
                         const RunConfig& rc, bool shuffle_labels) {
  check_dataset_matches(model.cfg, data);
  PMIM_CHECK_DATA(data.size() >= 5, "probe needs at least 5 images for the ",
                  "80/20 split (got ", data.size(), ")");
  ProbeOutcome po;
  po.task = rc.probe_task;
  po.layer = rc.probe_spec.resolve_layer(model.cfg.depth);
  po.pooling = rc.probe_task == "patch" ? "patch_tokens" : rc.probe_spec.pooling;

  Matf x;
  std::vector<int> y;
  int n_classes = 0;
  int rows_per_image = 1;
  if (rc.probe_task == "patch") {
    x = extract_patch_features(model, data, po.layer, rc.probe_spec.normalize);
    y = patch_labels_by_kind(data);
    n_classes = n_patch_classes();
    rows_per_image = static_cast<int>(x.rows()) / static_cast<int>(data.size());
  } else {
    x = extract_features(model, data, rc.probe_spec);
    y = image_labels(data);
    n_classes = static_cast<int>(kShapeKinds.size());
  }
  PMIM_CHECK_DATA(x.rows() == static_cast<int>(y.size()),
                  "feature rows (", x.rows(), ") do not match labels (", y.size(),
                  "); was the dataset written with a different patch size?");
  if (shuffle_labels) {
    Rng rng = Rng::substream(rc.data.seed, "shuffle-labels");
    rng.shuffle(y);
  }

  std::vector<int> train_rows, eval_rows;
  for (int i = 0; i < x.rows(); ++i)
    ((i / rows_per_image) % 5 == 4 ? eval_rows : train_rows).push_back(i);
  auto take_x = [&](const std::vector<int>& rows) {
    Matf m(static_cast<int>(rows.size()), x.cols());
    for (size_t i = 0; i < rows.size(); ++i) m.row(static_cast<int>(i)) = x.row(rows[i]);
    return m;
  };
  auto take_y = [&](const std::vector<int>& rows) {
    std::vector<int> v(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) v[i] = y[static_cast<size_t>(rows[i])];
    return v;
  };
  const ProbeResult res = linear_probe(take_x(train_rows), take_y(train_rows),
                                       take_x(eval_rows), take_y(eval_rows),
                                       n_classes, rc.probe_train);
  po.accuracy = res.accuracy;
  po.train_rows = static_cast<int>(train_rows.size());
  po.eval_rows = static_cast<int>(eval_rows.size());
  return po;
}

struct PointResult {
  double final_loss = 0;
  double probe_accuracy = 0;
  std::string hash;
};

PointResult run_training_point(const RunConfig& rc,
                               const std::vector<LabeledImage>& data,
                               const std::string& out_dir,
                               const std::string& resume_path, bool with_probe) {
  const Matf codebook = prepare_codebook(rc, data, out_dir);
  const ModelConfig mc = trained_model_config(rc, static_cast<int>(codebook.rows()));
  Model<float> model(mc);
  model.init_weights(rc.recipe.seed);
  Trainer trainer(model, data, rc.recipe, codebook, training_meta(rc, mc));
  if (!resume_path.empty()) trainer.resume(read_checkpoint(resume_path));
  write_run_stamp(out_dir, rc);
  const StepLog last = trainer.run(out_dir);
  std::printf("%s: %lld steps, final loss %.9g\n", out_dir.c_str(),
              static_cast<long long>(trainer.total_steps()), last.loss);

  PointResult pr;
  pr.final_loss = last.loss;
  pr.hash = rc.hash;
  if (with_probe) {
    const ProbeOutcome po = probe_model(model, data, rc, false);
    pr.probe_accuracy = po.accuracy;
    std::printf("%s: probe accuracy %.6f (%s task, layer %d)\n", out_dir.c_str(),
                po.accuracy, po.task.c_str(), po.layer);
  }
  return pr;
}

struct SweepAxis {
  std::string path;   // dotted config path
  std::string label;  // short name for the summary
  std::vector<json> values;
};

// "proxy_count=0,2,8" or "mask_ratio=0.2..0.8[:step]"; bare keys are
// looked up in the model, recipe, and data sections in that order.
SweepAxis parse_sweep_axis(const std::string& spec) {
  const size_t eq = spec.find('=');
  PMIM_CHECK_CONFIG(eq != std::string::npos && eq > 0 && eq + 1 < spec.size(),
                    "sweep '", spec, "' is not of the form axis=values");
  SweepAxis axis;
  axis.path = spec.substr(0, eq);
  const std::string values = spec.substr(eq + 1);

  if (axis.path.find('.') == std::string::npos) {
    const std::string key = axis.path;
    if (model_to_json(ModelConfig{}, true).contains(key))
      axis.path = "model." + key;
    else if (recipe_to_json(Recipe{}).contains(key))
      axis.path = "recipe." + key;
    else if (synth_to_json(SynthConfig{}).contains(key))
      axis.path = "data." + key;
    else
      throw config_error("unknown sweep axis '" + key + "'");
  }
  axis.label = axis.path.substr(axis.path.rfind('.') + 1);

  const size_t dots = values.find("..");
  if (dots != std::string::npos) {
    const size_t colon = values.find(':', dots);
    double lo = 0, hi = 0, step = 0.2;
    try {
      lo = std::stod(values.substr(0, dots));
      hi = std::stod(values.substr(dots + 2, colon - dots - 2));
      if (colon != std::string::npos) step = std::stod(values.substr(colon + 1));
    } catch (const std::exception&) {
      throw config_error("sweep range '" + values + "' is not lo..hi[:step]");
    }
    PMIM_CHECK_CONFIG(step > 0 && hi >= lo, "sweep range '", values,
                      "' needs hi >= lo and a positive step");
    for (double v = lo; v <= hi + 1e-9; v += step) axis.values.push_back(v);
  } else {
    size_t begin = 0;
    while (begin <= values.size()) {
      const size_t comma = values.find(',', begin);
      const std::string item = values.substr(begin, comma - begin);
      PMIM_CHECK_CONFIG(!item.empty(), "sweep '", spec, "' has an empty value");
      json parsed = json::parse(item, nullptr, false);
      axis.values.push_back(parsed.is_discarded() ? json(item) : parsed);
      if (comma == std::string::npos) break;
      begin = comma + 1;
    }
  }
  return axis;
}

void cmd_pretrain(const std::string& config_path,
                  const std::vector<std::string>& overrides,
                  const std::string& data_dir, const std::string& out_arg,
                  const std::string& resume_path,
                  const std::vector<std::string>& sweep_specs) {
  json doc = config_path.empty() ? json::object() : read_config_file(config_path);
  for (const auto& o : overrides) apply_override(doc, o);
  const RunConfig base = parse_run_config(doc);
  const std::string out = resolve_out(out_arg);
  const auto data = load_dataset(data_dir);
  check_dataset_matches(base.model, data);

  if (sweep_specs.empty()) {
    run_training_point(base, data, out, resume_path, false);
    return;
  }
  PMIM_CHECK_CONFIG(resume_path.empty(), "--resume does not combine with --sweep");

  std::vector<SweepAxis> axes;
  for (const auto& s : sweep_specs) axes.push_back(parse_sweep_axis(s));
  std::vector<size_t> at(axes.size(), 0);
  std::ofstream summary = open_csv_append(
      (fs::path(out) / "sweep_summary.csv").string(),
      "point,final_loss,probe_accuracy,config_hash");

  size_t point_id = 0;
  for (;;) {
    json pd = doc;
    std::string label, dir_label;
    for (size_t a = 0; a < axes.size(); ++a) {
      const std::string value = axes[a].values[at[a]].dump();
      apply_override(pd, axes[a].path + "=" + value);
      label += (a ? ";" : "") + axes[a].label + "=" + value;
      dir_label += "_" + axes[a].label + "_" + value;
    }
    const RunConfig rc = parse_run_config(pd);
    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "point_%03zu", point_id++);
    const std::string point_dir = (fs::path(out) / (prefix + dir_label)).string();
    const PointResult pr = run_training_point(rc, data, point_dir, "", true);
    char row[256];
    std::snprintf(row, sizeof(row), "%s,%.9g,%.9g,%s\n", label.c_str(),
                  pr.final_loss, pr.probe_accuracy, pr.hash.c_str());
    summary << row;
    summary.flush();

    size_t a = axes.size();
    while (a > 0 && ++at[a - 1] == axes[a - 1].values.size()) at[--a] = 0;
    if (a == 0) break;
  }
  std::printf("sweep summary: %s\n", (fs::path(out) / "sweep_summary.csv").string().c_str());
}

// ---------------------------------------------------------------- probe --

void cmd_probe(const RunConfig& rc, const std::string& ckpt_path,
               const std::string& data_dir, const std::string& report_arg,
               bool shuffle_labels) {
  const Checkpoint ck = read_checkpoint(ckpt_path);
  const ModelConfig mc = checkpoint_model_config(ck);
  Model<float> model(mc);
  checkpoint_get_model(ck, model);
  const auto data = load_dataset(data_dir);
  const ProbeOutcome po = probe_model(model, data, rc, shuffle_labels);

  const std::string report = resolve_out(report_arg);
  std::ofstream csv = open_csv_append(
      report, "config_hash,checkpoint,task,layer,pooling,accuracy");
  char row[512];
  std::snprintf(row, sizeof(row), "%s,%s,%s,%d,%s,%.9g\n", rc.hash.c_str(),
                ckpt_path.c_str(), po.task.c_str(), po.layer, po.pooling.c_str(),
                po.accuracy);
  csv << row;
  std::printf("probe accuracy %.6f (%s task, layer %d, pooling %s, %d train / %d eval rows)\n",
              po.accuracy, po.task.c_str(), po.layer, po.pooling.c_str(),
              po.train_rows, po.eval_rows);
  std::printf("appended to %s\n", report.c_str());
}

// ------------------------------------------------------------- analysis --

// Full-image forward passes; appends each layer's recorded self-attention
// so attn[layer][image][head] covers every requested image.
std::vector<std::vector<std::vector<Matf>>> collect_attention(
    Model<float>& model, const std::vector<LabeledImage>& data, int n_images,
    int batch_size = 64) {
  const int n = model.cfg.n_patches();
  std::vector<std::vector<std::vector<Matf>>> attn(
      static_cast<size_t>(model.cfg.depth));
  for (int at = 0; at < n_images; at += batch_size) {
    const int b = std::min(batch_size, n_images - at);
    TokenBatch<float> tb;
    tb.batch = b;
    tb.retained_per_image = n;
    tb.masked_per_image = 0;
    tb.patches.resize(b * n, model.cfg.patch_dim());
    tb.img_pos.resize(static_cast<size_t>(b) * n);
    for (int i = 0; i < b; ++i) {
      const PatchGrid grid =
          patchify(data[static_cast<size_t>(at + i)].image, model.cfg.patch_size);
      tb.patches.middleRows(i * n, n) = grid.patches;
      for (int j = 0; j < n; ++j) tb.img_pos[static_cast<size_t>(i) * n + j] = j;
    }
    Graph<float> g;
    Trace<float> trace;
    model.forward(g, tb, false, nullptr, &trace);
    for (int l = 0; l < model.cfg.depth; ++l)
      for (auto& per_image : trace.self_attn[static_cast<size_t>(l)])
        attn[static_cast<size_t>(l)].push_back(std::move(per_image));
  }
  return attn;
}

AttentionQuery parse_query(const std::string& spec, const ModelConfig& mc) {
  const int side = mc.grid_side();
  auto bad = [&](const std::string& why) {
    return config_error("query '" + spec + "': " + why +
                        " (expected patch:R,C with R,C in [0," +
                        std::to_string(side) + ") or proxy:K with K in [0," +
                        std::to_string(mc.proxy_count) + "))");
  };
  const size_t colon = spec.find(':');
  if (colon == std::string::npos) throw bad("missing ':'");
  const std::string kind = spec.substr(0, colon);
  const std::string rest = spec.substr(colon + 1);
  try {
    if (kind == "patch") {
      const size_t comma = rest.find(',');
      if (comma == std::string::npos) throw bad("patch query needs R,C");
      const int r = std::stoi(rest.substr(0, comma));
      const int c = std::stoi(rest.substr(comma + 1));
      if (r < 0 || r >= side || c < 0 || c >= side)
        throw bad("row/col out of range");
      return {AttentionQuery::Kind::patch, r * side + c};
    }
    if (kind == "proxy") {
      const int k = std::stoi(rest);
      if (k < 0 || k >= mc.proxy_count) throw bad("proxy index out of range");
      return {AttentionQuery::Kind::proxy, k};
    }
  } catch (const std::invalid_argument&) {
    throw bad("non-numeric index");
  } catch (const std::out_of_range&) {
    throw bad("index out of range");
  }
  throw bad("unknown query kind '" + kind + "'");
}

std::vector<int> select_layers(const std::string& sel, int depth) {
  if (sel == "all") {
    std::vector<int> v(static_cast<size_t>(depth));
    for (int l = 0; l < depth; ++l) v[static_cast<size_t>(l)] = l;
    return v;
  }
  if (sel == "last") return {depth - 1};
  int idx = -1;
  try {
    idx = std::stoi(sel);
  } catch (const std::exception&) {
    throw config_error("--layers expects all|last|INDEX, got '" + sel + "'");
  }
  PMIM_CHECK_CONFIG(idx >= 0 && idx < depth, "layer ", idx,
                    " out of range [0,", depth, ")");
  return {idx};
}

int select_head(const std::string& sel, int heads) {
  if (sel == "mean") return -1;
  int h = -1;
  try {
    h = std::stoi(sel);
  } catch (const std::exception&) {
    throw config_error("head selector expects mean|INDEX, got '" + sel + "'");
  }
  PMIM_CHECK_CONFIG(h >= 0 && h < heads, "head ", h, " out of range [0,", heads, ")");
  return h;
}

void cmd_attmap(const RunConfig& rc, const std::string& ckpt_path,
                const std::string& data_dir, const std::string& out_arg,
                int image_index, const std::string& query_spec,
                const std::string& layers_arg, const std::string& head_arg) {
  const Checkpoint ck = read_checkpoint(ckpt_path);
  const ModelConfig mc = checkpoint_model_config(ck);
  Model<float> model(mc);
  checkpoint_get_model(ck, model);
  const auto data = load_dataset(data_dir);
  check_dataset_matches(mc, data);
  PMIM_CHECK_CONFIG(image_index >= 0 &&
                        image_index < static_cast<int>(data.size()),
                    "--image ", image_index, " out of range [0,", data.size(), ")");

  const AttentionQuery query = parse_query(query_spec, mc);
  const std::string layer_sel = layers_arg.empty() ? rc.analysis.layer : layers_arg;
  const std::vector<int> layer_list = select_layers(layer_sel, mc.depth);
  const int render_head =
      select_head(head_arg.empty() ? rc.analysis.head : head_arg, mc.heads);

  std::vector<LabeledImage> one = {data[static_cast<size_t>(image_index)]};
  const auto attn = collect_attention(model, one, 1);
  const int side = mc.grid_side();

  const std::string out = resolve_out(out_arg);
  write_run_stamp(out, rc, {{"checkpoint_hash", checkpoint_hash(ck)},
                            {"image", image_index},
                            {"query", query_spec}});
  std::ofstream csv = open_csv_append(
      (fs::path(out) / "attmap.csv").string(),
      "layer,head,query_kind,query_index,key_index,weight");
  const char* qkind = query.kind == AttentionQuery::Kind::patch ? "patch" : "proxy";
  char row[160];
  for (int l : layer_list) {
    for (int h = -1; h < mc.heads; ++h) {
      const Matd map = attention_map(attn[static_cast<size_t>(l)][0], side, side,
                                     mc.proxy_count, query, h);
      const std::string head_label = h < 0 ? "mean" : std::to_string(h);
      for (int i = 0; i < map.size(); ++i) {
        std::snprintf(row, sizeof(row), "%d,%s,%s,%d,%d,%.9g\n", l,
                      head_label.c_str(), qkind, query.index, i,
                      map(i / side, i % side));
        csv << row;
      }
    }
    const Matd map = attention_map(attn[static_cast<size_t>(l)][0], side, side,
                                   mc.proxy_count, query, render_head);
    char name[64];
    std::snprintf(name, sizeof(name), "attmap_layer%d.pgm", l);
    render_heatmap(map, mc.patch_size, (fs::path(out) / name).string());
    std::snprintf(name, sizeof(name), "attmap_layer%d_overlay.ppm", l);
    render_heatmap(map, mc.patch_size, (fs::path(out) / name).string(),
                   &one[0].image);
  }
  std::printf("wrote %zu layer map(s) and attmap.csv to %s\n", layer_list.size(),
              out.c_str());
}

void cmd_attdist(const RunConfig& rc, const std::string& ckpt_path,
                 const std::string& data_dir, const std::string& out_arg,
                 int n_images) {
  const Checkpoint ck = read_checkpoint(ckpt_path);
  const ModelConfig mc = checkpoint_model_config(ck);
  Model<float> model(mc);
  checkpoint_get_model(ck, model);
  const auto data = load_dataset(data_dir);
  check_dataset_matches(mc, data);
  const int n = n_images > 0
                    ? std::min<int>(n_images, static_cast<int>(data.size()))
                    : std::min<int>(64, static_cast<int>(data.size()));

  const auto attn = collect_attention(model, data, n);
  const auto dist = attention_distance(attn, mc.grid_side(), mc.grid_side(),
                                       mc.proxy_count, mc.patch_size);

  const std::string out = resolve_out(out_arg);
  write_run_stamp(out, rc, {{"checkpoint_hash", checkpoint_hash(ck)},
                            {"images", n}});
  std::ofstream csv =
      open_csv_append((fs::path(out) / "attdist.csv").string(), "layer,head,distance");
  char row[96];
  for (size_t l = 0; l < dist.size(); ++l) {
    double mean = 0;
    for (size_t h = 0; h < dist[l].size(); ++h) {
      std::snprintf(row, sizeof(row), "%zu,%zu,%.9g\n", l, h, dist[l][h]);
      csv << row;
      mean += dist[l][h];
    }
    mean /= static_cast<double>(dist[l].size());
    std::printf("layer %zu: mean attention distance %.4f px\n", l, mean);
  }
  std::printf("wrote attdist.csv to %s\n", out.c_str());
}

void cmd_heatmap(const RunConfig& rc, const std::string& ckpt_path,
                 const std::string& data_dir, const std::string& out_arg,
                 int n_images) {
  const Checkpoint ck = read_checkpoint(ckpt_path);
  const ModelConfig mc = checkpoint_model_config(ck);
  PMIM_CHECK_CONFIG(mc.proxy_count > 0, "model has no proxy tokens to map");
  Model<float> model(mc);
  checkpoint_get_model(ck, model);
  const auto data = load_dataset(data_dir);
  check_dataset_matches(mc, data);
  const int n = n_images > 0
                    ? std::min<int>(n_images, static_cast<int>(data.size()))
                    : std::min<int>(500, static_cast<int>(data.size()));
  const int layer = select_layers(rc.analysis.layer, mc.depth).front();

  const auto attn = collect_attention(model, data, n);
  const auto maps = mean_proxy_heatmaps(attn[static_cast<size_t>(layer)],
                                        mc.grid_side(), mc.grid_side(),
                                        mc.proxy_count);

  const std::string out = resolve_out(out_arg);
  write_run_stamp(out, rc, {{"checkpoint_hash", checkpoint_hash(ck)},
                            {"images", n},
                            {"layer", layer}});
  std::ofstream csv =
      open_csv_append((fs::path(out) / "entropy.csv").string(), "proxy,entropy");
  char row[64];
  for (size_t k = 0; k < maps.size(); ++k) {
    char name[48];
    std::snprintf(name, sizeof(name), "proxy_%02zu.pgm", k);
    render_heatmap(maps[k], mc.patch_size, (fs::path(out) / name).string());
    std::snprintf(row, sizeof(row), "%zu,%.9g\n", k, map_entropy(maps[k]));
    csv << row;
  }
  std::printf("wrote %zu proxy map(s) and entropy.csv to %s\n", maps.size(),
              out.c_str());
}

// ---------------------------------------------------------------- strip --

void cmd_strip(const std::string& in_path, const std::string& out_arg) {
  Checkpoint ck = read_checkpoint(in_path);
  const size_t before = ck.tensors.size();
  strip_mask_path(ck);
  write_checkpoint(resolve_out(out_arg), ck);
  std::printf("kept %zu of %zu tensors in %s\n", ck.tensors.size(), before,
              resolve_out(out_arg).c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked image pretraining with proxy-token compression"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file")
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override, e.g. --set recipe.epochs=5");

  auto load = [&]() { return load_run_config(config_path, overrides); };
  auto add_subcommand = [&](const char* name, const char* what) {
    CLI::App* sub = app.add_subcommand(name, what);
    sub->fallthrough();  // --config/--set live on the parent
    return sub;
  };

  auto* synth = add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  bool synth_force = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_flag("--force", synth_force, "overwrite a non-empty directory");
  synth->callback([&]() { cmd_synth(load(), synth_out, synth_force); });

  auto* pretrain = add_subcommand("pretrain", "train on masked patches");
  std::string pt_data, pt_out, pt_resume;
  std::vector<std::string> pt_sweeps;
  pretrain->add_option("--data", pt_data, "dataset directory")->required();
  pretrain->add_option("--out", pt_out, "run directory")->required();
  pretrain->add_option("--resume", pt_resume, "checkpoint to continue from");
  pretrain->add_option("--sweep", pt_sweeps,
                       "axis=v1,v2,... or axis=lo..hi[:step]; repeatable");
  pretrain->callback([&]() {
    cmd_pretrain(config_path, overrides, pt_data, pt_out, pt_resume, pt_sweeps);
  });

  auto* probe = add_subcommand("probe", "linear probe on frozen features");
  std::string pr_ckpt, pr_data, pr_report = "probe_report.csv";
  bool pr_shuffle = false;
  probe->add_option("--checkpoint", pr_ckpt, "trained checkpoint")->required();
  probe->add_option("--data", pr_data, "dataset directory")->required();
  probe->add_option("--report", pr_report, "CSV report to append to");
  probe->add_flag("--shuffle-labels", pr_shuffle,
                  "chance-level diagnostic: permute labels before the split");
  probe->callback([&]() {
    cmd_probe(load(), pr_ckpt, pr_data, pr_report, pr_shuffle);
  });

  auto* attmap = add_subcommand("attmap", "attention map for one query token");
  std::string am_ckpt, am_data, am_out, am_query = "proxy:0";
  std::string am_layers, am_head;
  int am_image = 0;
  attmap->add_option("--checkpoint", am_ckpt, "trained checkpoint")->required();
  attmap->add_option("--data", am_data, "dataset directory")->required();
  attmap->add_option("--out", am_out, "output directory")->required();
  attmap->add_option("--image", am_image, "image index");
  attmap->add_option("--query", am_query, "patch:R,C or proxy:K");
  attmap->add_option("--layers", am_layers, "all|last|INDEX");
  attmap->add_option("--head", am_head, "mean|INDEX");
  attmap->callback([&]() {
    cmd_attmap(load(), am_ckpt, am_data, am_out, am_image, am_query, am_layers,
               am_head);
  });

  auto* attdist = add_subcommand("attdist", "per-layer attention distances");
  std::string ad_ckpt, ad_data, ad_out;
  int ad_images = 0;
  attdist->add_option("--checkpoint", ad_ckpt, "trained checkpoint")->required();
  attdist->add_option("--data", ad_data, "dataset directory")->required();
  attdist->add_option("--out", ad_out, "output directory")->required();
  attdist->add_option("--images", ad_images, "images to average over");
  attdist->callback([&]() {
    cmd_attdist(load(), ad_ckpt, ad_data, ad_out, ad_images);
  });

  auto* heatmap = add_subcommand("heatmap", "mean proxy attention heatmaps");
  std::string hm_ckpt, hm_data, hm_out;
  int hm_images = 0;
  heatmap->add_option("--checkpoint", hm_ckpt, "trained checkpoint")->required();
  heatmap->add_option("--data", hm_data, "dataset directory")->required();
  heatmap->add_option("--out", hm_out, "output directory")->required();
  heatmap->add_option("--images", hm_images, "images to average over");
  heatmap->callback([&]() {
    cmd_heatmap(load(), hm_ckpt, hm_data, hm_out, hm_images);
  });

  auto* strip = add_subcommand("strip", "drop reconstruction-side tensors");
  std::string st_in, st_out;
  strip->add_option("--checkpoint", st_in, "checkpoint to strip")->required();
  strip->add_option("--out", st_out, "stripped checkpoint path")->required();
  strip->callback([&]() { cmd_strip(st_in, st_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
