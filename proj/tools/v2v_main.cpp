#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "v2v/v2v.hpp"

namespace fs = std::filesystem;
using namespace v2v;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitIo = 4;

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Io: return kExitIo;
    case ErrorCode::InvalidConfig: return kExitUsage;
    default: return kExitData;
  }
}

struct MakeDataOpts {
  int n = 8;
  std::int64_t height = 64, width = 64, frames = 16;
  int classes = 8;
  std::uint64_t seed = 1;
  int min_objects = 1, max_objects = 3;
  int max_speed = 2;
  float noise = 0.01f;
  bool label_by_motion = false;
  std::string out;
};

int cmd_make_data(const MakeDataOpts& o) {
  DatasetTemplate t;
  t.height = o.height;
  t.width = o.width;
  t.frames = o.frames;
  t.classes = o.classes;
  t.min_objects = o.min_objects;
  t.max_objects = o.max_objects;
  t.max_speed = o.max_speed;
  t.noise_std = o.noise;
  t.label_by_motion = o.label_by_motion;
  std::cout << make_dataset(o.n, t, o.seed, o.out).string() << "\n";
  return kExitOk;
}

struct TeacherOpts {
  std::string manifest, out;
  float smoothness = HSParams{}.smoothness;
  int iters = HSParams{}.iterations;
  int levels = HSParams{}.pyramid_levels;
};

int cmd_teacher(const TeacherOpts& o) {
  const HSParams p{o.smoothness, o.iters, o.levels};
  p.validate();
  const Manifest m = read_manifest(o.manifest);
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + o.out + ": " + ec.message());
  std::vector<ManifestEntry> out;
  EpeAccumulator acc;
  for (const auto& e : m.entries) {
    const ClipSample s = load_sample(e);
    const Tensor label = teacher_label_clip(s.clip, p);
    acc.add(label, s.gt_flow);
    ManifestEntry t = e;
    t.flow = fs::path(o.out) / (e.id + ".teacher.tensor");
    tensor_write(label, t.flow);
    out.push_back(t);
  }
  const fs::path path = fs::path(o.out) / "manifest.tsv";
  write_manifest(path, out);
  std::printf("%s\nteacher_epe %.6f\n", path.string().c_str(), acc.mean());
  return kExitOk;
}

struct TrainOpts {
  std::string task, config, init, manifest, checkpoint, log;
  std::optional<std::int64_t> max_iters;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> set;
};

TrainConfig load_config(const std::string& path, const std::string& task, const std::vector<std::string>& set) {
  KeyValues kv = read_key_values(path);
  for (const auto& s : set) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "--set expects key=value, got '" + s + "'");
    kv[std::string(detail::trim(s.substr(0, eq)))] = std::string(detail::trim(s.substr(eq + 1)));
  }
  if (!task.empty()) kv["task"] = task;
  TrainConfig cfg;
  apply_config(cfg, kv);
  // Relative paths in a config file are taken relative to the file.
  const fs::path base = fs::path(path).parent_path();
  for (fs::path* p : {&cfg.manifest, &cfg.init_checkpoint})
    if (!p->empty() && p->is_relative()) *p = base / *p;
  return cfg;
}

int cmd_train(const TrainOpts& o) {
  std::vector<std::string> set = o.set;
  if (!o.manifest.empty()) set.push_back("manifest=" + o.manifest);
  if (!o.init.empty()) set.push_back("init_checkpoint=" + fs::absolute(o.init).string());
  if (!o.checkpoint.empty()) set.push_back("checkpoint=" + o.checkpoint);
  if (!o.log.empty()) set.push_back("log=" + o.log);
  if (o.max_iters) set.push_back("max_iters=" + std::to_string(*o.max_iters));
  if (o.seed) set.push_back("seed=" + std::to_string(*o.seed));
  const TrainConfig cfg = load_config(o.config, o.task, set);
  if (cfg.manifest.empty()) throw Error(ErrorCode::InvalidConfig, "no manifest given (config key or --manifest)");
  const auto samples = load_dataset(read_manifest(cfg.manifest));
  const TrainResult r = train(cfg, samples);
  if (!cfg.init_checkpoint.empty()) {
    std::printf("init loaded %zu, initialized %zu, unused %zu\n", r.bind.loaded.size(), r.bind.not_loaded.size(),
                r.bind.unused.size());
    for (const auto& n : r.bind.not_loaded) std::printf("  initialized, not loaded: %s\n", n.c_str());
    for (const auto& n : r.bind.unused) std::printf("  unused entry: %s\n", n.c_str());
  }
  std::printf("iterations %lld\nfinal_loss %.9g\ncheckpoint %s\nlog %s\n", static_cast<long long>(r.iterations),
              static_cast<double>(r.losses.back()), cfg.checkpoint.string().c_str(), cfg.log.string().c_str());
  return kExitOk;
}

struct EvalOpts {
  std::string task, config, ckpt, manifest;
  std::vector<std::string> set;
};

NetGraph graph_from_checkpoint(const ParamMap& params, const TaskHead& head, const Shape& input) {
  const InferredModel m = infer_model(params);
  NetGraph g = build_network(m.architecture, head, input, m.plan);
  bind_checkpoint(g, params);
  return g;
}

int cmd_eval(const EvalOpts& o) {
  std::vector<std::string> set = o.set;
  if (!o.manifest.empty()) set.push_back("manifest=" + o.manifest);
  const TrainConfig cfg = load_config(o.config, o.task, set);
  if (cfg.manifest.empty()) throw Error(ErrorCode::InvalidConfig, "no manifest given (config key or --manifest)");
  const Manifest m = read_manifest(cfg.manifest);
  if (m.entries.empty()) throw Error(ErrorCode::EmptyDataset, "manifest " + cfg.manifest.string() + " has no samples");
  const NetGraph g = graph_from_checkpoint(checkpoint_load(o.ckpt), cfg.task, cfg.input_shape());
  std::cout << evaluate(g, load_dataset(m), cfg).str();
  return kExitOk;
}

struct PredictOpts {
  std::string ckpt, clip, out, task;
  std::int64_t classes = 0;
  float alpha = 15.0f;
};

int cmd_predict(const PredictOpts& o) {
  const ParamMap params = checkpoint_load(o.ckpt);
  const InferredModel m = infer_model(params);
  TaskHead head;
  if (!o.task.empty()) head.kind = parse_task_kind(o.task);
  else if (m.input_channels == 1) head.kind = TaskHead::Kind::Color;
  else if (m.output_channels == 2) head.kind = TaskHead::Kind::Flow;
  else head.kind = TaskHead::Kind::Segmentation;
  head.classes = head.kind == TaskHead::Kind::Segmentation ? (o.classes > 0 ? o.classes : m.output_channels) : head.output_channels();
  head.alpha = o.alpha;
  Tensor x = tensor_read(o.clip);
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "clip must be [C,L,H,W], got " + x.shape().str());
  if (head.kind == TaskHead::Kind::Color && x.dim(0) == 3) x = to_grayscale(x);
  const NetGraph g = graph_from_checkpoint(params, head, x.shape());
  const Tensor y = predict(g, x);
  tensor_write(y, o.out);
  std::printf("%s %s\n", o.out.c_str(), y.shape().str().c_str());
  return kExitOk;
}

struct GradcheckOpts {
  std::string op = "conv3d";
  std::uint64_t seed = 7;
  float eps = 1e-3f;
  float tol = 1e-2f;
};

int cmd_gradcheck(const GradcheckOpts& o) {
  double err = 0.0;
  std::size_t skipped = 0;
  for (const auto& c : check_op_gradients(o.op, o.seed, o.eps)) {
    std::printf("  %-12s %.3e (%zu coords)\n", c.name.c_str(), c.report.max_rel_error, c.report.probed);
    err = std::max(err, c.report.max_rel_error);
    skipped += c.report.skipped;
  }
  const bool ok = err < o.tol;
  std::printf("%s max_rel_error %.3e skipped %zu %s\n", o.op.c_str(), err, skipped, ok ? "PASS" : "FAIL");
  return ok ? kExitOk : kExitCheckFailed;
}

struct VizOpts {
  std::string input, out, layer = "conv1a";
  std::int64_t frame = 0;
  double max_flow = 0.0;
  std::int64_t heat_class = -1;
  std::int64_t scale = 10;
};

int cmd_viz_flow(const VizOpts& o) {
  write_ppm(render_flow(tensor_read(o.input), o.frame, o.max_flow), o.out);
  return kExitOk;
}

int cmd_viz_seg(const VizOpts& o) {
  write_ppm(render_seg(tensor_read(o.input), o.frame, o.heat_class), o.out);
  return kExitOk;
}

int cmd_viz_filters(const VizOpts& o) {
  const ParamMap params = checkpoint_load(o.input);
  const auto it = params.find(weight_name(o.layer));
  if (it == params.end()) throw Error(ErrorCode::ShapeMismatch, "checkpoint has no layer '" + o.layer + "'");
  const PpmImage img = render_filters(it->second, o.scale);
  write_ppm(img, o.out);
  std::printf("%s %lldx%lld, %lld filters x %lld slices\n", o.out.c_str(), static_cast<long long>(img.width),
              static_cast<long long>(img.height), static_cast<long long>(it->second.dim(0)),
              static_cast<long long>(it->second.dim(2)));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voxel-to-voxel video prediction toolkit"};
  app.require_subcommand(1);
  int rc = kExitOk;

  MakeDataOpts md;
  auto* make_data = app.add_subcommand("make-data", "Generate a synthetic dataset with exact ground truth");
  make_data->add_option("--n", md.n, "Number of samples")->capture_default_str();
  make_data->add_option("--height", md.height)->capture_default_str();
  make_data->add_option("--width", md.width)->capture_default_str();
  make_data->add_option("--frames", md.frames)->capture_default_str();
  make_data->add_option("--classes", md.classes)->capture_default_str();
  make_data->add_option("--seed", md.seed)->capture_default_str();
  make_data->add_option("--min-objects", md.min_objects)->capture_default_str();
  make_data->add_option("--max-objects", md.max_objects)->capture_default_str();
  make_data->add_option("--max-speed", md.max_speed, "Largest per-axis speed in px/frame")->capture_default_str();
  make_data->add_option("--noise", md.noise, "Gaussian noise stddev on the clip")->capture_default_str();
  make_data->add_flag("--label-by-motion", md.label_by_motion, "Class follows motion direction");
  make_data->add_option("--out", md.out, "Output directory")->required();
  make_data->callback([&] { rc = cmd_make_data(md); });

  TeacherOpts to;
  auto* teacher = app.add_subcommand("teacher-flow", "Label clips with Horn-Schunck flow");
  teacher->add_option("--manifest", to.manifest)->required();
  teacher->add_option("--smoothness", to.smoothness)->capture_default_str();
  teacher->add_option("--iters", to.iters)->capture_default_str();
  teacher->add_option("--levels", to.levels, "Pyramid levels")->capture_default_str();
  teacher->add_option("--out", to.out, "Output directory")->required();
  teacher->callback([&] { rc = cmd_teacher(to); });

  TrainOpts tr;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a config file");
  train_cmd->add_option("--task", tr.task)->check(CLI::IsMember({"seg", "flow", "color"}));
  train_cmd->add_option("--config", tr.config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--init", tr.init, "Checkpoint to fine-tune from");
  train_cmd->add_option("--manifest", tr.manifest);
  train_cmd->add_option("--checkpoint", tr.checkpoint, "Output checkpoint path");
  train_cmd->add_option("--log", tr.log, "Output CSV loss log");
  train_cmd->add_option("--max-iters", tr.max_iters);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--set", tr.set, "Override a config key (key=value)");
  train_cmd->callback([&] { rc = cmd_train(tr); });

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  eval_cmd->add_option("--task", ev.task)->check(CLI::IsMember({"seg", "flow", "color"}));
  eval_cmd->add_option("--config", ev.config)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--ckpt", ev.ckpt)->required();
  eval_cmd->add_option("--manifest", ev.manifest);
  eval_cmd->add_option("--set", ev.set, "Override a config key (key=value)");
  eval_cmd->callback([&] { rc = cmd_eval(ev); });

  PredictOpts pr;
  auto* predict_cmd = app.add_subcommand("predict", "Run a checkpoint on one clip");
  predict_cmd->add_option("--ckpt", pr.ckpt)->required();
  predict_cmd->add_option("--clip", pr.clip)->required();
  predict_cmd->add_option("--out", pr.out)->required();
  predict_cmd->add_option("--task", pr.task, "Override the task inferred from the checkpoint")
      ->check(CLI::IsMember({"seg", "flow", "color"}));
  predict_cmd->add_option("--alpha", pr.alpha, "Flow scale")->capture_default_str();
  predict_cmd->callback([&] { rc = cmd_predict(pr); });

  GradcheckOpts gc;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of an op's gradients");
  gradcheck_cmd->add_option("--op", gc.op)
      ->check(CLI::IsMember({"conv3d", "deconv3d", "maxpool3d", "relu", "concat", "upsample", "graph"}))
      ->capture_default_str();
  gradcheck_cmd->add_option("--seed", gc.seed)->capture_default_str();
  gradcheck_cmd->add_option("--eps", gc.eps)->capture_default_str();
  gradcheck_cmd->add_option("--tol", gc.tol)->capture_default_str();
  gradcheck_cmd->callback([&] { rc = cmd_gradcheck(gc); });

  VizOpts vf;
  auto* viz_flow = app.add_subcommand("viz-flow", "Render one flow frame on the color wheel");
  viz_flow->add_option("--flow", vf.input)->required();
  viz_flow->add_option("--frame", vf.frame)->capture_default_str();
  viz_flow->add_option("--max-flow", vf.max_flow, "Saturation cap; 0 uses the frame maximum")->capture_default_str();
  viz_flow->add_option("--out", vf.out)->required();
  viz_flow->callback([&] { rc = cmd_viz_flow(vf); });

  VizOpts vs;
  auto* viz_seg = app.add_subcommand("viz-seg", "Render segmentation labels or a class heat map");
  viz_seg->add_option("--logits", vs.input)->required();
  viz_seg->add_option("--frame", vs.frame)->capture_default_str();
  viz_seg->add_option("--class", vs.heat_class, "Heat map of this class's softmax probability");
  viz_seg->add_option("--out", vs.out)->required();
  viz_seg->callback([&] { rc = cmd_viz_seg(vs); });

  VizOpts vfl;
  auto* viz_filters = app.add_subcommand("viz-filters", "Tile a conv layer's filters");
  viz_filters->add_option("--ckpt", vfl.input)->required();
  viz_filters->add_option("--layer", vfl.layer)->capture_default_str();
  viz_filters->add_option("--scale", vfl.scale)->capture_default_str();
  viz_filters->add_option("--out", vfl.out)->required();
  viz_filters->callback([&] { rc = cmd_viz_filters(vfl); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return rc;
}
