#include "uamvs/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uamvs/fusion_eval.hpp"
#include "uamvs/geometry.hpp"
#include "uamvs/losses.hpp"
#include "uamvs/matcher.hpp"
#include "uamvs/scene_io.hpp"
#include "uamvs/seed.hpp"
#include "uamvs/synth.hpp"
#include "uamvs/uncertainty.hpp"

namespace uamvs::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Every number in a report is rounded to 9 significant digits.
double round9(double v) {
  if (!std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

json rounded(json j) {
  if (j.is_number_float()) return round9(j.get<double>());
  if (j.is_object() || j.is_array()) {
    for (auto& el : j) el = rounded(el);
  }
  return j;
}

std::string view_name(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08d", v);
  return buf;
}

struct Dataset {
  fs::path dir;
  ViewGraph graph;
  std::vector<Camera> cameras;
  std::vector<Raster> images;

  int size() const { return graph.num_views; }
  fs::path gt_depth_path(int v) const { return dir / "depths" / (view_name(v) + ".pfm"); }
  bool has_gt(int v) const { return fs::exists(gt_depth_path(v)); }
  DepthMap gt_depth(int v) const { return DepthMap::from_raster(read_pfm(read_file(gt_depth_path(v))).raster); }
  std::vector<int> sources(int v, int max_sources) const {
    std::vector<int> ids;
    for (const auto& nb : graph.neighbors.at(v)) {
      if (max_sources > 0 && static_cast<int>(ids.size()) >= max_sources) break;
      ids.push_back(nb.id);
    }
    return ids;
  }
};

Dataset load_dataset(const fs::path& dir, int hypotheses) {
  Dataset ds;
  ds.dir = dir;
  ds.graph = parse_pairs(read_file(dir / "pair.txt"));
  for (int v = 0; v < ds.graph.num_views; ++v) {
    ds.cameras.push_back(Camera::from_file(parse_camera(read_file(dir / "cams" / (view_name(v) + "_cam.txt"))), hypotheses));
    ds.images.push_back(read_image(read_file(dir / "images" / (view_name(v) + ".ppm"))));
  }
  return ds;
}

DepthMap read_depth(const fs::path& path) { return DepthMap::from_raster(read_pfm(read_file(path)).raster); }

void write_depth(const fs::path& path, const DepthMap& d) { write_file(path, write_pfm(d.to_raster())); }

void check_view(const Dataset& ds, int v) {
  if (v < 0 || v >= ds.size()) {
    throw InvalidArgument("--view " + std::to_string(v) + " is outside [0, " + std::to_string(ds.size()) + ")");
  }
}

std::vector<View> source_views(const Dataset& ds, int v, int max_sources, const std::vector<Raster>* images = nullptr) {
  std::vector<View> out;
  for (int id : ds.sources(v, max_sources)) out.push_back({images ? (*images)[id] : ds.images[id], ds.cameras[id]});
  if (out.empty()) throw InvalidArgument("view " + std::to_string(v) + " has no source views");
  return out;
}

double hypothesis_spacing(const Camera& cam, int hypotheses) {
  return (cam.depth_max - cam.depth_min) / (std::max(hypotheses, 2) - 1);
}

// Pixels with ground truth, away from the border and visible in every
// source.
Mask evaluation_support(const Dataset& ds, int v, int max_sources, int border) {
  std::vector<DepthMap> gts;
  for (int u = 0; u < ds.size(); ++u) gts.push_back(ds.gt_depth(u));
  ViewGraph g = ds.graph;
  if (max_sources > 0 && static_cast<int>(g.neighbors[v].size()) > max_sources) g.neighbors[v].resize(max_sources);
  FusionConfig fc;
  fc.min_consistent_views = static_cast<int>(g.neighbors[v].size());
  Mask support = filter_depths(gts, ds.cameras, g, fc)[v];
  for (int y = 0; y < support.height(); ++y) {
    for (int x = 0; x < support.width(); ++x) {
      if (x < border || y < border || x >= support.width() - border || y >= support.height() - border) support(x, y) = 0;
    }
  }
  return support;
}

double depth_rmse(const DepthMap& est, const DepthMap& gt, const Mask& support, std::size_t* n_out) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (!support[i] || !gt.valid[i]) continue;
    const double e = est.valid[i] ? est.depth[i] - gt.depth[i] : std::numeric_limits<double>::infinity();
    sum += e * e;
    ++n;
  }
  if (n_out) *n_out = n;
  return n ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<long>(mid)));
  return m;
}

json loss_json(const LossReport& r) {
  json j = {{"name", r.name}, {"value", r.value}, {"denom", r.denom}};
  for (const auto& [k, v] : r.params) j[k] = v;
  return j;
}

// Resolved option values of a subcommand, numbers where they parse as such.
json resolved_config(const CLI::App& app) {
  json cfg = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
    if (name == "help" || name == "config" || name.empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
    } else {
      value = opt->get_default_str();
    }
    if (opt->get_expected_max() == 0) {
      cfg[name] = opt->count() > 0 && value != "false" && value != "0";
      continue;
    }
    if (value == "{}" || (value.empty() && opt->get_expected_max() > 1)) {
      cfg[name] = json::array();
      continue;
    }
    char* end = nullptr;
    const double num = std::strtod(value.c_str(), &end);
    if (!value.empty() && end && *end == '\0') {
      if (num == std::floor(num) && std::abs(num) < 9e15 && value.find_first_of(".eE") == std::string::npos) {
        cfg[name] = static_cast<long long>(num);
      } else {
        cfg[name] = num;
      }
    } else {
      cfg[name] = value;
    }
  }
  return cfg;
}

struct Common {
  std::string out;
};

void emit(const json& report, const Common& common, std::ostream& out) {
  const std::string text = rounded(report).dump(2) + "\n";
  if (common.out.empty()) {
    out << text;
  } else {
    write_file(common.out, text);
  }
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out_dir;
  std::string scene = "acceptance";
  int width = 128;
  int height = 128;
  int views = 3;
  std::uint64_t seed = 0;
  bool textureless_strip = false;
  bool specular = false;
  int hypotheses = kDefaultHypotheses;
};

json run_synth(const SynthArgs& a) {
  if (a.width < 8 || a.height < 8) throw InvalidArgument("--width/--height must be at least 8");
  if (a.hypotheses < 2) throw InvalidArgument("--hypotheses must be at least 2");
  SceneSpec spec;
  if (a.scene == "acceptance") {
    spec = acceptance_scene(a.width, a.height, a.views, a.seed, a.textureless_strip);
  } else if (a.scene == "occlusion") {
    spec = occlusion_scene(a.width, a.height, a.seed);
  } else {
    throw InvalidArgument("--scene must be acceptance or occlusion");
  }
  spec.specular = a.specular;
  spec.hypotheses = a.hypotheses;
  const auto views = render(spec);
  write_dataset(a.out_dir, spec, views);
  json j;
  j["views"] = static_cast<int>(views.size());
  j["hypothesis_spacing"] = hypothesis_spacing(spec.cameras[0], a.hypotheses);
  std::size_t gt_points = 0;
  for (const auto& v : views) gt_points += count(v.depth.valid);
  j["gt_points"] = gt_points;
  return j;
}

// ---------------------------------------------------------------- depth

struct MatchArgs {
  std::string dataset;
  int hypotheses = kDefaultHypotheses;
  double temperature = kDefaultTemperature;
  double cost_scale = kDefaultCostScale;
  bool inverse_depth = false;
  int max_sources = 0;
};

void add_match_options(CLI::App* sub, MatchArgs& m) {
  sub->add_option("--dataset", m.dataset, "Dataset directory written by synth")->required()->check(CLI::ExistingDirectory);
  sub->add_option("--hypotheses", m.hypotheses, "Depth hypotheses per pixel")->check(CLI::Range(2, 100000));
  sub->add_option("--temperature", m.temperature, "Soft-argmin temperature")->check(CLI::PositiveNumber);
  sub->add_option("--cost-scale", m.cost_scale, "Multiplier on the variance cost")->check(CLI::PositiveNumber);
  sub->add_flag("--inverse-depth", m.inverse_depth, "Space hypotheses uniformly in inverse depth");
  sub->add_option("--max-sources", m.max_sources, "Use at most this many neighbors (0 = all)")->check(CLI::NonNegativeNumber);
}

CostVolumeOptions volume_options(const MatchArgs& m) {
  CostVolumeOptions o;
  o.hypotheses = m.hypotheses;
  o.inverse_depth = m.inverse_depth;
  o.cost_scale = m.cost_scale;
  return o;
}

struct DepthArgs {
  MatchArgs match;
  std::string out_dir;
  std::vector<int> views;
};

json run_depth(const DepthArgs& a) {
  const Dataset ds = load_dataset(a.match.dataset, a.match.hypotheses);
  const fs::path out_dir = a.out_dir.empty() ? fs::path(a.match.dataset) / "est" : fs::path(a.out_dir);
  std::vector<int> views = a.views;
  if (views.empty()) {
    for (int v = 0; v < ds.size(); ++v) views.push_back(v);
  }
  for (int v : views) check_view(ds, v);
  json per_view = json::array();
  for (int v : views) {
    const auto sources = source_views(ds, v, a.match.max_sources);
    const CostVolume cv = build_cost_volume({ds.images[v], ds.cameras[v]}, sources, volume_options(a.match));
    const DepthEstimate est = soft_argmin_depth(cv, a.match.temperature);
    write_depth(out_dir / "depths" / (view_name(v) + ".pfm"), est.depth);
    write_file(out_dir / "variance" / (view_name(v) + ".pfm"), write_pfm(grid_to_raster(est.variance)));
    json jv = {{"view", v},
               {"degenerate", cv.degenerate},
               {"valid_fraction", static_cast<double>(count(est.depth.valid)) / static_cast<double>(est.depth.valid.size())},
               {"hypothesis_spacing", hypothesis_spacing(ds.cameras[v], a.match.hypotheses)}};
    if (ds.has_gt(v)) {
      std::size_t n = 0;
      const Mask support = evaluation_support(ds, v, a.match.max_sources, 3);
      jv["rmse"] = depth_rmse(est.depth, ds.gt_depth(v), support, &n);
      jv["rmse_pixels"] = n;
    }
    per_view.push_back(jv);
  }
  return {{"views", per_view}, {"out_dir", out_dir.string()}};
}

// ---------------------------------------------------------------- ensemble

struct SampleArgs {
  int samples = kDefaultSamples;
  double drop_rate = 0.2;
  std::uint64_t seed = 0;
  double xi = kDefaultXi;
  bool normalize = false;
};

void add_sample_options(CLI::App* sub, SampleArgs& s) {
  sub->add_option("--samples,-T", s.samples, "Ensemble size")->check(CLI::Range(2, 100000));
  sub->add_option("--drop-rate", s.drop_rate, "Probability of dropping a cost entry")->check(CLI::Range(0.0, 0.999999));
  sub->add_option("--seed", s.seed, "Run seed");
  sub->add_option("--xi", s.xi, "Certainty threshold on exp(-U)")->check(CLI::Range(1e-12, 1.0 - 1e-12));
  sub->add_flag("--normalize-uncertainty", s.normalize, "Divide U by the squared hypothesis spacing before thresholding");
}

struct EnsembleResult {
  EnsembleStack stack;
  EnsembleStats stats;
  Mask certain;
};

EnsembleResult ensemble_for(const Dataset& ds, int v, const MatchArgs& m, const SampleArgs& s) {
  SamplerSpec spec;
  spec.samples = s.samples;
  spec.drop_rate = s.drop_rate;
  spec.seed = derive_seed(s.seed, 0x656e73, static_cast<std::uint64_t>(v));
  spec.temperature = m.temperature;
  const auto sources = source_views(ds, v, m.max_sources);
  EnsembleResult r;
  r.stack = mc_sample({ds.images[v], ds.cameras[v]}, sources, volume_options(m), spec);
  r.stats = ensemble_stats(r.stack);
  CertaintyOptions co;
  co.xi = s.xi;
  if (s.normalize) co.normalize_interval = hypothesis_spacing(ds.cameras[v], m.hypotheses);
  r.certain = certainty_mask(r.stats.uncertainty, co, &r.stats.mean.valid);
  return r;
}

struct EnsembleArgs {
  MatchArgs match;
  SampleArgs sample;
  int view = 0;
  std::string out_dir;
  bool write_samples = false;
  int bins = 20;
};

json run_ensemble(const EnsembleArgs& a) {
  const Dataset ds = load_dataset(a.match.dataset, a.match.hypotheses);
  check_view(ds, a.view);
  const fs::path out_dir = a.out_dir.empty() ? fs::path(a.match.dataset) / "ensemble" / view_name(a.view) : fs::path(a.out_dir);
  const EnsembleResult r = ensemble_for(ds, a.view, a.match, a.sample);
  write_depth(out_dir / "mean.pfm", r.stats.mean);
  write_file(out_dir / "uncertainty.pfm", write_pfm(grid_to_raster(r.stats.uncertainty)));
  write_file(out_dir / "certain.pfm", write_pfm(mask_to_raster(r.certain)));
  if (a.write_samples) {
    for (std::size_t t = 0; t < r.stack.size(); ++t) {
      write_depth(out_dir / "samples" / (view_name(static_cast<int>(t)) + ".pfm"), r.stack.depths[t]);
      write_file(out_dir / "samples" / (view_name(static_cast<int>(t)) + "_var.pfm"), write_pfm(grid_to_raster(r.stack.variances[t])));
    }
  }
  std::vector<double> us;
  for (std::size_t i = 0; i < r.stats.uncertainty.size(); ++i) {
    if (r.stats.mean.valid[i]) us.push_back(r.stats.uncertainty[i]);
  }
  json j = {{"view", a.view},
            {"out_dir", out_dir.string()},
            {"valid_pixels", us.size()},
            {"certain_pixels", count(r.certain)},
            {"median_uncertainty", median(us)}};
  if (ds.has_gt(a.view)) {
    const DepthMap gt = ds.gt_depth(a.view);
    Mask both(gt.width(), gt.height(), 0);
    Grid<double> err(gt.width(), gt.height(), 0.0), conf(gt.width(), gt.height(), 0.0);
    std::vector<double> ua, ea;
    for (std::size_t i = 0; i < both.size(); ++i) {
      both[i] = gt.valid[i] && r.stats.mean.valid[i];
      if (!both[i]) continue;
      err[i] = std::abs(r.stats.mean.depth[i] - gt.depth[i]);
      conf[i] = -r.stats.uncertainty[i];
      ua.push_back(r.stats.uncertainty[i]);
      ea.push_back(err[i]);
    }
    if (ua.size() >= 2) {
      j["spearman"] = spearman(ua, ea);
      j["ause"] = sparsification_curve(conf, err, both, a.bins).area_to_oracle;
    }
  }
  return j;
}

// ---------------------------------------------------------------- loss

struct LossArgs {
  std::string dataset;
  int view = 0;
  std::string depth;
  std::string log_variance;
  std::string flow_source = "dataset";
  double lambda = kDefaultLambda;
  double epsilon = kDefaultEpsilon;
  std::string occlusion_mode = "warped";
  std::string pseudo_label;
  std::string augmented_depth;
  std::string certain;
  std::string maps_dir;
  int hypotheses = kDefaultHypotheses;
};

json run_loss(const LossArgs& a) {
  if (!(a.lambda >= 0.0)) throw InvalidArgument("--lambda must be non-negative");
  if (!(a.epsilon > 0.0)) throw InvalidArgument("--epsilon must be positive");
  const OcclusionMode mode = a.occlusion_mode == "literal" ? OcclusionMode::kLiteral : OcclusionMode::kWarped;
  const Dataset ds = load_dataset(a.dataset, a.hypotheses);
  check_view(ds, a.view);
  const DepthMap depth = a.depth.empty() ? ds.gt_depth(a.view) : read_depth(a.depth);
  const View ref{ds.images[a.view], ds.cameras[a.view]};
  const auto src_ids = ds.sources(a.view, 0);
  const auto sources = source_views(ds, a.view, 0);

  std::vector<Camera> src_cams;
  std::vector<FlowField> measured;
  std::vector<Mask> masks;
  for (int id : src_ids) {
    src_cams.push_back(ds.cameras[id]);
    FlowField fwd, bwd;
    if (a.flow_source == "dataset") {
      fwd = raster_to_flow(read_flo(read_file(ds.dir / "flows" / (view_name(a.view) + "_" + view_name(id) + ".flo"))));
      bwd = raster_to_flow(read_flo(read_file(ds.dir / "flows" / (view_name(id) + "_" + view_name(a.view) + ".flo"))));
    } else if (a.flow_source == "block-match") {
      fwd = block_match_flow(ds.images[a.view], ds.images[id]);
      bwd = block_match_flow(ds.images[id], ds.images[a.view]);
    } else {
      throw InvalidArgument("--flow-source must be dataset or block-match");
    }
    masks.push_back(occlusion_mask(fwd, bwd, a.epsilon, mode));
    measured.push_back(std::move(fwd));
  }

  json losses;
  const LossReport pc = photometric_loss(ref, sources, depth);
  const LossReport fc = flow_depth_loss(depth, ref.camera, src_cams, measured, masks);
  const LossReport ssp = combined_loss(pc, fc, a.lambda);
  losses["photometric"] = loss_json(pc);
  losses["flow_depth"] = loss_json(fc);
  losses["combined"] = loss_json(ssp);
  const fs::path maps = a.maps_dir;
  auto dump = [&](const std::string& name, const Grid<double>& g) {
    if (!a.maps_dir.empty()) write_file(maps / (name + ".pfm"), write_pfm(grid_to_raster(g)));
  };
  dump("photometric_residual", pc.residual);
  dump("flow_depth_residual", fc.residual);
  if (ssp.grad_depth) dump("combined_grad_depth", *ssp.grad_depth);

  if (!a.log_variance.empty()) {
    const Grid<double> logvar = raster_to_grid(read_pfm(read_file(a.log_variance)).raster);
    const LossReport al = aleatoric_photometric_loss(ref, sources, depth, logvar);
    losses["aleatoric"] = loss_json(al);
    if (al.grad_log_variance) dump("aleatoric_grad_log_variance", *al.grad_log_variance);
  }
  if (!a.pseudo_label.empty() || !a.augmented_depth.empty() || !a.certain.empty()) {
    if (a.pseudo_label.empty() || a.augmented_depth.empty() || a.certain.empty()) {
      throw InvalidArgument("--pseudo-label, --augmented-depth and --certain go together");
    }
    const Grid<double> cm = raster_to_grid(read_pfm(read_file(a.certain)).raster);
    Mask certain(cm.width(), cm.height(), 0);
    for (std::size_t i = 0; i < cm.size(); ++i) certain[i] = cm[i] > 0.5;
    losses["self_training"] = loss_json(self_training_loss(read_depth(a.augmented_depth), read_depth(a.pseudo_label), certain));
  }
  return {{"view", a.view}, {"losses", losses}};
}

// ---------------------------------------------------------------- selftrain

struct SelftrainArgs {
  MatchArgs match;
  SampleArgs sample;
  int view = 0;
  std::string out_dir;
};

json run_selftrain(const SelftrainArgs& a) {
  const Dataset ds = load_dataset(a.match.dataset, a.match.hypotheses);
  check_view(ds, a.view);
  const fs::path out_dir = a.out_dir.empty() ? fs::path(a.match.dataset) / "selftrain" / view_name(a.view) : fs::path(a.out_dir);
  const EnsembleResult r = ensemble_for(ds, a.view, a.match, a.sample);

  // The student pass: photometric augmentation on every view, one stochastic
  // forward pass.
  const AugmentationSpec aug = AugmentationSpec::random(derive_seed(a.sample.seed, 0x617567, static_cast<std::uint64_t>(a.view)));
  const std::vector<Raster> augmented = augment(ds.images, aug);
  const auto sources = source_views(ds, a.view, a.match.max_sources, &augmented);
  const CostVolume cv = build_cost_volume({augmented[a.view], ds.cameras[a.view]}, sources, volume_options(a.match));
  const DepthEstimate student = dropout_sample(cv, a.sample.drop_rate, a.match.temperature,
                                               derive_seed(a.sample.seed, 0x737464, static_cast<std::uint64_t>(a.view)));

  Mask everything(r.certain.width(), r.certain.height(), 1);
  const LossReport filtered = self_training_loss(student.depth, r.stats.mean, r.certain);
  const LossReport unfiltered = self_training_loss(student.depth, r.stats.mean, everything);

  write_depth(out_dir / "pseudo_label.pfm", r.stats.mean);
  write_file(out_dir / "uncertainty.pfm", write_pfm(grid_to_raster(r.stats.uncertainty)));
  write_file(out_dir / "certain.pfm", write_pfm(mask_to_raster(r.certain)));
  write_depth(out_dir / "augmented_depth.pfm", student.depth);

  return {{"view", a.view},
          {"out_dir", out_dir.string()},
          {"augmentation",
           {{"gain", {aug.gain[0], aug.gain[1], aug.gain[2]}},
            {"bias", {aug.bias[0], aug.bias[1], aug.bias[2]}},
            {"gamma", aug.gamma}}},
          {"certain_pixels", count(r.certain)},
          {"loss_certain", loss_json(filtered)},
          {"loss_unfiltered", loss_json(unfiltered)}};
}

// ---------------------------------------------------------------- fuse

struct FuseArgs {
  std::string dataset;
  std::string depth_dir;
  std::string ply;
  double geo_depth_tol = 0.01;
  double geo_pix_tol = 1.0;
  int min_views = 3;
  std::optional<double> voxel_size;
  int hypotheses = kDefaultHypotheses;
};

json run_fuse(const FuseArgs& a, std::ostream& err) {
  const Dataset ds = load_dataset(a.dataset, a.hypotheses);
  const fs::path depth_dir = a.depth_dir.empty() ? fs::path(a.dataset) / "est" / "depths" : fs::path(a.depth_dir);
  const fs::path ply = a.ply.empty() ? fs::path(a.dataset) / "est" / "fused.ply" : fs::path(a.ply);
  std::vector<DepthMap> depths;
  for (int v = 0; v < ds.size(); ++v) {
    const fs::path p = depth_dir / (view_name(v) + ".pfm");
    if (!fs::exists(p)) throw InvalidArgument("--depth-dir: missing " + p.string());
    depths.push_back(read_depth(p));
  }
  FusionConfig fc;
  fc.geo_depth_tol = a.geo_depth_tol;
  fc.geo_pix_tol = a.geo_pix_tol;
  fc.min_consistent_views = a.min_views;
  std::vector<std::string> warnings;
  const auto masks = filter_depths(depths, ds.cameras, ds.graph, fc, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  FuseOptions fo;
  fo.voxel_size = a.voxel_size;
  fo.hypotheses = a.hypotheses;
  const PointCloud cloud = fuse(depths, masks, ds.images, ds.cameras, fo);
  write_file(ply, write_ply(cloud));
  json kept = json::array();
  for (const auto& m : masks) kept.push_back(count(m));
  return {{"points", cloud.size()}, {"kept_pixels", kept}, {"ply", ply.string()}, {"warnings", warnings}};
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string recon;
  std::string gt;
  double max_dist = kDefaultMaxDist;
  double threshold = 1.0;
  std::optional<double> merge_voxel;
};

json run_eval(const EvalArgs& a) {
  PointCloud recon = read_ply(read_file(a.recon));
  PointCloud gt = read_ply(read_file(a.gt));
  if (a.merge_voxel) {
    recon = voxel_merge(recon, *a.merge_voxel);
    gt = voxel_merge(gt, *a.merge_voxel);
  }
  const DtuMetrics m = dtu_metrics(recon, gt, a.max_dist);
  const FScore f = f_score(recon, gt, a.threshold);
  return {{"accuracy", m.accuracy},     {"completeness", m.completeness}, {"overall", m.overall},
          {"precision", f.precision},   {"recall", f.recall},             {"f", f.f},
          {"threshold", a.threshold},   {"recon_points", recon.size()},   {"gt_points", gt.size()}};
}

// ---------------------------------------------------------------- sparsify

struct SparsifyArgs {
  std::string uncertainty;
  std::string depth;
  std::string gt;
  std::string csv;
  std::string oracle_csv;
  int bins = 20;
};

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string s = "density,error\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", p.density, p.error);
    s += buf;
  }
  return s;
}

json run_sparsify(const SparsifyArgs& a, std::ostream& out) {
  if (a.bins < 2) throw InvalidArgument("--bins must be at least 2");
  const Grid<double> u = raster_to_grid(read_pfm(read_file(a.uncertainty)).raster);
  const DepthMap d = read_depth(a.depth);
  const DepthMap gt = read_depth(a.gt);
  if (!u.same_shape(d.depth) || !u.same_shape(gt.depth)) throw InvalidArgument("--uncertainty, --depth and --gt differ in size");
  Grid<double> conf(u.width(), u.height(), 0.0), err(u.width(), u.height(), 0.0);
  Mask mask(u.width(), u.height(), 0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    mask[i] = d.valid[i] && gt.valid[i] && std::isfinite(u[i]);
    if (!mask[i]) continue;
    conf[i] = -u[i];
    err[i] = d.depth[i] - gt.depth[i];
  }
  const Sparsification s = sparsification_curve(conf, err, mask, a.bins);
  if (a.csv.empty() || a.csv == "-") {
    out << curve_csv(s.curve);
  } else {
    write_file(a.csv, curve_csv(s.curve));
  }
  if (!a.oracle_csv.empty()) write_file(a.oracle_csv, curve_csv(s.oracle));
  return {{"ause", s.area_to_oracle}, {"pixels", count(mask)}, {"full_density_error", s.curve.back().error}};
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Uncertainty-aware multi-view stereo toolkit"};
  app.require_subcommand(1, 1);
  app.set_config("--config", "", "TOML/INI file with option defaults; flags win");
  app.option_defaults()->always_capture_default();
  Common common;

  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", common.out, "Write the JSON report here instead of stdout"); };

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Render a synthetic dataset");
  s_synth->add_option("--out-dir", synth.out_dir, "Dataset directory")->required();
  s_synth->add_option("--scene", synth.scene, "acceptance | occlusion")->check(CLI::IsMember({"acceptance", "occlusion"}));
  s_synth->add_option("--width", synth.width)->check(CLI::Range(8, 65536));
  s_synth->add_option("--height", synth.height)->check(CLI::Range(8, 65536));
  s_synth->add_option("--views", synth.views)->check(CLI::Range(2, 64));
  s_synth->add_option("--seed", synth.seed);
  s_synth->add_flag("--textureless-strip", synth.textureless_strip, "Add a constant-albedo band");
  s_synth->add_flag("--specular", synth.specular, "Add a view-dependent highlight");
  s_synth->add_option("--hypotheses", synth.hypotheses, "Hypothesis count recorded in cam files")->check(CLI::Range(2, 100000));
  add_out(s_synth);

  DepthArgs depth;
  auto* s_depth = app.add_subcommand("depth", "Plane-sweep depth for each view");
  add_match_options(s_depth, depth.match);
  s_depth->add_option("--out-dir", depth.out_dir, "Output directory (default <dataset>/est)");
  s_depth->add_option("--views", depth.views, "Views to process (default all)");
  add_out(s_depth);

  EnsembleArgs ens;
  auto* s_ens = app.add_subcommand("ensemble", "Cost-dropout ensemble, uncertainty and certainty mask");
  add_match_options(s_ens, ens.match);
  add_sample_options(s_ens, ens.sample);
  s_ens->add_option("--view", ens.view)->check(CLI::NonNegativeNumber);
  s_ens->add_option("--out-dir", ens.out_dir, "Output directory (default <dataset>/ensemble/<view>)");
  s_ens->add_flag("--write-samples", ens.write_samples, "Also write every ensemble member");
  s_ens->add_option("--bins", ens.bins, "Sparsification bins for the AUSE report")->check(CLI::Range(2, 100000));
  add_out(s_ens);

  LossArgs loss;
  auto* s_loss = app.add_subcommand("loss", "Evaluate the self-supervision losses for a depth map");
  s_loss->add_option("--dataset", loss.dataset)->required()->check(CLI::ExistingDirectory);
  s_loss->add_option("--view", loss.view)->check(CLI::NonNegativeNumber);
  s_loss->add_option("--depth", loss.depth, "Depth PFM (default: ground truth)")->check(CLI::ExistingFile);
  s_loss->add_option("--log-variance", loss.log_variance, "Log-variance PFM for the aleatoric loss")->check(CLI::ExistingFile);
  s_loss->add_option("--flow-source", loss.flow_source, "dataset | block-match")->check(CLI::IsMember({"dataset", "block-match"}));
  s_loss->add_option("--lambda", loss.lambda, "Weight of the flow-depth term");
  s_loss->add_option("--epsilon", loss.epsilon, "Forward-backward consistency threshold (px)");
  s_loss->add_option("--occlusion-mode", loss.occlusion_mode, "warped | literal")->check(CLI::IsMember({"warped", "literal"}));
  s_loss->add_option("--pseudo-label", loss.pseudo_label)->check(CLI::ExistingFile);
  s_loss->add_option("--augmented-depth", loss.augmented_depth)->check(CLI::ExistingFile);
  s_loss->add_option("--certain", loss.certain, "Certainty mask PFM")->check(CLI::ExistingFile);
  s_loss->add_option("--maps-dir", loss.maps_dir, "Write residual and gradient maps here");
  s_loss->add_option("--hypotheses", loss.hypotheses)->check(CLI::Range(2, 100000));
  add_out(s_loss);

  SelftrainArgs st;
  auto* s_st = app.add_subcommand("selftrain", "Pseudo-label, certainty mask and the filtered consistency loss");
  add_match_options(s_st, st.match);
  add_sample_options(s_st, st.sample);
  s_st->add_option("--view", st.view)->check(CLI::NonNegativeNumber);
  s_st->add_option("--out-dir", st.out_dir, "Output directory (default <dataset>/selftrain/<view>)");
  add_out(s_st);

  FuseArgs fuse_args;
  auto* s_fuse = app.add_subcommand("fuse", "Filter depth maps and fuse them into a point cloud");
  s_fuse->add_option("--dataset", fuse_args.dataset)->required()->check(CLI::ExistingDirectory);
  s_fuse->add_option("--depth-dir", fuse_args.depth_dir, "Depth PFMs (default <dataset>/est/depths)")->check(CLI::ExistingDirectory);
  s_fuse->add_option("--ply", fuse_args.ply, "Output cloud (default <dataset>/est/fused.ply)");
  s_fuse->add_option("--geo-depth-tol", fuse_args.geo_depth_tol)->check(CLI::PositiveNumber);
  s_fuse->add_option("--geo-pix-tol", fuse_args.geo_pix_tol)->check(CLI::PositiveNumber);
  s_fuse->add_option("--min-views", fuse_args.min_views)->check(CLI::Range(1, 1000));
  s_fuse->add_option("--voxel-size", fuse_args.voxel_size, "Merge cell (default half the depth interval, 0 = off)")
      ->check(CLI::NonNegativeNumber);
  s_fuse->add_option("--hypotheses", fuse_args.hypotheses)->check(CLI::Range(2, 100000));
  add_out(s_fuse);

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Accuracy, completeness and F-score between two clouds");
  s_eval->add_option("--recon", ev.recon)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--gt", ev.gt)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--max-dist", ev.max_dist)->check(CLI::PositiveNumber);
  s_eval->add_option("--threshold", ev.threshold)->check(CLI::PositiveNumber);
  s_eval->add_option("--merge-voxel", ev.merge_voxel, "Voxel-merge both clouds first")->check(CLI::PositiveNumber);
  add_out(s_eval);

  SparsifyArgs sp;
  auto* s_sp = app.add_subcommand("sparsify", "Sparsification curve of a depth map ranked by uncertainty");
  s_sp->add_option("--uncertainty", sp.uncertainty)->required()->check(CLI::ExistingFile);
  s_sp->add_option("--depth", sp.depth)->required()->check(CLI::ExistingFile);
  s_sp->add_option("--gt", sp.gt)->required()->check(CLI::ExistingFile);
  s_sp->add_option("--csv", sp.csv, "Curve CSV (default stdout)");
  s_sp->add_option("--oracle-csv", sp.oracle_csv);
  s_sp->add_option("--bins", sp.bins)->check(CLI::Range(2, 100000));
  add_out(s_sp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* active = &app;
    for (CLI::App* sub : app.get_subcommands()) active = sub;
    err << active->help();
    return kExitValidation;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    json report;
    const std::string name = sub->get_name();
    if (name == "synth") {
      report = run_synth(synth);
    } else if (name == "depth") {
      report = run_depth(depth);
    } else if (name == "ensemble") {
      report = run_ensemble(ens);
    } else if (name == "loss") {
      report = run_loss(loss);
    } else if (name == "selftrain") {
      report = run_selftrain(st);
    } else if (name == "fuse") {
      report = run_fuse(fuse_args, err);
    } else if (name == "eval") {
      report = run_eval(ev);
    } else {
      std::ostringstream csv;
      report = run_sparsify(sp, csv);
      if (sp.csv.empty() || sp.csv == "-") {
        out << csv.str();
        if (common.out.empty()) return kExitOk;  // stdout carries the CSV
      }
    }
    report["command"] = name;
    report["config"] = resolved_config(*sub);
    emit(report, common, out);
    return kExitOk;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace uamvs::cli
