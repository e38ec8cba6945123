// Command-line surface for the inpainting pipeline: structure extraction,
// mask/data generation, training, inference, evaluation, and the
// finite-difference verification suite.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "structfill/checkpoint.hpp"
#include "structfill/gradcheck.hpp"
#include "structfill/imageops.hpp"
#include "structfill/maskgen.hpp"
#include "structfill/metrics.hpp"
#include "structfill/npy.hpp"
#include "structfill/synth.hpp"
#include "structfill/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sfill;

namespace {

bool g_json_errors = false;

void report_error(const std::string& cmd, const std::string& msg) {
  if (g_json_errors) {
    json j;
    j["error"] = msg;
    j["command"] = cmd;
    std::cerr << j.dump() << "\n";
  } else {
    std::cerr << "structfill " << cmd << ": " << msg << "\n";
  }
}

std::vector<fs::path> collect_images(const std::string& in) {
  std::vector<fs::path> files;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(in);
  }
  return files;
}

// runs fn(i) for i in [0, n) on `jobs` threads; returns count of failures
int parallel_for(int64_t n, int jobs, const std::function<bool(int64_t)>& fn) {
  if (jobs < 1) jobs = 1;
  std::atomic<int64_t> next{0};
  std::atomic<int> failures{0};
  auto worker = [&] {
    for (;;) {
      const int64_t i = next.fetch_add(1);
      if (i >= n) return;
      if (!fn(i)) failures.fetch_add(1);
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return failures.load();
}

// layered config: file < environment < explicit flags (applied by callers)
ConfigMap load_layered_config(const std::string& path) {
  ConfigMap m;
  if (!path.empty()) m = ConfigMap::from_file(path);
  m.apply_env();
  return m;
}

int cmd_extract_structure(const std::string& in, const std::string& out, double sigma,
                          double low, double high, int jobs) {
  const auto files = collect_images(in);
  if (files.empty()) throw TensorError("no images found under " + in);
  fs::create_directories(out);
  std::mutex log_mu;
  const int failures = parallel_for(
      static_cast<int64_t>(files.size()), jobs, [&](int64_t i) {
        const fs::path& p = files[static_cast<size_t>(i)];
        try {
          const Image img = to_rgb(load_image(p.string()));
          const Image grad = sobel_gradient_map(img);
          const Image edge = canny_edges(img, sigma, low, high);
          const std::string stem = p.stem().string();
          npy_save((fs::path(out) / (stem + ".grad.npy")).string(), grad.data.data(),
                   {grad.h, grad.w, 6});
          save_png((fs::path(out) / (stem + ".edge.png")).string(), edge);
          save_png((fs::path(out) / (stem + ".gradx.png")).string(),
                   visualize_plane(grad, 0));
          save_png((fs::path(out) / (stem + ".grady.png")).string(),
                   visualize_plane(grad, 1));
          return true;
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(log_mu);
          report_error("extract-structure", p.string() + ": " + e.what());
          return false;
        }
      });
  return failures == 0 ? 0 : 1;
}

int cmd_make_masks(const std::string& out, int count, int size, const std::string& kind,
                   int hole_h, int hole_w, bool centered, uint64_t seed, int jobs) {
  MaskSpec spec;
  if (kind == "regular")
    spec.kind = MaskKind::Regular;
  else if (kind == "irregular")
    spec.kind = MaskKind::Irregular;
  else
    throw TensorError("mask kind must be regular or irregular, got '" + kind + "'");
  spec.hole_h = hole_h;
  spec.hole_w = hole_w;
  spec.centered = centered;
  fs::create_directories(out);
  std::vector<double> ratios(static_cast<size_t>(count), 0.0);
  const int failures = parallel_for(count, jobs, [&](int64_t i) {
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%05lld.png", static_cast<long long>(i));
    const Image m = make_mask(size, size, spec, mix_seed(seed, static_cast<uint64_t>(i)));
    ratios[static_cast<size_t>(i)] = mask_ratio(m);
    save_mask((fs::path(out) / name).string(), m);
    return true;
  });
  double lo = 1.0, hi = 0.0, mean = 0.0;
  for (double r : ratios) {
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    mean += r;
  }
  if (count > 0) mean /= count;
  json j;
  j["count"] = count;
  j["ratio_min"] = lo;
  j["ratio_max"] = hi;
  j["ratio_mean"] = mean;
  std::cout << j.dump() << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_synth_data(const std::string& out, int count, int size, uint64_t seed) {
  SynthSpec spec;
  spec.count = count;
  spec.size = size;
  const auto images = synth_dataset(spec, seed);
  fs::create_directories(out);
  for (size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05zu.png", i);
    save_png((fs::path(out) / name).string(), images[i]);
  }
  json j;
  j["count"] = images.size();
  j["digest"] = image_set_digest(images);
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train(const TrainConfig& cfg) {
  std::ofstream log;
  std::ostream* log_stream = &std::cout;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    log.open((fs::path(cfg.out_dir) / "log.jsonl").string(), std::ios::app);
    log_stream = &log;
  }
  TrainState st = train(cfg, log_stream);

  json j;
  j["steps"] = st.step;
  if (!cfg.out_dir.empty()) {
    CheckpointData ck = load_checkpoint((fs::path(cfg.out_dir) / "final").string());
    j["checkpoint"] = (fs::path(cfg.out_dir) / "final").string();
    j["digest"] = checkpoint_digest(ck);
  }
  const Dataset ds = build_dataset(cfg);
  const auto holdout = holdout_indices(cfg, ds.size());
  if (!holdout.empty()) {
    const HoldoutEval ev = evaluate_holdout(st, cfg, ds, holdout);
    j["holdout_psnr"] = ev.psnr_model;
    j["meanfill_psnr"] = ev.psnr_meanfill;
    j["holdout_count"] = ev.count;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_inpaint(const std::string& ckpt, const std::string& in, const std::string& mask_path,
                const std::string& out, const std::string& dump_structure) {
  const CheckpointData ck = load_checkpoint(ckpt);
  TrainConfig cfg;
  if (auto it = ck.extra.find("config"); it != ck.extra.end()) {
    const json j = json::parse(it->second);
    const json jm = j.at("model");
    cfg.model.image_size = jm.at("image_size").get<int>();
    cfg.model.base_channels = jm.at("base_channels").get<int>();
    cfg.model.residual_blocks = jm.at("residual_blocks").get<int>();
    cfg.model.n_s = jm.at("n_s").get<int>();
    cfg.model.mt = jm.at("mt").get<bool>();
    cfg.model.se = jm.at("se").get<bool>();
    cfg.model.at = jm.at("at").get<bool>();
  }
  ModelParams<float> g = build_generator<float>(cfg.model, 0);
  for (const auto& name : g.names()) {
    const Tensor<float>* src = ck.find(name);
    if (!src) throw TensorError("checkpoint " + ckpt + " is missing tensor '" + name + "'");
    std::copy(src->data(), src->data() + src->numel(), g.at(name).data());
  }

  const Image img = to_rgb(load_image(in));
  const Image mask = load_mask(mask_path);
  if (img.h != cfg.model.image_size || img.w != cfg.model.image_size)
    throw TensorError("input is " + std::to_string(img.w) + "x" + std::to_string(img.h) +
                      " but the checkpoint was trained at " +
                      std::to_string(cfg.model.image_size) + "x" +
                      std::to_string(cfg.model.image_size));
  if (mask.h != img.h || mask.w != img.w)
    throw TensorError("mask is " + std::to_string(mask.w) + "x" + std::to_string(mask.h) +
                      " but the image is " + std::to_string(img.w) + "x" +
                      std::to_string(img.h));

  if (!dump_structure.empty()) {
    fs::create_directories(dump_structure);
    const Image img_masked = apply_mask(img, mask);
    GeneratorOutput<float> o = generator_forward(
        g, image_to_tensor<float>(img_masked),
        image_to_tensor<float>(apply_mask(sobel_gradient_map(img_masked), mask)),
        image_to_tensor<float>(apply_mask(canny_edges(img_masked), mask)),
        image_to_tensor<float>(mask), cfg.model);
    for (size_t si = 0; si < o.c_pred.size(); ++si) {
      const Shape shp = o.c_pred[si].shape();
      std::vector<double> hwc(static_cast<size_t>(shp.h) * shp.w * shp.c);
      for (int c = 0; c < shp.c; ++c)
        for (int y = 0; y < shp.h; ++y)
          for (int x = 0; x < shp.w; ++x)
            hwc[(static_cast<size_t>(y) * shp.w + x) * shp.c + c] =
                o.c_pred[si].data()[(static_cast<int64_t>(c) * shp.h + y) * shp.w + x];
      npy_save((fs::path(dump_structure) / ("grad_scale" + std::to_string(si) + ".npy"))
                   .string(),
               hwc.data(), {shp.h, shp.w, shp.c});
    }
  }

  save_png(out, inpaint_image(g, cfg.model, img, mask));
  return 0;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir,
                 const std::string& out, uint64_t seed) {
  std::vector<std::pair<Image, Image>> pairs;  // (output, ground truth)
  std::vector<std::string> names;
  json skipped = json::array();
  for (const auto& p : collect_images(gt_dir)) {
    const fs::path pred = fs::path(pred_dir) / p.filename();
    if (!fs::exists(pred)) {
      json s;
      s["name"] = p.filename().string();
      s["reason"] = "no matching file in " + pred_dir;
      skipped.push_back(s);
      continue;
    }
    try {
      Image gt = to_rgb(load_image(p.string()));
      Image out_img = to_rgb(load_image(pred.string()));
      if (gt.h != out_img.h || gt.w != out_img.w) {
        json s;
        s["name"] = p.filename().string();
        s["reason"] = "size mismatch";
        skipped.push_back(s);
        continue;
      }
      pairs.emplace_back(std::move(out_img), std::move(gt));
      names.push_back(p.filename().string());
    } catch (const std::exception& e) {
      json s;
      s["name"] = p.filename().string();
      s["reason"] = e.what();
      skipped.push_back(s);
    }
  }
  if (pairs.empty()) throw TensorError("no evaluable pairs between " + pred_dir + " and " + gt_dir);
  RandomConvExtractor<float> fx(mix_seed(seed, fnv1a64("fx")));
  const MetricsReport rep = evaluate_set(pairs, fx, &names);
  json j = json::parse(report_to_json(rep));
  j["skipped"] = skipped;
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw TensorError("cannot write " + out);
    f << j.dump(2) << "\n";
  }
  std::cout << report_to_table(rep);
  if (!skipped.empty()) std::cout << "skipped: " << skipped.size() << " pair(s)\n";
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  const auto results = run_gradcheck(module);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-40s max_rel_err %.3e tol %.0e %s\n", r.name.c_str(), r.max_rel_err,
                r.tol, r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

int cmd_ablate(const TrainConfig& base, const std::string& out) {
  fs::create_directories(out);
  std::ofstream log((fs::path(out) / "ablate_log.jsonl").string());
  const auto rows = run_ablation(base, &log);

  const Dataset ds = build_dataset(base);
  std::vector<Image> all;
  for (size_t i = 0; i < ds.size(); ++i) all.push_back(ds.at(i).img);
  char digest[17];
  std::snprintf(digest, sizeof(digest), "%016llx",
                static_cast<unsigned long long>(image_set_digest(all)));

  const std::string table = ablation_to_table(rows);
  std::cout << table;
  std::ofstream jf((fs::path(out) / "ablation.json").string());
  jf << ablation_to_json(rows, base.seed, digest) << "\n";
  std::ofstream tf((fs::path(out) / "ablation.txt").string());
  tf << table;
  return 0;
}

// flags > env > file for every train-shaped command
TrainConfig config_from_cli(const std::string& config_path, const ConfigMap& overrides) {
  ConfigMap m = load_layered_config(config_path);
  m.merge_from(overrides);
  return train_config_from(m);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structure-aware image inpainting pipeline"};
  app.require_subcommand(1);

  std::string cmd_name = "structfill";
  int exit_code = 0;
  auto guard = [&](const std::string& name, const std::function<int()>& fn) {
    cmd_name = name;
    try {
      exit_code = fn();
    } catch (const std::exception& e) {
      report_error(name, e.what());
      exit_code = 1;
    }
  };

  // extract-structure
  auto* ex = app.add_subcommand("extract-structure",
                                "write gradient maps, edge maps, and visualizations");
  std::string ex_in, ex_out = "structure";
  double ex_sigma = 1.0, ex_low = 0.1, ex_high = 0.2;
  int ex_jobs = 1;
  uint64_t ex_seed = 0;
  ex->add_option("--in", ex_in, "image file or directory")->required();
  ex->add_option("--out", ex_out, "output directory");
  ex->add_option("--sigma", ex_sigma, "Gaussian blur before edge detection");
  ex->add_option("--low", ex_low, "low hysteresis threshold");
  ex->add_option("--high", ex_high, "high hysteresis threshold");
  ex->add_option("--jobs", ex_jobs, "parallel workers");
  ex->add_option("--seed", ex_seed, "unused; accepted for uniformity");
  ex->add_flag("--json", g_json_errors, "machine-readable errors on stderr");
  ex->callback([&] {
    guard("extract-structure",
          [&] { return cmd_extract_structure(ex_in, ex_out, ex_sigma, ex_low, ex_high, ex_jobs); });
  });

  // make-masks
  auto* mm = app.add_subcommand("make-masks", "generate hole masks as PNG");
  std::string mm_out = "masks", mm_kind = "irregular";
  int mm_count = 16, mm_size = 256, mm_hh = 0, mm_hw = 0, mm_jobs = 1;
  bool mm_centered = false;
  uint64_t mm_seed = 0;
  mm->add_option("--out", mm_out, "output directory");
  mm->add_option("--count", mm_count, "number of masks");
  mm->add_option("--size", mm_size, "mask side length");
  mm->add_option("--kind", mm_kind, "regular | irregular");
  mm->add_option("--hole-h", mm_hh, "regular hole height (0 = half side)");
  mm->add_option("--hole-w", mm_hw, "regular hole width (0 = half side)");
  mm->add_flag("--centered", mm_centered, "center the regular hole");
  mm->add_option("--seed", mm_seed, "rng seed");
  mm->add_option("--jobs", mm_jobs, "parallel workers");
  mm->add_flag("--json", g_json_errors, "machine-readable errors on stderr");
  mm->callback([&] {
    guard("make-masks", [&] {
      return cmd_make_masks(mm_out, mm_count, mm_size, mm_kind, mm_hh, mm_hw, mm_centered,
                            mm_seed, mm_jobs);
    });
  });

  // synth-data
  auto* sd = app.add_subcommand("synth-data", "generate the synthetic shape dataset");
  std::string sd_out = "data";
  int sd_count = 2000, sd_size = 64;
  uint64_t sd_seed = 0;
  sd->add_option("--out", sd_out, "output directory");
  sd->add_option("--count", sd_count, "number of images");
  sd->add_option("--size", sd_size, "image side length");
  sd->add_option("--seed", sd_seed, "rng seed");
  sd->add_flag("--json", g_json_errors, "machine-readable errors on stderr");
  sd->callback([&] {
    guard("synth-data", [&] { return cmd_synth_data(sd_out, sd_count, sd_size, sd_seed); });
  });

  // train
  auto* tr = app.add_subcommand("train", "run the training loop");
  std::string tr_config, tr_out, tr_resume, tr_data;
  int64_t tr_steps = -1;
  int tr_batch = -1, tr_size = -1;
  double tr_lr = -1.0;
  uint64_t tr_seed = 0;
  bool tr_seed_set = false;
  tr->add_option("--config", tr_config, "TOML config file");
  tr->add_option("--out", tr_out, "checkpoint/log directory");
  tr->add_option("--resume", tr_resume, "checkpoint directory to continue from");
  tr->add_option("--data", tr_data, "directory of training images (default: synthetic)");
  tr->add_option("--steps", tr_steps, "training steps");
  tr->add_option("--batch", tr_batch, "batch size");
  tr->add_option("--size", tr_size, "image side length");
  tr->add_option("--lr", tr_lr, "generator learning rate");
  tr->add_option("--seed", tr_seed, "rng seed")->each([&](const std::string&) {
    tr_seed_set = true;
  });
  tr->add_flag("--json", g_json_errors, "machine-readable errors on stderr");
  tr->callback([&] {
    guard("train", [&] {
      ConfigMap o;
      if (!tr_out.empty()) o.set("train.out_dir", tr_out);
      if (!tr_resume.empty()) o.set("train.resume_dir", tr_resume);
      if (!tr_data.empty()) o.set("train.data_dir", tr_data);
      if (tr_steps >= 0) o.set("train.steps", std::to_string(tr_steps));
      if (tr_batch > 0) o.set("train.batch_size", std::to_string(tr_batch));
      if (tr_size > 0) o.set("model.image_size", std::to_string(tr_size));
      if (tr_lr >= 0) o.set("train.lr", std::to_string(tr_lr));
      if (tr_seed_set) o.set("train.seed", std::to_string(tr_seed));
      return cmd_train(config_from_cli(tr_config, o));
    });
  });

  // inpaint
  auto* ip = app.add_subcommand("inpaint", "fill the masked region of one image");
  std::string ip_ckpt, ip_in, ip_mask, ip_out = "inpainted.png", ip_dump;
  uint64_t ip_seed = 0;
  ip->add_option("--ckpt", ip_ckpt, "checkpoint directory")->required();
  ip->add_option("--in", ip_in, "input image")->required();
  ip->add_option("--mask", ip_mask, "mask PNG (white = hole)")->required();
  ip->add_option("--out", ip_out, "output PNG");
  ip->add_option("--dump-structure", ip_dump, "also write predicted gradient NPYs here");
  ip->add_option("--seed", ip_seed, "unused; accepted for uniformity");
  ip->add_flag("--json", g_json_errors, "machine-readable errors on stderr");
  ip->callback([&] {
    guard("inpaint",
          [&] { return cmd_inpaint(ip_ckpt, ip_in, ip_mask, ip_out, ip_dump); });
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score outputs against ground truth");
  std::string ev_pred, ev_gt, ev_out = "report.json";
  uint64_t ev_seed = 0;
  ev->add_option("--pred", ev_pred, "directory of outputs")->required();
  ev->add_option("--gt", ev_gt, "directory of ground-truth images")->required();
  ev->add_option("--out", ev_out, "report JSON path");
  ev->add_option("--seed", ev_seed, "feature-extractor seed");
  ev->add_flag("--json", g_json_errors, "machine-readable errors on stderr");
  ev->callback([&] {
    guard("evaluate", [&] { return cmd_evaluate(ev_pred, ev_gt, ev_out, ev_seed); });
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification suite");
  std::string gc_module = "all";
  uint64_t gc_seed = 7;
  gc->add_option("--module", gc_module, "all | tensor | losses | model");
  gc->add_option("--seed", gc_seed, "rng seed for test inputs");
  gc->add_flag("--json", g_json_errors, "machine-readable errors on stderr");
  gc->callback([&] { guard("gradcheck", [&] { return cmd_gradcheck(gc_module); }); });

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and score the four toggle variants");
  std::string ab_config, ab_out = "ablation";
  uint64_t ab_seed = 0;
  bool ab_seed_set = false;
  ab->add_option("--config", ab_config, "TOML base config")->required();
  ab->add_option("--out", ab_out, "output directory");
  ab->add_option("--seed", ab_seed, "rng seed")->each([&](const std::string&) {
    ab_seed_set = true;
  });
  ab->add_flag("--json", g_json_errors, "machine-readable errors on stderr");
  ab->callback([&] {
    guard("ablate", [&] {
      ConfigMap o;
      if (ab_seed_set) o.set("train.seed", std::to_string(ab_seed));
      return cmd_ablate(config_from_cli(ab_config, o), ab_out);
    });
  });

  CLI11_PARSE(app, argc, argv);
  return exit_code;
}
