// tsan: two-stage attentive super-resolution toolkit.
// Subcommands: prepare | train | eval | infer | analyze | gradcheck.
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "tsan/data/dataset.hpp"
#include "tsan/metrics/quality.hpp"
#include "tsan/nn/analyzer.hpp"
#include "tsan/nn/gradcheck_suites.hpp"
#include "tsan/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace tsan;

namespace {

struct PrepareArgs {
  std::string hr_dir, out_dir;
  int scale = 2;
};

struct TrainArgs {
  std::string manifest, out_ckpt, log_csv, resume;
  std::string variant = "default";
  int scale = 2;
  std::uint64_t seed = 0;
  long long iters = -1;
  int batch = 16;
  int patch = 48;
  double lr0 = 1e-4;
  long long iters_per_epoch = 1000;
  long long ckpt_every = 0;
  bool no_augment = false;
};

struct EvalArgs {
  std::string ckpt, manifest, out_prefix;
  std::string shave = "auto";
};

struct InferArgs {
  std::string ckpt, input, output, emit_coarse;
};

struct AnalyzeArgs {
  std::string variant = "default";
  int scale = 2;
  std::string input = "48x48";
  std::string csv;
};

struct GradcheckArgs {
  std::string level = "ops";
  std::uint64_t seed = 1;
};

void parse_extent(const std::string& s, int& w, int& h) {
  const auto x = s.find('x');
  contract(x != std::string::npos, "--input must look like 48x48");
  w = std::stoi(s.substr(0, x));
  h = std::stoi(s.substr(x + 1));
  contract(w >= 1 && h >= 1, "--input extents must be positive");
}

int run_prepare(const PrepareArgs& a) {
  DatasetManifest m = make_dataset(a.hr_dir, a.scale, a.out_dir);
  std::printf("wrote %zu pairs, rgb mean (%.2f, %.2f, %.2f) -> %s\n", m.pairs.size(),
              m.rgb_mean[0], m.rgb_mean[1], m.rgb_mean[2],
              (fs::path(a.out_dir) / "manifest.json").string().c_str());
  return 0;
}

int run_train(const TrainArgs& a) {
  DatasetManifest manifest = load_manifest(a.manifest);
  TrainConfig tc;
  tc.batch = a.batch;
  tc.patch = a.patch;
  tc.lr0 = a.lr0;
  tc.iters_per_epoch = a.iters_per_epoch;
  tc.seed = a.seed;
  tc.ckpt_every = a.ckpt_every;
  tc.augment = !a.no_augment;
  if (a.iters >= 0) tc.total_iters = a.iters;

  const fs::path out = a.out_ckpt;
  const fs::path log = a.log_csv.empty() ? fs::path(a.out_ckpt + ".loss.csv") : fs::path(a.log_csv);

  std::unique_ptr<Trainer> trainer;
  if (!a.resume.empty()) {
    trainer = std::make_unique<Trainer>(fs::path(a.resume), tc, manifest);
  } else {
    ModelConfig mc = build_variant(a.variant);
    mc.scale = a.scale;
    trainer = std::make_unique<Trainer>(mc, tc, manifest);
  }
  auto res = trainer->run(out, log, true);
  std::printf("done: %lld iterations, final loss %.4f, checkpoint %s\n", res.iters_done,
              res.last_loss, out.string().c_str());
  return 0;
}

FloatImage quantized(const FloatImage& img) { return to_float(to_u8(img)); }

int run_eval(const EvalArgs& a) {
  LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  auto model = model_from_checkpoint(ck);
  DatasetManifest manifest = load_manifest(a.manifest);
  if (model->config().scale != manifest.scale)
    throw std::invalid_argument("checkpoint scale " + std::to_string(model->config().scale) +
                                " does not match manifest scale " +
                                std::to_string(manifest.scale));
  const int scale = manifest.scale;
  const int shave = a.shave == "auto" ? scale : std::stoi(a.shave);

  EvalReport rep_sr1, rep_sr2, rep_bic;
  for (EvalReport* r : {&rep_sr1, &rep_sr2, &rep_bic}) {
    r->scale = scale;
    r->shave = shave;
  }
  for (std::size_t i = 0; i < manifest.pairs.size(); ++i) {
    FloatImage lr = to_float(read_png(manifest.lr_path(i).string()));
    FloatImage hr = to_float(read_png(manifest.hr_path(i).string()));
    Tape<float> tape;
    Value x = tape.leaf(image_to_tensor(lr, manifest.rgb_mean));
    auto out = model->forward(tape, x);
    FloatImage sr1 = quantized(tensor_to_image(tape.val(out.sr1), 0, manifest.rgb_mean));
    FloatImage sr2 = quantized(tensor_to_image(tape.val(out.sr2), 0, manifest.rgb_mean));
    FloatImage bic = quantized(bicubic_resize(lr, hr.width, hr.height));

    const YPlane y_hr = rgb_to_y(hr);
    const std::string name = manifest.pairs[i].lr;
    rep_sr1.rows.push_back(
        {name, psnr(rgb_to_y(sr1), y_hr, shave), ssim(rgb_to_y(sr1), y_hr, shave)});
    rep_sr2.rows.push_back(
        {name, psnr(rgb_to_y(sr2), y_hr, shave), ssim(rgb_to_y(sr2), y_hr, shave)});
    rep_bic.rows.push_back(
        {name, psnr(rgb_to_y(bic), y_hr, shave), ssim(rgb_to_y(bic), y_hr, shave)});
  }

  std::printf("%-24s | %9s %7s | %9s %7s | %9s %7s\n", "image", "sr2 dB", "ssim", "sr1 dB",
              "ssim", "bicubic", "ssim");
  for (std::size_t i = 0; i < rep_sr2.rows.size(); ++i)
    std::printf("%-24s | %9.4f %7.4f | %9.4f %7.4f | %9.4f %7.4f\n",
                rep_sr2.rows[i].name.c_str(), rep_sr2.rows[i].psnr_db, rep_sr2.rows[i].ssim,
                rep_sr1.rows[i].psnr_db, rep_sr1.rows[i].ssim, rep_bic.rows[i].psnr_db,
                rep_bic.rows[i].ssim);
  std::printf("%-24s | %9.4f %7.4f | %9.4f %7.4f | %9.4f %7.4f\n", "mean", rep_sr2.mean_psnr(),
              rep_sr2.mean_ssim(), rep_sr1.mean_psnr(), rep_sr1.mean_ssim(), rep_bic.mean_psnr(),
              rep_bic.mean_ssim());

  if (!a.out_prefix.empty()) {
    rep_sr1.write_csv(a.out_prefix + ".sr1.csv");
    rep_sr2.write_csv(a.out_prefix + ".sr2.csv");
    rep_bic.write_csv(a.out_prefix + ".bicubic.csv");
  }
  return 0;
}

int run_infer(const InferArgs& a) {
  LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  auto model = model_from_checkpoint(ck);
  const auto& mean = model->config().rgb_mean;
  FloatImage lr = to_float(read_png(a.input));
  Tape<float> tape;
  Value x = tape.leaf(image_to_tensor(lr, mean));
  auto out = model->forward(tape, x);
  write_png(to_u8(tensor_to_image(tape.val(out.sr2), 0, mean)), a.output);
  if (!a.emit_coarse.empty())
    write_png(to_u8(tensor_to_image(tape.val(out.sr1), 0, mean)), a.emit_coarse);
  const Shape s = tape.shape(out.sr2);
  std::printf("%s: %dx%d -> %dx%d (x%d)\n", a.output.c_str(), lr.width, lr.height, s[3], s[2],
              model->config().scale);
  return 0;
}

int run_analyze(const AnalyzeArgs& a) {
  ModelConfig cfg = build_variant(a.variant);
  cfg.scale = a.scale;
  int w = 48, h = 48;
  parse_extent(a.input, w, h);
  AnalysisReport rep = analyze_model(cfg, h, w);

  std::printf("variant %s, scale x%d, input (1,3,%d,%d)\n", a.variant.c_str(), a.scale, h, w);
  std::printf("%-28s %12s %16s %14s\n", "layer", "params", "macs", "bias adds");
  for (const auto& r : rep.rows)
    std::printf("%-28s %12lld %16lld %14lld%s\n", r.name.c_str(), static_cast<long long>(r.params),
                static_cast<long long>(r.macs), static_cast<long long>(r.bias),
                r.hr_stage ? "  [hr]" : "");

  // independent cross-check against the runtime registry
  TsanModel<float> model(cfg, 0);
  const std::int64_t registry = model.param_count();
  std::printf("\ntotal parameters (symbolic)  %12lld\n",
              static_cast<long long>(rep.total_params()));
  std::printf("total parameters (registry)  %12lld  [%s]\n", static_cast<long long>(registry),
              registry == rep.total_params() ? "match" : "MISMATCH");
  std::printf("elementwise ops              %12lld\n", static_cast<long long>(rep.elementwise));
  std::printf("FLOPs incl. HR stage         %15.4f G  (1 MAC = 1 FLOP; + bias + elementwise)\n",
              static_cast<double>(rep.total_flops(true)) / 1e9);
  std::printf("FLOPs excl. HR stage         %15.4f G\n",
              static_cast<double>(rep.total_flops(false)) / 1e9);

  std::printf("\nreceptive field (one context block | per-MCAB chain):\n");
  for (const auto& r : rep.receptive)
    std::printf("  %-10s %3dx%-3d | %3dx%-3d\n", r.style.c_str(), r.per_block, r.per_block,
                r.chain, r.chain);

  if (!a.csv.empty()) {
    std::ofstream f(a.csv, std::ios::trunc);
    if (!f) throw IoError(a.csv + ": cannot write analyze CSV");
    f << "layer,params,macs,bias,hr_stage\n";
    for (const auto& r : rep.rows)
      f << r.name << "," << r.params << "," << r.macs << "," << r.bias << ","
        << (r.hr_stage ? 1 : 0) << "\n";
  }
  if (registry != rep.total_params())
    throw NumericError("registry and symbolic parameter counts disagree");
  return 0;
}

int run_gradcheck(const GradcheckArgs& a) {
  SuiteReport rep;
  if (a.level == "ops")
    rep = gradcheck_ops(a.seed);
  else if (a.level == "blocks")
    rep = gradcheck_blocks(a.seed);
  else if (a.level == "model")
    rep = gradcheck_model(a.seed);
  else
    throw std::invalid_argument("--level must be ops, blocks or model");

  bool ok = true;
  for (const auto& e : rep.entries) {
    const bool pass = e.rep.checked > 0 && e.rep.max_rel_err < 1e-4;
    ok = ok && pass;
    std::printf("%-22s %-4s max rel err %.3e  (%d checked, %d kink-skipped)\n", e.name.c_str(),
                pass ? "ok" : "FAIL", e.rep.max_rel_err, e.rep.checked, e.rep.skipped);
  }
  if (!ok) throw NumericError("gradient check failed above 1e-4 relative error");
  std::printf("all %zu %s-level checks under 1e-4\n", rep.entries.size(), a.level.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage attentive single-image super-resolution toolkit"};
  app.require_subcommand(1);

  int threads = 0;
  if (const char* env = std::getenv("TSAN_THREADS")) threads = std::atoi(env);
  app.add_option("--threads", threads, "worker thread count (default: TSAN_THREADS or hardware)");

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "build LR/HR pairs and a manifest from HR PNGs");
  prepare->add_option("--hr", pa.hr_dir, "directory of HR PNG images")->required();
  prepare->add_option("--scale", pa.scale, "downscaling factor (2,3,4)")->required();
  prepare->add_option("--out", pa.out_dir, "output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a variant on a prepared manifest");
  train->add_option("--manifest", ta.manifest, "manifest JSON path")->required();
  train->add_option("--variant", ta.variant, "model variant name");
  train->add_option("--scale", ta.scale, "upscaling factor");
  train->add_option("--seed", ta.seed, "master seed");
  train->add_option("--iters", ta.iters, "total iteration target");
  train->add_option("--out", ta.out_ckpt, "checkpoint output path")->required();
  train->add_option("--log", ta.log_csv, "loss log CSV (default <ckpt>.loss.csv)");
  train->add_option("--resume", ta.resume, "resume from this checkpoint");
  train->add_option("--batch", ta.batch, "mini-batch size");
  train->add_option("--patch", ta.patch, "LR patch extent");
  train->add_option("--lr0", ta.lr0, "initial learning rate");
  train->add_option("--iters-per-epoch", ta.iters_per_epoch, "iterations per epoch");
  train->add_option("--ckpt-every", ta.ckpt_every, "periodic checkpoint cadence");
  train->add_flag("--no-augment", ta.no_augment, "disable flip/rotation augmentation");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Y-channel PSNR/SSIM against a manifest");
  eval->add_option("--ckpt", ea.ckpt, "checkpoint path")->required();
  eval->add_option("--manifest", ea.manifest, "manifest JSON path")->required();
  eval->add_option("--shave", ea.shave, "border shave in pixels, or 'auto' (= scale)");
  eval->add_option("--out", ea.out_prefix, "CSV prefix (writes .sr1/.sr2/.bicubic.csv)");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "super-resolve one PNG");
  infer->add_option("--ckpt", ia.ckpt, "checkpoint path")->required();
  infer->add_option("--in", ia.input, "input PNG")->required();
  infer->add_option("--out", ia.output, "output PNG")->required();
  infer->add_option("--emit-coarse", ia.emit_coarse, "also write the coarse first-stage image");

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "static parameter/FLOP/receptive-field report");
  analyze->add_option("--variant", aa.variant, "model variant name");
  analyze->add_option("--scale", aa.scale, "upscaling factor");
  analyze->add_option("--input", aa.input, "input extent WxH (default 48x48)");
  analyze->add_option("--csv", aa.csv, "write the per-layer table as CSV");

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "64-bit finite-difference verification");
  gradcheck->add_option("--level", ga.level, "ops | blocks | model");
  gradcheck->add_option("--seed", ga.seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (threads > 0) set_thread_count(threads);

  try {
    if (*prepare) return run_prepare(pa);
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*infer) return run_infer(ia);
    if (*analyze) return run_analyze(aa);
    if (*gradcheck) return run_gradcheck(ga);
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
