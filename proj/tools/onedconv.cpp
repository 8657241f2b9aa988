// Command-line front end: gradcheck, account, distort, train, eval,
// dump-offsets.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "odc/accounting.hpp"
#include "odc/data.hpp"
#include "odc/gradcheck.hpp"
#include "odc/network.hpp"
#include "odc/parallel.hpp"
#include "odc/train.hpp"

namespace {

using namespace odc;

int run_gradcheck(std::size_t seeds) {
  bool ok = true;
  for (const auto& c : gradcheck::standard_suite()) {
    std::size_t passed = 0;
    double worst = 0.0;
    for (std::uint64_t s = 1; s <= seeds; ++s) {
      const auto r = gradcheck::check(c.factory, s, c.tol);
      passed += r.pass;
      worst = std::max(worst, r.max_rel_err());
      if (!r.pass) {
        for (const auto& g : r.groups) {
          if (!(g.max_rel_err < c.tol)) {
            std::printf("  %s seed %llu group %s rel %.3g\n", c.name.c_str(),
                        static_cast<unsigned long long>(s), g.name.c_str(),
                        g.max_rel_err);
          }
        }
      }
    }
    std::printf("%-16s %zu/%zu seeds  max_rel_err %.3g  tol %.0e\n",
                c.name.c_str(), passed, seeds, worst, c.tol);
    ok = ok && passed == seeds;
  }
  return ok ? 0 : 1;
}

int run_account(const std::string& model, const std::string& variant,
                std::size_t classes, std::size_t in_channels, bool csv) {
  const ModelGraph g = build_model(model, parse_variant(variant), classes, in_channels);
  const auto rows = account(g);
  if (csv) {
    std::printf("name,kind,params,flops_main,flops_overhead\n");
    for (const auto& r : rows) {
      std::printf("%s,%s,%llu,%llu,%llu\n", r.name.c_str(), r.kind.c_str(),
                  static_cast<unsigned long long>(r.params),
                  static_cast<unsigned long long>(r.flops.main),
                  static_cast<unsigned long long>(r.flops.overhead));
    }
    return 0;
  }
  for (const auto& r : rows) {
    if (r.params == 0 && r.flops.main == 0) continue;
    std::printf("%-24s %-9s %10llu params %14llu flops %12llu overhead\n",
                r.name.c_str(), r.kind.c_str(),
                static_cast<unsigned long long>(r.params),
                static_cast<unsigned long long>(r.flops.main),
                static_cast<unsigned long long>(r.flops.overhead));
  }
  const FlopCount f = count_flops(g);
  std::printf("model %s variant %s\n", model.c_str(), variant.c_str());
  std::printf("params   %llu (%.2fM)\n", static_cast<unsigned long long>(count_params(g)),
              static_cast<double>(count_params(g)) / 1e6);
  std::printf("buffers  %llu\n", static_cast<unsigned long long>(count_buffers(g)));
  std::printf("flops    main %llu overhead %llu\n",
              static_cast<unsigned long long>(f.main),
              static_cast<unsigned long long>(f.overhead));
  return 0;
}

// Model and variant are taken from the entry names unless given.
Network network_for_checkpoint(const std::string& path, std::string model,
                               std::string variant, std::size_t in_channels) {
  const auto names = checkpoint_names(path);
  auto has = [&](const std::string& needle) {
    return std::any_of(names.begin(), names.end(), [&](const std::string& n) {
      return n.find(needle) != std::string::npos;
    });
  };
  if (model.empty()) model = has("layer1.") ? "resnet18" : "tiny-cnn";
  if (variant.empty()) variant = has(".shape.") ? "onedconv" : "vanilla";
  Network net(build_model(model, parse_variant(variant), 10, in_channels), 0);
  load_checkpoint(net, path);
  return net;
}

LabeledDataset load_eval_data(const std::vector<std::string>& data,
                              std::size_t limit, const std::string& mode,
                              std::uint64_t seed) {
  LabeledDataset ds = load_idx(data.at(0), data.at(1), limit);
  if (!mode.empty() && mode != "origin") {
    ds = distort_dataset(ds, DistortionSpec::for_mode(parse_distortion_mode(mode), seed));
  }
  return ds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OneDConv reference implementation"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::size_t seeds = 20;
  gc->add_option("--seeds", seeds, "seeds per operator")->check(CLI::PositiveNumber);

  auto* ac = app.add_subcommand("account", "parameter and FLOP accounting");
  std::string model = "resnet18", variant = "vanilla";
  std::size_t classes = 10, in_channels = 3;
  bool csv = false;
  ac->add_option("--model", model)->check(CLI::IsMember({"resnet18", "tiny-cnn"}));
  ac->add_option("--variant", variant)->check(CLI::IsMember({"vanilla", "onedconv"}));
  ac->add_option("--classes", classes)->check(CLI::PositiveNumber);
  ac->add_option("--in-channels", in_channels)->check(CLI::PositiveNumber);
  ac->add_flag("--csv", csv, "per-layer CSV");

  auto* dc = app.add_subcommand("distort", "write a distorted IDX pair");
  std::string mode = "rts";
  std::uint64_t seed = 7;
  std::vector<std::string> in_paths, out_paths;
  std::size_t limit = 0;
  dc->add_option("--mode", mode)->check(CLI::IsMember({"rts", "rotated"}));
  dc->add_option("--seed", seed);
  dc->add_option("--in", in_paths, "IMAGES LABELS")->expected(2)->required();
  dc->add_option("--out", out_paths, "IMAGES LABELS")->expected(2)->required();
  dc->add_option("--limit", limit, "first N records (0: all)");

  auto* tc = app.add_subcommand("train", "train from a key=value config");
  std::string config;
  tc->add_option("--config", config)->required()->check(CLI::ExistingFile);

  auto* ec = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint, eval_mode;
  std::vector<std::string> data;
  std::uint64_t eval_seed = 7;
  std::string eval_model, eval_variant;
  ec->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  ec->add_option("--data", data, "IMAGES LABELS")->expected(2)->required();
  ec->add_option("--model", eval_model)->check(CLI::IsMember({"resnet18", "tiny-cnn"}));
  ec->add_option("--variant", eval_variant)->check(CLI::IsMember({"vanilla", "onedconv"}));
  ec->add_option("--distort", eval_mode)->check(CLI::IsMember({"origin", "rts", "rotated"}));
  ec->add_option("--seed", eval_seed, "distortion seed");
  ec->add_option("--limit", limit);

  auto* oc = app.add_subcommand("dump-offsets", "per-layer offset deviation CSV");
  std::string out_csv;
  oc->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  oc->add_option("--data", data, "IMAGES LABELS")->expected(2)->required();
  oc->add_option("--model", eval_model)->check(CLI::IsMember({"resnet18", "tiny-cnn"}));
  oc->add_option("--distort", eval_mode)->check(CLI::IsMember({"origin", "rts", "rotated"}));
  oc->add_option("--seed", eval_seed, "distortion seed");
  oc->add_option("--limit", limit);
  oc->add_option("--out", out_csv)->required();

  CLI11_PARSE(app, argc, argv);
  set_thread_count(threads);

  try {
    if (*gc) return run_gradcheck(seeds);
    if (*ac) return run_account(model, variant, classes, in_channels, csv);
    if (*dc) {
      const LabeledDataset ds = load_idx(in_paths[0], in_paths[1], limit);
      const auto spec = DistortionSpec::for_mode(parse_distortion_mode(mode), seed);
      save_idx(distort_dataset(ds, spec), out_paths[0], out_paths[1]);
      std::printf("wrote %zu images (%s, seed %llu)\n", ds.size(), mode.c_str(),
                  static_cast<unsigned long long>(seed));
      return 0;
    }
    if (*tc) {
      const TrainConfig cfg = load_config(config);
      const TrainResult r = train(cfg);
      const Network& net = r.model;
      std::cout << metrics_header(net) << '\n';
      for (const auto& m : r.metrics) std::cout << metrics_row(m) << '\n';
      return 0;
    }
    if (*ec) {
      Network net = network_for_checkpoint(checkpoint, eval_model, eval_variant, 1);
      const LabeledDataset ds = load_eval_data(data, limit, eval_mode, eval_seed);
      const MetricsRecord m = evaluate(net, ds, eval_mode.empty() ? "origin" : eval_mode);
      std::printf("split %s\nimages %zu\nloss %.6f\naccuracy %.4f\n", m.split.c_str(),
                  ds.size(), m.loss, m.accuracy);
      return 0;
    }
    if (*oc) {
      Network net = network_for_checkpoint(checkpoint, eval_model, "", 1);
      const LabeledDataset ds = load_eval_data(data, limit, eval_mode, eval_seed);
      for (const auto& d : dump_offsets(net, ds, out_csv)) {
        std::printf("%-12s mean %.6g max %.6g\n", d.layer.c_str(), d.mean(), d.max_abs);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
