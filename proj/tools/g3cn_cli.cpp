// SPDX-License-Identifier: Apache-2.0
// Command-line front end over the g3cn C interface.
//
// Exit codes: 0 success, 1 usage, 2 verification failure, 3 runtime error.
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "g3cn/g3cn.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerification = 2;
constexpr int kExitRuntime = 3;

struct RuntimeFailure {
  g3cn_status status;
};

void check(g3cn_status st) {
  if (st != G3CN_OK)
    throw RuntimeFailure{st};
}

template <typename T, void (*Free)(T *)> struct Deleter {
  void operator()(T *p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<g3cn_config, Deleter<g3cn_config, g3cn_config_free>>;
using DatasetPtr = std::unique_ptr<g3cn_dataset, Deleter<g3cn_dataset, g3cn_dataset_free>>;
using ModelPtr = std::unique_ptr<g3cn_model, Deleter<g3cn_model, g3cn_model_free>>;
using SkeletonPtr =
    std::unique_ptr<g3cn_skeleton, Deleter<g3cn_skeleton, g3cn_skeleton_free>>;

/// Takes ownership of a string returned by the library.
std::string take(char *s) {
  std::string out = s ? s : "";
  g3cn_string_free(s);
  return out;
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
};

void add_config_options(CLI::App *cmd, ConfigArgs &a, bool seed_required) {
  cmd->add_option("-c,--config", a.path, "JSON config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--set", a.overrides, "key.path=value override (repeatable)");
  auto *seed = cmd->add_option("--seed", a.seed, "random seed");
  if (seed_required)
    seed->required();
}

ConfigPtr load_config(const ConfigArgs &a, bool with_seed) {
  std::vector<const char *> ov;
  for (const auto &o : a.overrides)
    ov.push_back(o.c_str());
  g3cn_config *cfg = nullptr;
  check(g3cn_config_load(a.path.c_str(), ov.data(), ov.size(), with_seed ? 1 : 0,
                         a.seed, &cfg));
  return ConfigPtr(cfg);
}

DatasetPtr read_dataset(const std::string &path) {
  g3cn_dataset *d = nullptr;
  check(g3cn_dataset_read(path.c_str(), &d));
  return DatasetPtr(d);
}

ModelPtr load_model(const std::string &path) {
  g3cn_model *m = nullptr;
  check(g3cn_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

void write_text(const std::string &path, const std::string &text) {
  std::FILE *f = std::fopen(path.c_str(), "wb");
  if (!f || std::fwrite(text.data(), 1, text.size(), f) != text.size()) {
    if (f)
      std::fclose(f);
    std::fprintf(stderr, "error: cannot write %s\n", path.c_str());
    throw RuntimeFailure{G3CN_ERR_IO};
  }
  std::fclose(f);
}

void print_epoch(size_t epoch, double lr, double loss, double acc, void *) {
  std::printf("epoch %4zu  lr %.6g  loss %.6f  acc %.4f\n", epoch, lr, loss, acc);
  std::fflush(stdout);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Gated Gaussian graph convolution for skeleton action recognition"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "g3cn 1.0.0");

  // gen-data
  ConfigArgs gen;
  std::string gen_out;
  auto *gen_cmd = app.add_subcommand("gen-data", "generate a synthetic ambiguous-action dataset");
  add_config_options(gen_cmd, gen, true);
  gen_cmd->add_option("-o,--out", gen_out, "output JSONL dataset")->required();

  // train
  ConfigArgs tr;
  std::string tr_data, tr_out, tr_metrics, tr_resume;
  bool tr_quiet = false;
  auto *tr_cmd = app.add_subcommand("train", "train a model with SGD");
  add_config_options(tr_cmd, tr, true);
  tr_cmd->add_option("-d,--data", tr_data, "training dataset (JSONL)")->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("-o,--out", tr_out, "checkpoint to write")->required();
  tr_cmd->add_option("-m,--metrics", tr_metrics, "metrics CSV (epoch,lr,loss,acc)");
  tr_cmd->add_option("--resume", tr_resume, "continue from this checkpoint")->check(CLI::ExistingFile);
  tr_cmd->add_flag("-q,--quiet", tr_quiet, "no per-epoch output");

  // eval
  std::string ev_model, ev_data, ev_out;
  auto *ev_cmd = app.add_subcommand("eval", "accuracy, per-class accuracy and confusion matrix");
  ev_cmd->add_option("-m,--model", ev_model, "checkpoint")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("-d,--data", ev_data, "dataset (JSONL)")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("-o,--out", ev_out, "write the JSON report here instead of stdout");

  // grad-check
  std::string gc_scope = "all";
  std::uint64_t gc_first = 1;
  std::size_t gc_seeds = 10;
  double gc_fault = 0.0;
  bool gc_verbose = false;
  auto *gc_cmd = app.add_subcommand("grad-check", "finite-difference gradient verification");
  gc_cmd->add_option("--scope", gc_scope, "ops, unit, network or all")
      ->check(CLI::IsMember({"ops", "unit", "network", "all"}));
  gc_cmd->add_option("--first-seed", gc_first, "first seed");
  gc_cmd->add_option("--seeds", gc_seeds, "number of seeds")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--inject-fault", gc_fault,
                     "scale the tanh derivative by (1 + value) to exercise the checker");
  gc_cmd->add_flag("-v,--verbose", gc_verbose, "print every case");

  // export-topology
  std::string ex_model, ex_data, ex_prefix;
  std::size_t ex_sample = 0, ex_anchor = 0;
  long long ex_block = -1;
  auto *ex_cmd = app.add_subcommand("export-topology", "write averaged topology matrices");
  ex_cmd->add_option("-m,--model", ex_model, "checkpoint")->required()->check(CLI::ExistingFile);
  ex_cmd->add_option("-d,--data", ex_data, "dataset (JSONL)")->required()->check(CLI::ExistingFile);
  ex_cmd->add_option("--sample", ex_sample, "sample index");
  ex_cmd->add_option("--block", ex_block, "block index (default: last block)");
  ex_cmd->add_option("--anchor", ex_anchor, "joint whose correlation row is written");
  ex_cmd->add_option("-o,--out", ex_prefix, "output prefix")->required();

  // parse-skeleton
  std::string ps_in, ps_out;
  auto *ps_cmd = app.add_subcommand("parse-skeleton", "convert an NTU .skeleton file to JSONL");
  ps_cmd->add_option("input", ps_in, ".skeleton file")->required()->check(CLI::ExistingFile);
  ps_cmd->add_option("-o,--out", ps_out, "output JSONL (summary only when omitted)");

  // describe
  ConfigArgs ds;
  std::string ds_model, ds_skeleton;
  auto *ds_cmd = app.add_subcommand("describe", "show a resolved config, a model or a skeleton");
  ds_cmd->add_option("-c,--config", ds.path, "JSON config file")->check(CLI::ExistingFile);
  ds_cmd->add_option("--set", ds.overrides, "key.path=value override (repeatable)");
  ds_cmd->add_option("-m,--model", ds_model, "checkpoint")->check(CLI::ExistingFile);
  ds_cmd->add_option("-s,--skeleton", ds_skeleton, "skeleton JSON")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) {
      ConfigPtr cfg = load_config(gen, true);
      g3cn_dataset *raw = nullptr;
      check(g3cn_dataset_generate(cfg.get(), &raw));
      DatasetPtr d(raw);
      check(g3cn_dataset_write(d.get(), gen_out.c_str()));
      std::printf("wrote %zu sequences to %s\n", g3cn_dataset_size(d.get()), gen_out.c_str());
    } else if (*tr_cmd) {
      ConfigPtr cfg = load_config(tr, true);
      DatasetPtr d = read_dataset(tr_data);
      ModelPtr m;
      if (tr_resume.empty()) {
        g3cn_model *raw = nullptr;
        check(g3cn_model_create(cfg.get(), &raw));
        m.reset(raw);
      } else {
        m = load_model(tr_resume);
      }
      check(g3cn_model_train(m.get(), d.get(), tr_metrics.empty() ? nullptr : tr_metrics.c_str(),
                             tr_quiet ? nullptr : print_epoch, nullptr));
      check(g3cn_model_save(m.get(), tr_out.c_str()));
      std::printf("saved %s\n", tr_out.c_str());
    } else if (*ev_cmd) {
      ModelPtr m = load_model(ev_model);
      DatasetPtr d = read_dataset(ev_data);
      char *report = nullptr;
      check(g3cn_model_evaluate(m.get(), d.get(), &report));
      const std::string text = take(report);
      if (ev_out.empty())
        std::printf("%s\n", text.c_str());
      else
        write_text(ev_out, text + "\n");
    } else if (*gc_cmd) {
      std::vector<std::string> scopes;
      if (gc_scope == "all")
        scopes = {"ops", "unit", "network"};
      else
        scopes = {gc_scope};
      bool all_passed = true;
      for (const auto &s : scopes) {
        int passed = 0;
        char *report = nullptr;
        check(g3cn_grad_check(s.c_str(), gc_first, gc_seeds, gc_fault, &passed, &report));
        std::string text = take(report);
        if (!gc_verbose) {
          // Keep failing cases and the closing summary line.
          std::string kept;
          std::size_t start = 0;
          while (start < text.size()) {
            std::size_t end = text.find('\n', start);
            if (end == std::string::npos)
              end = text.size();
            const std::string line = text.substr(start, end - start);
            if (line.rfind("ok ", 0) != 0)
              kept += line + '\n';
            start = end + 1;
          }
          text = kept;
        }
        std::printf("[%s]\n%s", s.c_str(), text.c_str());
        all_passed = all_passed && passed;
      }
      return all_passed ? kExitOk : kExitVerification;
    } else if (*ex_cmd) {
      ModelPtr m = load_model(ex_model);
      DatasetPtr d = read_dataset(ex_data);
      const std::size_t n_blocks = g3cn_model_block_count(m.get());
      const std::size_t block = ex_block < 0 ? (n_blocks ? n_blocks - 1 : 0)
                                             : static_cast<std::size_t>(ex_block);
      check(g3cn_model_export_topology(m.get(), d.get(), ex_sample, block, ex_anchor,
                                       ex_prefix.c_str()));
      std::printf("wrote %s.csv %s.pgm %s_anchor.csv %s_channels.csv (block %zu)\n",
                  ex_prefix.c_str(), ex_prefix.c_str(), ex_prefix.c_str(), ex_prefix.c_str(),
                  block);
    } else if (*ps_cmd) {
      g3cn_dataset *raw = nullptr;
      check(g3cn_dataset_parse_ntu(ps_in.c_str(), &raw));
      DatasetPtr d(raw);
      char *summary = nullptr;
      check(g3cn_dataset_summary(d.get(), &summary));
      std::printf("%s", take(summary).c_str());
      if (!ps_out.empty())
        check(g3cn_dataset_write(d.get(), ps_out.c_str()));
    } else if (*ds_cmd) {
      if (ds.path.empty() && ds_model.empty() && ds_skeleton.empty()) {
        std::fprintf(stderr, "describe: give --config, --model or --skeleton\n");
        return kExitUsage;
      }
      if (!ds.path.empty()) {
        ConfigPtr cfg = load_config(ds, false);
        char *json = nullptr;
        check(g3cn_config_to_json(cfg.get(), &json));
        std::printf("%s\n", take(json).c_str());
        g3cn_model *raw = nullptr;
        check(g3cn_model_create(cfg.get(), &raw));
        ModelPtr m(raw);
        char *desc = nullptr;
        check(g3cn_model_describe(m.get(), &desc));
        std::printf("%s", take(desc).c_str());
      }
      if (!ds_model.empty()) {
        ModelPtr m = load_model(ds_model);
        char *desc = nullptr;
        check(g3cn_model_describe(m.get(), &desc));
        std::printf("%s", take(desc).c_str());
      }
      if (!ds_skeleton.empty()) {
        g3cn_skeleton *raw = nullptr;
        check(g3cn_skeleton_load(ds_skeleton.c_str(), &raw));
        SkeletonPtr s(raw);
        const std::size_t n = g3cn_skeleton_joint_count(s.get());
        std::vector<int> d(n * n);
        check(g3cn_skeleton_distances(s.get(), d.data(), d.size()));
        std::printf("joints %zu\nhop distances:\n", n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j)
            std::printf(j ? " %2d" : "%2d", d[i * n + j]);
          std::printf("\n");
        }
      }
    }
  } catch (const RuntimeFailure &f) {
    const char *msg = g3cn_last_error();
    std::fprintf(stderr, "error (%s): %s\n", g3cn_status_name(f.status),
                 msg && *msg ? msg : "failed");
    return kExitRuntime;
  }
  return kExitOk;
}
