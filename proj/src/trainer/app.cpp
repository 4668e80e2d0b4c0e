// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "g3cn/error.hpp"
#include "g3cn/trainer.hpp"
#include "json.hpp"

namespace g3cn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Topology export
// ---------------------------------------------------------------------------

std::string matrix_to_csv(const FilterMatrix &m) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = 0; j < m.n; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j)
        out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::string matrix_to_pgm(const FilterMatrix &m) {
  double peak = 0.0;
  for (double v : m.values)
    peak = std::max(peak, std::abs(v));
  std::string out = "P5\n" + std::to_string(m.n) + " " + std::to_string(m.n) + "\n255\n";
  for (double v : m.values) {
    const long px = peak > 0.0 ? std::lround(255.0 * std::abs(v) / peak) : 0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(px)));
  }
  return out;
}

TopologyExport export_topology(Network &net, const ad::Tensor &sample,
                               std::size_t block, std::size_t anchor_joint) {
  const std::size_t N = net.config().skeleton->n_joints();
  if (anchor_joint >= N)
    throw Error(ErrorCode::InvalidArgument,
                "anchor joint " + std::to_string(anchor_joint) + " of " +
                    std::to_string(N));
  const AveragedTopology avg = averaged_topology(net, sample, block);
  TopologyExport out;
  out.matrix_csv = matrix_to_csv(avg.mean);
  out.pgm = matrix_to_pgm(avg.mean);
  out.anchor_csv = "joint,value\n";
  char buf[48];
  for (std::size_t j = 0; j < N; ++j) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", j, avg.mean(anchor_joint, j));
    out.anchor_csv += buf;
  }
  out.per_channel_csv = topology_to_csv({avg.per_channel, TopologyKind::Gaussian});
  return out;
}

// ---------------------------------------------------------------------------
// Application config
// ---------------------------------------------------------------------------

std::string apply_overrides(const std::string &json_text,
                            const std::vector<std::string> &overrides) {
  json root;
  try {
    root = json_text.empty() ? json::object() : json::parse(json_text);
  } catch (const json::exception &e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not JSON: ") + e.what());
  }
  for (const auto &o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(ErrorCode::ConfigError, "override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception &) {
      value = raw;
    }
    json *node = &root;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot - start);
      if (part.empty())
        throw Error(ErrorCode::ConfigError, "override key '" + key + "' has an empty segment");
      if (!node->is_object())
        throw Error(ErrorCode::ConfigError,
                    "override '" + key + "' descends into a non-object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (node->is_null())
        *node = json::object();
      start = dot + 1;
    }
  }
  return root.dump();
}

namespace {

std::shared_ptr<const SkeletonGraph> resolve_skeleton(const json &j,
                                                      const std::string &base_dir) {
  if (j.is_string()) {
    std::filesystem::path p(j.get<std::string>());
    if (p.is_relative() && !base_dir.empty())
      p = std::filesystem::path(base_dir) / p;
    return std::make_shared<const SkeletonGraph>(load_skeleton(p.string()));
  }
  if (j.is_object())
    return std::make_shared<const SkeletonGraph>(skeleton_from_json_text(j.dump()));
  throw Error(ErrorCode::ConfigError, "skeleton must be a path or an inline object");
}

} // namespace

AppConfig app_config_from_json(const std::string &json_text,
                               const std::string &base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception &e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not JSON: ") + e.what());
  }
  if (!root.is_object() || !root.contains("skeleton"))
    throw Error(ErrorCode::ConfigError, "config needs a 'skeleton' entry");
  AppConfig cfg;
  cfg.skeleton = resolve_skeleton(root["skeleton"], base_dir);

  try {
    json net = root.value("network", json::object());
    const std::size_t n_classes = net.value("n_classes", std::size_t{4});
    if (!net.contains("blocks")) {
      const NetworkConfig def = default_network_config(cfg.skeleton, n_classes);
      json blocks = json::array();
      for (const auto &b : def.blocks)
        blocks.push_back({{"in", b.in_channels},
                          {"out", b.out_channels},
                          {"stride", b.temporal_stride},
                          {"branches", b.n_branches}});
      net["blocks"] = blocks;
    }
    net["n_classes"] = n_classes;
    net.erase("skeleton");
    cfg.train.network = network_config_from_json(net.dump());
    cfg.train.network.skeleton = cfg.skeleton;

    const json train = root.value("train", json::object());
    const std::string schedule = train.value("schedule", std::string("default"));
    if (schedule == "paper-schedule")
      apply_paper_schedule(cfg.train);
    else if (schedule != "default")
      throw Error(ErrorCode::ConfigError, "unknown schedule '" + schedule + "'");
    cfg.train.lr = train.value("lr", cfg.train.lr);
    cfg.train.lr_decay_epochs = train.value("lr_decay_epochs", cfg.train.lr_decay_epochs);
    cfg.train.lr_decay_factor = train.value("lr_decay_factor", cfg.train.lr_decay_factor);
    cfg.train.epochs = train.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = train.value("batch_size", cfg.train.batch_size);
    cfg.train.weight_decay = train.value("weight_decay", cfg.train.weight_decay);
    cfg.train.momentum = train.value("momentum", cfg.train.momentum);
    cfg.train.nesterov = train.value("nesterov", cfg.train.nesterov);
    cfg.train.center_joint = train.value("center_joint", cfg.train.center_joint);
    cfg.train.seed = train.value("seed", root.value("seed", cfg.train.seed));

    const json synth = root.value("synth", json::object());
    cfg.synth.skeleton = cfg.skeleton;
    cfg.synth.n_classes = synth.value("n_classes", n_classes);
    cfg.synth.samples_per_class = synth.value("samples_per_class", cfg.synth.samples_per_class);
    cfg.synth.n_frames = synth.value("n_frames", cfg.synth.n_frames);
    cfg.synth.noise_std = synth.value("noise_std", cfg.synth.noise_std);
    cfg.synth.ambiguity = synth.value("ambiguity", cfg.synth.ambiguity);
    cfg.synth.signal_amplitude = synth.value("signal_amplitude", cfg.synth.signal_amplitude);
    cfg.synth.shared_amplitude = synth.value("shared_amplitude", cfg.synth.shared_amplitude);
    cfg.synth.seed = synth.value("seed", root.value("seed", cfg.synth.seed));
  } catch (const json::exception &e) {
    throw Error(ErrorCode::ConfigError, std::string("config: ") + e.what());
  }
  validate(cfg.train);
  return cfg;
}

AppConfig load_app_config(const std::string &path,
                          const std::vector<std::string> &overrides) {
  const std::string text = apply_overrides(read_file(path), overrides);
  return app_config_from_json(
      text, std::filesystem::path(path).parent_path().string());
}

std::string app_config_to_json(const AppConfig &cfg) {
  json j;
  j["skeleton"] = json::parse(skeleton_to_json_text(*cfg.skeleton));
  json net = json::parse(network_config_to_json(cfg.train.network));
  net.erase("skeleton");
  j["network"] = net;
  json train = json::parse(train_config_to_json(cfg.train));
  train.erase("network");
  j["train"] = train;
  j["synth"] = {{"n_classes", cfg.synth.n_classes},
                {"samples_per_class", cfg.synth.samples_per_class},
                {"n_frames", cfg.synth.n_frames},
                {"noise_std", cfg.synth.noise_std},
                {"ambiguity", cfg.synth.ambiguity},
                {"signal_amplitude", cfg.synth.signal_amplitude},
                {"shared_amplitude", cfg.synth.shared_amplitude},
                {"seed", cfg.synth.seed}};
  return j.dump(2);
}

} // namespace g3cn
