// SPDX-License-Identifier: Apache-2.0
#include "g3cn/g3cn.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "g3cn/error.hpp"
#include "g3cn/trainer.hpp"

struct g3cn_config {
  g3cn::AppConfig app;
};

struct g3cn_skeleton {
  g3cn::SkeletonGraph graph;
};

struct g3cn_dataset {
  std::vector<g3cn::SkeletonSequence> sequences;
};

struct g3cn_model {
  g3cn::Trainer trainer;
};

namespace {

thread_local std::string t_last_error;

g3cn_status status_of(g3cn::ErrorCode code) {
  using g3cn::ErrorCode;
  switch (code) {
  case ErrorCode::InvalidArgument: return G3CN_ERR_INVALID_ARGUMENT;
  case ErrorCode::InvalidEdge: return G3CN_ERR_INVALID_EDGE;
  case ErrorCode::DisconnectedGraph: return G3CN_ERR_DISCONNECTED_GRAPH;
  case ErrorCode::ShapeMismatch: return G3CN_ERR_SHAPE_MISMATCH;
  case ErrorCode::InvalidAxis: return G3CN_ERR_INVALID_AXIS;
  case ErrorCode::InvalidLabel: return G3CN_ERR_INVALID_LABEL;
  case ErrorCode::NotScalar: return G3CN_ERR_NOT_SCALAR;
  case ErrorCode::ParseError: return G3CN_ERR_PARSE;
  case ErrorCode::TruncatedFile: return G3CN_ERR_TRUNCATED_FILE;
  case ErrorCode::EmptySequence: return G3CN_ERR_EMPTY_SEQUENCE;
  case ErrorCode::VersionMismatch: return G3CN_ERR_VERSION_MISMATCH;
  case ErrorCode::ConfigError: return G3CN_ERR_CONFIG;
  case ErrorCode::DivergedLoss: return G3CN_ERR_DIVERGED_LOSS;
  case ErrorCode::InvalidBlock: return G3CN_ERR_INVALID_BLOCK;
  case ErrorCode::IoError: return G3CN_ERR_IO;
  }
  return G3CN_ERR_INTERNAL;
}

g3cn_status fail(g3cn_status status, std::string message) {
  t_last_error = std::move(message);
  return status;
}

/// Runs `body`, translating exceptions into status codes.
template <typename F> g3cn_status guarded(F &&body) {
  try {
    t_last_error.clear();
    body();
    return G3CN_OK;
  } catch (const g3cn::Error &e) {
    return fail(status_of(e.code()), e.what());
  } catch (const std::bad_alloc &) {
    return fail(G3CN_ERR_INTERNAL, "out of memory");
  } catch (const std::exception &e) {
    return fail(G3CN_ERR_INTERNAL, e.what());
  }
}

void require(bool ok, const char *what) {
  if (!ok)
    throw g3cn::Error(g3cn::ErrorCode::InvalidArgument, what);
}

char *copy_string(const std::string &s) {
  char *out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

g3cn::PreparedData prepare(const g3cn_model *m, const g3cn_dataset *d) {
  return g3cn::prepare_dataset(d->sequences, m->trainer.config());
}

} // namespace

extern "C" {

const char *g3cn_last_error(void) { return t_last_error.c_str(); }

const char *g3cn_status_name(g3cn_status status) {
  switch (status) {
  case G3CN_OK: return "ok";
  case G3CN_ERR_INVALID_ARGUMENT: return "invalid_argument";
  case G3CN_ERR_INVALID_EDGE: return "invalid_edge";
  case G3CN_ERR_DISCONNECTED_GRAPH: return "disconnected_graph";
  case G3CN_ERR_SHAPE_MISMATCH: return "shape_mismatch";
  case G3CN_ERR_INVALID_AXIS: return "invalid_axis";
  case G3CN_ERR_INVALID_LABEL: return "invalid_label";
  case G3CN_ERR_NOT_SCALAR: return "not_scalar";
  case G3CN_ERR_PARSE: return "parse_error";
  case G3CN_ERR_TRUNCATED_FILE: return "truncated_file";
  case G3CN_ERR_EMPTY_SEQUENCE: return "empty_sequence";
  case G3CN_ERR_VERSION_MISMATCH: return "version_mismatch";
  case G3CN_ERR_CONFIG: return "config_error";
  case G3CN_ERR_DIVERGED_LOSS: return "diverged_loss";
  case G3CN_ERR_INVALID_BLOCK: return "invalid_block";
  case G3CN_ERR_IO: return "io_error";
  case G3CN_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void g3cn_string_free(char *s) { delete[] s; }

// ---- configuration --------------------------------------------------------

g3cn_status g3cn_config_load(const char *path, const char *const *overrides,
                             size_t n_overrides, int has_seed, uint64_t seed,
                             g3cn_config **out) {
  return guarded([&] {
    require(path && out, "config_load: null argument");
    require(n_overrides == 0 || overrides, "config_load: null overrides");
    *out = nullptr;
    std::vector<std::string> ov;
    for (size_t i = 0; i < n_overrides; ++i) {
      require(overrides[i] != nullptr, "config_load: null override");
      ov.emplace_back(overrides[i]);
    }
    if (has_seed) {
      ov.push_back("train.seed=" + std::to_string(seed));
      ov.push_back("synth.seed=" + std::to_string(seed));
    }
    *out = new g3cn_config{g3cn::load_app_config(path, ov)};
  });
}

g3cn_status g3cn_config_to_json(const g3cn_config *cfg, char **json) {
  return guarded([&] {
    require(cfg && json, "config_to_json: null argument");
    *json = copy_string(g3cn::app_config_to_json(cfg->app));
  });
}

void g3cn_config_free(g3cn_config *cfg) { delete cfg; }

// ---- skeletons ------------------------------------------------------------

g3cn_status g3cn_skeleton_load(const char *path, g3cn_skeleton **out) {
  return guarded([&] {
    require(path && out, "skeleton_load: null argument");
    *out = nullptr;
    *out = new g3cn_skeleton{g3cn::load_skeleton(path)};
  });
}

size_t g3cn_skeleton_joint_count(const g3cn_skeleton *s) {
  return s ? s->graph.n_joints() : 0;
}

g3cn_status g3cn_skeleton_distances(const g3cn_skeleton *s, int *out,
                                    size_t capacity) {
  return guarded([&] {
    require(s && out, "skeleton_distances: null argument");
    const auto d = g3cn::shortest_path_distances(s->graph);
    require(capacity >= d.values.size(), "skeleton_distances: buffer too small");
    std::copy(d.values.begin(), d.values.end(), out);
  });
}

g3cn_status g3cn_skeleton_filter(const g3cn_skeleton *s, double *out,
                                 size_t capacity) {
  return guarded([&] {
    require(s && out, "skeleton_filter: null argument");
    const auto phi = g3cn::gaussian_filter(g3cn::shortest_path_distances(s->graph));
    require(capacity >= phi.values.size(), "skeleton_filter: buffer too small");
    std::copy(phi.values.begin(), phi.values.end(), out);
  });
}

void g3cn_skeleton_free(g3cn_skeleton *s) { delete s; }

// ---- datasets -------------------------------------------------------------

g3cn_status g3cn_dataset_generate(const g3cn_config *cfg, g3cn_dataset **out) {
  return guarded([&] {
    require(cfg && out, "dataset_generate: null argument");
    *out = nullptr;
    *out = new g3cn_dataset{g3cn::generate_synthetic(cfg->app.synth)};
  });
}

g3cn_status g3cn_dataset_read(const char *path, g3cn_dataset **out) {
  return guarded([&] {
    require(path && out, "dataset_read: null argument");
    *out = nullptr;
    *out = new g3cn_dataset{g3cn::read_dataset(path)};
  });
}

g3cn_status g3cn_dataset_parse_ntu(const char *path, g3cn_dataset **out) {
  return guarded([&] {
    require(path && out, "dataset_parse_ntu: null argument");
    *out = nullptr;
    *out = new g3cn_dataset{g3cn::parse_ntu_file(path)};
  });
}

g3cn_status g3cn_dataset_write(const g3cn_dataset *d, const char *path) {
  return guarded([&] {
    require(d && path, "dataset_write: null argument");
    g3cn::write_dataset(path, d->sequences);
  });
}

size_t g3cn_dataset_size(const g3cn_dataset *d) {
  return d ? d->sequences.size() : 0;
}

g3cn_status g3cn_dataset_summary(const g3cn_dataset *d, char **text) {
  return guarded([&] {
    require(d && text, "dataset_summary: null argument");
    std::string out = "index,label,frames,joints,subject,body,source\n";
    for (std::size_t i = 0; i < d->sequences.size(); ++i) {
      const auto &s = d->sequences[i];
      out += std::to_string(i) + ',' + std::to_string(s.label) + ',' +
             std::to_string(s.n_frames) + ',' + std::to_string(s.n_joints) + ',' +
             s.subject + ',' + s.body + ',' + s.source + '\n';
    }
    *text = copy_string(out);
  });
}

void g3cn_dataset_free(g3cn_dataset *d) { delete d; }

// ---- models ---------------------------------------------------------------

g3cn_status g3cn_model_create(const g3cn_config *cfg, g3cn_model **out) {
  return guarded([&] {
    require(cfg && out, "model_create: null argument");
    *out = nullptr;
    *out = new g3cn_model{g3cn::Trainer(cfg->app.train)};
  });
}

g3cn_status g3cn_model_load(const char *checkpoint_path, g3cn_model **out) {
  return guarded([&] {
    require(checkpoint_path && out, "model_load: null argument");
    *out = nullptr;
    *out = new g3cn_model{g3cn::Trainer::load(checkpoint_path)};
  });
}

g3cn_status g3cn_model_save(const g3cn_model *m, const char *checkpoint_path) {
  return guarded([&] {
    require(m && checkpoint_path, "model_save: null argument");
    m->trainer.save(checkpoint_path);
  });
}

g3cn_status g3cn_model_train(g3cn_model *m, const g3cn_dataset *d,
                             const char *metrics_path, g3cn_epoch_callback cb,
                             void *user) {
  return guarded([&] {
    require(m && d, "model_train: null argument");
    const g3cn::PreparedData data = prepare(m, d);
    std::string csv = g3cn::metrics_csv_header();
    // Rows gathered so far are still written when training diverges.
    try {
      m->trainer.fit(data, [&](const g3cn::EpochMetrics &e) {
        csv += g3cn::metrics_csv_row(e);
        if (cb)
          cb(e.epoch, e.lr, e.loss, e.acc, user);
      });
    } catch (...) {
      if (metrics_path)
        g3cn::write_file_atomic(metrics_path, csv);
      throw;
    }
    if (metrics_path)
      g3cn::write_file_atomic(metrics_path, csv);
  });
}

g3cn_status g3cn_model_evaluate(g3cn_model *m, const g3cn_dataset *d,
                                char **report_json) {
  return guarded([&] {
    require(m && d && report_json, "model_evaluate: null argument");
    *report_json = copy_string(g3cn::eval_report_json(m->trainer.evaluate(prepare(m, d))));
  });
}

g3cn_status g3cn_model_logits(g3cn_model *m, const g3cn_dataset *d, double *out,
                              size_t capacity, size_t *written) {
  return guarded([&] {
    require(m && d && out, "model_logits: null argument");
    const g3cn::ad::Tensor logits = m->trainer.logits(prepare(m, d));
    const auto values = logits.data();
    require(capacity >= values.size(), "model_logits: buffer too small");
    std::copy(values.begin(), values.end(), out);
    if (written)
      *written = values.size();
  });
}

size_t g3cn_model_parameter_count(const g3cn_model *m) {
  return m ? m->trainer.network().parameter_count() : 0;
}

size_t g3cn_model_block_count(const g3cn_model *m) {
  return m ? m->trainer.config().network.blocks.size() : 0;
}

g3cn_status g3cn_model_describe(const g3cn_model *m, char **text) {
  return guarded([&] {
    require(m && text, "model_describe: null argument");
    *text = copy_string(m->trainer.network().describe());
  });
}

g3cn_status g3cn_model_export_topology(g3cn_model *m, const g3cn_dataset *d,
                                       size_t sample, size_t block,
                                       size_t anchor_joint, const char *prefix) {
  return guarded([&] {
    require(m && d && prefix, "model_export_topology: null argument");
    const g3cn::PreparedData data = prepare(m, d);
    if (sample >= data.size())
      throw g3cn::Error(g3cn::ErrorCode::InvalidArgument,
                        "sample " + std::to_string(sample) + " of " +
                            std::to_string(data.size()));
    const g3cn::TopologyExport ex = g3cn::export_topology(
        m->trainer.network(), data.sample(sample), block, anchor_joint);
    const std::string p(prefix);
    g3cn::write_file_atomic(p + ".csv", ex.matrix_csv);
    g3cn::write_file_atomic(p + ".pgm", ex.pgm);
    g3cn::write_file_atomic(p + "_anchor.csv", ex.anchor_csv);
    g3cn::write_file_atomic(p + "_channels.csv", ex.per_channel_csv);
  });
}

void g3cn_model_free(g3cn_model *m) { delete m; }

// ---- verification ---------------------------------------------------------

g3cn_status g3cn_grad_check(const char *scope, uint64_t first_seed,
                            size_t n_seeds, double fault, int *passed,
                            char **report) {
  return guarded([&] {
    require(scope && passed, "grad_check: null argument");
    const std::string s(scope);
    g3cn::GradCheckScope sc;
    if (s == "ops")
      sc = g3cn::GradCheckScope::Ops;
    else if (s == "unit")
      sc = g3cn::GradCheckScope::Unit;
    else if (s == "network")
      sc = g3cn::GradCheckScope::Network;
    else
      throw g3cn::Error(g3cn::ErrorCode::InvalidArgument,
                        "unknown scope '" + s + "' (ops, unit, network)");
    struct FaultReset {
      ~FaultReset() { g3cn::ad::testing::set_tanh_grad_fault(0.0); }
    } reset;
    g3cn::ad::testing::set_tanh_grad_fault(fault);
    const auto r = g3cn::run_grad_check_suite(sc, first_seed, n_seeds);
    *passed = r.passed ? 1 : 0;
    if (report)
      *report = copy_string(g3cn::grad_check_report_text(r));
  });
}

} // extern "C"
