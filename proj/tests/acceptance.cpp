// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails. The ablation table is written to
// ablation_table.csv in the working directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "g3cn/data_io.hpp"
#include "g3cn/error.hpp"
#include "g3cn/gated_graph_conv.hpp"
#include "g3cn/gaussian_topology.hpp"
#include "g3cn/network.hpp"
#include "g3cn/trainer.hpp"
#include "helpers.hpp"

using namespace g3cn;
using ad::Tensor;
using oracle::max_abs_diff;
using oracle::to_vec;
using testutil::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string &what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t cases = 0;
  for (auto scope : {GradCheckScope::Ops, GradCheckScope::Unit, GradCheckScope::Network}) {
    const auto r = run_grad_check_suite(scope, 1, 10);
    cases += r.cases.size();
    worst = std::max(worst, r.max_rel_err);
    for (const auto &c : r.cases)
      o.require(c.report.passed, c.name + " seed " + std::to_string(c.seed) + " failed");
  }
  const double secs = seconds_since(t0);
  o.require(secs < 60.0, "suite took " + fmt("%.1f", secs) + " s");

  // The checker must notice a wrong backward rule.
  ad::testing::set_tanh_grad_fault(0.01);
  const bool caught = !run_grad_check_suite(GradCheckScope::Ops, 1, 1).passed;
  ad::testing::set_tanh_grad_fault(0.0);
  o.require(caught, "injected tanh gradient fault went unnoticed");

  o.detail = std::to_string(cases) + " cases over 10 seeds, max rel err " + fmt("%.2e", worst) +
             ", " + fmt("%.1f", secs) + " s" + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------------------

Outcome oracle_equivalence() {
  Outcome o;
  Rng rng(2024);
  double worst_coe = 0.0, worst_contract = 0.0, worst_gated = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t N = 2 + rng.below(9), Cr = 1 + rng.below(6);
    const SkeletonGraph g = testutil::random_tree(N, rng);
    const Tensor phi = filter_tensor(gaussian_filter(shortest_path_distances(g)));
    const Tensor a_aux = random_tensor({Cr, N, N}, rng);
    const auto coe = correction_coefficients({a_aux, TopologyKind::Auxiliary}, phi);
    worst_coe = std::max(worst_coe, max_abs_diff(to_vec(coe.a),
                                                 oracle::coefficients(to_vec(a_aux),
                                                                      to_vec(phi), Cr, N)));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t N = 2 + rng.below(9), T = 1 + rng.below(5), C = 1 + rng.below(6);
    const Tensor a = random_tensor({C, N, N}, rng);
    const Tensor x = random_tensor({T, N, C}, rng);
    worst_contract =
        std::max(worst_contract, max_abs_diff(to_vec(ad::graph_contract(a, x)),
                                              oracle::contract(to_vec(a), to_vec(x), T, N, C)));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t N = 2 + rng.below(9), T = 1 + rng.below(4), C = 1 + rng.below(5);
    const std::size_t Cp = trial % 3 == 0 ? C : 1 + rng.below(5);
    const bool sig = trial % 2 == 0;
    const Tensor x = random_tensor({T, N, C}, rng);
    const Tensor a_g = random_tensor({Cp, N, N}, rng);
    const GatedParams p = testutil::random_gated_params(C, Cp, N, rng);
    const Tensor y = gated_forward(x, {a_g, TopologyKind::Gaussian}, p,
                                   sig ? GateActivation::Sigmoid : GateActivation::Tanh);
    worst_gated = std::max(
        worst_gated, max_abs_diff(to_vec(y), oracle::gated(to_vec(x), to_vec(a_g),
                                                           testutil::to_oracle(p), T, N, C,
                                                           Cp, sig)));
  }
  o.require(worst_coe <= 1e-12, "coefficients off by " + fmt("%.2e", worst_coe));
  o.require(worst_contract <= 1e-12, "contraction off by " + fmt("%.2e", worst_contract));
  o.require(worst_gated <= 1e-12, "gated unit off by " + fmt("%.2e", worst_gated));
  o.detail = "100 instances each, max diffs " + fmt("%.1e", worst_coe) + " / " +
             fmt("%.1e", worst_contract) + " / " + fmt("%.1e", worst_gated) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------------------

Outcome algebraic_identities() {
  Outcome o;
  Rng rng(3);

  std::vector<SkeletonGraph> graphs;
  for (const char *name : {"ntu25", "ucla20", "toy9"})
    graphs.push_back(load_skeleton(testutil::source_path(std::string("data/skeletons/") +
                                                         name + ".json")));
  for (int k = 0; k < 20; ++k)
    graphs.push_back(testutil::random_tree(2 + rng.below(11), rng));
  bool phi_ok = true;
  for (const auto &g : graphs) {
    const FilterMatrix phi = gaussian_filter(shortest_path_distances(g));
    for (std::size_t i = 0; i < g.n_joints(); ++i) {
      phi_ok = phi_ok && phi(i, i) == 1.0;
      for (std::size_t j = 0; j < g.n_joints(); ++j)
        phi_ok = phi_ok && phi(i, j) == phi(j, i);
    }
  }
  o.require(phi_ok, "filter diagonal or symmetry broken");

  bool norm_ok = true, ones_ok = true, gate_ok = true, mask_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t N = 2 + rng.below(9), T = 1 + rng.below(4), C = 1 + rng.below(6);
    const std::size_t Cr = 1 + rng.below(4), Cp = 1 + rng.below(6);
    const SkeletonGraph g = testutil::random_tree(N, rng);
    const Tensor phi = filter_tensor(gaussian_filter(shortest_path_distances(g)));
    const Tensor x = random_tensor({T, N, C}, rng);
    const auto params = testutil::random_topology_params(C, Cr, Cp, false, rng);

    const auto n1 = normalize_coefficients(correction_coefficients(
        pairwise_correlation(x, params.auxiliary, TopologyKind::Auxiliary), phi));
    const auto v = to_vec(n1.a);
    for (std::size_t r = 0; r < v.size() / N; ++r) {
      double m = 0.0;
      for (std::size_t j = 0; j < N; ++j)
        m = std::max(m, std::abs(v[r * N + j]));
      norm_ok = norm_ok && (m == 1.0 || m == 0.0);
    }
    norm_ok = norm_ok && to_vec(normalize_coefficients(n1).a) == v;

    const auto prelim = pairwise_correlation(x, params.main);
    const TopologyGraph ones{Tensor::full(prelim.a.shape(), 1.0),
                             TopologyKind::NormalizedCoefficient};
    ones_ok = ones_ok && to_vec(refine_topology(prelim, ones, params.refine).a) ==
                             to_vec(ad::channel_mix(prelim.a, params.refine.w_expand));

    const Tensor a_g = random_tensor({C, N, N}, rng);
    GateOverrides pin;
    pin.update = 1.0;
    const GatedParams gp = testutil::random_gated_params(C, C, N, rng);
    const auto st = gated_forward_states(x, {a_g, TopologyKind::Gaussian}, gp,
                                         GateActivation::Sigmoid, pin);
    gate_ok = gate_ok && to_vec(st.h_final) == to_vec(x);

    const auto masked = to_vec(mask_self_loops({a_g, TopologyKind::Gaussian}).a);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < N; ++i)
        mask_ok = mask_ok && masked[(c * N + i) * N + i] == 0.0;
  }
  o.require(norm_ok, "row normalization not unit or not idempotent");
  o.require(ones_ok, "unit coefficients do not reduce to the channel mix");
  o.require(gate_ok, "update gate at one changed the state");
  o.require(mask_ok, "masked diagonal not zero");
  o.detail = std::to_string(graphs.size()) + " skeletons, 50 random units" +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------------------

Outcome permutation_equivariance() {
  Outcome o;
  Rng rng(4);
  const auto g = testutil::toy9();
  const std::size_t N = g->n_joints();
  double worst_unit = 0.0, worst_logits = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    // Joint i of the original becomes joint perm[i]; position k of a
    // relabeled tensor holds original joint inv[k].
    std::vector<std::size_t> inv(N);
    for (std::size_t i = 0; i < N; ++i)
      inv[perm[i]] = i;
    auto gp = std::make_shared<const SkeletonGraph>(g->permuted(perm));

    NetworkConfig cfg;
    cfg.skeleton = g;
    cfg.n_classes = 4;
    cfg.input_frames = 8;
    cfg.blocks = {{3, 8, 1, 2}, {8, 8, 2, 2}};
    NetworkConfig cfgp = cfg;
    cfgp.skeleton = gp;
    Network net(cfg, 50 + trial), netp(cfgp, 50 + trial);

    // One spatial unit with the relabeling applied to its input, filter and
    // static adjacency.
    const Tensor xu = random_tensor({2, 6, N, 8}, rng);
    const SpatialUnitParams &unit = net.blocks()[1].units[0];
    SpatialUnitParams unit_p = unit;
    unit_p.gated.a_static =
        testutil::permute_axis(testutil::permute_axis(unit.gated.a_static, 0, inv), 1, inv);
    const Tensor phi_p =
        testutil::permute_axis(testutil::permute_axis(net.phi(), 0, inv), 1, inv);
    {
      ad::NoGradGuard guard;
      const Tensor y = spatial_unit_forward(xu, net.phi(), unit, net.modes());
      const Tensor yp =
          spatial_unit_forward(testutil::permute_axis(xu, -2, inv), phi_p, unit_p, net.modes());
      worst_unit = std::max(
          worst_unit, max_abs_diff(to_vec(yp), to_vec(testutil::permute_axis(y, -2, inv))));
    }

    const Tensor x = random_tensor({3, 8, N, 3}, rng);
    const Tensor xp = testutil::permute_axis(x, -2, inv);
    for (bool training : {true, false})
      worst_logits = std::max(worst_logits, max_abs_diff(to_vec(net.forward(x, training)),
                                                         to_vec(netp.forward(xp, training))));
  }
  o.require(worst_unit <= 1e-9, "unit output off by " + fmt("%.2e", worst_unit));
  o.require(worst_logits <= 1e-9, "logits off by " + fmt("%.2e", worst_logits));
  o.detail = "5 relabelings, unit diff " + fmt("%.1e", worst_unit) + ", logit diff " +
             fmt("%.1e", worst_logits) + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------------------

struct OverfitRun {
  std::vector<EpochMetrics> log;
  std::size_t reached_at = 0; ///< 1-based epoch, 0 when never reached
  double seconds = 0.0;
};

OverfitRun overfit_once() {
  const AppConfig app = load_app_config(testutil::source_path("configs/toy.json"),
                                        {"train.epochs=200", "train.lr_decay_epochs=[120,160]",
                                         "train.seed=11", "synth.seed=7"});
  const PreparedData data = prepare_dataset(generate_synthetic(app.synth), app.train);
  OverfitRun run;
  const auto t0 = Clock::now();
  Trainer trainer(app.train);
  while (trainer.epochs_done() < app.train.epochs) {
    run.log.push_back(trainer.train_epoch(data));
    if (run.log.back().acc >= 0.95) {
      run.reached_at = run.log.back().epoch;
      break;
    }
  }
  run.seconds = seconds_since(t0);
  return run;
}

Outcome overfit() {
  Outcome o;
  const OverfitRun a = overfit_once();
  const OverfitRun b = overfit_once();
  o.require(a.reached_at != 0, "95% train accuracy not reached in 200 epochs");
  o.require(a.seconds < 300.0, "run took " + fmt("%.1f", a.seconds) + " s");
  o.require(a.log == b.log, "repeated run produced a different log");
  const double final_acc = a.log.empty() ? 0.0 : a.log.back().acc;
  o.detail = "train acc " + fmt("%.3f", final_acc) + " at epoch " +
             std::to_string(a.reached_at) + " in " + fmt("%.1f", a.seconds) +
             " s, repeat identical: " + (a.log == b.log ? "yes" : "no") +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------------------

struct Arm {
  const char *name;
  TopologyMode topology;
  AggregationMode aggregation;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome ablation() {
  Outcome o;
  const auto g = testutil::toy9();
  const Arm arms[4] = {{"baseline", TopologyMode::Baseline, AggregationMode::Plain},
                       {"gaussian_topology", TopologyMode::Gaussian, AggregationMode::Plain},
                       {"gated_aggregation", TopologyMode::Baseline, AggregationMode::Gated},
                       {"full", TopologyMode::Gaussian, AggregationMode::Gated}};
  constexpr int kSeeds = 5;
  std::vector<double> acc[4];
  std::size_t params[4] = {};
  for (int s = 0; s < kSeeds; ++s) {
    SynthConfig sc;
    sc.skeleton = g;
    sc.n_frames = 16;
    sc.ambiguity = 0.7;
    sc.samples_per_class = 80;
    sc.seed = 100 + s;
    std::vector<SkeletonSequence> train, test;
    for (auto &seq : generate_synthetic(sc))
      (std::stoul(seq.subject) < 50 ? train : test).push_back(std::move(seq));
    for (int a = 0; a < 4; ++a) {
      TrainConfig tc;
      tc.network.skeleton = g;
      tc.network.n_classes = 4;
      tc.network.input_frames = 16;
      tc.network.blocks = {{3, 16, 1, 1}, {16, 16, 1, 1}};
      tc.network.topology_mode = arms[a].topology;
      tc.network.aggregation_mode = arms[a].aggregation;
      tc.lr = 0.05;
      tc.epochs = 25;
      tc.lr_decay_epochs = {15, 20};
      tc.batch_size = 16;
      tc.seed = static_cast<std::uint64_t>(s);
      const PreparedData tr = prepare_dataset(train, tc), te = prepare_dataset(test, tc);
      Trainer trainer(tc);
      trainer.fit(tr);
      acc[a].push_back(trainer.evaluate(te).accuracy);
      params[a] = trainer.network().parameter_count();
    }
  }

  double med[4];
  std::ostringstream csv;
  csv << "arm,gaussian_topology,gated_aggregation,parameters,median_test_acc";
  for (int s = 0; s < kSeeds; ++s)
    csv << ",seed" << s << "_acc";
  csv << '\n';
  for (int a = 0; a < 4; ++a) {
    med[a] = median(acc[a]);
    csv << arms[a].name << ',' << (arms[a].topology == TopologyMode::Gaussian ? "yes" : "no")
        << ',' << (arms[a].aggregation == AggregationMode::Gated ? "yes" : "no") << ','
        << params[a] << ',' << fmt("%.4f", med[a]);
    for (double v : acc[a])
      csv << ',' << fmt("%.4f", v);
    csv << '\n';
  }
  write_file_atomic("ablation_table.csv", csv.str());

  o.require(med[3] >= med[1] && med[3] >= med[2], "full arm below a single-mechanism arm");
  o.require(med[1] >= med[0] && med[2] >= med[0], "a single-mechanism arm below baseline");
  o.require(med[3] - med[0] >= 0.02, "full arm less than 2 points above baseline");
  o.require(params[0] < params[1] && params[0] < params[2] && params[1] < params[3] &&
                params[2] < params[3],
            "parameter counts do not increase with each mechanism");
  o.detail = "median test acc baseline " + fmt("%.3f", med[0]) + ", gaussian " +
             fmt("%.3f", med[1]) + ", gated " + fmt("%.3f", med[2]) + ", full " +
             fmt("%.3f", med[3]) + "; params " + std::to_string(params[0]) + "/" +
             std::to_string(params[1]) + "/" + std::to_string(params[2]) + "/" +
             std::to_string(params[3]) + "; ablation_table.csv" +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------------------

Outcome parser() {
  Outcome o;
  const std::string path = testutil::source_path("tests/fixtures/S001C001P003R002A013.skeleton");
  const std::string text = read_file(path);
  const auto seqs = parse_ntu_skeleton(text);
  bool exact = seqs.size() == 1 && seqs[0].n_frames == 2 && seqs[0].n_joints == 25;
  if (exact) {
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t j = 0; j < 25; ++j) {
        const double jd = static_cast<double>(j), td = static_cast<double>(t);
        exact = exact && seqs[0].coord(t, j, 0) == 0.125 * jd - 1.5 + 0.5 * td &&
                seqs[0].coord(t, j, 1) == -0.25 * jd + 2.0 - 0.0625 * td &&
                seqs[0].coord(t, j, 2) == 3.0 + 0.03125 * jd + td;
      }
  }
  o.require(exact, "fixture coordinates differ from the authored values");
  o.require(dataset_from_jsonl(dataset_to_jsonl(seqs)) == seqs, "JSONL round trip changed data");

  Rng rng(0x5EED);
  std::size_t parsed = 0, rejected = 0, crashed = 0;
  for (int it = 0; it < 10000; ++it) {
    std::string s = text;
    const int edits = 1 + static_cast<int>(rng.below(8));
    for (int e = 0; e < edits; ++e) {
      const std::size_t pos = rng.below(s.size() + 1);
      switch (rng.below(5)) {
      case 0: if (pos < s.size()) s[pos] = static_cast<char>(rng.below(256)); break;
      case 1: s.insert(pos, 1, static_cast<char>(rng.below(256))); break;
      case 2: if (pos < s.size()) s.erase(pos, 1 + rng.below(16)); break;
      case 3: if (pos < s.size()) s[pos] = "0123456789-. \n"[rng.below(14)]; break;
      default: s = s.substr(0, pos); break;
      }
    }
    try {
      parse_ntu_skeleton(s);
      ++parsed;
    } catch (const Error &) {
      ++rejected;
    } catch (...) {
      ++crashed;
    }
  }
  o.require(crashed == 0, std::to_string(crashed) + " inputs raised unstructured exceptions");
  o.detail = "fixture exact, 10000 fuzz inputs: " + std::to_string(parsed) + " parsed, " +
             std::to_string(rejected) + " rejected, " + std::to_string(crashed) + " crashed" +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------------------

Outcome persistence() {
  Outcome o;
  const auto dir = std::filesystem::temp_directory_path() / "g3cn_acceptance";
  std::filesystem::create_directories(dir);
  const AppConfig app = load_app_config(
      testutil::source_path("configs/toy.json"),
      {"train.epochs=3", "synth.samples_per_class=12", "train.seed=21", "synth.seed=22"});
  const auto raw = generate_synthetic(app.synth);
  const PreparedData data = prepare_dataset(raw, app.train);

  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    Trainer trainer(app.train);
    std::string text = metrics_csv_header();
    trainer.fit(data, [&](const EpochMetrics &m) { text += metrics_csv_row(m); });
    csv[run] = text;
    if (run == 0) {
      const std::string ckpt = (dir / "model.ckpt").string();
      trainer.save(ckpt);
      Trainer loaded = Trainer::load(ckpt);
      const Tensor before = trainer.logits(data), after = loaded.logits(data);
      o.require(before.shape() == after.shape() &&
                    std::memcmp(before.data().data(), after.data().data(),
                                before.numel() * sizeof(double)) == 0,
                "reloaded logits differ");
      o.require(loaded.checkpoint_bytes() == trainer.checkpoint_bytes(),
                "checkpoint bytes differ after reload");
    }
  }
  o.require(csv[0] == csv[1], "metrics CSV differs between identical runs");
  std::filesystem::remove_all(dir);
  o.detail = "logits bitwise after reload, metrics CSV of " +
             std::to_string(std::count(csv[0].begin(), csv[0].end(), '\n')) +
             " lines identical across runs" + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

} // namespace

int main() {
  struct Criterion {
    const char *title;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"gradient suite", gradient_suite},
      {"oracle equivalence", oracle_equivalence},
      {"algebraic identities", algebraic_identities},
      {"permutation equivariance", permutation_equivariance},
      {"overfit", overfit},
      {"directional ablation", ablation},
      {"parser", parser},
      {"determinism and persistence", persistence},
  };
  int failures = 0, index = 0;
  for (const auto &c : criteria) {
    ++index;
    Outcome out;
    const auto t0 = Clock::now();
    try {
      out = c.run();
    } catch (const std::exception &e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    failures += !out.pass;
    std::printf("criterion %d %s: %s (%s) [%.1f s]\n", index, c.title,
                out.pass ? "PASS" : "FAIL", out.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", index - failures, index);
  return failures == 0 ? 0 : 1;
}
