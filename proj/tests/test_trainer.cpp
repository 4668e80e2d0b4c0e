// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "g3cn/error.hpp"
#include "g3cn/trainer.hpp"
#include "helpers.hpp"

using namespace g3cn;
using ad::Tensor;
using oracle::to_vec;

namespace {

TrainConfig tiny_config(std::uint64_t seed = 1) {
  TrainConfig tc;
  tc.network.skeleton = testutil::toy9();
  tc.network.n_classes = 4;
  tc.network.input_frames = 8;
  tc.network.blocks = {{3, 6, 1, 1}, {6, 6, 2, 1}};
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.lr = 0.05;
  tc.lr_decay_epochs = {1};
  tc.seed = seed;
  return tc;
}

std::vector<SkeletonSequence> tiny_data(std::size_t per_class = 2, std::uint64_t seed = 1) {
  SynthConfig sc;
  sc.skeleton = testutil::toy9();
  sc.samples_per_class = per_class;
  sc.n_frames = 10;
  sc.seed = seed;
  return generate_synthetic(sc);
}

ErrorCode code_of(const std::function<void()> &f) {
  try {
    f();
  } catch (const Error &e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::InvalidArgument;
}

std::vector<double> parse_csv_matrix(const std::string &csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string line;
  while (std::getline(ss, line)) {
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ','))
      out.push_back(std::stod(cell));
  }
  return out;
}

} // namespace

TEST_CASE("step-decay schedule") {
  TrainConfig tc;
  tc.lr = 0.2;
  tc.lr_decay_epochs = {3, 5};
  tc.lr_decay_factor = 0.5;
  CHECK(learning_rate(tc, 0) == 0.2);
  CHECK(learning_rate(tc, 2) == 0.2);
  CHECK(learning_rate(tc, 3) == 0.1);
  CHECK(learning_rate(tc, 4) == 0.1);
  CHECK(learning_rate(tc, 5) == 0.05);
  CHECK(learning_rate(tc, 100) == 0.05);

  apply_paper_schedule(tc);
  CHECK(tc.epochs == 85);
  CHECK(tc.lr == 0.05);
  CHECK(tc.lr_decay_epochs == std::vector<std::size_t>{45, 65, 75});
  CHECK(learning_rate(tc, 75) == doctest::Approx(0.05e-3).epsilon(1e-12));
}

TEST_CASE("train config validation") {
  TrainConfig tc = tiny_config();
  CHECK_NOTHROW(validate(tc));
  tc.lr = 0.0;
  CHECK_NOTHROW(validate(tc));
  tc.lr = -0.1;
  CHECK(code_of([&] { validate(tc); }) == ErrorCode::ConfigError);
  tc = tiny_config();
  tc.epochs = 0;
  CHECK(code_of([&] { validate(tc); }) == ErrorCode::ConfigError);
  tc = tiny_config();
  tc.lr_decay_factor = 0.0;
  CHECK(code_of([&] { validate(tc); }) == ErrorCode::ConfigError);
  tc.lr_decay_factor = 1.5;
  CHECK(code_of([&] { validate(tc); }) == ErrorCode::ConfigError);
  tc = tiny_config();
  tc.batch_size = 0;
  CHECK(code_of([&] { validate(tc); }) == ErrorCode::ConfigError);
}

TEST_CASE("train config JSON round trip") {
  TrainConfig tc = tiny_config(77);
  tc.nesterov = false;
  tc.weight_decay = 1e-3;
  CHECK(train_config_from_json(train_config_to_json(tc)) == tc);
}

TEST_CASE("dataset preparation checks labels and joints") {
  const TrainConfig tc = tiny_config();
  const PreparedData pd = prepare_dataset(tiny_data(), tc);
  CHECK(pd.size() == 8);
  CHECK(pd.n_frames == 8);
  CHECK(pd.batch({0, 3}).shape() == ad::Shape{2, 8, 9, 3});
  CHECK(pd.sample(1).shape() == ad::Shape{8, 9, 3});
  auto bad = tiny_data();
  bad[0].label = 4;
  CHECK(code_of([&] { prepare_dataset(bad, tc); }) == ErrorCode::InvalidLabel);
  CHECK(code_of([&] { prepare_dataset({}, tc); }) == ErrorCode::InvalidArgument);
  const auto ntu = parse_ntu_file(testutil::source_path(
      "tests/fixtures/S001C001P003R002A013.skeleton"));
  CHECK(code_of([&] { prepare_dataset(ntu, tc); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  TrainConfig tc = tiny_config();
  tc.lr = 0.0;
  Trainer t(tc);
  std::vector<std::vector<double>> before;
  for (const auto &p : t.network().parameters())
    before.push_back(to_vec(p.tensor));
  const EpochMetrics m = t.train_epoch(prepare_dataset(tiny_data(), tc));
  CHECK(m.epoch == 1);
  CHECK(std::isfinite(m.loss));
  const auto after = t.network().parameters();
  for (std::size_t k = 0; k < after.size(); ++k)
    CHECK(to_vec(after[k].tensor) == before[k]);
}

TEST_CASE("training is deterministic and checkpoints reproduce logits bitwise") {
  const TrainConfig tc = tiny_config(5);
  const PreparedData pd = prepare_dataset(tiny_data(), tc);
  Trainer a(tc), b(tc);
  const auto ma = a.fit(pd), mb = b.fit(pd);
  REQUIRE(ma.size() == 2);
  CHECK(ma == mb);
  CHECK(ma[1].lr == doctest::Approx(tc.lr * tc.lr_decay_factor));
  CHECK(a.checkpoint_bytes() == b.checkpoint_bytes());

  const Trainer r = Trainer::from_checkpoint_bytes(a.checkpoint_bytes());
  CHECK(r.epochs_done() == 2);
  CHECK(r.config() == a.config());
  Trainer rc = r;
  CHECK(to_vec(rc.logits(pd)) == to_vec(a.logits(pd)));
  CHECK(rc.checkpoint_bytes() == a.checkpoint_bytes());

  // Resuming from a mid-run checkpoint continues the same trajectory,
  // including the momentum buffers.
  TrainConfig longer = tc;
  longer.epochs = 3;
  Trainer full(longer);
  const auto m_full = full.fit(pd);
  Trainer part(longer);
  part.train_epoch(pd);
  part.train_epoch(pd);
  Trainer resumed = Trainer::from_checkpoint_bytes(part.checkpoint_bytes());
  const auto m_rest = resumed.fit(pd);
  REQUIRE(m_rest.size() == 1);
  CHECK(m_rest[0] == m_full[2]);
  CHECK(resumed.checkpoint_bytes() == full.checkpoint_bytes());
}

TEST_CASE("checkpoint files round trip through disk") {
  const auto dir = std::filesystem::temp_directory_path() / "g3cn_trainer_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();
  const TrainConfig tc = tiny_config(8);
  const PreparedData pd = prepare_dataset(tiny_data(), tc);
  Trainer t(tc);
  t.train_epoch(pd);
  t.save(path);
  Trainer back = Trainer::load(path);
  CHECK(to_vec(back.logits(pd)) == to_vec(t.logits(pd)));
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupted checkpoints are rejected with structured errors") {
  Trainer t(tiny_config());
  const std::string bytes = t.checkpoint_bytes();
  CHECK(code_of([&] { Trainer::from_checkpoint_bytes(bytes.substr(0, bytes.size() - 3)); }) ==
        ErrorCode::TruncatedFile);
  CHECK(code_of([&] { Trainer::from_checkpoint_bytes(bytes.substr(0, 5)); }) ==
        ErrorCode::TruncatedFile);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { Trainer::from_checkpoint_bytes(bad_magic); }) == ErrorCode::ParseError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK(code_of([&] { Trainer::from_checkpoint_bytes(bad_version); }) ==
        ErrorCode::VersionMismatch);
  CHECK(code_of([&] { Trainer::from_checkpoint_bytes(bytes + "x"); }) == ErrorCode::ParseError);
  // Fuzzed bytes never crash.
  Rng rng(99);
  for (int it = 0; it < 300; ++it) {
    std::string s = bytes;
    for (int e = 0; e < 4; ++e)
      s[rng.below(s.size())] = static_cast<char>(rng.below(256));
    try {
      Trainer::from_checkpoint_bytes(s);
    } catch (const Error &) {
    }
  }
}

TEST_CASE("divergence is reported") {
  TrainConfig tc = tiny_config();
  tc.lr = 1e200;
  Trainer t(tc);
  CHECK(code_of([&] { t.fit(prepare_dataset(tiny_data(), tc)); }) == ErrorCode::DivergedLoss);
}

TEST_CASE("evaluation summaries") {
  SUBCASE("all correct") {
    const auto r = summarize_predictions({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
    CHECK(r.accuracy == 1.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(r.confusion[i][j] == (i == j ? 1.0 : 0.0));
  }
  SUBCASE("constant prediction on a balanced set is chance") {
    std::vector<std::size_t> labels, pred;
    for (std::size_t k = 0; k < 20; ++k) {
      labels.push_back(k % 4);
      pred.push_back(2);
    }
    const auto r = summarize_predictions(labels, pred, 4);
    CHECK(r.accuracy == 0.25);
    CHECK(r.per_class_accuracy == std::vector<double>{0, 0, 1, 0});
  }
  SUBCASE("confusion rows are misclassification ratios") {
    const auto r = summarize_predictions({0, 0, 0, 0, 1}, {0, 1, 1, 2, 1}, 3);
    CHECK(r.confusion[0] == std::vector<double>{0.25, 0.5, 0.25});
    double s = 0.0;
    for (double v : r.confusion[1])
      s += v;
    CHECK(s == 1.0);
    CHECK(r.class_counts == std::vector<std::size_t>{4, 1, 0});
    CHECK(r.confusion[2] == std::vector<double>{0, 0, 0});
    CHECK(eval_report_json(r).find("\"accuracy\"") != std::string::npos);
    CHECK(confusion_csv(r).find("0.25") != std::string::npos);
  }
  CHECK(argmax_rows(Tensor::from({2, 3}, {1, 3, 3, 0, -1, -2})) ==
        std::vector<std::size_t>{1, 0});
}

TEST_CASE("metrics CSV rows are exact") {
  CHECK(metrics_csv_header() == "epoch,lr,loss,acc\n");
  const std::string row = metrics_csv_row({3, 0.1, 1.0 / 3.0, 0.5});
  CHECK(row == "3,0.10000000000000001,0.33333333333333331,0.5\n");
}

TEST_CASE("topology export matches the recomputed average") {
  Trainer t(tiny_config());
  const PreparedData pd = prepare_dataset(tiny_data(), tiny_config());
  const Tensor sample = pd.sample(0);
  const TopologyExport ex = export_topology(t.network(), sample, 1, 2);
  const AveragedTopology avg = averaged_topology(t.network(), sample, 1);
  CHECK(oracle::max_abs_diff(parse_csv_matrix(ex.matrix_csv), avg.mean.values) < 1e-12);
  const std::string header = "P5\n9 9\n255\n";
  CHECK(ex.pgm.substr(0, header.size()) == header);
  CHECK(ex.pgm.size() == header.size() + 81);
  CHECK(ex.anchor_csv.rfind("joint,value\n", 0) == 0);
  CHECK(export_topology(t.network(), sample, 1, 2).matrix_csv == ex.matrix_csv);
  CHECK(code_of([&] { export_topology(t.network(), sample, 5, 0); }) ==
        ErrorCode::InvalidBlock);
  CHECK(code_of([&] { export_topology(t.network(), sample, 0, 9); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("PGM pixels scale absolute values to 255") {
  const FilterMatrix m{2, {0.5, -1.0, 0.25, 0.0}};
  const std::string pgm = matrix_to_pgm(m);
  const std::string px = pgm.substr(pgm.size() - 4);
  CHECK(static_cast<unsigned char>(px[0]) == 128);
  CHECK(static_cast<unsigned char>(px[1]) == 255);
  CHECK(static_cast<unsigned char>(px[2]) == 64);
  CHECK(static_cast<unsigned char>(px[3]) == 0);
}

TEST_CASE("config overrides and application config") {
  const std::string base = R"({"train": {"lr": 0.1}, "name": "x"})";
  const std::string out = apply_overrides(base, {"train.lr=0.3", "train.decay=[1,2]",
                                                 "a.b.c=hello", "name=\"y\""});
  CHECK(out.find("\"lr\":0.3") != std::string::npos);
  CHECK(out.find("\"decay\":[1,2]") != std::string::npos);
  CHECK(out.find("\"c\":\"hello\"") != std::string::npos);
  CHECK(code_of([&] { apply_overrides(base, {"novalue"}); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { apply_overrides(base, {"name.x=1"}); }) == ErrorCode::ConfigError);

  const AppConfig toy = load_app_config(testutil::source_path("configs/toy.json"),
                                        {"train.seed=12", "train.epochs=7"});
  CHECK(toy.skeleton->n_joints() == 9);
  CHECK(toy.train.seed == 12);
  CHECK(toy.train.epochs == 7);
  CHECK(toy.train.network.blocks.size() == 2);
  CHECK(toy.synth.ambiguity == 0.3);
  const AppConfig again = app_config_from_json(app_config_to_json(toy), "");
  CHECK(again.train == toy.train);

  const AppConfig ntu = load_app_config(testutil::source_path("configs/ntu25.json"), {});
  CHECK(ntu.train.epochs == 85);
  CHECK(ntu.train.network.blocks.size() == 10);
  CHECK(code_of([&] {
          load_app_config(testutil::source_path("configs/toy.json"),
                          {"train.schedule=fast"});
        }) == ErrorCode::ConfigError);
}

TEST_CASE("unit-scope gradient suite passes for one seed") {
  const auto r = run_grad_check_suite(GradCheckScope::Unit, 3, 1);
  CHECK(r.passed);
  CHECK(grad_check_report_text(r).find("FAIL") == std::string::npos);
}
