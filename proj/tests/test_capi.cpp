// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "g3cn/data_io.hpp"
#include "g3cn/g3cn.h"
#include "helpers.hpp"

namespace {

std::string take(char *s) {
  std::string out = s ? s : "";
  g3cn_string_free(s);
  return out;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / "g3cn_capi_test") {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string &name) const { return (path / name).string(); }
};

g3cn_config *toy_config(std::vector<const char *> overrides, std::uint64_t seed = 4) {
  g3cn_config *cfg = nullptr;
  const std::string path = testutil::source_path("configs/toy.json");
  REQUIRE(g3cn_config_load(path.c_str(), overrides.data(), overrides.size(), 1, seed, &cfg) ==
          G3CN_OK);
  return cfg;
}

} // namespace

TEST_CASE("C interface: errors are reported through status codes") {
  g3cn_config *cfg = nullptr;
  CHECK(g3cn_config_load(nullptr, nullptr, 0, 0, 0, &cfg) == G3CN_ERR_INVALID_ARGUMENT);
  CHECK(std::strlen(g3cn_last_error()) > 0);
  CHECK(g3cn_config_load("/nonexistent/config.json", nullptr, 0, 0, 0, &cfg) == G3CN_ERR_IO);
  CHECK(cfg == nullptr);
  const char *bad[] = {"train.schedule=fast"};
  const std::string path = testutil::source_path("configs/toy.json");
  CHECK(g3cn_config_load(path.c_str(), bad, 1, 0, 0, &cfg) == G3CN_ERR_CONFIG);
  CHECK(std::string(g3cn_status_name(G3CN_ERR_PARSE)) == "parse_error");

  int passed = 1;
  CHECK(g3cn_grad_check("everything", 1, 1, 0.0, &passed, nullptr) ==
        G3CN_ERR_INVALID_ARGUMENT);

  g3cn_dataset *d = nullptr;
  const std::string garbage = testutil::source_path("configs/toy.json");
  CHECK(g3cn_dataset_parse_ntu(garbage.c_str(), &d) == G3CN_ERR_PARSE);
  CHECK(d == nullptr);
}

TEST_CASE("C interface: skeleton queries") {
  g3cn_skeleton *s = nullptr;
  const std::string path = testutil::source_path("data/skeletons/toy9.json");
  REQUIRE(g3cn_skeleton_load(path.c_str(), &s) == G3CN_OK);
  CHECK(std::string(g3cn_last_error()).empty());
  const std::size_t n = g3cn_skeleton_joint_count(s);
  CHECK(n == 9);
  std::vector<int> d(n * n);
  std::vector<double> phi(n * n);
  CHECK(g3cn_skeleton_distances(s, d.data(), d.size()) == G3CN_OK);
  CHECK(g3cn_skeleton_filter(s, phi.data(), phi.size()) == G3CN_OK);
  for (std::size_t k = 0; k < n * n; ++k)
    CHECK(phi[k] == std::exp(-static_cast<double>(d[k]) * d[k]));
  CHECK(g3cn_skeleton_filter(s, phi.data(), 3) == G3CN_ERR_INVALID_ARGUMENT);
  g3cn_skeleton_free(s);
}

TEST_CASE("C interface: generate, train, save, load, evaluate, export") {
  TempDir tmp;
  g3cn_config *cfg = toy_config({"train.epochs=1", "synth.samples_per_class=3",
                                 "network.blocks=[{\"in\":3,\"out\":4,\"stride\":1,\"branches\":1}]"});
  g3cn_dataset *data = nullptr;
  REQUIRE(g3cn_dataset_generate(cfg, &data) == G3CN_OK);
  CHECK(g3cn_dataset_size(data) == 12);
  REQUIRE(g3cn_dataset_write(data, tmp.file("d.jsonl").c_str()) == G3CN_OK);
  g3cn_dataset *reread = nullptr;
  REQUIRE(g3cn_dataset_read(tmp.file("d.jsonl").c_str(), &reread) == G3CN_OK);
  char *summary = nullptr;
  REQUIRE(g3cn_dataset_summary(reread, &summary) == G3CN_OK);
  CHECK(take(summary).rfind("index,label,frames", 0) == 0);

  g3cn_model *m = nullptr;
  REQUIRE(g3cn_model_create(cfg, &m) == G3CN_OK);
  CHECK(g3cn_model_block_count(m) == 1);
  CHECK(g3cn_model_parameter_count(m) > 0);
  int epochs_seen = 0;
  REQUIRE(g3cn_model_train(
              m, data, tmp.file("metrics.csv").c_str(),
              [](size_t, double, double loss, double, void *user) {
                CHECK(std::isfinite(loss));
                ++*static_cast<int *>(user);
              },
              &epochs_seen) == G3CN_OK);
  CHECK(epochs_seen == 1);
  CHECK(std::filesystem::exists(tmp.file("metrics.csv")));
  REQUIRE(g3cn_model_save(m, tmp.file("m.ckpt").c_str()) == G3CN_OK);

  std::vector<double> a(12 * 4), b(12 * 4);
  size_t written = 0;
  REQUIRE(g3cn_model_logits(m, reread, a.data(), a.size(), &written) == G3CN_OK);
  CHECK(written == 48);
  CHECK(g3cn_model_logits(m, reread, a.data(), 10, &written) == G3CN_ERR_INVALID_ARGUMENT);
  g3cn_model *loaded = nullptr;
  REQUIRE(g3cn_model_load(tmp.file("m.ckpt").c_str(), &loaded) == G3CN_OK);
  REQUIRE(g3cn_model_logits(loaded, reread, b.data(), b.size(), &written) == G3CN_OK);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);

  char *report = nullptr;
  REQUIRE(g3cn_model_evaluate(loaded, reread, &report) == G3CN_OK);
  CHECK(take(report).find("\"confusion\"") != std::string::npos);
  char *desc = nullptr;
  REQUIRE(g3cn_model_describe(loaded, &desc) == G3CN_OK);
  CHECK(!take(desc).empty());

  const std::string prefix = tmp.file("topo");
  REQUIRE(g3cn_model_export_topology(loaded, reread, 2, 0, 1, prefix.c_str()) == G3CN_OK);
  for (const char *suffix : {".csv", ".pgm", "_anchor.csv", "_channels.csv"})
    CHECK(std::filesystem::exists(prefix + suffix));
  CHECK(g3cn_model_export_topology(loaded, reread, 2, 3, 1, prefix.c_str()) ==
        G3CN_ERR_INVALID_BLOCK);
  CHECK(g3cn_model_export_topology(loaded, reread, 99, 0, 1, prefix.c_str()) ==
        G3CN_ERR_INVALID_ARGUMENT);

  g3cn_model_free(loaded);
  g3cn_model_free(m);
  g3cn_dataset_free(reread);
  g3cn_dataset_free(data);
  g3cn_config_free(cfg);
}

TEST_CASE("C interface: gradient check with and without an injected fault") {
  int passed = 0;
  char *report = nullptr;
  REQUIRE(g3cn_grad_check("ops", 1, 1, 0.0, &passed, &report) == G3CN_OK);
  CHECK(passed == 1);
  CHECK(take(report).find("PASSED") != std::string::npos);
  REQUIRE(g3cn_grad_check("ops", 1, 1, 0.01, &passed, &report) == G3CN_OK);
  CHECK(passed == 0);
  CHECK(take(report).find("FAIL") != std::string::npos);
  // The fault is cleared after the call.
  REQUIRE(g3cn_grad_check("ops", 2, 1, 0.0, &passed, nullptr) == G3CN_OK);
  CHECK(passed == 1);
}

TEST_CASE("C interface: identical seeds give identical metrics files") {
  TempDir tmp;
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    g3cn_config *cfg = toy_config({"train.epochs=2", "synth.samples_per_class=2",
                                   "network.blocks=[{\"in\":3,\"out\":4,\"stride\":1,\"branches\":1}]"},
                                  9);
    g3cn_dataset *data = nullptr;
    REQUIRE(g3cn_dataset_generate(cfg, &data) == G3CN_OK);
    g3cn_model *m = nullptr;
    REQUIRE(g3cn_model_create(cfg, &m) == G3CN_OK);
    const std::string path = tmp.file("metrics" + std::to_string(run) + ".csv");
    REQUIRE(g3cn_model_train(m, data, path.c_str(), nullptr, nullptr) == G3CN_OK);
    csv[run] = g3cn::read_file(path);
    g3cn_model_free(m);
    g3cn_dataset_free(data);
    g3cn_config_free(cfg);
  }
  CHECK(csv[0] == csv[1]);
  CHECK(csv[0].rfind("epoch,lr,loss,acc\n", 0) == 0);
}
