// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <cmath>
#include <deque>
#include <numbers>

#include "g3cn/data_io.hpp"
#include "g3cn/error.hpp"
#include "g3cn/random.hpp"

namespace g3cn {

namespace {

using Vec3 = std::array<double, 3>;

constexpr double kBoneLength = 0.25;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Stream tags; each sample draws from its own stream so classes can share
// the base motion of sample k exactly.
constexpr std::uint64_t kPoseTag = 1;
constexpr std::uint64_t kBaseTag = 1'000;
constexpr std::uint64_t kSignalTag = 1'000'000'000;
constexpr std::uint64_t kNoiseTag = 2'000'000'000;

std::vector<Vec3> rest_pose(const SkeletonGraph &g, Rng &rng) {
  const std::size_t n = g.n_joints();
  std::vector<Vec3> pos(n, Vec3{0.0, 0.0, 0.0});
  std::vector<bool> placed(n, false);
  std::deque<std::size_t> queue{0};
  placed[0] = true;
  while (!queue.empty()) {
    const auto v = queue.front();
    queue.pop_front();
    for (auto w : g.neighbors()[v]) {
      if (placed[w])
        continue;
      Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
      const double len =
          std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
      for (std::size_t a = 0; a < 3; ++a)
        pos[w][a] = pos[v][a] + kBoneLength * dir[a] / (len > 0 ? len : 1.0);
      placed[w] = true;
      queue.push_back(w);
    }
  }
  return pos;
}

} // namespace

std::vector<std::vector<std::size_t>> synthetic_limbs(const SkeletonGraph &g) {
  if (!g.limbs().empty())
    return g.limbs();
  std::vector<std::vector<std::size_t>> limbs;
  const auto &nb = g.neighbors();
  for (std::size_t leaf = 1; leaf < g.n_joints(); ++leaf) {
    if (nb[leaf].size() != 1)
      continue;
    std::vector<std::size_t> chain{leaf};
    std::size_t prev = leaf, cur = nb[leaf][0];
    while (cur != 0 && nb[cur].size() == 2) {
      chain.push_back(cur);
      const std::size_t next = nb[cur][0] == prev ? nb[cur][1] : nb[cur][0];
      prev = cur;
      cur = next;
    }
    limbs.emplace_back(chain.rbegin(), chain.rend());
  }
  return limbs;
}

std::vector<SkeletonSequence> generate_synthetic(const SynthConfig &cfg) {
  if (!cfg.skeleton)
    throw Error(ErrorCode::ConfigError, "synthetic config has no skeleton");
  if (cfg.n_classes < 1 || cfg.n_frames < 1)
    throw Error(ErrorCode::ConfigError,
                "synthetic config needs n_classes >= 1 and n_frames >= 1");
  if (!(cfg.noise_std >= 0.0) || !(cfg.ambiguity >= 0.0 && cfg.ambiguity <= 1.0))
    throw Error(ErrorCode::ConfigError,
                "noise_std must be >= 0 and ambiguity in [0, 1]");
  const SkeletonGraph &g = *cfg.skeleton;
  const auto limbs = synthetic_limbs(g);
  if (limbs.empty())
    throw Error(ErrorCode::ConfigError, "skeleton has no limbs to animate");
  const std::size_t N = g.n_joints(), T = cfg.n_frames, L = limbs.size();

  Rng pose_rng(mix_seed(cfg.seed, kPoseTag));
  const std::vector<Vec3> pose = rest_pose(g, pose_rng);

  std::vector<SkeletonSequence> out;
  out.reserve(cfg.n_classes * cfg.samples_per_class);
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    const auto &limb = limbs[c % L];
    const double freq = 2.0 + static_cast<double>(c / L);
    for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
      // Class-independent draws.
      Rng base(mix_seed(cfg.seed, kBaseTag + k));
      const Vec3 offset{0.5 * base.normal(), 0.5 * base.normal(),
                        0.5 * base.normal()};
      const Vec3 drift{0.1 * base.normal(), 0.1 * base.normal(),
                       0.1 * base.normal()};
      const double sway_amp = 0.1 * base.uniform(0.5, 1.5);
      const double sway_phase = base.uniform(0.0, kTwoPi);
      const double shared_amp = cfg.shared_amplitude * base.uniform(0.8, 1.2);
      std::vector<double> shared_phase(L);
      for (auto &p : shared_phase)
        p = base.uniform(0.0, kTwoPi);
      std::vector<Vec3> jitter(N);
      for (auto &j : jitter)
        j = {0.02 * base.normal(), 0.02 * base.normal(), 0.02 * base.normal()};

      Rng signal(mix_seed(cfg.seed, kSignalTag + c * cfg.samples_per_class + k));
      const double amp = cfg.signal_amplitude * (1.0 - cfg.ambiguity) *
                         signal.uniform(0.8, 1.2);
      const double phase = signal.uniform(0.0, kTwoPi);
      Rng noise(mix_seed(cfg.seed, kNoiseTag + c * cfg.samples_per_class + k));

      SkeletonSequence seq;
      seq.n_frames = T;
      seq.n_joints = N;
      seq.frames.assign(T * N * 3, 0.0);
      seq.label = c;
      seq.source = "synthetic";
      seq.subject = std::to_string(k);
      seq.body = "0";
      for (std::size_t t = 0; t < T; ++t) {
        const double s = static_cast<double>(t) / static_cast<double>(T);
        const double sway = sway_amp * std::sin(kTwoPi * s + sway_phase);
        for (std::size_t j = 0; j < N; ++j) {
          double *p = seq.frames.data() + (t * N + j) * 3;
          for (std::size_t a = 0; a < 3; ++a)
            p[a] = pose[j][a] + jitter[j][a] + offset[a] + drift[a] * s;
          p[0] += sway;
        }
        // Shared in-plane limb motion, growing towards the distal end.
        for (std::size_t l = 0; l < L; ++l) {
          const double angle = kTwoPi * s + shared_phase[l];
          for (std::size_t q = 0; q < limbs[l].size(); ++q) {
            const double depth = static_cast<double>(q + 1) /
                                 static_cast<double>(limbs[l].size());
            double *p = seq.frames.data() + (t * N + limbs[l][q]) * 3;
            p[0] += shared_amp * depth * std::cos(angle);
            p[1] += shared_amp * depth * std::sin(angle);
          }
        }
        // Class signal: out-of-plane oscillation of the class limb.
        const double wave = std::sin(kTwoPi * freq * s + phase);
        for (std::size_t q = 0; q < limb.size(); ++q) {
          const double depth =
              static_cast<double>(q + 1) / static_cast<double>(limb.size());
          seq.frames[(t * N + limb[q]) * 3 + 2] += amp * depth * wave;
        }
      }
      if (cfg.noise_std > 0.0)
        for (auto &v : seq.frames)
          v += cfg.noise_std * noise.normal();
      out.push_back(std::move(seq));
    }
  }
  return out;
}

} // namespace g3cn
