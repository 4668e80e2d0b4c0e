// SPDX-License-Identifier: Apache-2.0
/**
 * @file   data_io.hpp
 * @brief  Skeleton sequences: NTU text ingestion, synthetic ambiguous-action
 *         generation, preprocessing and the line-delimited JSON dataset.
 *
 * NTU `.skeleton` grammar (whitespace separated, one record per line):
 *
 *   <frame count>
 *   repeat frame count:
 *     <body count>
 *     repeat body count:
 *       <body id> <9 tracking fields>
 *       <joint count>
 *       repeat joint count:
 *         x y z depthX depthY colorX colorY qw qx qy qz trackingState
 */
#ifndef G3CN_DATA_IO_HPP
#define G3CN_DATA_IO_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "g3cn/skeleton_graph.hpp"

namespace g3cn {

struct SkeletonSequence {
  std::size_t n_frames = 0;
  std::size_t n_joints = 0;
  std::vector<double> frames; ///< [T, N, 3] row-major, meters
  std::size_t label = 0;
  std::string source;
  std::string subject;
  std::string body;

  double coord(std::size_t t, std::size_t j, std::size_t axis) const {
    return frames[(t * n_joints + j) * 3 + axis];
  }
  bool operator==(const SkeletonSequence &) const = default;
};

/// One sequence per tracked body. Bodies seen in fewer than half of the
/// frames are dropped. Throws ParseError (with line) or TruncatedFile.
std::vector<SkeletonSequence> parse_ntu_skeleton(std::string_view text,
                                                 const std::string &source = "");

/// Reads a file and fills label/subject from an NTU-style name such as
/// S001C001P003R002A013.skeleton (label = action - 1, subject = "P003").
std::vector<SkeletonSequence> parse_ntu_file(const std::string &path);

struct SynthConfig {
  std::size_t n_classes = 4;
  std::size_t samples_per_class = 50;
  std::size_t n_frames = 16;
  std::shared_ptr<const SkeletonGraph> skeleton;
  double noise_std = 0.05;
  double ambiguity = 0.0;
  std::uint64_t seed = 0;
  /// Amplitude of the class-specific limb oscillation before scaling.
  double signal_amplitude = 1.0;
  /// Amplitude of the class-independent limb motion shared by every class.
  double shared_amplitude = 0.3;
};

/// Joint groups used as limbs: the skeleton's own, or one chain per leaf
/// (from the leaf inwards up to the nearest branching joint).
std::vector<std::vector<std::size_t>> synthetic_limbs(const SkeletonGraph &g);

/// Class c oscillates limb (c mod L) along z with amplitude scaled by
/// (1 - ambiguity) on top of a base motion shared by all classes. Sample k
/// of every class uses the same base-motion stream. Deterministic in seed.
std::vector<SkeletonSequence> generate_synthetic(const SynthConfig &cfg);

/// Subtracts the center joint's first-frame position and linearly resamples
/// to target_frames (endpoints aligned). Throws EmptySequence.
SkeletonSequence preprocess(const SkeletonSequence &seq,
                            std::size_t target_frames,
                            std::size_t center_joint);

inline constexpr int kDatasetFormatVersion = 1;

std::string dataset_to_jsonl(const std::vector<SkeletonSequence> &data);
/// Throws ParseError or VersionMismatch.
std::vector<SkeletonSequence> dataset_from_jsonl(std::string_view text);

/// Written via a temporary file and rename.
void write_dataset(const std::string &path,
                   const std::vector<SkeletonSequence> &data);
std::vector<SkeletonSequence> read_dataset(const std::string &path);

/// Writes `content` to `path` through `path + ".tmp"` and a rename.
void write_file_atomic(const std::string &path, std::string_view content);
std::string read_file(const std::string &path);

} // namespace g3cn

#endif // G3CN_DATA_IO_HPP
