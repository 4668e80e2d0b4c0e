// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "g3cn/data_io.hpp"
#include "g3cn/error.hpp"
#include "json.hpp"

namespace g3cn {

using nlohmann::json;

SkeletonSequence preprocess(const SkeletonSequence &seq,
                            std::size_t target_frames,
                            std::size_t center_joint) {
  if (seq.n_frames == 0 || seq.n_joints == 0 || seq.frames.empty())
    throw Error(ErrorCode::EmptySequence, "sequence has no frames");
  if (center_joint >= seq.n_joints)
    throw Error(ErrorCode::InvalidArgument,
                "center joint " + std::to_string(center_joint) +
                    " out of range");
  if (target_frames == 0)
    throw Error(ErrorCode::InvalidArgument, "target frame count must be > 0");

  const std::size_t T = seq.n_frames, N = seq.n_joints;
  const double origin[3] = {seq.coord(0, center_joint, 0),
                            seq.coord(0, center_joint, 1),
                            seq.coord(0, center_joint, 2)};
  SkeletonSequence out = seq;
  out.n_frames = target_frames;
  out.frames.assign(target_frames * N * 3, 0.0);
  for (std::size_t i = 0; i < target_frames; ++i) {
    const double pos =
        target_frames == 1
            ? 0.0
            : static_cast<double>(i * (T - 1)) /
                  static_cast<double>(target_frames - 1);
    const std::size_t t0 = std::min(static_cast<std::size_t>(pos), T - 1);
    const std::size_t t1 = std::min(t0 + 1, T - 1);
    const double w = pos - static_cast<double>(t0);
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t a = 0; a < 3; ++a) {
        const double v = w == 0.0 ? seq.coord(t0, j, a)
                                   : (1.0 - w) * seq.coord(t0, j, a) +
                                         w * seq.coord(t1, j, a);
        out.frames[(i * N + j) * 3 + a] = v - origin[a];
      }
  }
  for (double v : out.frames)
    if (!std::isfinite(v))
      throw Error(ErrorCode::InvalidArgument,
                  "non-finite coordinate after preprocessing");
  return out;
}

std::string dataset_to_jsonl(const std::vector<SkeletonSequence> &data) {
  std::string out;
  for (const auto &s : data) {
    if (s.frames.size() != s.n_frames * s.n_joints * 3)
      throw Error(ErrorCode::ShapeMismatch, "sequence frames do not match T*N*3");
    for (double v : s.frames)
      if (!std::isfinite(v))
        throw Error(ErrorCode::InvalidArgument,
                    "cannot serialize non-finite coordinate");
    json j;
    j["format_version"] = kDatasetFormatVersion;
    j["label"] = s.label;
    j["source"] = s.source;
    j["subject"] = s.subject;
    j["body"] = s.body;
    j["n_frames"] = s.n_frames;
    j["n_joints"] = s.n_joints;
    j["frames"] = s.frames;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<SkeletonSequence> dataset_from_jsonl(std::string_view text) {
  std::vector<SkeletonSequence> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos)
      continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception &) {
      throw ParseError(line_no, "a JSON object");
    }
    if (!j.is_object() || !j.contains("format_version") ||
        !j["format_version"].is_number_integer())
      throw ParseError(line_no, "an object with an integer format_version");
    const int version = j["format_version"].get<int>();
    if (version != kDatasetFormatVersion)
      throw Error(ErrorCode::VersionMismatch,
                  "line " + std::to_string(line_no) + ": format_version " +
                      std::to_string(version) + ", supported " +
                      std::to_string(kDatasetFormatVersion));
    try {
      SkeletonSequence s;
      s.label = j.at("label").get<std::size_t>();
      s.source = j.value("source", "");
      s.subject = j.value("subject", "");
      s.body = j.value("body", "");
      s.n_frames = j.at("n_frames").get<std::size_t>();
      s.n_joints = j.at("n_joints").get<std::size_t>();
      s.frames = j.at("frames").get<std::vector<double>>();
      if (s.frames.size() != s.n_frames * s.n_joints * 3)
        throw ParseError(line_no, "frames of length n_frames * n_joints * 3");
      out.push_back(std::move(s));
    } catch (const json::exception &) {
      throw ParseError(line_no, "label, n_frames, n_joints and frames fields");
    }
  }
  return out;
}

void write_file_atomic(const std::string &path, std::string_view content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error(ErrorCode::IoError, "cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out)
      throw Error(ErrorCode::IoError, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw Error(ErrorCode::IoError,
                "cannot move " + tmp + " to " + path + ": " + ec.message());
}

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_dataset(const std::string &path,
                   const std::vector<SkeletonSequence> &data) {
  write_file_atomic(path, dataset_to_jsonl(data));
}

std::vector<SkeletonSequence> read_dataset(const std::string &path) {
  return dataset_from_jsonl(read_file(path));
}

} // namespace g3cn
