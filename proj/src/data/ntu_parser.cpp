// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <regex>

#include "g3cn/data_io.hpp"
#include "g3cn/error.hpp"

namespace g3cn {

namespace {

class LineReader {
public:
  explicit LineReader(std::string_view text) : text_(text) {}

  /// Next non-blank line split into tokens. Throws TruncatedFile at EOF.
  std::vector<std::string_view> next(const char *expected) {
    while (pos_ < text_.size()) {
      const std::size_t end = std::min(text_.find('\n', pos_), text_.size());
      std::string_view line = text_.substr(pos_, end - pos_);
      unterminated_ = end == text_.size();
      pos_ = end + 1;
      ++line_;
      auto tokens = split(line);
      if (!tokens.empty())
        return tokens;
    }
    throw Error(ErrorCode::TruncatedFile,
                std::string("end of input after line ") +
                    std::to_string(line_) + ", expected " + expected);
  }

  /// True if only whitespace remains.
  bool at_end() {
    while (pos_ < text_.size()) {
      const std::size_t end = std::min(text_.find('\n', pos_), text_.size());
      if (!split(text_.substr(pos_, end - pos_)).empty())
        return false;
      pos_ = end + 1;
      ++line_;
    }
    return true;
  }

  std::size_t line() const { return line_; }

  /// The last line returned ran into the end of input without a newline.
  bool unterminated() const { return unterminated_; }

  /// ParseError for a record with the wrong number of fields, or
  /// TruncatedFile when that record was cut off by the end of input.
  [[noreturn]] void short_record(const std::string &what) const {
    if (unterminated_)
      throw Error(ErrorCode::TruncatedFile,
                  "input ends inside line " + std::to_string(line_) + ", expected " + what);
    throw ParseError(line_, what);
  }

private:
  static bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
  }
  static std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && is_space(line[i]))
        ++i;
      std::size_t j = i;
      while (j < line.size() && !is_space(line[j]))
        ++j;
      if (j > i)
        out.push_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
  bool unterminated_ = false;
};

std::size_t parse_count(const std::vector<std::string_view> &tokens,
                        std::size_t line, const char *what) {
  std::size_t value = 0;
  if (tokens.size() != 1)
    throw ParseError(line, std::string("a single ") + what);
  const auto tok = tokens[0];
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, std::string("non-negative integer ") + what);
  return value;
}

double parse_real(std::string_view tok, std::size_t line, const char *what) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(value))
    throw ParseError(line, std::string("finite real ") + what);
  return value;
}

struct BodyTrack {
  std::string id;
  std::size_t n_joints = 0;
  std::size_t n_frames = 0;
  std::size_t last_frame = 0; // 1-based; 0 = never seen
  std::vector<double> coords;
};

} // namespace

std::vector<SkeletonSequence> parse_ntu_skeleton(std::string_view text,
                                                 const std::string &source) {
  LineReader reader(text);
  const std::size_t n_frames = parse_count(reader.next("frame count"),
                                           reader.line(), "frame count");
  std::vector<BodyTrack> tracks;
  std::map<std::string, std::size_t, std::less<>> index;

  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t n_bodies =
        parse_count(reader.next("body count"), reader.line(), "body count");
    for (std::size_t b = 0; b < n_bodies; ++b) {
      const auto header = reader.next("body header");
      if (header.size() != 10)
        reader.short_record("body header with id and 9 tracking fields");
      for (std::size_t k = 1; k < header.size(); ++k)
        parse_real(header[k], reader.line(), "body tracking field");
      const std::string id(header[0]);

      const std::size_t n_joints =
          parse_count(reader.next("joint count"), reader.line(), "joint count");
      if (n_joints == 0)
        throw ParseError(reader.line(), "positive joint count");

      auto it = index.find(id);
      if (it == index.end()) {
        it = index.emplace(id, tracks.size()).first;
        tracks.push_back({id, n_joints, 0, 0, {}});
      }
      BodyTrack &track = tracks[it->second];
      if (track.n_joints != n_joints)
        throw ParseError(reader.line(), "joint count " +
                                            std::to_string(track.n_joints) +
                                            " for body " + id);
      if (track.last_frame == f + 1)
        throw ParseError(reader.line(), "distinct body ids within a frame");

      for (std::size_t j = 0; j < n_joints; ++j) {
        const auto fields = reader.next("joint record");
        if (fields.size() != 12)
          reader.short_record("12 joint fields, got " + std::to_string(fields.size()));
        for (std::size_t k = 0; k < 12; ++k) {
          const double v = parse_real(fields[k], reader.line(), "joint field");
          if (k < 3)
            track.coords.push_back(v);
        }
      }
      track.last_frame = f + 1;
      ++track.n_frames;
    }
  }
  if (!reader.at_end())
    throw ParseError(reader.line() + 1, "end of file after the last frame");

  std::vector<SkeletonSequence> out;
  for (auto &track : tracks) {
    if (2 * track.n_frames < n_frames)
      continue;
    SkeletonSequence seq;
    seq.n_frames = track.n_frames;
    seq.n_joints = track.n_joints;
    seq.frames = std::move(track.coords);
    seq.source = source;
    seq.body = track.id;
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<SkeletonSequence> parse_ntu_file(const std::string &path) {
  const std::string stem = std::filesystem::path(path).stem().string();
  auto seqs = parse_ntu_skeleton(read_file(path), stem);
  static const std::regex ntu_name(R"(S\d{3}C\d{3}(P\d{3})R\d{3}A(\d{3}))");
  std::smatch m;
  if (std::regex_search(stem, m, ntu_name)) {
    const std::size_t action = std::stoul(m[2].str());
    for (auto &s : seqs) {
      s.subject = m[1].str();
      s.label = action > 0 ? action - 1 : 0;
    }
  }
  return seqs;
}

} // namespace g3cn
