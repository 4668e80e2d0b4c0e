// SPDX-License-Identifier: Apache-2.0
#include "g3cn/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "g3cn/error.hpp"
#include "g3cn/random.hpp"
#include "json.hpp"

namespace g3cn {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitTag = 0x1A17;
constexpr std::uint64_t kShuffleTag = 0x5000'0000;
constexpr char kCheckpointMagic[8] = {'G', '3', 'C', 'N', 'C', 'K', 'P', 'T'};

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void apply_paper_schedule(TrainConfig &cfg) {
  cfg.epochs = 85;
  cfg.lr = 0.05;
  cfg.lr_decay_epochs = {45, 65, 75};
  cfg.lr_decay_factor = 0.1;
}

void validate(const TrainConfig &cfg) {
  validate(cfg.network);
  auto fail = [](const std::string &msg) {
    throw Error(ErrorCode::ConfigError, msg);
  };
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr))
    fail("lr must be a finite value >= 0");
  if (cfg.epochs < 1)
    fail("epochs must be >= 1");
  if (!(cfg.lr_decay_factor > 0.0 && cfg.lr_decay_factor <= 1.0))
    fail("lr_decay_factor must be in (0, 1]");
  if (cfg.batch_size < 1)
    fail("batch_size must be >= 1");
  if (!(cfg.weight_decay >= 0.0) || !std::isfinite(cfg.weight_decay))
    fail("weight_decay must be a finite value >= 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
    fail("momentum must be in [0, 1)");
  if (cfg.network.skeleton && cfg.center_joint >= cfg.network.skeleton->n_joints())
    fail("center_joint is not a joint of the skeleton");
}

double learning_rate(const TrainConfig &cfg, std::size_t epoch) {
  double lr = cfg.lr;
  for (std::size_t d : cfg.lr_decay_epochs)
    if (d <= epoch)
      lr *= cfg.lr_decay_factor;
  return lr;
}

std::string train_config_to_json(const TrainConfig &cfg) {
  json j;
  j["network"] = json::parse(network_config_to_json(cfg.network));
  j["lr"] = cfg.lr;
  j["lr_decay_epochs"] = cfg.lr_decay_epochs;
  j["lr_decay_factor"] = cfg.lr_decay_factor;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["weight_decay"] = cfg.weight_decay;
  j["momentum"] = cfg.momentum;
  j["nesterov"] = cfg.nesterov;
  j["seed"] = cfg.seed;
  j["center_joint"] = cfg.center_joint;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string &text) {
  try {
    const json j = json::parse(text);
    TrainConfig cfg;
    cfg.network = network_config_from_json(j.at("network").dump());
    cfg.lr = j.value("lr", cfg.lr);
    cfg.lr_decay_epochs = j.value("lr_decay_epochs", cfg.lr_decay_epochs);
    cfg.lr_decay_factor = j.value("lr_decay_factor", cfg.lr_decay_factor);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.nesterov = j.value("nesterov", cfg.nesterov);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.center_joint = j.value("center_joint", cfg.center_joint);
    return cfg;
  } catch (const json::exception &e) {
    throw Error(ErrorCode::ConfigError, std::string("train config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

ad::Tensor PreparedData::batch(const std::vector<std::size_t> &indices) const {
  const std::size_t per = n_frames * n_joints * 3;
  std::vector<double> out(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(indices[b] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(b * per));
  return ad::Tensor::from({indices.size(), n_frames, n_joints, 3}, std::move(out));
}

ad::Tensor PreparedData::sample(std::size_t index) const {
  if (index >= size())
    throw Error(ErrorCode::InvalidArgument,
                "sample " + std::to_string(index) + " of " +
                    std::to_string(size()));
  const std::size_t per = n_frames * n_joints * 3;
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(index * per),
                          x.begin() + static_cast<std::ptrdiff_t>((index + 1) * per));
  return ad::Tensor::from({n_frames, n_joints, 3}, std::move(out));
}

PreparedData prepare_dataset(const std::vector<SkeletonSequence> &data,
                             const TrainConfig &cfg) {
  if (data.empty())
    throw Error(ErrorCode::InvalidArgument, "dataset is empty");
  if (!cfg.network.skeleton)
    throw Error(ErrorCode::ConfigError, "network config has no skeleton");
  PreparedData out;
  out.n_frames = cfg.network.input_frames;
  out.n_joints = cfg.network.skeleton->n_joints();
  out.x.reserve(data.size() * out.n_frames * out.n_joints * 3);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto &s = data[i];
    if (s.n_joints != out.n_joints)
      throw Error(ErrorCode::ShapeMismatch,
                  "sequence " + std::to_string(i) + " has " +
                      std::to_string(s.n_joints) + " joints, skeleton has " +
                      std::to_string(out.n_joints));
    if (s.label >= cfg.network.n_classes)
      throw Error(ErrorCode::InvalidLabel,
                  "sequence " + std::to_string(i) + " has label " +
                      std::to_string(s.label) + " but n_classes is " +
                      std::to_string(cfg.network.n_classes));
    const auto p = preprocess(s, out.n_frames, cfg.center_joint);
    out.x.insert(out.x.end(), p.frames.begin(), p.frames.end());
    out.labels.push_back(s.label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics and evaluation
// ---------------------------------------------------------------------------

std::string metrics_csv_header() { return "epoch,lr,loss,acc\n"; }

std::string metrics_csv_row(const EpochMetrics &m) {
  return std::to_string(m.epoch) + "," + format_real(m.lr) + "," +
         format_real(m.loss) + "," + format_real(m.acc) + "\n";
}

std::vector<std::size_t> argmax_rows(const ad::Tensor &logits) {
  if (logits.rank() != 2)
    throw Error(ErrorCode::ShapeMismatch,
                "logits must be [B, K], got " + ad::shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  const auto d = logits.data();
  std::vector<std::size_t> out(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    const double *row = d.data() + b * K;
    out[b] = static_cast<std::size_t>(std::max_element(row, row + K) - row);
  }
  return out;
}

EvalReport summarize_predictions(const std::vector<std::size_t> &labels,
                                 const std::vector<std::size_t> &predicted,
                                 std::size_t n_classes) {
  if (labels.size() != predicted.size())
    throw Error(ErrorCode::ShapeMismatch, "label and prediction counts differ");
  EvalReport r;
  r.n_samples = labels.size();
  r.class_counts.assign(n_classes, 0);
  r.per_class_accuracy.assign(n_classes, 0.0);
  r.confusion.assign(n_classes, std::vector<double>(n_classes, 0.0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes || predicted[i] >= n_classes)
      throw Error(ErrorCode::InvalidLabel,
                  "class index outside [0, " + std::to_string(n_classes) + ")");
    ++r.class_counts[labels[i]];
    r.confusion[labels[i]][predicted[i]] += 1.0;
    correct += labels[i] == predicted[i];
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (r.class_counts[c] == 0)
      continue;
    for (auto &v : r.confusion[c])
      v /= static_cast<double>(r.class_counts[c]);
    r.per_class_accuracy[c] = r.confusion[c][c];
  }
  r.accuracy = r.n_samples ? static_cast<double>(correct) /
                                 static_cast<double>(r.n_samples)
                           : 0.0;
  return r;
}

std::string eval_report_json(const EvalReport &r) {
  json j;
  j["n_samples"] = r.n_samples;
  j["accuracy"] = r.accuracy;
  j["class_counts"] = r.class_counts;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["confusion"] = r.confusion;
  return j.dump(2);
}

std::string confusion_csv(const EvalReport &r) {
  std::string out = "true\\predicted";
  for (std::size_t c = 0; c < r.confusion.size(); ++c)
    out += "," + std::to_string(c);
  out += "\n";
  for (std::size_t c = 0; c < r.confusion.size(); ++c) {
    out += std::to_string(c);
    for (double v : r.confusion[c])
      out += "," + format_real(v);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg)
    : cfg_((validate(cfg), std::move(cfg))),
      net_(cfg_.network, mix_seed(cfg_.seed, kInitTag)) {
  for (const auto &p : net_.parameters())
    velocity_.emplace_back(p.tensor.numel(), 0.0);
}

EpochMetrics Trainer::train_epoch(const PreparedData &data) {
  if (data.size() == 0)
    throw Error(ErrorCode::InvalidArgument, "dataset is empty");
  const double lr = learning_rate(cfg_, epoch_);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(cfg_.seed, kShuffleTag + epoch_));
  rng.shuffle(order);

  auto params = net_.parameters();
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t stop = std::min(order.size(), start + cfg_.batch_size);
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(stop));
    std::vector<std::size_t> labels(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b)
      labels[b] = data.labels[idx[b]];

    for (auto &p : params)
      p.tensor.zero_grad();
    const ad::Tensor logits = net_.forward(data.batch(idx), true);
    const ad::Tensor loss = ad::softmax_cross_entropy(logits, labels);
    const double value = loss.item();
    if (!std::isfinite(value))
      throw Error(ErrorCode::DivergedLoss,
                  "loss is " + format_real(value) + " at epoch " +
                      std::to_string(epoch_ + 1) + ", batch starting at " +
                      std::to_string(start) + " (lr " + format_real(lr) + ")");
    loss.backward();

    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].tensor.mutable_data();
      const auto g = params[i].tensor.grad();
      auto &v = velocity_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double d = (g.empty() ? 0.0 : g[k]) + cfg_.weight_decay * w[k];
        v[k] = cfg_.momentum * v[k] + d;
        const double step = cfg_.nesterov ? d + cfg_.momentum * v[k] : v[k];
        w[k] -= lr * step;
      }
    }

    loss_sum += value * static_cast<double>(idx.size());
    const auto pred = argmax_rows(logits);
    for (std::size_t b = 0; b < idx.size(); ++b)
      correct += pred[b] == labels[b];
  }
  ++epoch_;
  const double n = static_cast<double>(data.size());
  return {epoch_, lr, loss_sum / n, static_cast<double>(correct) / n};
}

std::vector<EpochMetrics>
Trainer::fit(const PreparedData &data,
             const std::function<void(const EpochMetrics &)> &on_epoch) {
  std::vector<EpochMetrics> out;
  while (epoch_ < cfg_.epochs) {
    out.push_back(train_epoch(data));
    if (on_epoch)
      on_epoch(out.back());
  }
  return out;
}

ad::Tensor Trainer::logits(const PreparedData &data) {
  ad::NoGradGuard no_grad;
  std::vector<double> all;
  std::size_t K = cfg_.network.n_classes;
  for (std::size_t start = 0; start < data.size(); start += cfg_.batch_size) {
    const std::size_t stop = std::min(data.size(), start + cfg_.batch_size);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto out = net_.forward(data.batch(idx), false);
    all.insert(all.end(), out.data().begin(), out.data().end());
  }
  return ad::Tensor::from({data.size(), K}, std::move(all));
}

EvalReport Trainer::evaluate(const PreparedData &data) {
  return summarize_predictions(data.labels, argmax_rows(logits(data)),
                               cfg_.network.n_classes);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void put_u64(std::string &out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_bytes(std::string &out, std::string_view s) {
  put_u64(out, s.size());
  out.append(s);
}

void put_record(std::string &out, const std::string &name,
                const ad::Shape &shape, std::span<const double> values) {
  put_bytes(out, name);
  put_u64(out, shape.size());
  for (auto d : shape)
    put_u64(out, d);
  put_u64(out, values.size());
  for (double v : values)
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(raw(static_cast<std::size_t>(u64()))); }
  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw Error(ErrorCode::TruncatedFile,
                  "checkpoint ends at byte " + std::to_string(bytes_.size()) +
                      ", needed " + std::to_string(pos_ + n));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct Record {
  ad::Shape shape;
  std::vector<double> values;
};

} // namespace

std::string Trainer::checkpoint_bytes() const {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_bytes(out, train_config_to_json(cfg_));
  put_u64(out, epoch_);

  const auto params = net_.parameters();
  auto buffers = const_cast<Network &>(net_).buffers();
  put_u64(out, 2 * params.size() + buffers.size());
  for (const auto &p : params)
    put_record(out, p.name, p.tensor.shape(), p.tensor.data());
  for (std::size_t i = 0; i < params.size(); ++i)
    put_record(out, "momentum/" + params[i].name, params[i].tensor.shape(),
               velocity_[i]);
  for (const auto &b : buffers)
    put_record(out, b.name, {b.values->size()}, *b.values);
  return out;
}

Trainer Trainer::from_checkpoint_bytes(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.raw(sizeof kCheckpointMagic) !=
      std::string_view(kCheckpointMagic, sizeof kCheckpointMagic))
    throw Error(ErrorCode::ParseError, "not a checkpoint (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::VersionMismatch,
                "checkpoint version " + std::to_string(version) +
                    ", supported " + std::to_string(kCheckpointVersion));
  Trainer t(train_config_from_json(in.str()));
  t.epoch_ = static_cast<std::size_t>(in.u64());

  std::map<std::string, Record> records;
  const std::uint64_t count = in.u64();
  for (std::uint64_t r = 0; r < count; ++r) {
    std::string name = in.str();
    Record rec;
    const std::uint64_t rank = in.u64();
    if (rank > 8)
      throw Error(ErrorCode::ParseError, "tensor " + name + " has rank " +
                                             std::to_string(rank));
    for (std::uint64_t i = 0; i < rank; ++i)
      rec.shape.push_back(static_cast<std::size_t>(in.u64()));
    const std::uint64_t n = in.u64();
    if (n != ad::numel_of(rec.shape) || n > bytes.size() / 8)
      throw Error(ErrorCode::ParseError,
                  "tensor " + name + " element count does not match its shape");
    rec.values.resize(static_cast<std::size_t>(n));
    for (auto &v : rec.values)
      v = std::bit_cast<double>(in.u64());
    records.emplace(std::move(name), std::move(rec));
  }
  if (!in.done())
    throw Error(ErrorCode::ParseError, "trailing bytes after the last tensor");

  auto take = [&](const std::string &name, const ad::Shape &shape) {
    auto it = records.find(name);
    if (it == records.end())
      throw Error(ErrorCode::ShapeMismatch, "checkpoint lacks tensor " + name);
    if (it->second.shape != shape)
      throw Error(ErrorCode::ShapeMismatch,
                  "tensor " + name + " has shape " +
                      ad::shape_str(it->second.shape) + ", model expects " +
                      ad::shape_str(shape));
    auto values = std::move(it->second.values);
    records.erase(it);
    return values;
  };
  auto params = t.net_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto values = take(params[i].name, params[i].tensor.shape());
    auto w = params[i].tensor.mutable_data();
    std::copy(values.begin(), values.end(), w.begin());
    t.velocity_[i] = take("momentum/" + params[i].name, params[i].tensor.shape());
  }
  for (auto &b : t.net_.buffers())
    *b.values = take(b.name, {b.values->size()});
  if (!records.empty())
    throw Error(ErrorCode::ShapeMismatch,
                "checkpoint has unknown tensor " + records.begin()->first);
  return t;
}

void Trainer::save(const std::string &path) const {
  write_file_atomic(path, checkpoint_bytes());
}

Trainer Trainer::load(const std::string &path) {
  return from_checkpoint_bytes(read_file(path));
}

} // namespace g3cn
