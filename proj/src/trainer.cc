#include "gebc/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "gebc/error.h"
#include "gebc/hash.h"

namespace gebc {

void validate(const TrainConfig& c) {
  if (!(c.lr_warmup_start > 0 && c.lr_min > 0 && c.lr_init > 0)) {
    throw InvalidConfig("learning rates must be positive");
  }
  if (!(c.lr_warmup_start <= c.lr_min && c.lr_min <= c.lr_init)) {
    throw InvalidConfig("learning rates must satisfy warmup_start <= min <= init");
  }
  if (c.batch_size < 1 || c.max_epochs < 1 || c.max_steps < 0) {
    throw InvalidConfig("batch_size and max_epochs must be positive");
  }
  if (c.weight_decay < 0 || c.warmup_fraction < 0 || c.warmup_fraction >= 1) {
    throw InvalidConfig("weight_decay must be >= 0 and warmup_fraction in [0, 1)");
  }
}

int64_t resolve_warmup_steps(int64_t total_steps, const TrainConfig& config) {
  if (config.warmup_steps >= 0) return config.warmup_steps;
  return static_cast<int64_t>(std::floor(config.warmup_fraction * static_cast<double>(total_steps)));
}

double lr_at(int64_t step, int64_t total_steps, const TrainConfig& config) {
  const int64_t warmup = resolve_warmup_steps(total_steps, config);
  if (total_steps < 1 || warmup >= total_steps) {
    throw InvalidSchedule("warmup steps (" + std::to_string(warmup) +
                          ") must be fewer than total steps (" + std::to_string(total_steps) +
                          ")");
  }
  if (step < 0 || step > total_steps) {
    throw InvalidSchedule("step " + std::to_string(step) + " outside [0, " +
                          std::to_string(total_steps) + "]");
  }
  if (step < warmup) {
    const double frac = static_cast<double>(step) / static_cast<double>(warmup);
    return config.lr_warmup_start + (config.lr_init - config.lr_warmup_start) * frac;
  }
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  if (config.decay == DecayShape::kLinear) {
    return config.lr_init + (config.lr_min - config.lr_init) * progress;
  }
  return config.lr_min +
         0.5 * (config.lr_init - config.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(nn::ParameterList params, const TrainConfig& config)
    : params_(std::move(params)),
      weight_decay_(config.weight_decay),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps) {
  for (const auto& p : params_) {
    m_.push_back(ag::Matrix::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(ag::Matrix::Zero(p.var.rows(), p.var.cols()));
  }
}

void AdamW::step(double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (size_t i = 0; i < params_.size(); ++i) {
    ag::Var var = params_[i].var;
    if (!var.has_grad()) continue;
    const ag::Matrix g = var.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    ag::Matrix& w = var.mutable_value();
    if (params_[i].decay) w *= (1.0 - lr * weight_decay_);
    w.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

bool AdamW::decays(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.decay;
  }
  throw std::out_of_range("unknown parameter " + name);
}

std::map<std::string, ag::Matrix> AdamW::state() const {
  std::map<std::string, ag::Matrix> out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out["adam.m/" + params_[i].name] = m_[i];
    out["adam.v/" + params_[i].name] = v_[i];
  }
  return out;
}

void AdamW::load_state(const std::map<std::string, ag::Matrix>& tensors, int64_t steps) {
  for (size_t i = 0; i < params_.size(); ++i) {
    for (auto* slot : {&m_[i], &v_[i]}) {
      const std::string key =
          (slot == &m_[i] ? "adam.m/" : "adam.v/") + params_[i].name;
      auto it = tensors.find(key);
      if (it == tensors.end()) throw CorruptCheckpoint("checkpoint lacks " + key);
      if (it->second.rows() != slot->rows() || it->second.cols() != slot->cols()) {
        throw ConfigMismatch("optimizer state " + key + " has a different shape");
      }
      *slot = it->second;
    }
  }
  steps_ = steps;
}

double clip_grad_norm(const nn::ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.var.has_grad()) sq += p.var.node()->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (const auto& p : params) {
      if (p.var.has_grad()) p.var.node()->grad *= s;
    }
  }
  return norm;
}

std::vector<TrainingExample> make_training_set(
    const std::vector<VideoRecord>& records,
    const std::map<std::string, std::shared_ptr<const PreparedVideo>>& videos) {
  std::vector<TrainingExample> out;
  for (const auto& r : records) {
    if (r.boundaries.empty()) continue;
    auto it = videos.find(r.video_id);
    if (it == videos.end()) {
      throw CacheMiss("no prepared features for video '" + r.video_id + "'");
    }
    for (const auto& s : expand_samples(r)) {
      const auto* b = find_boundary(r, s.boundary_id);
      out.push_back({s, it->second, normalize_timebox(b->time_box, r.duration_sec)});
    }
  }
  return out;
}

std::vector<size_t> epoch_order(size_t n, uint64_t seed, int64_t epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(epoch), static_cast<uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Trainer::Trainer(GebcModel& model, const LanguageModel& lm, const TrainConfig& config,
                 uint64_t config_hash)
    : model_(model),
      lm_(lm),
      config_(config),
      config_hash_(config_hash),
      params_(model.trainable_parameters()),
      optimizer_(params_, config) {
  validate(config);
}

int64_t Trainer::total_steps(size_t dataset_size) const {
  const auto per_epoch = static_cast<int64_t>(
      (dataset_size + static_cast<size_t>(config_.batch_size) - 1) /
      static_cast<size_t>(config_.batch_size));
  int64_t total = per_epoch * config_.max_epochs;
  if (config_.max_steps > 0) total = std::min(total, config_.max_steps);
  return total;
}

namespace {

ag::Var example_loss(const GebcModel& model, const LanguageModel& lm,
                     const TrainingExample& ex) {
  const VideoTokens tokens = model.video_tokens(*ex.video, ex.box);
  const PromptAssembly prompt =
      build_prompt(tokens, ex.sample.caption_type, ex.sample.target_text, lm);
  return caption_loss(prompt, lm);
}

}  // namespace

double Trainer::evaluate_loss(const std::vector<TrainingExample>& batch) const {
  double total = 0.0;
  for (const auto& ex : batch) total += example_loss(model_, lm_, ex).scalar();
  return batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
}

std::vector<TrainLogEntry> Trainer::train(const std::vector<TrainingExample>& data,
                                          const TrainHooks& hooks) {
  if (data.empty()) throw InvalidConfig("training set is empty");
  const int64_t total = total_steps(data.size());
  const size_t batch = static_cast<size_t>(config_.batch_size);
  std::vector<TrainLogEntry> log;

  while (step_ < total && epoch_ < config_.max_epochs) {
    const auto order = epoch_order(data.size(), config_.seed, epoch_);
    // A checkpoint taken mid-epoch resumes after the batches it has seen.
    const int64_t per_epoch = static_cast<int64_t>((data.size() + batch - 1) / batch);
    size_t start = static_cast<size_t>(std::max<int64_t>(0, step_ - epoch_ * per_epoch)) * batch;
    for (; start < order.size(); start += batch) {
      if (step_ >= total) break;
      const size_t end = std::min(order.size(), start + batch);
      const double lr = lr_at(step_, total, config_);
      nn::zero_grad(params_);
      double loss = 0.0;
      const double weight = 1.0 / static_cast<double>(end - start);
      for (size_t i = start; i < end; ++i) {
        const ag::Var l = example_loss(model_, lm_, data[order[i]]);
        loss += l.scalar() * weight;
        ag::scale(l, weight).backward();
      }
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step_ << " (lr " << lr << "), batch:";
        for (size_t i = start; i < end; ++i) {
          const auto& s = data[order[i]].sample;
          msg << " " << s.video_id << "/" << s.boundary_id << "/"
              << caption_type_name(s.caption_type);
        }
        throw NonFiniteLoss(msg.str());
      }
      clip_grad_norm(params_, config_.grad_clip);
      optimizer_.step(lr);
      TrainLogEntry entry{step_, epoch_, loss, lr};
      log.push_back(entry);
      ++step_;
      if (hooks.on_step) hooks.on_step(entry);
    }
    // Stopped partway through an epoch by max_steps.
    if (start < order.size()) break;
    ++epoch_;
    if (hooks.on_epoch) hooks.on_epoch(epoch_, checkpoint());
  }
  nn::zero_grad(params_);
  return log;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config_hash = config_hash_;
  c.step = step_;
  c.epoch = epoch_;
  for (const auto& p : params_) c.tensors["param/" + p.name] = p.var.value();
  for (auto& [k, v] : optimizer_.state()) c.tensors[k] = v;
  return c;
}

void Trainer::restore(const Checkpoint& c) {
  for (const auto& p : params_) {
    auto it = c.tensors.find("param/" + p.name);
    if (it == c.tensors.end()) throw ConfigMismatch("checkpoint lacks parameter " + p.name);
    if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
      throw ConfigMismatch("parameter " + p.name + " has a different shape in the checkpoint");
    }
    ag::Var var = p.var;
    var.mutable_value() = it->second;
  }
  optimizer_.load_state(c.tensors, c.step);
  step_ = c.step;
  epoch_ = c.epoch;
}

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptCheckpoint("checkpoint truncated");
  }
  std::string_view bytes_;
  size_t pos_ = 0;
};

constexpr char kCheckpointMagic[4] = {'G', 'E', 'B', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic, 4);
  put<uint32_t>(out, kCheckpointVersion);
  put<uint64_t>(out, c.config_hash);
  put<int64_t>(out, c.step);
  put<int64_t>(out, c.epoch);
  put<uint32_t>(out, static_cast<uint32_t>(c.tensors.size()));
  for (const auto& [name, m] : c.tensors) {
    put<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out += name;
    put<uint32_t>(out, 2);
    put<uint64_t>(out, static_cast<uint64_t>(m.rows()));
    put<uint64_t>(out, static_cast<uint64_t>(m.cols()));
    put<uint8_t>(out, 1);
    out.append(reinterpret_cast<const char*>(m.data()),
               static_cast<size_t>(m.size()) * sizeof(double));
  }
  put<uint64_t>(out, fnv1a(out));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 + 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CorruptCheckpoint("not a checkpoint file (bad magic)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  Reader r(body);
  r.take(4);
  const auto version = r.get<uint32_t>();
  if (version != kCheckpointVersion) {
    throw CorruptCheckpoint("unsupported checkpoint version " + std::to_string(version));
  }
  if (stored != fnv1a(body)) throw CorruptCheckpoint("checkpoint checksum mismatch");
  Checkpoint c;
  c.config_hash = r.get<uint64_t>();
  c.step = r.get<int64_t>();
  c.epoch = r.get<int64_t>();
  const auto count = r.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name(r.take(r.get<uint32_t>()));
    if (r.get<uint32_t>() != 2) throw CorruptCheckpoint("tensor " + name + " is not rank 2");
    const auto rows = r.get<uint64_t>();
    const auto cols = r.get<uint64_t>();
    if (r.get<uint8_t>() != 1) throw CorruptCheckpoint("tensor " + name + " has unknown dtype");
    if (cols != 0 && rows > (1ull << 40) / cols) throw CorruptCheckpoint("tensor too large");
    ag::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const auto payload = r.take(rows * cols * sizeof(double));
    std::memcpy(m.data(), payload.data(), payload.size());
    c.tensors.emplace(std::move(name), std::move(m));
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<uint64_t> expected_hash, bool force) {
  Checkpoint c = decode_checkpoint(read_file(path));
  if (expected_hash && *expected_hash != c.config_hash && !force) {
    throw ConfigMismatch("checkpoint " + path.string() +
                         " was written for a different model configuration");
  }
  return c;
}

}  // namespace gebc
