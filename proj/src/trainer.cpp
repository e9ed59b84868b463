#include "ka/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ka/config_io.hpp"
#include "ka/serialize.hpp"

namespace ka {

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  require(total_steps >= 1, "cosine_lr: total_steps must be >= 1");
  require(step <= total_steps, "cosine_lr: step " + std::to_string(step) + " outside [0, " +
                                   std::to_string(total_steps) + "]");
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

const char* to_string(Side side) { return side == Side::L ? "L" : "R"; }

void TrainConfig::validate() const {
  require(epochs >= 1, "TrainConfig: epochs must be >= 1");
  require(batch_size >= 4, "TrainConfig: batch_size must be >= 4");
  require(lr0 > 0.0, "TrainConfig: lr0 must be > 0");
  require(eval_every >= 1, "TrainConfig: eval_every must be >= 1");
  require(val_fraction >= 0.0 && val_fraction < 1.0, "TrainConfig: val_fraction must lie in [0, 1)");
  loss.validate();
  arch.validate();
  if (data == DataUse::a_only) require(!arch.par_enabled, "TrainConfig: A-only data cannot train the PAR head");
  if (data == DataUse::b_only) require(!arch.reid_enabled, "TrainConfig: B-only data cannot train the reID head");
  if (data == DataUse::both) require(ratio_a > 0.0 && ratio_a < 1.0, "TrainConfig: ratio_a must lie in (0, 1)");
}

Side select_best(const MetricsReport& left, const MetricsReport& right) {
  require(left.reid.has_value() == right.reid.has_value() && left.par.has_value() == right.par.has_value(),
          "select_best: metrics cover different task sets");
  return right.primary_score() > left.primary_score() ? Side::R : Side::L;
}

std::pair<const Model*, Side> select_best(const Model& left, const Model& right, const MetricsReport& metrics_left,
                                          const MetricsReport& metrics_right) {
  const Side side = select_best(metrics_left, metrics_right);
  return {side == Side::L ? &left : &right, side};
}

namespace {
std::string diverged_message(std::size_t step, const LossReport& r) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << ": " << json(r).dump();
  return os.str();
}
}  // namespace

TrainingDiverged::TrainingDiverged(std::size_t step, LossReport report)
    : Error(diverged_message(step, report)), step(step), report(report) {}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.shape()));
    v_.push_back(Tensor::zeros(p.shape()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto g = params_[k].grad();
    if (g.empty()) continue;
    auto w = params_[k].mutable_data();
    auto m = m_[k].mutable_data();
    auto v = v_[k].mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

std::vector<NamedTensor> Adam::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back({"adam.m." + std::to_string(k), m_[k]});
    out.push_back({"adam.v." + std::to_string(k), v_[k]});
  }
  return out;
}

void Adam::load_state(const std::vector<NamedTensor>& state, std::uint64_t steps_taken) {
  auto dst = this->state();
  assign_by_name(dst, state, "optimizer state");
  t_ = steps_taken;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct Trainer::State {
  TrainConfig cfg;
  PartialDataset train_a, train_b, val_a, val_b;
  Model left;
  std::optional<Model> right;
  std::unique_ptr<Adam> adam;
  Rng sampler;
  Rng augment;
  std::size_t steps_per_epoch = 0;
  std::size_t step = 0;
  std::vector<StepRecord> history;
  std::vector<ValRecord> val_history;
  std::function<void(const StepRecord&)> callback;

  State(const TrainConfig& c, Model l) : cfg(c), left(std::move(l)) {}

  bool uses_a() const { return cfg.data != DataUse::b_only; }
  bool uses_b() const { return cfg.data != DataUse::a_only; }
};

namespace {

constexpr char kCheckpointMagic[8] = {'K', 'A', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t left_seed(std::uint64_t seed) { return mix_seed(seed, 10); }
std::uint64_t right_seed(std::uint64_t seed) { return mix_seed(seed, 11); }

std::vector<NamedTensor> prefixed(const Model& m, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto* group : {&m.parameters(), &m.buffers()})
    for (const auto& nt : *group) out.push_back({prefix + nt.name, nt.tensor});
  return out;
}

}  // namespace

Trainer::Trainer(const PartialDataset& ds_a, const PartialDataset& ds_b, const TrainConfig& cfg) {
  cfg.validate();
  s_ = std::make_unique<State>(cfg, Model(cfg.arch, left_seed(cfg.seed)));
  State& s = *s_;
  if (s.uses_a()) {
    require(!ds_a.empty(), "train: dataset A is empty");
    ds_a.validate();
    require(ds_a.task_labeled == Task::T1, "train: dataset A must carry reID labels");
    if (cfg.arch.reid_enabled)
      require(ds_a.num_ids <= cfg.arch.num_ids, "train: dataset A has more identities than the reID classifier");
    std::tie(s.train_a, s.val_a) = split_holdout(ds_a, cfg.val_fraction, mix_seed(cfg.seed, 30));
  }
  if (s.uses_b()) {
    require(!ds_b.empty(), "train: dataset B is empty");
    ds_b.validate();
    require(ds_b.task_labeled == Task::T2, "train: dataset B must carry attribute labels");
    if (cfg.arch.par_enabled)
      require(ds_b.num_attributes == cfg.arch.num_attributes, "train: attribute count differs from the PAR head");
    std::tie(s.train_b, s.val_b) = split_holdout(ds_b, cfg.val_fraction, mix_seed(cfg.seed, 31));
  }
  if (cfg.mode == TrainMode::dual) s.right.emplace(cfg.arch, right_seed(cfg.seed));

  std::vector<Tensor> params;
  for (const auto& nt : s.left.parameters()) params.push_back(nt.tensor);
  if (s.right)
    for (const auto& nt : s.right->parameters()) params.push_back(nt.tensor);
  s.adam = std::make_unique<Adam>(std::move(params), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  s.sampler = Rng(mix_seed(cfg.seed, 20));
  s.augment = Rng(mix_seed(cfg.seed, 21));
  s.steps_per_epoch = ka::steps_per_epoch(s.train_a.size() + s.train_b.size(), cfg.batch_size);
  require(s.steps_per_epoch >= 1, "train: no training samples");
}

Trainer::~Trainer() = default;
Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;

const TrainConfig& Trainer::config() const { return s_->cfg; }
std::size_t Trainer::steps_per_epoch() const { return s_->steps_per_epoch; }
std::size_t Trainer::total_steps() const { return s_->steps_per_epoch * s_->cfg.epochs; }
std::size_t Trainer::global_step() const { return s_->step; }
std::size_t Trainer::epochs_done() const { return s_->step / s_->steps_per_epoch; }
bool Trainer::finished() const { return s_->step >= total_steps(); }
void Trainer::set_step_callback(std::function<void(const StepRecord&)> cb) { s_->callback = std::move(cb); }
const Model& Trainer::left() const { return s_->left; }
const Model* Trainer::right() const { return s_->right ? &*s_->right : nullptr; }
const std::vector<StepRecord>& Trainer::history() const { return s_->history; }
const std::vector<ValRecord>& Trainer::val_history() const { return s_->val_history; }
const PartialDataset& Trainer::train_a() const { return s_->train_a; }
const PartialDataset& Trainer::train_b() const { return s_->train_b; }
const PartialDataset& Trainer::val_a() const { return s_->val_a; }
const PartialDataset& Trainer::val_b() const { return s_->val_b; }

MetricsReport Trainer::validate(const Model& model) const {
  const State& s = *s_;
  const PartialDataset* query = !s.val_a.empty() ? &s.val_a : nullptr;
  const PartialDataset* par = !s.val_b.empty() ? &s.val_b : nullptr;
  return evaluate_model(model, query, query ? &s.train_a : nullptr, par, s.cfg.eval);
}

const StepRecord& Trainer::step() {
  State& s = *s_;
  require(!finished(), "Trainer::step: training already finished");
  const TrainConfig& cfg = s.cfg;

  MixedBatch batch;
  switch (cfg.data) {
    case DataUse::both:
      batch = sample_batch(s.train_a, s.train_b, cfg.batch_size, cfg.ratio_a, s.sampler);
      break;
    case DataUse::a_only:
      batch = sample_single(s.train_a, cfg.batch_size, s.sampler);
      break;
    case DataUse::b_only:
      batch = sample_single(s.train_b, cfg.batch_size, s.sampler);
      break;
  }

  DualOutputs outputs;
  switch (cfg.mode) {
    case TrainMode::dual:
      outputs = forward_dual(s.left, *s.right, batch, true);
      break;
    case TrainMode::single:
      outputs = forward_single(s.left, batch, true);
      break;
    case TrainMode::image_augmentation: {
      const MixedBatch weak = weak_augment(batch, cfg.augment, s.augment);
      const MixedBatch strong = strong_augment(batch, cfg.augment, s.augment);
      outputs.labels = BatchLabels::from(batch);
      outputs.left = s.left.forward(batch_images(strong), true);
      outputs.right = s.left.forward(batch_images(weak), true);
      break;
    }
  }

  const double lr = cosine_lr(s.step, total_steps(), cfg.lr0);
  LossTerms terms = total_objective(outputs, cfg.loss, cfg.compute_consistency);
  if (!terms.report.finite()) throw TrainingDiverged(s.step, terms.report);
  s.adam->zero_grad();
  terms.total.backward();
  s.adam->step(lr);

  StepRecord rec{s.step, s.step / s.steps_per_epoch + 1, lr, terms.report};
  ++s.step;
  s.history.push_back(rec);
  if (s.callback) s.callback(rec);

  if (s.step % s.steps_per_epoch == 0) {
    const std::size_t epoch = s.step / s.steps_per_epoch;
    const bool due = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
    if (due && cfg.val_fraction > 0.0) {
      ValRecord v;
      v.epoch = epoch;
      v.left = validate(s.left);
      if (s.right) v.right = validate(*s.right);
      s.val_history.push_back(std::move(v));
    }
  }
  return s.history.back();
}

void Trainer::run_epoch() {
  do {
    step();
  } while (!finished() && s_->step % s_->steps_per_epoch != 0);
}

TrainedRun Trainer::finish() {
  while (!finished()) step();
  State& s = *s_;
  Side side = Side::L;
  if (s.right && s.cfg.selection == SelectionRule::best_of_two && !s.val_history.empty()) {
    const ValRecord& last = s.val_history.back();
    side = select_best(last.left, *last.right);
  }
  const Model& kept = side == Side::L ? s.left : *s.right;
  return TrainedRun{kept.clone(), side, s.history, s.val_history};
}

void Trainer::save_checkpoint(const std::filesystem::path& path, std::optional<Side> best_side) const {
  const State& s = *s_;
  json meta{{"version", kCheckpointVersion},
            {"config", s.cfg},
            {"epoch", epochs_done()},
            {"step", s.step},
            {"sampler_rng", s.sampler.state()},
            {"augment_rng", s.augment.state()},
            {"adam_steps", s.adam->steps_taken()},
            {"has_right", s.right.has_value()},
            {"history", s.history},
            {"val_history", s.val_history}};
  if (best_side) meta["best_side"] = to_string(*best_side);

  std::vector<NamedTensor> tensors = prefixed(s.left, "left.");
  if (s.right) {
    auto r = prefixed(*s.right, "right.");
    tensors.insert(tensors.end(), r.begin(), r.end());
  }
  auto opt = s.adam->state();
  tensors.insert(tensors.end(), opt.begin(), opt.end());

  const std::string header = meta.dump();
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_tensors(out, tensors);
  require(out.good(), "failed writing checkpoint " + path.string());
}

namespace {

struct RawCheckpoint {
  json meta;
  std::vector<NamedTensor> tensors;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint not found: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  require(in.good() && std::memcmp(magic, kCheckpointMagic, sizeof magic) == 0, "not a checkpoint: " + path.string());
  const auto len = read_u64(in);
  require(len < (1ULL << 32), "checkpoint: implausible header size");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  require(in.good(), "checkpoint: truncated header");
  RawCheckpoint raw;
  raw.meta = json::parse(header);
  require(raw.meta.at("version").get<std::uint32_t>() == kCheckpointVersion, "checkpoint: unsupported version");
  raw.tensors = read_tensors(in);
  return raw;
}

std::vector<NamedTensor> strip_prefix(const std::vector<NamedTensor>& all, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto& nt : all)
    if (nt.name.rfind(prefix, 0) == 0) out.push_back({nt.name.substr(prefix.size()), nt.tensor});
  return out;
}

void restore_model(Model& m, const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  const auto mine = strip_prefix(tensors, prefix);
  assign_by_name(m.parameters(), mine, "checkpoint " + prefix);
  assign_by_name(m.buffers(), mine, "checkpoint " + prefix);
}

}  // namespace

Trainer Trainer::resume(const std::filesystem::path& checkpoint, const PartialDataset& ds_a,
                        const PartialDataset& ds_b) {
  RawCheckpoint raw = read_raw(checkpoint);
  TrainConfig cfg = raw.meta.at("config").get<TrainConfig>();
  // Trunk weights come from the checkpoint, not the original pretrained file.
  cfg.arch.pretrained = false;
  Trainer t(ds_a, ds_b, cfg);
  State& s = *t.s_;
  s.cfg = raw.meta.at("config").get<TrainConfig>();
  restore_model(s.left, raw.tensors, "left.");
  if (s.right) restore_model(*s.right, raw.tensors, "right.");
  s.adam->load_state(raw.tensors, raw.meta.at("adam_steps").get<std::uint64_t>());
  s.sampler.set_state(raw.meta.at("sampler_rng").get<std::string>());
  s.augment.set_state(raw.meta.at("augment_rng").get<std::string>());
  s.step = raw.meta.at("step").get<std::size_t>();
  s.history = raw.meta.at("history").get<std::vector<StepRecord>>();
  s.val_history = raw.meta.at("val_history").get<std::vector<ValRecord>>();
  return t;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw(path);
  CheckpointInfo info;
  info.config = raw.meta.at("config").get<TrainConfig>();
  info.epoch = raw.meta.at("epoch").get<std::size_t>();
  info.step = raw.meta.at("step").get<std::size_t>();
  if (raw.meta.contains("best_side")) info.best_side = raw.meta["best_side"] == "R" ? Side::R : Side::L;
  return info;
}

Model load_checkpoint_model(const std::filesystem::path& path, std::optional<Side> side) {
  RawCheckpoint raw = read_raw(path);
  ArchConfig arch = raw.meta.at("config").get<TrainConfig>().arch;
  arch.pretrained = false;
  Side pick = side ? *side : (raw.meta.contains("best_side") && raw.meta["best_side"] == "R" ? Side::R : Side::L);
  if (pick == Side::R) require(raw.meta.at("has_right").get<bool>(), "checkpoint holds a single model");
  Model m(arch, 0);
  restore_model(m, raw.tensors, pick == Side::L ? "left." : "right.");
  return m;
}

TrainedRun train(const PartialDataset& ds_a, const PartialDataset& ds_b, const TrainConfig& cfg) {
  Trainer t(ds_a, ds_b, cfg);
  return t.finish();
}

}  // namespace ka
