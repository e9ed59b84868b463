#include "ka/model.hpp"

#include <cmath>

#include "ka/error.hpp"
#include "ka/ops.hpp"
#include "ka/rng.hpp"

namespace ka {

const char* to_string(TrunkKind kind) { return kind == TrunkKind::resnet18 ? "resnet18" : "tiny_conv"; }

TrunkKind parse_trunk(const std::string& name) {
  if (name == "resnet18") return TrunkKind::resnet18;
  if (name == "tiny_conv") return TrunkKind::tiny_conv;
  throw Error("unknown trunk '" + name + "'");
}

void ArchConfig::validate() const {
  require(feature_dim > 0, "ArchConfig: feature_dim must be positive");
  require(reid_enabled || par_enabled, "ArchConfig: at least one task head must be enabled");
  if (reid_enabled) require(num_ids >= 2, "ArchConfig: num_ids must be >= 2 when the reID head is enabled");
  if (par_enabled) require(num_attributes >= 1, "ArchConfig: num_attributes must be >= 1 when the PAR head is enabled");
  require(in_channels >= 1, "ArchConfig: in_channels must be positive");
  require(trunk_width >= 1 && head_channels >= 1 && head_hidden >= 1, "ArchConfig: layer widths must be positive");
  if (trunk == TrunkKind::tiny_conv) {
    require(input_size.height >= 8 && input_size.width >= 8, "ArchConfig: tiny_conv needs inputs of at least 8x8");
  } else {
    require(input_size.height >= 32 && input_size.width >= 32, "ArchConfig: resnet18 needs inputs of at least 32x32");
  }
  if (pretrained) require(!pretrained_path.empty(), "ArchConfig: pretrained requested without a weights path");
}

std::size_t TaskOutputs::rows() const {
  for (const Tensor* t : {&reid_features, &reid_logits, &par_features, &par_logits})
    if (t->defined()) return t->dim(0);
  return 0;
}

BatchLabels BatchLabels::from(const MixedBatch& batch) {
  BatchLabels l;
  l.n_a = batch.a_samples.size();
  l.n_b = batch.b_samples.size();
  for (const auto& s : batch.a_samples) {
    require(s.dataset_id == DatasetId::A && s.person_id.has_value(), "batch: A sub-batch sample without person_id");
    l.person_ids.push_back(*s.person_id);
  }
  for (const auto& s : batch.b_samples) {
    require(s.dataset_id == DatasetId::B && s.attributes.has_value(), "batch: B sub-batch sample without attributes");
    if (l.num_attributes == 0) l.num_attributes = s.attributes->size();
    require(s.attributes->size() == l.num_attributes, "batch: inconsistent attribute length");
    for (auto v : *s.attributes) l.attributes.push_back(static_cast<double>(v));
  }
  return l;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace {

struct Registry {
  std::vector<NamedTensor>& params;
  std::vector<NamedTensor>& buffers;
  Rng& rng;

  Tensor normal(const std::string& name, Shape shape, double stddev) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.normal(0.0, stddev);
    Tensor t = Tensor::from(std::move(shape), std::move(v), true);
    params.push_back({name, t});
    return t;
  }
  Tensor constant(const std::string& name, Shape shape, double value) {
    Tensor t = Tensor::full(std::move(shape), value, true);
    params.push_back({name, t});
    return t;
  }
  Tensor buffer(const std::string& name, Shape shape, double value) {
    Tensor t = Tensor::full(std::move(shape), value, false);
    buffers.push_back({name, t});
    return t;
  }
};

struct Conv {
  Tensor weight, bias;
  std::size_t stride = 1, pad = 0;

  Conv() = default;
  Conv(Registry& reg, const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
       std::size_t pad, bool with_bias)
      : stride(stride), pad(pad) {
    weight = reg.normal(name + ".weight", {out, in, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k)));
    if (with_bias) bias = reg.constant(name + ".bias", {out}, 0.0);
  }
  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

struct BatchNorm {
  Tensor gamma, beta, running_mean, running_var;

  BatchNorm() = default;
  BatchNorm(Registry& reg, const std::string& name, std::size_t channels) {
    gamma = reg.constant(name + ".gamma", {channels}, 1.0);
    beta = reg.constant(name + ".beta", {channels}, 0.0);
    running_mean = reg.buffer(name + ".running_mean", {channels}, 0.0);
    running_var = reg.buffer(name + ".running_var", {channels}, 1.0);
  }
  Tensor operator()(const Tensor& x, bool training) const {
    Tensor rm = running_mean, rv = running_var;
    return ops::batch_norm2d(x, gamma, beta, rm, rv, training);
  }
};

struct Linear {
  Tensor weight, bias;

  Linear() = default;
  Linear(Registry& reg, const std::string& name, std::size_t in, std::size_t out, double stddev) {
    weight = reg.normal(name + ".weight", {out, in}, stddev);
    bias = reg.constant(name + ".bias", {out}, 0.0);
  }
  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

struct BasicBlock {
  Conv conv1;
  BatchNorm bn1;
  Conv conv2;
  BatchNorm bn2;
  Conv down;
  BatchNorm down_bn;
  bool has_down = false;

  BasicBlock(Registry& reg, const std::string& name, std::size_t in, std::size_t out, std::size_t stride)
      : conv1(reg, name + ".conv1", in, out, 3, stride, 1, false),
        bn1(reg, name + ".bn1", out),
        conv2(reg, name + ".conv2", out, out, 3, 1, 1, false),
        bn2(reg, name + ".bn2", out) {
    if (stride != 1 || in != out) {
      has_down = true;
      down = Conv(reg, name + ".down", in, out, 1, stride, 0, false);
      down_bn = BatchNorm(reg, name + ".down_bn", out);
    }
  }

  Tensor operator()(const Tensor& x, bool training) const {
    Tensor y = ops::relu(bn1(conv1(x), training));
    y = bn2(conv2(y), training);
    Tensor shortcut = has_down ? down_bn(down(x), training) : x;
    return ops::relu(ops::add(y, shortcut));
  }
};

struct Head {
  Conv proj;
  Linear fc1, fc2, classifier;
  bool global_pool = false;
  bool normalize = true;

  Head(Registry& reg, const std::string& name, std::size_t in_channels, std::size_t flat_spatial, bool global_pool,
       const ArchConfig& cfg, std::size_t classes)
      : proj(reg, name + ".proj", in_channels, cfg.head_channels, 1, 1, 0, true), global_pool(global_pool), normalize(cfg.normalize_features) {
    const std::size_t flat = cfg.head_channels * (global_pool ? 1 : flat_spatial);
    fc1 = Linear(reg, name + ".fc1", flat, cfg.head_hidden, std::sqrt(2.0 / static_cast<double>(flat)));
    fc2 = Linear(reg, name + ".fc2", cfg.head_hidden, cfg.feature_dim,
                 std::sqrt(1.0 / static_cast<double>(cfg.head_hidden)));
    classifier = Linear(reg, name + ".classifier", cfg.feature_dim, classes,
                        std::sqrt(1.0 / static_cast<double>(cfg.feature_dim)));
  }

  // Returns (feature, logits). The classifier reads the raw feature.
  std::pair<Tensor, Tensor> operator()(const Tensor& trunk_out) const {
    Tensor h = ops::relu(proj(trunk_out));
    h = global_pool ? ops::global_avg_pool(h) : ops::reshape(h, {h.dim(0), h.numel() / h.dim(0)});
    Tensor feat = fc2(ops::relu(fc1(h)));
    Tensor logits = classifier(feat);
    return {normalize ? ops::l2_normalize_rows(feat) : feat, logits};
  }
};

}  // namespace

struct Model::Impl {
  TrunkKind kind;
  // tiny_conv
  std::vector<Conv> tiny;
  // resnet18
  Conv stem;
  BatchNorm stem_bn;
  std::vector<BasicBlock> blocks;
  std::optional<Head> reid, par;
  std::size_t num_ids = 0;
  bool dataset_head = false;

  Tensor trunk(const Tensor& x, bool training) const {
    if (kind == TrunkKind::tiny_conv) {
      Tensor y = x;
      for (const auto& c : tiny) y = ops::max_pool2d(ops::relu(c(y)), 2, 2, 0);
      return y;
    }
    Tensor y = ops::relu(stem_bn(stem(x), training));
    y = ops::max_pool2d(y, 3, 2, 1);
    for (const auto& b : blocks) y = b(y, training);
    return y;
  }
};

Model::Model(const ArchConfig& cfg, std::uint64_t seed) : cfg_(cfg), impl_(std::make_unique<Impl>()) {
  cfg_.validate();
  Rng rng(seed);
  Registry reg{params_, buffers_, rng};
  Impl& m = *impl_;
  m.kind = cfg_.trunk;
  m.num_ids = cfg_.num_ids;
  m.dataset_head = cfg_.dataset_head && cfg_.reid_enabled;

  std::size_t trunk_channels = 0, spatial = 1;
  bool global_pool = false;
  if (cfg_.trunk == TrunkKind::tiny_conv) {
    const std::size_t w = cfg_.trunk_width;
    const std::size_t widths[3] = {w, 2 * w, 2 * w};
    std::size_t in = cfg_.in_channels, h = cfg_.input_size.height, wd = cfg_.input_size.width;
    for (int i = 0; i < 3; ++i) {
      m.tiny.emplace_back(reg, "trunk.conv" + std::to_string(i + 1), in, widths[i], 3, 1, 1, true);
      in = widths[i];
      h /= 2;
      wd /= 2;
    }
    trunk_channels = in;
    spatial = h * wd;
  } else {
    m.stem = Conv(reg, "trunk.conv1", cfg_.in_channels, 64, 7, 2, 3, false);
    m.stem_bn = BatchNorm(reg, "trunk.bn1", 64);
    std::size_t in = 64;
    const std::size_t widths[4] = {64, 128, 256, 512};
    for (std::size_t layer = 0; layer < 4; ++layer) {
      for (std::size_t b = 0; b < 2; ++b) {
        const std::size_t stride = (layer > 0 && b == 0) ? 2 : 1;
        m.blocks.emplace_back(reg, "trunk.layer" + std::to_string(layer + 1) + "." + std::to_string(b), in,
                              widths[layer], stride);
        in = widths[layer];
      }
    }
    trunk_channels = in;
    global_pool = true;
  }

  if (cfg_.reid_enabled)
    m.reid.emplace(reg, "reid", trunk_channels, spatial, global_pool, cfg_, cfg_.num_ids + (m.dataset_head ? 1 : 0));
  if (cfg_.par_enabled) m.par.emplace(reg, "par", trunk_channels, spatial, global_pool, cfg_, cfg_.num_attributes);

  if (cfg_.pretrained) {
    const auto weights = load_weights(cfg_.pretrained_path);
    auto trunk = trunk_state();
    assign_by_name(trunk, weights, "pretrained trunk");
  }
}

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

Model Model::clone() const {
  ArchConfig fresh = cfg_;
  fresh.pretrained = false;
  Model copy(fresh, 0);
  copy.cfg_ = cfg_;
  copy.copy_state_from(*this);
  return copy;
}

std::vector<NamedTensor> Model::trunk_state() const {
  std::vector<NamedTensor> out;
  for (const auto* group : {&params_, &buffers_})
    for (const auto& nt : *group)
      if (nt.name.rfind("trunk.", 0) == 0) out.push_back(nt);
  return out;
}

void Model::copy_state_from(const Model& other) {
  assign_by_name(params_, other.params_, "copy parameters");
  assign_by_name(buffers_, other.buffers_, "copy buffers");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

TaskOutputs Model::forward(const Tensor& images, bool training) const {
  require(images.rank() == 4, "forward: images must be NCHW");
  require(images.dim(1) == cfg_.in_channels && images.dim(2) == cfg_.input_size.height &&
              images.dim(3) == cfg_.input_size.width,
          "forward: image shape " + to_string(images.shape()) + " does not match the configured input " +
              std::to_string(cfg_.in_channels) + "x" + std::to_string(cfg_.input_size.height) + "x" +
              std::to_string(cfg_.input_size.width));
  require(images.dim(0) >= 1, "forward: empty batch");
  const Tensor t = impl_->trunk(images, training);
  TaskOutputs out;
  if (impl_->reid) {
    auto [feat, logits] = (*impl_->reid)(t);
    out.reid_features = feat;
    if (impl_->dataset_head) {
      out.reid_logits = ops::slice_cols(logits, 0, impl_->num_ids);
      out.dataset_logit = ops::slice_cols(logits, impl_->num_ids, impl_->num_ids + 1);
    } else {
      out.reid_logits = logits;
    }
  }
  if (impl_->par) {
    auto [feat, logits] = (*impl_->par)(t);
    out.par_features = feat;
    out.par_logits = logits;
  }
  return out;
}

Model build_model(const ArchConfig& cfg, std::uint64_t seed) { return Model(cfg, seed); }

std::pair<Model, Model> init_dual(const ArchConfig& cfg, std::uint64_t seed_left, std::uint64_t seed_right) {
  require(seed_left != seed_right, "init_dual: equal seeds give identical models (no perturbation)");
  return {Model(cfg, seed_left), Model(cfg, seed_right)};
}

Tensor images_to_tensor(const std::vector<const Image*>& images) {
  require(!images.empty(), "images_to_tensor: empty batch");
  const Image& first = *images.front();
  const std::size_t c = first.channels, h = first.height, w = first.width;
  std::vector<double> v(images.size() * c * h * w);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    require(img.channels == c && img.height == h && img.width == w, "images_to_tensor: mixed image sizes");
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) v[((n * c + ch) * h + y) * w + x] = img.at(y, x, ch);
  }
  return Tensor::from({images.size(), c, h, w}, std::move(v));
}

Tensor batch_images(const MixedBatch& batch) {
  std::vector<const Image*> imgs;
  imgs.reserve(batch.size());
  for (const auto& s : batch.a_samples) imgs.push_back(&s.image);
  for (const auto& s : batch.b_samples) imgs.push_back(&s.image);
  return images_to_tensor(imgs);
}

DualOutputs forward_dual(const Model& left, const Model& right, const MixedBatch& batch, bool training) {
  require(batch.size() > 0, "forward_dual: empty batch");
  const Tensor x = batch_images(batch);
  DualOutputs d;
  d.labels = BatchLabels::from(batch);
  d.left = left.forward(x, training);
  d.right = right.forward(x, training);
  return d;
}

DualOutputs forward_single(const Model& model, const MixedBatch& batch, bool training) {
  require(batch.size() > 0, "forward_single: empty batch");
  DualOutputs d;
  d.labels = BatchLabels::from(batch);
  d.left = model.forward(batch_images(batch), training);
  return d;
}

}  // namespace ka
