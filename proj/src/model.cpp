#include "coughnet/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <future>
#include <limits>
#include <numeric>

#include "coughnet/error.hpp"
#include "coughnet/eval.hpp"
#include "coughnet/util.hpp"

namespace coughnet {
namespace {

using nn::Mode;
using nn::Tensor;

constexpr char kMagic[4] = {'C', 'G', 'H', 'M'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 4;

[[noreturn]] void invalid_arch(const std::string& why) {
  throw Error(Errc::invalid_arch, "invalid architecture: " + why);
}

[[noreturn]] void corrupt(const std::string& why) {
  throw Error(Errc::corrupt_file, "model file: " + why);
}

// Independent child seeds for the streams one run needs.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::string version_tag_for(std::span<const std::uint8_t> bytes) {
  return "cghm" + std::to_string(kModelFormatVersion) + "-" + sha256_hex(bytes).substr(0, 12);
}

Tensor slice_columns(const Tensor& x, std::size_t begin, std::size_t width) {
  const std::size_t n = x.dim(0);
  const std::size_t cols = x.dim(1);
  Tensor out({n, width});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(x.data() + r * cols + begin, width, out.data() + r * width);
  }
  return out;
}

Tensor concat_columns(const std::array<const Tensor*, 3>& parts) {
  const std::size_t n = parts[0]->dim(0);
  std::size_t width = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 2 || p->dim(0) != n) throw Error(Errc::shape_mismatch, "concat: batch mismatch");
    width += p->dim(1);
  }
  Tensor out({n, width});
  for (std::size_t r = 0; r < n; ++r) {
    double* dst = out.data() + r * width;
    for (const Tensor* p : parts) {
      const std::size_t w = p->dim(1);
      dst = std::copy_n(p->data() + r * w, w, dst);
    }
  }
  return out;
}

void require_batch(const Batch& b) {
  const std::size_t n = b.size();
  if (n == 0) throw Error(Errc::shape_mismatch, "empty batch");
  if (b.mfcc.shape() != std::vector<std::size_t>{n, kMfccCount} ||
      b.image.shape() != std::vector<std::size_t>{n, 1, kImageSize, kImageSize} ||
      b.clinical.shape() != std::vector<std::size_t>{n, kClinicalCount}) {
    throw Error(Errc::shape_mismatch, "batch tensors have inconsistent shapes");
  }
  b.mfcc.require_finite("model input (mfcc)");
  b.image.require_finite("model input (image)");
  b.clinical.require_finite("model input (clinical)");
}

}  // namespace

// ArchConfig -----------------------------------------------------------------

std::vector<std::size_t> ArchConfig::spatial_chain() const {
  std::vector<std::size_t> chain{image_size};
  std::size_t s = image_size;
  for (const auto& conv : convs) {
    if (conv.kernel == 0 || conv.stride == 0) invalid_arch("conv kernel and stride must be positive");
    if (s < conv.kernel) invalid_arch("image shrinks below the conv kernel");
    s = (s - conv.kernel) / conv.stride + 1;
    chain.push_back(s);
    if (s < 2) invalid_arch("image shrinks below the 2x2 pooling window");
    s /= 2;
    chain.push_back(s);
  }
  return chain;
}

std::size_t ArchConfig::image_branch_width() const {
  const std::size_t s = spatial_chain().back();
  return convs.empty() ? s * s : convs.back().out_channels * s * s;
}

std::size_t ArchConfig::concat_width() const {
  return mfcc_hidden.back() + image_branch_width() + clinical_hidden.back();
}

void ArchConfig::validate() const {
  if (mfcc_in != kMfccCount) invalid_arch("MFCC branch input must be 39");
  if (clinical_in != kClinicalCount) invalid_arch("clinical branch input must be 2");
  if (image_size != kImageSize) {
    invalid_arch("image branch input must be " + std::to_string(kImageSize) + "x" +
                 std::to_string(kImageSize) + ", got " + std::to_string(image_size));
  }
  if (mfcc_hidden.empty() || clinical_hidden.empty() || head_hidden.empty() || convs.empty()) {
    invalid_arch("every branch needs at least one layer");
  }
  auto positive = [](const std::vector<std::size_t>& v) {
    return std::all_of(v.begin(), v.end(), [](std::size_t w) { return w > 0; });
  };
  if (!positive(mfcc_hidden) || !positive(clinical_hidden) || !positive(head_hidden)) {
    invalid_arch("layer widths must be positive");
  }
  for (const auto& c : convs) {
    if (c.out_channels == 0) invalid_arch("conv channels must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) invalid_arch("dropout rate must be in [0, 1)");
  if (image_branch_width() == 0) invalid_arch("image branch flattens to nothing");
}

nlohmann::json ArchConfig::to_json() const {
  nlohmann::json conv_json = nlohmann::json::array();
  for (const auto& c : convs) {
    conv_json.push_back({{"out_channels", c.out_channels}, {"kernel", c.kernel}, {"stride", c.stride}});
  }
  return {{"mfcc_in", mfcc_in},           {"mfcc_hidden", mfcc_hidden},
          {"image_size", image_size},     {"convs", conv_json},
          {"clinical_in", clinical_in},   {"clinical_hidden", clinical_hidden},
          {"head_hidden", head_hidden},   {"dropout", dropout}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig a;
  try {
    a.mfcc_in = j.value("mfcc_in", a.mfcc_in);
    a.mfcc_hidden = j.value("mfcc_hidden", a.mfcc_hidden);
    a.image_size = j.value("image_size", a.image_size);
    if (j.contains("convs")) {
      a.convs.clear();
      for (const auto& c : j.at("convs")) {
        a.convs.push_back({c.at("out_channels").get<std::size_t>(), c.at("kernel").get<std::size_t>(),
                           c.at("stride").get<std::size_t>()});
      }
    }
    a.clinical_in = j.value("clinical_in", a.clinical_in);
    a.clinical_hidden = j.value("clinical_hidden", a.clinical_hidden);
    a.head_hidden = j.value("head_hidden", a.head_hidden);
    a.dropout = j.value("dropout", a.dropout);
  } catch (const nlohmann::json::exception& e) {
    invalid_arch(e.what());
  }
  return a;
}

// Batches --------------------------------------------------------------------

Batch make_batch(std::span<const FeatureVector* const> features) {
  const std::size_t n = features.size();
  Batch b{Tensor({n, kMfccCount}), Tensor({n, 1, kImageSize, kImageSize}),
          Tensor({n, kClinicalCount})};
  constexpr std::size_t kPixels = kImageSize * kImageSize;
  for (std::size_t i = 0; i < n; ++i) {
    const FeatureVector& f = *features[i];
    if (f.image.size() != kPixels) throw Error(Errc::shape_mismatch, "feature image must be 64x64");
    std::copy(f.mfcc.begin(), f.mfcc.end(), b.mfcc.data() + i * kMfccCount);
    std::copy(f.image.begin(), f.image.end(), b.image.data() + i * kPixels);
    std::copy(f.clinical.begin(), f.clinical.end(), b.clinical.data() + i * kClinicalCount);
  }
  return b;
}

Batch make_batch(std::span<const FeatureVector> features) {
  std::vector<const FeatureVector*> ptrs;
  ptrs.reserve(features.size());
  for (const auto& f : features) ptrs.push_back(&f);
  return make_batch(ptrs);
}

// EnsembleModel ---------------------------------------------------------------

EnsembleModel EnsembleModel::build(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  EnsembleModel m;
  m.arch_ = arch;
  m.seed_ = seed;
  m.mfcc_mean_ = Tensor({kMfccCount}, 0.0);
  m.mfcc_std_ = Tensor({kMfccCount}, 1.0);
  Rng rng(derive_seed(seed, 0));

  auto add_mlp = [&](nn::Sequential& seq, const std::string& prefix, std::size_t in,
                     const std::vector<std::size_t>& widths, bool dropout) {
    for (std::size_t i = 0; i < widths.size(); ++i) {
      auto& d = seq.add<nn::Dense>(prefix + ".dense" + std::to_string(i), in, widths[i]);
      nn::he_uniform(d.weight().value, in, rng);
      seq.add<nn::Relu>();
      if (dropout && arch.dropout > 0.0) seq.add<nn::Dropout>(arch.dropout);
      in = widths[i];
    }
    return in;
  };

  m.widths_[0] = add_mlp(m.mfcc_branch_, "mfcc", arch.mfcc_in, arch.mfcc_hidden, true);

  std::size_t channels = 1;
  for (std::size_t i = 0; i < arch.convs.size(); ++i) {
    const auto& spec = arch.convs[i];
    const std::string name = "image.conv" + std::to_string(i);
    // Batch norm follows every conv, so a conv bias would be cancelled by the
    // mean subtraction; the convs carry none.
    auto& conv = m.image_branch_.add<nn::Conv2d>(name, channels, spec.out_channels, spec.kernel,
                                                 spec.stride, false);
    nn::he_uniform(conv.kernel().value, conv.fan_in(), rng);
    m.image_branch_.add<nn::AvgPool2>();
    m.image_branch_.add<nn::BatchNorm>("image.bn" + std::to_string(i), spec.out_channels);
    m.image_branch_.add<nn::Relu>();
    channels = spec.out_channels;
  }
  m.image_branch_.add<nn::Flatten>();
  m.widths_[1] = arch.image_branch_width();

  m.widths_[2] = add_mlp(m.clinical_branch_, "clinical", arch.clinical_in, arch.clinical_hidden, true);

  const std::size_t head_in = add_mlp(m.head_, "head", arch.concat_width(), arch.head_hidden, false);
  auto& out = m.head_.add<nn::Dense>("head.output", head_in, 1);
  nn::glorot_uniform(out.weight().value, head_in, 1, rng);
  return m;
}

Tensor EnsembleModel::standardize(const Tensor& mfcc) const {
  Tensor out(mfcc.shape());
  const std::size_t n = mfcc.dim(0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < kMfccCount; ++k) {
      const std::size_t i = r * kMfccCount + k;
      out[i] = (mfcc[i] - mfcc_mean_[k]) / mfcc_std_[k];
    }
  }
  return out;
}

Tensor EnsembleModel::forward(const Batch& batch, Mode mode, Rng& rng) {
  require_batch(batch);
  const Tensor a = mfcc_branch_.forward(standardize(batch.mfcc), mode, rng);
  const Tensor b = image_branch_.forward(batch.image, mode, rng);
  const Tensor c = clinical_branch_.forward(batch.clinical, mode, rng);
  Tensor logits = head_.forward(concat_columns({&a, &b, &c}), mode, rng);
  logits.require_finite("model output");
  return logits;
}

void EnsembleModel::backward(const Tensor& dlogits) {
  const Tensor dconcat = head_.backward(dlogits);
  mfcc_branch_.backward(slice_columns(dconcat, 0, widths_[0]));
  image_branch_.backward(slice_columns(dconcat, widths_[0], widths_[1]));
  clinical_branch_.backward(slice_columns(dconcat, widths_[0] + widths_[1], widths_[2]));
}

Tensor EnsembleModel::infer(const Batch& batch) const {
  require_batch(batch);
  const Tensor a = mfcc_branch_.infer(standardize(batch.mfcc));
  const Tensor b = image_branch_.infer(batch.image);
  const Tensor c = clinical_branch_.infer(batch.clinical);
  Tensor logits = head_.infer(concat_columns({&a, &b, &c}));
  logits.require_finite("model output");
  return logits;
}

std::vector<double> EnsembleModel::predict(const Batch& batch) const {
  const Tensor logits = infer(batch);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = nn::sigmoid(logits[i]);
  return out;
}

std::vector<nn::Param*> EnsembleModel::params() {
  std::vector<nn::Param*> out;
  for (auto* seq : {&mfcc_branch_, &image_branch_, &clinical_branch_, &head_}) {
    for (nn::Param* p : seq->params()) out.push_back(p);
  }
  return out;
}

std::size_t EnsembleModel::parameter_count() {
  std::size_t n = 0;
  for (nn::Param* p : params()) n += p->value.size();
  return n;
}

std::vector<std::pair<std::string, Tensor*>> EnsembleModel::state() {
  std::vector<std::pair<std::string, Tensor*>> out{{"mfcc.norm_mean", &mfcc_mean_},
                                                   {"mfcc.norm_std", &mfcc_std_}};
  for (auto* seq : {&mfcc_branch_, &image_branch_, &clinical_branch_, &head_}) {
    // Interleave per layer so the order follows the network declaration.
    for (std::size_t i = 0; i < seq->size(); ++i) {
      for (nn::Param* p : seq->at(i).params()) out.emplace_back(p->name, &p->value);
      for (auto& b : seq->at(i).buffers()) out.push_back(b);
    }
  }
  return out;
}

std::vector<Tensor> EnsembleModel::snapshot() {
  std::vector<Tensor> out;
  for (auto& [name, t] : state()) out.push_back(*t);
  return out;
}

void EnsembleModel::restore(const std::vector<Tensor>& tensors) {
  auto st = state();
  if (st.size() != tensors.size()) throw Error(Errc::shape_mismatch, "snapshot size mismatch");
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (st[i].second->shape() != tensors[i].shape()) {
      throw Error(Errc::shape_mismatch, "snapshot tensor '" + st[i].first + "' shape mismatch");
    }
    *st[i].second = tensors[i];
  }
}

void EnsembleModel::set_mfcc_normalization(std::span<const double> mean,
                                           std::span<const double> stddev) {
  if (mean.size() != kMfccCount || stddev.size() != kMfccCount) {
    throw Error(Errc::shape_mismatch, "MFCC normalization needs 39 means and 39 deviations");
  }
  for (std::size_t k = 0; k < kMfccCount; ++k) {
    mfcc_mean_[k] = mean[k];
    mfcc_std_[k] = std::max(stddev[k], 1e-8);
  }
}

// Serialization ---------------------------------------------------------------

std::vector<std::uint8_t> serialize_model(EnsembleModel& model) {
  auto st = model.state();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : st) tensors.push_back({{"name", name}, {"shape", t->shape()}});
  const nlohmann::json meta = {{"arch", model.arch().to_json()},
                               {"seed", model.seed()},
                               {"tensors", tensors},
                               {"info", model.metadata()}};
  const std::string meta_text = meta.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u16(out, kModelFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out.insert(out.end(), meta_text.begin(), meta_text.end());
  for (const auto& [name, t] : st) {
    for (double v : t->values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  put_u32(out, crc32_of(out));
  return out;
}

EnsembleModel deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes + 4) corrupt("file too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) corrupt("bad magic");
  const auto version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kModelFormatVersion) {
    throw Error(Errc::version_mismatch, "model format version " + std::to_string(version) +
                                            ", expected " + std::to_string(kModelFormatVersion));
  }
  const std::size_t body = bytes.size() - 4;
  if (crc32_of(bytes.first(body)) != get_u32(bytes, body)) corrupt("checksum mismatch");

  const std::uint32_t meta_len = get_u32(bytes, 6);
  if (meta_len > body - kHeaderBytes) corrupt("metadata length past end of file");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin() + kHeaderBytes,
                                 bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + meta_len));
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("metadata: ") + e.what());
  }

  EnsembleModel model = [&] {
    try {
      return EnsembleModel::build(ArchConfig::from_json(meta.at("arch")),
                                  meta.at("seed").get<std::uint64_t>());
    } catch (const nlohmann::json::exception& e) {
      corrupt(std::string("metadata: ") + e.what());
    }
  }();
  model.metadata() = meta.value("info", nlohmann::json::object());

  auto st = model.state();
  const auto& listed = meta.at("tensors");
  if (listed.size() != st.size()) corrupt("tensor count does not match architecture");
  std::size_t pos = kHeaderBytes + meta_len;
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (listed[i].at("name").get<std::string>() != st[i].first ||
        listed[i].at("shape").get<std::vector<std::size_t>>() != st[i].second->shape()) {
      corrupt("tensor '" + st[i].first + "' does not match architecture");
    }
    Tensor& t = *st[i].second;
    if ((body - pos) / 8 < t.size()) corrupt("truncated tensor data");
    for (double& v : t.values()) {
      std::uint64_t raw = 0;
      for (int b = 7; b >= 0; --b) raw = (raw << 8) | bytes[pos + static_cast<std::size_t>(b)];
      v = std::bit_cast<double>(raw);
      pos += 8;
    }
  }
  if (pos != body) corrupt("trailing bytes after tensor data");
  model.version_tag_ = version_tag_for(bytes);
  return model;
}

void save_model(EnsembleModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  model.version_tag_ = version_tag_for(bytes);
  write_file(path, bytes);
}

EnsembleModel load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file(path));
}

nn::GradCheckResult grad_check(EnsembleModel& model, const Batch& batch,
                               std::span<const double> labels, double h) {
  require_batch(batch);
  Rng rng(0);
  const Mode mode = Mode::train_deterministic;
  auto all = model.params();
  nn::zero_grads(all);
  model.backward(nn::bce_with_logits(model.forward(batch, mode, rng), labels).dlogits);

  const Tensor mfcc_in = model.standardize(batch.mfcc);
  std::array<Tensor, 3> outs{model.mfcc_branch_.forward(mfcc_in, mode, rng),
                             model.image_branch_.forward(batch.image, mode, rng),
                             model.clinical_branch_.forward(batch.clinical, mode, rng)};
  const std::array<std::pair<nn::Sequential*, const Tensor*>, 3> branches{
      {{&model.mfcc_branch_, &mfcc_in},
       {&model.image_branch_, &batch.image},
       {&model.clinical_branch_, &batch.clinical}}};
  auto head_loss = [&](const std::array<const Tensor*, 3>& parts) {
    const Tensor logits = model.head_.forward(concat_columns({parts[0], parts[1], parts[2]}), mode, rng);
    return nn::bce_with_logits(logits, labels).loss;
  };

  nn::GradCheckResult result;
  auto merge = [&](const nn::GradCheckResult& r) {
    result.entries_checked += r.entries_checked;
    if (!(r.max_rel_error <= result.max_rel_error)) {
      result.max_rel_error = r.max_rel_error;
      result.worst_param = r.worst_param;
      result.worst_index = r.worst_index;
    }
  };
  const auto keep_grads = [] {};
  for (std::size_t b = 0; b < branches.size(); ++b) {
    auto params = branches[b].first->params();
    auto loss = [&] {
      const Tensor fresh = branches[b].first->forward(*branches[b].second, mode, rng);
      std::array<const Tensor*, 3> parts{&outs[0], &outs[1], &outs[2]};
      parts[b] = &fresh;
      return head_loss(parts);
    };
    merge(nn::grad_check(params, loss, keep_grads, h));
  }
  auto head_params = model.head_.params();
  merge(nn::grad_check(head_params, [&] { return head_loss({&outs[0], &outs[1], &outs[2]}); },
                       keep_grads, h));
  return result;
}

// Training --------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error(Errc::invalid_argument, "batch size must be >= 2 for batch norm");
  if (max_epochs == 0) throw Error(Errc::invalid_argument, "max_epochs must be positive");
  if (patience >= max_epochs) throw Error(Errc::invalid_argument, "patience must be < max_epochs");
  if (!(lr > 0.0)) throw Error(Errc::invalid_argument, "learning rate must be positive");
  if (seeds.empty()) throw Error(Errc::invalid_argument, "at least one seed is required");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size}, {"max_epochs", max_epochs}, {"patience", patience},
          {"lr", lr},                 {"seeds", seeds},           {"split_ratios", split_ratios}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.lr = j.value("lr", c.lr);
    c.seeds = j.value("seeds", c.seeds);
    c.split_ratios = j.value("split_ratios", c.split_ratios);
    c.workers = j.value("workers", c.workers);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("train config: ") + e.what());
  }
  return c;
}

std::string dataset_hash(std::span<const Example> examples) {
  std::vector<std::uint8_t> buf;
  for (const auto& ex : examples) {
    put_u32(buf, static_cast<std::uint32_t>(ex.id.size()));
    buf.insert(buf.end(), ex.id.begin(), ex.id.end());
    buf.push_back(ex.label == 1.0 ? 1 : 0);
    const auto fb = feature_bytes(ex.features);
    buf.insert(buf.end(), fb.begin(), fb.end());
  }
  return sha256_hex(buf);
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json aucs = nlohmann::json::array();
  for (const auto& a : val_auc) aucs.push_back(a ? nlohmann::json(*a) : nlohmann::json());
  return {{"seed", seed},
          {"status", status},
          {"best_epoch", best_epoch},
          {"epochs_run", epochs_run},
          {"stopped_early", stopped_early},
          {"train_loss", train_loss},
          {"val_loss", val_loss},
          {"val_auc", aucs},
          {"split_sizes", {{"train", split_sizes[0]}, {"validation", split_sizes[1]},
                           {"test", split_sizes[2]}}},
          {"test_auc", test_auc},
          {"test_accuracy", test_accuracy},
          {"test_ids", test_ids},
          {"test_scores", test_scores},
          {"test_labels", test_labels}};
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json run_json = nlohmann::json::array();
  for (const auto& r : runs) run_json.push_back(r.to_json());
  return {{"data_hash", data_hash}, {"config", config.to_json()}, {"arch", arch.to_json()},
          {"runs", run_json}};
}

namespace {

struct RunOutput {
  std::optional<EnsembleModel> model;
  RunReport report;
};

std::vector<double> labels_of(std::span<const Example> examples,
                              const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(examples[i].label);
  return out;
}

bool has_both_classes(std::span<const double> labels) {
  const bool pos = std::find(labels.begin(), labels.end(), 1.0) != labels.end();
  const bool neg = std::find(labels.begin(), labels.end(), 0.0) != labels.end();
  return pos && neg;
}

RunOutput train_one(std::span<const Example> examples, const std::vector<Label>& labels,
                    const TrainConfig& config, const ArchConfig& arch, std::size_t run,
                    const TrainHooks& hooks) {
  const std::uint64_t seed = config.seeds[run];
  RunOutput out;
  RunReport& rep = out.report;
  rep.seed = seed;

  const SplitIndices split = split_indices(labels, SplitSpec{config.split_ratios, seed});
  rep.split_sizes = {split.train.size(), split.validation.size(), split.test.size()};

  auto gather = [&](const std::vector<std::size_t>& idx, AccessPhase phase) {
    std::vector<const FeatureVector*> ptrs;
    ptrs.reserve(idx.size());
    for (std::size_t i : idx) {
      if (hooks.on_access) hooks.on_access(run, phase, i);
      ptrs.push_back(&examples[i].features);
    }
    return make_batch(ptrs);
  };

  EnsembleModel model = EnsembleModel::build(arch, seed);

  // MFCC standardization from the training part only.
  {
    std::vector<double> mean(kMfccCount, 0.0);
    std::vector<double> sd(kMfccCount, 0.0);
    for (std::size_t i : split.train) {
      if (hooks.on_access) hooks.on_access(run, AccessPhase::fit, i);
      for (std::size_t k = 0; k < kMfccCount; ++k) mean[k] += examples[i].features.mfcc[k];
    }
    const double n = static_cast<double>(split.train.size());
    for (double& m : mean) m /= n;
    for (std::size_t i : split.train) {
      for (std::size_t k = 0; k < kMfccCount; ++k) {
        const double d = examples[i].features.mfcc[k] - mean[k];
        sd[k] += d * d;
      }
    }
    for (double& s : sd) s = std::sqrt(s / n);
    model.set_mfcc_normalization(mean, sd);
  }

  const Batch val_batch = gather(split.validation, AccessPhase::validate);
  const std::vector<double> val_labels = labels_of(examples, split.validation);
  const bool val_has_both = has_both_classes(val_labels);

  Rng shuffle_rng(derive_seed(seed, 1));
  Rng dropout_rng(derive_seed(seed, 2));
  nn::Adam adam(nn::Adam::Options{config.lr});
  auto params = model.params();

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_state = model.snapshot();
  std::vector<std::size_t> order = split.train;

  try {
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < order.size();) {
        std::size_t end = std::min(order.size(), start + config.batch_size);
        // A trailing batch of one cannot be batch-normalized; fold it in.
        if (order.size() - end == 1) end = order.size();
        const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
        const Batch batch = gather(idx, AccessPhase::fit);
        const std::vector<double> y = labels_of(examples, idx);
        nn::zero_grads(params);
        const auto loss = nn::bce_with_logits(model.forward(batch, Mode::train, dropout_rng), y);
        if (!std::isfinite(loss.loss)) throw Error(Errc::non_finite_loss, "training loss is not finite");
        model.backward(loss.dlogits);
        adam.step(params);
        loss_sum += loss.loss * static_cast<double>(idx.size());
        start = end;
      }
      rep.train_loss.push_back(loss_sum / static_cast<double>(order.size()));

      const Tensor val_logits = model.infer(val_batch);
      const double val_loss = nn::bce_with_logits(val_logits, val_labels).loss;
      if (!std::isfinite(val_loss)) throw Error(Errc::non_finite_loss, "validation loss is not finite");
      rep.val_loss.push_back(val_loss);
      if (val_has_both) {
        std::vector<double> probs(val_logits.size());
        for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = nn::sigmoid(val_logits[i]);
        rep.val_auc.emplace_back(auc(probs, val_labels));
      } else {
        rep.val_auc.emplace_back(std::nullopt);
      }
      rep.epochs_run = epoch;

      if (val_loss < best_val) {
        best_val = val_loss;
        rep.best_epoch = epoch;
        best_state = model.snapshot();
      } else if (epoch - rep.best_epoch >= config.patience) {
        rep.stopped_early = true;
        break;
      }
    }
  } catch (const Error& e) {
    if (e.code() != Errc::non_finite_loss && e.code() != Errc::non_finite) throw;
    rep.status = "non_finite_loss";
  }
  model.restore(best_state);

  const Batch test_batch = gather(split.test, AccessPhase::test);
  rep.test_labels = labels_of(examples, split.test);
  rep.test_scores = model.predict(test_batch);
  for (std::size_t i : split.test) rep.test_ids.push_back(examples[i].id);
  rep.test_accuracy = accuracy(rep.test_scores, rep.test_labels);
  rep.test_auc = has_both_classes(rep.test_labels) ? auc(rep.test_scores, rep.test_labels)
                                                   : std::numeric_limits<double>::quiet_NaN();
  model.metadata()["best_epoch"] = rep.best_epoch;
  model.metadata()["test_auc"] = rep.test_auc;
  out.model.emplace(std::move(model));
  return out;
}

}  // namespace

TrainResult train(std::span<const Example> examples, const TrainConfig& config,
                  const ArchConfig& arch, const TrainHooks& hooks) {
  config.validate();
  arch.validate();
  std::vector<Label> labels;
  labels.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.label != 0.0 && ex.label != 1.0) throw Error(Errc::invalid_argument, "labels must be 0 or 1");
    labels.push_back(ex.label == 1.0 ? Label::positive : Label::negative);
  }
  if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end()) {
    throw Error(Errc::single_class, "training data holds a single class");
  }

  const std::size_t runs = config.seeds.size();
  std::vector<std::optional<RunOutput>> outputs(runs);
  const std::size_t workers = std::clamp<std::size_t>(config.workers, 1, runs);
  for (std::size_t first = 0; first < runs; first += workers) {
    std::vector<std::future<RunOutput>> pending;
    for (std::size_t r = first; r < std::min(runs, first + workers); ++r) {
      pending.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                   [&, r] { return train_one(examples, labels, config, arch, r, hooks); }));
    }
    for (std::size_t k = 0; k < pending.size(); ++k) outputs[first + k].emplace(pending[k].get());
  }

  TrainResult result;
  result.report.data_hash = dataset_hash(examples);
  result.report.config = config;
  result.report.arch = arch;
  for (auto& o : outputs) {
    o->model->metadata()["data_hash"] = result.report.data_hash;
    o->model->metadata()["train_config"] = config.to_json();
    result.models.push_back(std::move(*o->model));
    result.report.runs.push_back(std::move(o->report));
  }
  return result;
}

double predict(const EnsembleModel& model, const AudioClip& clip, ClinicalFlags flags) {
  const FeatureVector fv = extract_features(clip, flags);
  return model.predict(make_batch(std::span<const FeatureVector>(&fv, 1))).front();
}

}  // namespace coughnet
