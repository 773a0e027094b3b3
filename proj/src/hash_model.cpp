#include "hpl/hash_model.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "hpl/binary_io.hpp"
#include "hpl/errors.hpp"

namespace hpl {

HashModel HashModel::init(const HashModelConfig& cfg) {
  if (cfg.code_length < 4) {
    throw ArgumentError("hash model: code_length must be >= 4");
  }
  if (cfg.input_size() == 0) throw ArgumentError("hash model: empty input");
  for (std::size_t h : cfg.hidden_sizes) {
    if (h == 0) throw ArgumentError("hash model: zero hidden width");
  }
  HashModel m;
  m.config = cfg;
  Rng rng(cfg.seed);
  std::vector<std::size_t> sizes;
  sizes.push_back(cfg.input_size());
  for (std::size_t h : cfg.hidden_sizes) sizes.push_back(h);
  sizes.push_back(cfg.code_length);
  for (std::size_t li = 0; li + 1 < sizes.size(); ++li) {
    const std::size_t in = sizes[li];
    const std::size_t out = sizes[li + 1];
    AffineLayer layer;
    layer.weights = Tensor({out, in});
    layer.bias = Tensor({out});
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& w : layer.weights.data) w = rng.uniform(-limit, limit);
    m.net.layers.push_back(std::move(layer));
  }
  return m;
}

ForwardTape HashModel::forward(const Tensor& image) const {
  if (image.size() != config.input_size()) {
    throw ShapeError("hash model: image size " + std::to_string(image.size()) +
                     " != expected " + std::to_string(config.input_size()));
  }
  return stack_forward(net, image);
}

Tensor HashModel::relaxed_forward(const Tensor& image) const {
  return forward(image).relaxed();
}

Tensor HashModel::logits(const Tensor& image) const {
  return forward(image).logits();
}

HashCode HashModel::hash_forward(const Tensor& image) const {
  return sign_code(logits(image));
}

bool HashModel::same_parameters(const HashModel& o) const {
  if (net.layers.size() != o.net.layers.size()) return false;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].weights.data != o.net.layers[i].weights.data) return false;
    if (net.layers[i].bias.data != o.net.layers[i].bias.data) return false;
  }
  return true;
}

PairwiseLossConfig PairwiseLossConfig::defaults_for(std::size_t code_length) {
  PairwiseLossConfig cfg;
  cfg.margin = static_cast<double>(code_length) / 2.0;
  return cfg;
}

BatchLoss pairwise_batch_loss(const std::vector<Tensor>& codes,
                              const std::vector<const LabelVector*>& labels,
                              const PairwiseLossConfig& cfg) {
  const std::size_t n = codes.size();
  if (n < 2) throw ArgumentError("pairwise_batch_loss: batch must be >= 2");
  if (labels.size() != n) {
    throw ShapeError("pairwise_batch_loss: labels/codes count mismatch");
  }
  const std::size_t k = codes.front().size();
  for (const auto& c : codes) {
    if (c.size() != k) throw ShapeError("pairwise_batch_loss: code length mismatch");
  }
  BatchLoss out;
  out.code_grads.reserve(n);
  for (const auto& c : codes) out.code_grads.push_back(Tensor(c.shape));

  const double pair_count = static_cast<double>(n * (n - 1) / 2);
  const double inv_pairs = 1.0 / pair_count;
  double contrastive = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const int sim = pairwise_similarity(*labels[i], *labels[j]);
      const double d = (static_cast<double>(k) - dot(codes[i], codes[j])) / 2.0;
      if (sim == 1) {
        contrastive += d;
        // d(d)/du_i = -u_j / 2
        for (std::size_t t = 0; t < k; ++t) {
          out.code_grads[i][t] -= 0.5 * inv_pairs * codes[j][t];
          out.code_grads[j][t] -= 0.5 * inv_pairs * codes[i][t];
        }
      } else {
        const double gap = cfg.margin - d;
        if (gap > 0.0) {
          contrastive += gap;
          for (std::size_t t = 0; t < k; ++t) {
            out.code_grads[i][t] += 0.5 * inv_pairs * codes[j][t];
            out.code_grads[j][t] += 0.5 * inv_pairs * codes[i][t];
          }
        }
      }
    }
  }
  contrastive *= inv_pairs;

  double quant = 0.0;
  if (cfg.quantization_weight > 0.0) {
    const double w = cfg.quantization_weight /
                     (static_cast<double>(n) * static_cast<double>(k));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < k; ++t) {
        const double dev = std::abs(codes[i][t]) - 1.0;
        quant += std::abs(dev);
        // d|{|u|-1}|/du = sign(u) * sign(|u|-1); zero at u = 0
        const double su = codes[i][t] > 0.0 ? 1.0 : (codes[i][t] < 0.0 ? -1.0 : 0.0);
        const double sd = dev > 0.0 ? 1.0 : (dev < 0.0 ? -1.0 : 0.0);
        out.code_grads[i][t] += w * su * sd;
      }
    }
    quant *= w;
  }
  out.value = contrastive + quant;
  return out;
}

BatchLoss pairwise_batch_loss(const std::vector<Tensor>& codes,
                              const std::vector<LabelVector>& labels,
                              const PairwiseLossConfig& cfg) {
  std::vector<const LabelVector*> ptrs;
  ptrs.reserve(labels.size());
  for (const auto& l : labels) ptrs.push_back(&l);
  return pairwise_batch_loss(codes, ptrs, cfg);
}

TrainResult train(const HashModel& initial, const Dataset& train_set,
                  const SgdSchedule& schedule, const PairwiseLossConfig& cfg,
                  const PerSampleGradHook& hook) {
  if (train_set.samples.empty()) throw ArgumentError("train: empty training set");
  validate_schedule(schedule);

  TrainResult result;
  result.model = initial;
  HashModel& model = result.model;
  GradStore velocity = GradStore::zeros_like(model.net.layers);
  Rng rng(schedule.seed);
  const std::size_t n = train_set.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::vector<ForwardTape> tapes;
  std::vector<Tensor> codes;
  std::vector<const LabelVector*> labels;

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += schedule.batch_size) {
      const std::size_t bsz = std::min(schedule.batch_size, n - start);
      if (bsz < 2) continue;  // no pairs to form
      tapes.clear();
      codes.clear();
      labels.clear();
      for (std::size_t b = 0; b < bsz; ++b) {
        const Sample& s = train_set.samples[order[start + b]];
        tapes.push_back(model.forward(s.image));
        codes.push_back(tapes.back().relaxed());
        labels.push_back(&s.label);
      }
      BatchLoss bl = pairwise_batch_loss(codes, labels, cfg);

      std::vector<GradStore> per_sample;
      per_sample.reserve(bsz);
      for (std::size_t b = 0; b < bsz; ++b) {
        Tensor upstream = bl.code_grads[b];
        for (double& v : upstream.data) v *= static_cast<double>(bsz);
        per_sample.push_back(
            stack_backward(model.net, tapes[b], upstream).params);
      }
      GradStore applied;
      if (hook) {
        applied = hook(std::move(per_sample), bsz);
      } else {
        applied = GradStore::zeros_like(model.net.layers);
        for (const auto& g : per_sample) applied.accumulate(g);
        applied.scale(1.0 / static_cast<double>(bsz));
      }
      sgd_step(model.net.layers, applied, schedule, velocity);
      loss_sum += bl.value;
      ++batches;
    }
    result.epoch_losses.push_back(batches ? loss_sum / batches : 0.0);
  }
  for (const auto& l : model.net.layers) {
    require_finite(l.weights, "train: weights");
    require_finite(l.bias, "train: bias");
  }
  return result;
}

namespace {
constexpr char kCheckpointMagic[4] = {'H', 'P', 'L', '1'};
}

void save_checkpoint(const HashModel& model, const std::filesystem::path& path) {
  for (const auto& l : model.net.layers) {
    require_finite(l.weights, "checkpoint: weights");
    require_finite(l.bias, "checkpoint: bias");
  }
  ByteWriter w(path);
  w.magic(kCheckpointMagic);
  const auto& c = model.config;
  w.u64(c.height);
  w.u64(c.width);
  w.u64(c.channels);
  w.u64(c.hidden_sizes.size());
  for (std::size_t h : c.hidden_sizes) w.u64(h);
  w.u64(c.code_length);
  w.u64(c.seed);
  for (const auto& l : model.net.layers) {
    w.f64_array(l.weights.data.data(), l.weights.size());
    w.f64_array(l.bias.data.data(), l.bias.size());
  }
  w.close();
}

HashModel load_checkpoint(const std::filesystem::path& path) {
  ByteReader r(path);
  r.expect_magic(kCheckpointMagic);
  HashModelConfig cfg;
  cfg.height = r.u64();
  cfg.width = r.u64();
  cfg.channels = r.u64();
  const std::uint64_t hidden_count = r.u64();
  if (hidden_count > 64) throw FormatError("checkpoint: implausible hidden count");
  cfg.hidden_sizes.resize(hidden_count);
  for (auto& h : cfg.hidden_sizes) h = r.u64();
  cfg.code_length = r.u64();
  cfg.seed = r.u64();

  HashModel m;
  m.config = cfg;
  std::vector<std::size_t> sizes;
  sizes.push_back(cfg.input_size());
  for (std::size_t h : cfg.hidden_sizes) sizes.push_back(h);
  sizes.push_back(cfg.code_length);
  for (std::size_t li = 0; li + 1 < sizes.size(); ++li) {
    AffineLayer layer;
    layer.weights = Tensor({sizes[li + 1], sizes[li]});
    layer.bias = Tensor({sizes[li + 1]});
    r.f64_array(layer.weights.data.data(), layer.weights.size());
    r.f64_array(layer.bias.data.data(), layer.bias.size());
    m.net.layers.push_back(std::move(layer));
  }
  r.expect_eof();
  return m;
}

HashModel load_checkpoint(const std::filesystem::path& path,
                          const HashModelConfig& expected) {
  HashModel m = load_checkpoint(path);
  if (!m.config.same_architecture(expected)) {
    throw FormatError("checkpoint " + path.string() +
                      ": config mismatch (stored K=" +
                      std::to_string(m.config.code_length) + ", expected K=" +
                      std::to_string(expected.code_length) + ")");
  }
  return m;
}

}  // namespace hpl
