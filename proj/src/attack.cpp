#include "hpl/attack.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hpl/binary_io.hpp"
#include "hpl/errors.hpp"

namespace hpl {

const char* corner_name(Corner c) {
  switch (c) {
    case Corner::BottomRight: return "bottom_right";
    case Corner::BottomLeft: return "bottom_left";
    case Corner::TopRight: return "top_right";
    case Corner::TopLeft: return "top_left";
  }
  return "bottom_right";
}

Corner corner_from_name(const std::string& name) {
  if (name == "bottom_right") return Corner::BottomRight;
  if (name == "bottom_left") return Corner::BottomLeft;
  if (name == "top_right") return Corner::TopRight;
  if (name == "top_left") return Corner::TopLeft;
  throw ArgumentError("unknown trigger corner: " + name);
}

TriggerSpec TriggerSpec::make(std::size_t height, std::size_t width,
                              std::size_t channels, std::size_t size,
                              Corner location, double blend, double fill) {
  if (size == 0 || size > height || size > width) {
    throw ArgumentError("trigger: size must fit the image");
  }
  if (!(blend > 0.0 && blend <= 1.0)) {
    throw ArgumentError("trigger: blend must lie in (0, 1]");
  }
  TriggerSpec t;
  t.size = size;
  t.location = location;
  t.blend = blend;
  t.pattern = Tensor({height, width, channels});
  t.mask = Tensor({height, width, channels});
  std::fill(t.pattern.data.begin(), t.pattern.data.end(), fill);
  const std::size_t row0 =
      (location == Corner::BottomRight || location == Corner::BottomLeft)
          ? height - size
          : 0;
  const std::size_t col0 =
      (location == Corner::BottomRight || location == Corner::TopRight)
          ? width - size
          : 0;
  for (std::size_t i = row0; i < row0 + size; ++i) {
    for (std::size_t j = col0; j < col0 + size; ++j) {
      for (std::size_t c = 0; c < channels; ++c) {
        t.mask[(i * width + j) * channels + c] = 1.0;
      }
    }
  }
  return t;
}

Tensor inject(const Tensor& image, const TriggerSpec& trigger) {
  require_same_shape(image, trigger.pattern, "inject");
  require_same_shape(image, trigger.mask, "inject");
  Tensor out = image;
  const double beta = trigger.blend;
  for (std::size_t e = 0; e < out.size(); ++e) {
    if (trigger.mask[e] != 0.0) {
      out[e] = (1.0 - beta) * image[e] + beta * trigger.pattern[e];
    }
  }
  return out;
}

namespace {

void check_models(const std::vector<const HashModel*>& models) {
  if (models.empty()) throw ArgumentError("attack: empty model list");
  const auto& first = models.front()->config;
  for (const auto* m : models) {
    if (m->config.code_length != first.code_length ||
        m->config.input_size() != first.input_size()) {
      throw ShapeError("attack: models disagree on code length or input dims");
    }
  }
}

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

TriggerSpec generate_trigger(const std::vector<const HashModel*>& models,
                             const Dataset& train_set,
                             const LabelVector& target_label,
                             const TriggerOptConfig& cfg,
                             const TriggerSpec& initial) {
  check_models(models);
  if (train_set.samples.empty()) throw ArgumentError("generate_trigger: empty train set");
  if (cfg.batch_size == 0) throw ArgumentError("generate_trigger: batch_size must be >= 1");

  // Anchor code per model from the target-class training images.
  std::vector<Tensor> anchors;
  anchors.reserve(models.size());
  for (const auto* m : models) {
    std::vector<HashCode> codes;
    for (const auto& s : train_set.samples) {
      if (pairwise_similarity(s.label, target_label) == 1) {
        codes.push_back(m->hash_forward(s.image));
      }
    }
    if (codes.empty()) {
      throw ArgumentError("generate_trigger: target class absent from train set");
    }
    anchors.push_back(code_as_tensor(anchor_code(codes).code));
  }

  TriggerSpec trigger = initial;
  Rng rng(cfg.seed);
  const std::size_t n = train_set.samples.size();
  const double model_norm = 1.0 / static_cast<double>(models.size());
  Tensor grad(trigger.pattern.shape);

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Sample& s = train_set.samples[rng.below(n)];
      const Tensor patched = inject(s.image, trigger);
      for (std::size_t mi = 0; mi < models.size(); ++mi) {
        ForwardTape tape = models[mi]->forward(patched);
        // d/du of (K - u.h_a)/2 is -h_a/2
        Tensor upstream({anchors[mi].size()});
        for (std::size_t t = 0; t < upstream.size(); ++t) {
          upstream[t] = -0.5 * anchors[mi][t] * model_norm;
        }
        const Tensor input_grad =
            stack_backward(models[mi]->net, tape, upstream).input;
        // dx_hat/dp = beta inside the mask
        for (std::size_t e = 0; e < grad.size(); ++e) {
          if (trigger.mask[e] != 0.0) {
            grad[e] += trigger.blend * input_grad[e];
          }
        }
      }
    }
    const double step =
        cfg.normalize_by_batch
            ? cfg.step_size / static_cast<double>(cfg.batch_size)
            : cfg.step_size;
    for (std::size_t e = 0; e < grad.size(); ++e) {
      if (trigger.mask[e] != 0.0) {
        trigger.pattern[e] =
            std::min(1.0, std::max(0.0, trigger.pattern[e] - step * grad[e]));
      }
    }
  }
  require_finite(trigger.pattern, "generate_trigger: pattern");
  return trigger;
}

void validate_budget(const PerturbationBudget& b) {
  if (b.epsilon < 0.0 || b.epsilon >= 0.5) {
    throw ArgumentError("budget: epsilon must lie in [0, 0.5)");
  }
  if (b.step_size < 0.0 || (b.epsilon > 0.0 && b.step_size > b.epsilon)) {
    throw ArgumentError("budget: step size must lie in [0, epsilon]");
  }
  if (b.batch_size == 0) throw ArgumentError("budget: batch_size must be >= 1");
}

namespace {

// One sign step of PGD on eta, ascending the loss whose code-gradient is
// `upstream`, evaluated at clamp01(x + eta).
void pgd_sign_step(const HashModel& model, const Tensor& image, Tensor& eta,
                   const Tensor& upstream, double step, double eps) {
  Tensor evaluated = image;
  for (std::size_t e = 0; e < evaluated.size(); ++e) {
    evaluated[e] = std::min(1.0, std::max(0.0, evaluated[e] + eta[e]));
  }
  ForwardTape tape = stack_forward(model.net, evaluated);
  const Tensor g = stack_backward(model.net, tape, upstream).input;
  for (std::size_t e = 0; e < eta.size(); ++e) {
    eta[e] = std::min(eps, std::max(-eps, eta[e] + step * sgn(g[e])));
  }
}

}  // namespace

Tensor adversarial_perturbation(const HashModel& model, const Tensor& image,
                                const PerturbationBudget& budget) {
  validate_budget(budget);
  if (image.size() != model.config.input_size()) {
    throw ShapeError("adversarial_perturbation: image size mismatch");
  }
  Tensor eta(image.shape);
  if (budget.epsilon == 0.0) return eta;
  const Tensor origin = code_as_tensor(model.hash_forward(image));
  Tensor upstream({origin.size()});
  for (std::size_t t = 0; t < origin.size(); ++t) upstream[t] = -0.5 * origin[t];
  for (std::size_t s = 0; s < budget.epochs; ++s) {
    pgd_sign_step(model, image, eta, upstream, budget.step_size, budget.epsilon);
  }
  require_finite(eta, "adversarial_perturbation: eta");
  return eta;
}

Tensor targeted_perturbation(const HashModel& model, const Tensor& image,
                             const AnchorCode& anchor,
                             const PerturbationBudget& budget) {
  validate_budget(budget);
  if (anchor.code.length() != model.config.code_length) {
    throw ShapeError("targeted_perturbation: anchor length mismatch");
  }
  if (image.size() != model.config.input_size()) {
    throw ShapeError("targeted_perturbation: image size mismatch");
  }
  Tensor eta(image.shape);
  if (budget.epsilon == 0.0) return eta;
  const Tensor target = code_as_tensor(anchor.code);
  // Descent on d(F'(x+eta), h_a) == ascent on its negation.
  Tensor upstream({target.size()});
  for (std::size_t t = 0; t < target.size(); ++t) upstream[t] = 0.5 * target[t];
  for (std::size_t s = 0; s < budget.epochs; ++s) {
    pgd_sign_step(model, image, eta, upstream, budget.step_size, budget.epsilon);
  }
  require_finite(eta, "targeted_perturbation: eta");
  return eta;
}

ConfusingLoss confusing_loss(const std::vector<Tensor>& codes) {
  const std::size_t m = codes.size();
  if (m < 2) throw ArgumentError("confusing_loss: batch must be >= 2");
  const std::size_t k = codes.front().size();
  for (const auto& c : codes) {
    if (c.size() != k) throw ShapeError("confusing_loss: code length mismatch");
  }
  ConfusingLoss out;
  out.code_grads.reserve(m);
  for (const auto& c : codes) out.code_grads.push_back(Tensor(c.shape));
  const double norm = 1.0 / (static_cast<double>(m) * static_cast<double>(m - 1));
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      // ordered pairs (i,j) and (j,i) both contribute
      total += 2.0 * (static_cast<double>(k) - dot(codes[i], codes[j])) / 2.0;
      for (std::size_t t = 0; t < k; ++t) {
        out.code_grads[i][t] -= norm * codes[j][t];
        out.code_grads[j][t] -= norm * codes[i][t];
      }
    }
  }
  out.value = total * norm;
  return out;
}

PerturbationSet confusing_perturbations(
    const std::vector<const HashModel*>& models,
    const std::vector<std::pair<std::uint64_t, const Tensor*>>& targets,
    double lambda, const PerturbationBudget& budget) {
  check_models(models);
  validate_budget(budget);
  if (targets.empty()) throw ArgumentError("confusing_perturbations: empty target list");
  if (lambda < 0.0 || lambda > 1.0) {
    throw ArgumentError("confusing_perturbations: lambda must lie in [0, 1]");
  }

  const std::size_t n = targets.size();
  PerturbationSet set;
  set.epsilon = budget.epsilon;
  set.ids.reserve(n);
  set.etas.reserve(n);
  for (const auto& [id, img] : targets) {
    set.ids.push_back(id);
    set.etas.push_back(Tensor(img->shape));
  }
  if (budget.epsilon == 0.0) return set;

  // Original binary codes per model, fixed throughout (Eq. 2 reference point).
  std::vector<std::vector<Tensor>> origins(models.size());
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    origins[mi].reserve(n);
    for (const auto& [id, img] : targets) {
      origins[mi].push_back(code_as_tensor(models[mi]->hash_forward(*img)));
    }
  }

  Rng rng(budget.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const double model_norm = 1.0 / static_cast<double>(models.size());

  std::vector<ForwardTape> tapes;
  std::vector<Tensor> codes;

  for (std::size_t epoch = 0; epoch < budget.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += budget.batch_size) {
      const std::size_t bsz = std::min(budget.batch_size, n - start);
      std::vector<Tensor> grads(bsz);
      for (std::size_t b = 0; b < bsz; ++b) {
        grads[b] = Tensor(targets[order[start + b]].second->shape);
      }
      for (std::size_t mi = 0; mi < models.size(); ++mi) {
        tapes.clear();
        codes.clear();
        for (std::size_t b = 0; b < bsz; ++b) {
          const std::size_t idx = order[start + b];
          Tensor evaluated = *targets[idx].second;
          const Tensor& eta = set.etas[idx];
          for (std::size_t e = 0; e < evaluated.size(); ++e) {
            evaluated[e] = std::min(1.0, std::max(0.0, evaluated[e] + eta[e]));
          }
          tapes.push_back(stack_forward(models[mi]->net, evaluated));
          codes.push_back(tapes.back().relaxed());
        }
        ConfusingLoss conf;
        if (bsz >= 2 && lambda > 0.0) conf = confusing_loss(codes);
        for (std::size_t b = 0; b < bsz; ++b) {
          const std::size_t idx = order[start + b];
          Tensor upstream(codes[b].shape);
          if (bsz >= 2 && lambda > 0.0) {
            for (std::size_t t = 0; t < upstream.size(); ++t) {
              upstream[t] += lambda * conf.code_grads[b][t];
            }
          }
          const double adv_w =
              (1.0 - lambda) / static_cast<double>(bsz);
          if (adv_w != 0.0) {
            for (std::size_t t = 0; t < upstream.size(); ++t) {
              upstream[t] += adv_w * (-0.5) * origins[mi][idx][t];
            }
          }
          const Tensor g =
              stack_backward(models[mi]->net, tapes[b], upstream).input;
          for (std::size_t e = 0; e < g.size(); ++e) {
            grads[b][e] += model_norm * g[e];
          }
        }
      }
      for (std::size_t b = 0; b < bsz; ++b) {
        const std::size_t idx = order[start + b];
        Tensor& eta = set.etas[idx];
        for (std::size_t e = 0; e < eta.size(); ++e) {
          eta[e] = std::min(budget.epsilon,
                            std::max(-budget.epsilon,
                                     eta[e] + budget.step_size * sgn(grads[b][e])));
        }
      }
    }
  }
  for (const auto& eta : set.etas) require_finite(eta, "confusing_perturbations: eta");
  return set;
}

namespace {
constexpr char kTriggerMagic[4] = {'H', 'P', 'T', '1'};
constexpr char kPerturbationMagic[4] = {'H', 'P', 'E', '1'};
}  // namespace

void save_trigger(const TriggerSpec& trigger, const std::filesystem::path& path) {
  require_finite(trigger.pattern, "save_trigger: pattern");
  ByteWriter w(path);
  w.magic(kTriggerMagic);
  const auto& shape = trigger.pattern.shape;
  w.u64(shape[0]);
  w.u64(shape[1]);
  w.u64(shape[2]);
  w.u64(trigger.size);
  w.u8(static_cast<std::uint8_t>(trigger.location));
  w.f64(trigger.blend);
  w.f64_array(trigger.pattern.data.data(), trigger.pattern.size());
  w.close();
}

TriggerSpec load_trigger(const std::filesystem::path& path) {
  ByteReader r(path);
  r.expect_magic(kTriggerMagic);
  const std::size_t h = r.u64();
  const std::size_t wd = r.u64();
  const std::size_t c = r.u64();
  const std::size_t size = r.u64();
  const std::uint8_t loc = r.u8();
  if (loc > 3) throw FormatError("trigger: bad corner tag");
  const double blend = r.f64();
  TriggerSpec t = TriggerSpec::make(h, wd, c, size, static_cast<Corner>(loc), blend);
  r.f64_array(t.pattern.data.data(), t.pattern.size());
  r.expect_eof();
  return t;
}

void save_perturbations(const PerturbationSet& set,
                        const std::vector<std::size_t>& image_shape,
                        const std::filesystem::path& path) {
  ByteWriter w(path);
  w.magic(kPerturbationMagic);
  w.u64(image_shape[0]);
  w.u64(image_shape[1]);
  w.u64(image_shape[2]);
  w.f64(set.epsilon);
  w.u64(set.ids.size());
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    w.u64(set.ids[i]);
    w.f64_array(set.etas[i].data.data(), set.etas[i].size());
  }
  w.close();
}

PerturbationSet load_perturbations(const std::filesystem::path& path) {
  ByteReader r(path);
  r.expect_magic(kPerturbationMagic);
  std::vector<std::size_t> shape(3);
  shape[0] = r.u64();
  shape[1] = r.u64();
  shape[2] = r.u64();
  PerturbationSet set;
  set.epsilon = r.f64();
  const std::uint64_t count = r.u64();
  set.ids.resize(count);
  set.etas.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    set.ids[i] = r.u64();
    Tensor eta(shape);
    r.f64_array(eta.data.data(), eta.size());
    set.etas.push_back(std::move(eta));
  }
  r.expect_eof();
  return set;
}

}  // namespace hpl
