#include "hpl/dataset_synth.hpp"

#include <cmath>
#include <vector>

#include "hpl/errors.hpp"

namespace hpl {

void validate_spec(const SyntheticDatasetSpec& spec) {
  if (spec.classes < 1) throw ArgumentError("dataset spec: classes must be >= 1");
  if (spec.per_class_train < 1 || spec.per_class_query < 1 ||
      spec.per_class_db < 1) {
    throw ArgumentError("dataset spec: per-class counts must be >= 1");
  }
  if (spec.height < 1 || spec.width < 1 || spec.channels < 1) {
    throw ArgumentError("dataset spec: dims must be positive");
  }
  if (!(spec.template_contrast > 0.0 && spec.template_contrast <= 1.0)) {
    throw ArgumentError("dataset spec: template_contrast must lie in (0, 1]");
  }
  if (spec.noise_sigma < 0.0) {
    throw ArgumentError("dataset spec: noise_sigma must be nonnegative");
  }
}

namespace {

struct Wave {
  double fi, fj, phase, weight;
};

// Two mixed sinusoids per channel; frequencies are small integers so the
// pattern stays low-frequency at 16x16.
std::vector<Wave> draw_channel_waves(Rng& rng) {
  std::vector<Wave> waves(2);
  for (auto& w : waves) {
    w.fi = static_cast<double>(1 + rng.below(3));
    w.fj = static_cast<double>(1 + rng.below(3));
    w.phase = rng.uniform(0.0, 6.283185307179586);
    w.weight = 1.0;
  }
  waves[0].weight = rng.uniform(0.35, 0.65);
  waves[1].weight = 1.0 - waves[0].weight;
  waves[1].fj = -waves[1].fj;  // opposite diagonal orientation
  return waves;
}

}  // namespace

DatasetBundle synthesize_dataset(const SyntheticDatasetSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);

  const std::size_t h = spec.height, w = spec.width, c = spec.channels;
  std::vector<Tensor> templates;
  templates.reserve(spec.classes);
  for (std::size_t cls = 0; cls < spec.classes; ++cls) {
    Tensor tpl({h, w, c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto waves = draw_channel_waves(rng);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          double g = 0.0;
          for (const auto& wv : waves) {
            g += wv.weight *
                 std::sin(6.283185307179586 *
                              (wv.fi * static_cast<double>(i) / h +
                               wv.fj * static_cast<double>(j) / w) +
                          wv.phase);
          }
          tpl[(i * w + j) * c + ch] = 0.5 + 0.5 * spec.template_contrast * g;
        }
      }
    }
    templates.push_back(std::move(tpl));
  }

  auto make_split = [&](SplitRole role, std::size_t per_class,
                        std::uint64_t id_base) {
    Dataset ds;
    ds.role = role;
    ds.samples.reserve(spec.classes * per_class);
    for (std::size_t cls = 0; cls < spec.classes; ++cls) {
      for (std::size_t k = 0; k < per_class; ++k) {
        Sample s;
        s.id = id_base + cls * per_class + k;
        s.label = single_label(cls, spec.classes);
        s.image = templates[cls];
        if (spec.noise_sigma > 0.0) {
          for (double& v : s.image.data) v += spec.noise_sigma * rng.gaussian();
        }
        clamp01_inplace(s.image);
        ds.samples.push_back(std::move(s));
      }
    }
    return ds;
  };

  DatasetBundle bundle;
  bundle.classes = spec.classes;
  bundle.train = make_split(SplitRole::Train, spec.per_class_train, 0);
  bundle.query = make_split(SplitRole::Query, spec.per_class_query, 1'000'000);
  bundle.database =
      make_split(SplitRole::Database, spec.per_class_db, 2'000'000);
  return bundle;
}

}  // namespace hpl
