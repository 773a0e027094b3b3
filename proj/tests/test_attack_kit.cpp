#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hpl/attack.hpp"
#include "hpl/dataset_synth.hpp"
#include "hpl/errors.hpp"

using namespace hpl;

namespace {

HashModelConfig small_config(std::uint64_t seed) {
  HashModelConfig cfg;
  cfg.height = 6;
  cfg.width = 6;
  cfg.channels = 1;
  cfg.hidden_sizes = {8};
  cfg.code_length = 8;
  cfg.seed = seed;
  return cfg;
}

DatasetBundle small_bundle(std::uint64_t seed) {
  SyntheticDatasetSpec spec;
  spec.classes = 3;
  spec.per_class_train = 10;
  spec.per_class_query = 2;
  spec.per_class_db = 4;
  spec.height = 6;
  spec.width = 6;
  spec.channels = 1;
  spec.seed = seed;
  return synthesize_dataset(spec);
}

double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("trigger mask covers exactly the stated block") {
  const auto t = TriggerSpec::make(6, 6, 2, 3, Corner::BottomRight, 1.0);
  std::size_t ones = 0;
  for (double v : t.mask.data) {
    CHECK((v == 0.0 || v == 1.0));
    ones += v == 1.0;
  }
  CHECK(ones == 3 * 3 * 2);
  // bottom-right corner: rows 3..5, cols 3..5
  CHECK(t.mask[(5 * 6 + 5) * 2] == 1.0);
  CHECK(t.mask[(0 * 6 + 0) * 2] == 0.0);
  CHECK(t.mask[(2 * 6 + 5) * 2] == 0.0);
  CHECK(t.mask[(5 * 6 + 2) * 2] == 0.0);

  const auto tl = TriggerSpec::make(6, 6, 1, 2, Corner::TopLeft, 0.5);
  CHECK(tl.mask[0] == 1.0);
  CHECK(tl.mask[(1 * 6 + 1)] == 1.0);
  CHECK(tl.mask[(5 * 6 + 5)] == 0.0);

  CHECK_THROWS_AS(TriggerSpec::make(6, 6, 1, 7), ArgumentError);
  CHECK_THROWS_AS(TriggerSpec::make(6, 6, 1, 2, Corner::TopLeft, 0.0),
                  ArgumentError);
}

TEST_CASE("inject examples") {
  Tensor x({2, 2, 1}, {0.2, 0.2, 0.2, 0.2});

  SUBCASE("all-zero mask leaves the image unchanged") {
    TriggerSpec t = TriggerSpec::make(2, 2, 1, 1);
    std::fill(t.mask.data.begin(), t.mask.data.end(), 0.0);
    CHECK(inject(x, t).data == x.data);
  }

  SUBCASE("beta=1 writes the pattern exactly") {
    TriggerSpec t = TriggerSpec::make(2, 2, 1, 1, Corner::BottomRight, 1.0, 0.9);
    const Tensor out = inject(x, t);
    CHECK(out[(1 * 2 + 1)] == 0.9);
    CHECK(out[0] == 0.2);
  }

  SUBCASE("beta=0.5 blends to the midpoint") {
    TriggerSpec t = TriggerSpec::make(2, 2, 1, 1, Corner::BottomRight, 0.5, 0.8);
    const Tensor out = inject(x, t);
    CHECK(out[(1 * 2 + 1)] == doctest::Approx(0.5));
  }

  SUBCASE("idempotent at beta=1") {
    TriggerSpec t = TriggerSpec::make(2, 2, 1, 2, Corner::BottomRight, 1.0, 0.7);
    const Tensor once = inject(x, t);
    const Tensor twice = inject(once, t);
    CHECK(once.data == twice.data);
  }

  SUBCASE("shape mismatch") {
    TriggerSpec t = TriggerSpec::make(3, 3, 1, 1);
    CHECK_THROWS_AS(inject(x, t), ShapeError);
  }
}

TEST_CASE("generate_trigger contract") {
  const DatasetBundle bundle = small_bundle(5);
  const HashModel model = HashModel::init(small_config(3));
  const LabelVector target = single_label(0, 3);
  const TriggerSpec t0 = TriggerSpec::make(6, 6, 1, 2);

  SUBCASE("zero iterations returns the initial trigger") {
    TriggerOptConfig cfg;
    cfg.iterations = 0;
    const TriggerSpec out =
        generate_trigger({&model}, bundle.train, target, cfg, t0);
    CHECK(out.pattern.data == t0.pattern.data);
  }

  SUBCASE("pattern stays in [0,1] and untouched outside the mask") {
    TriggerOptConfig cfg;
    cfg.iterations = 40;
    cfg.batch_size = 4;
    cfg.step_size = 8.0;
    cfg.seed = 9;
    const TriggerSpec out =
        generate_trigger({&model}, bundle.train, target, cfg, t0);
    for (std::size_t e = 0; e < out.pattern.size(); ++e) {
      CHECK(out.pattern[e] >= 0.0);
      CHECK(out.pattern[e] <= 1.0);
      if (out.mask[e] == 0.0) CHECK(out.pattern[e] == t0.pattern[e]);
    }
  }

  SUBCASE("bit-reproducible under a fixed seed") {
    TriggerOptConfig cfg;
    cfg.iterations = 25;
    cfg.batch_size = 4;
    cfg.seed = 31;
    const TriggerSpec a =
        generate_trigger({&model}, bundle.train, target, cfg, t0);
    const TriggerSpec b =
        generate_trigger({&model}, bundle.train, target, cfg, t0);
    CHECK(a.pattern.data == b.pattern.data);
  }

  SUBCASE("single-model ensemble path equals the single-model path") {
    TriggerOptConfig cfg;
    cfg.iterations = 15;
    cfg.batch_size = 4;
    cfg.seed = 12;
    const TriggerSpec one =
        generate_trigger({&model}, bundle.train, target, cfg, t0);
    const HashModel copy = model;
    const TriggerSpec two =
        generate_trigger({&copy}, bundle.train, target, cfg, t0);
    CHECK(one.pattern.data == two.pattern.data);
  }

  SUBCASE("absent target class is an argument error") {
    TriggerOptConfig cfg;
    Dataset no_target;
    no_target.role = SplitRole::Train;
    for (const auto& s : bundle.train.samples) {
      if (pairwise_similarity(s.label, target) == 0) {
        no_target.samples.push_back(s);
      }
    }
    CHECK_THROWS_AS(generate_trigger({&model}, no_target, target, cfg, t0),
                    ArgumentError);
  }
}

TEST_CASE("adversarial_perturbation constraints") {
  const DatasetBundle bundle = small_bundle(6);
  const HashModel model = HashModel::init(small_config(4));
  const Tensor& x = bundle.train.samples[0].image;

  SUBCASE("zero budget yields zero perturbation") {
    PerturbationBudget b;
    b.epsilon = 0.0;
    b.step_size = 0.0;
    const Tensor eta = adversarial_perturbation(model, x, b);
    for (double v : eta.data) CHECK(v == 0.0);
  }

  SUBCASE("epsilon ball is a hard constraint") {
    PerturbationBudget b;  // defaults: eps 0.032, step 0.003, 20 steps
    const Tensor eta = adversarial_perturbation(model, x, b);
    for (double v : eta.data) CHECK(std::abs(v) <= 0.032);
  }

  SUBCASE("perturbation moves the relaxed code away from the origin code") {
    PerturbationBudget b;
    const Tensor eta = adversarial_perturbation(model, x, b);
    Tensor moved = x;
    for (std::size_t e = 0; e < moved.size(); ++e) moved[e] += eta[e];
    clamp01_inplace(moved);
    const Tensor origin = code_as_tensor(model.hash_forward(x));
    const double d = relaxed_hamming(model.relaxed_forward(moved), origin);
    const double d0 = relaxed_hamming(model.relaxed_forward(x), origin);
    CHECK(d >= d0);
  }
}

TEST_CASE("targeted_perturbation pulls toward the anchor") {
  const DatasetBundle bundle = small_bundle(7);
  const HashModel model = HashModel::init(small_config(8));
  std::vector<HashCode> codes;
  for (std::size_t i = 0; i < 5; ++i) {
    codes.push_back(model.hash_forward(bundle.train.samples[i].image));
  }
  const AnchorCode anchor = anchor_code(codes);
  const Tensor& x = bundle.train.samples[20].image;

  PerturbationBudget b;
  const Tensor eta = targeted_perturbation(model, x, anchor, b);
  for (double v : eta.data) CHECK(std::abs(v) <= b.epsilon);

  Tensor moved = x;
  for (std::size_t e = 0; e < moved.size(); ++e) moved[e] += eta[e];
  clamp01_inplace(moved);
  const Tensor target = code_as_tensor(anchor.code);
  CHECK(relaxed_hamming(model.relaxed_forward(moved), target) <=
        relaxed_hamming(model.relaxed_forward(x), target));

  PerturbationBudget zero;
  zero.epsilon = 0.0;
  zero.step_size = 0.0;
  const Tensor none = targeted_perturbation(model, x, anchor, zero);
  for (double v : none.data) CHECK(v == 0.0);

  AnchorCode bad;
  bad.code.bits.assign(4, 1);
  CHECK_THROWS_AS(targeted_perturbation(model, x, bad, b), ShapeError);
}

TEST_CASE("confusing_loss examples") {
  SUBCASE("identical codes give zero dispersion") {
    std::vector<Tensor> codes(3, Tensor({4}, {1, -1, 1, -1}));
    CHECK(confusing_loss(codes).value == 0.0);
  }

  SUBCASE("two antipodal codes give K") {
    std::vector<Tensor> codes{Tensor({4}, {1, 1, 1, 1}),
                              Tensor({4}, {-1, -1, -1, -1})};
    CHECK(confusing_loss(codes).value == doctest::Approx(4.0));
  }

  SUBCASE("hand-computed three-code batch") {
    // K=2: u0=(1,1) u1=(-1,1) u2=(0,0.5)
    // d(u0,u1)=1, d(u0,u2)=0.75, d(u1,u2)=0.75; ordered sum doubles them
    // L = 2*(1+0.75+0.75)/6 = 5/6
    std::vector<Tensor> codes{Tensor({2}, {1, 1}), Tensor({2}, {-1, 1}),
                              Tensor({2}, {0, 0.5})};
    const auto loss = confusing_loss(codes);
    CHECK(loss.value == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    // grad_0 = -(u1 + u2)/6 = (1/6, -0.25)
    CHECK(loss.code_grads[0][0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(loss.code_grads[0][1] == doctest::Approx(-0.25).epsilon(1e-12));
  }

  SUBCASE("gradient matches finite differences") {
    Rng rng(55);
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<Tensor> codes;
      const std::size_t m = 2 + rng.below(4);
      for (std::size_t i = 0; i < m; ++i) {
        Tensor c({6});
        for (auto& v : c.data) v = rng.uniform(-0.9, 0.9);
        codes.push_back(std::move(c));
      }
      const auto loss = confusing_loss(codes);
      for (std::size_t i = 0; i < m; ++i) {
        auto f = [&](const Tensor& probe) {
          std::vector<Tensor> c2 = codes;
          c2[i] = probe;
          return confusing_loss(c2).value;
        };
        const Tensor numeric = numeric_gradient(f, codes[i], 1e-4);
        for (std::size_t t = 0; t < 6; ++t) {
          CHECK(rel_err(loss.code_grads[i][t], numeric[t]) < 1e-4);
        }
      }
    }
  }

  SUBCASE("single code is an argument error") {
    std::vector<Tensor> one{Tensor({4}, {1, 1, 1, 1})};
    CHECK_THROWS_AS(confusing_loss(one), ArgumentError);
  }

  SUBCASE("permutation symmetry") {
    std::vector<Tensor> codes{Tensor({3}, {0.2, -0.5, 0.9}),
                              Tensor({3}, {-0.1, 0.4, 0.3}),
                              Tensor({3}, {0.8, 0.8, -0.7})};
    const double base = confusing_loss(codes).value;
    std::swap(codes[0], codes[2]);
    CHECK(confusing_loss(codes).value == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("confusing_perturbations contract") {
  const DatasetBundle bundle = small_bundle(8);
  const HashModel model = HashModel::init(small_config(13));
  std::vector<std::pair<std::uint64_t, const Tensor*>> targets;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& s = bundle.train.samples[i];
    targets.emplace_back(s.id, &s.image);
  }
  PerturbationBudget budget;
  budget.seed = 99;

  SUBCASE("epsilon ball always holds") {
    const PerturbationSet set =
        confusing_perturbations({&model}, targets, 0.8, budget);
    REQUIRE(set.etas.size() == 6);
    for (const auto& eta : set.etas) {
      for (double v : eta.data) CHECK(std::abs(v) <= budget.epsilon);
    }
  }

  SUBCASE("bit-reproducible under a fixed seed") {
    const PerturbationSet a =
        confusing_perturbations({&model}, targets, 0.8, budget);
    const PerturbationSet b =
        confusing_perturbations({&model}, targets, 0.8, budget);
    REQUIRE(a.etas.size() == b.etas.size());
    for (std::size_t i = 0; i < a.etas.size(); ++i) {
      CHECK(a.etas[i].data == b.etas[i].data);
    }
  }

  SUBCASE("lambda=0 with one image per batch equals the adversarial path bitwise") {
    PerturbationBudget single = budget;
    single.batch_size = 1;
    const PerturbationSet set =
        confusing_perturbations({&model}, targets, 0.0, single);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const Tensor direct =
          adversarial_perturbation(model, *targets[i].second, budget);
      CHECK(set.etas[i].data == direct.data);
    }
  }

  SUBCASE("dispersion increases against the crafting model") {
    const PerturbationSet set =
        confusing_perturbations({&model}, targets, 1.0, budget);
    auto codes_with = [&](bool perturbed) {
      std::vector<HashCode> codes;
      for (std::size_t i = 0; i < targets.size(); ++i) {
        Tensor img = *targets[i].second;
        if (perturbed) {
          for (std::size_t e = 0; e < img.size(); ++e) {
            img[e] += set.etas[i][e];
          }
          clamp01_inplace(img);
        }
        codes.push_back(model.hash_forward(img));
      }
      double total = 0.0;
      std::size_t pairs = 0;
      for (std::size_t i = 0; i < codes.size(); ++i) {
        for (std::size_t j = i + 1; j < codes.size(); ++j) {
          total += hamming_distance(codes[i], codes[j]);
          ++pairs;
        }
      }
      return total / static_cast<double>(pairs);
    };
    CHECK(codes_with(true) >= codes_with(false));
  }

  SUBCASE("empty target list is an argument error") {
    CHECK_THROWS_AS(confusing_perturbations({&model}, {}, 0.8, budget),
                    ArgumentError);
  }

  SUBCASE("lambda outside [0,1] is an argument error") {
    CHECK_THROWS_AS(confusing_perturbations({&model}, targets, 1.5, budget),
                    ArgumentError);
  }
}

TEST_CASE("trigger and perturbation files round-trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "hpl_attack_io";
  fs::create_directories(dir);

  Rng rng(101);
  TriggerSpec t = TriggerSpec::make(6, 6, 1, 2, Corner::TopRight, 0.7);
  for (std::size_t e = 0; e < t.pattern.size(); ++e) {
    if (t.mask[e] != 0.0) t.pattern[e] = rng.uniform(0, 1);
  }
  save_trigger(t, dir / "t.bin");
  const TriggerSpec t2 = load_trigger(dir / "t.bin");
  CHECK(t2.pattern.data == t.pattern.data);
  CHECK(t2.mask.data == t.mask.data);
  CHECK(t2.size == t.size);
  CHECK(t2.blend == t.blend);
  CHECK(t2.location == t.location);

  PerturbationSet set;
  set.epsilon = 0.032;
  for (std::uint64_t id : {4ULL, 9ULL, 17ULL}) {
    Tensor eta({6, 6, 1});
    for (auto& v : eta.data) v = rng.uniform(-0.032, 0.032);
    set.ids.push_back(id);
    set.etas.push_back(std::move(eta));
  }
  save_perturbations(set, {6, 6, 1}, dir / "p.bin");
  const PerturbationSet set2 = load_perturbations(dir / "p.bin");
  CHECK(set2.epsilon == set.epsilon);
  CHECK(set2.ids == set.ids);
  for (std::size_t i = 0; i < set.etas.size(); ++i) {
    CHECK(set2.etas[i].data == set.etas[i].data);
  }
  fs::remove_all(dir);
}
