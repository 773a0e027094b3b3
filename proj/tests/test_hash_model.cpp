#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hpl/dataset_synth.hpp"
#include "hpl/errors.hpp"
#include "hpl/hash_model.hpp"

using namespace hpl;
namespace fs = std::filesystem;

namespace {

HashModelConfig tiny_config(std::uint64_t seed) {
  HashModelConfig cfg;
  cfg.height = 4;
  cfg.width = 4;
  cfg.channels = 1;
  cfg.hidden_sizes = {6};
  cfg.code_length = 8;
  cfg.seed = seed;
  return cfg;
}

Dataset tiny_dataset(std::size_t classes, std::size_t per_class,
                     std::uint64_t seed) {
  SyntheticDatasetSpec spec;
  spec.classes = classes;
  spec.per_class_train = per_class;
  spec.per_class_query = 1;
  spec.per_class_db = 1;
  spec.height = 4;
  spec.width = 4;
  spec.channels = 1;
  spec.noise_sigma = 0.05;
  spec.seed = seed;
  return synthesize_dataset(spec).train;
}

double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("relaxed_forward on zero weights is the zero code") {
  HashModel m = HashModel::init(tiny_config(1));
  for (auto& l : m.net.layers) {
    std::fill(l.weights.data.begin(), l.weights.data.end(), 0.0);
    std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0);
  }
  Tensor img({4, 4, 1});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = 0.3 + 0.01 * i;
  const Tensor code = m.relaxed_forward(img);
  for (double v : code.data) CHECK(v == 0.0);
}

TEST_CASE("hash_forward is the sign of relaxed_forward with sign(0)=+1") {
  CHECK(sign_code(Tensor({3}, {0.3, -0.2, 0.0})) ==
        HashCode{{1, -1, 1}});

  Rng rng(5);
  HashModel m = HashModel::init(tiny_config(9));
  for (int rep = 0; rep < 25; ++rep) {
    Tensor img({4, 4, 1});
    for (auto& v : img.data) v = rng.uniform(0, 1);
    const Tensor relaxed = m.relaxed_forward(img);
    const HashCode code = m.hash_forward(img);
    for (std::size_t t = 0; t < code.length(); ++t) {
      CHECK(code.bits[t] == (relaxed[t] >= 0.0 ? 1 : -1));
    }
  }
}

TEST_CASE("negating the hash layer negates the code") {
  Rng rng(6);
  HashModel m = HashModel::init(tiny_config(10));
  HashModel flipped = m;
  auto& head = flipped.net.layers.back();
  for (double& v : head.weights.data) v = -v;
  for (double& v : head.bias.data) v = -v;
  Tensor img({4, 4, 1});
  for (auto& v : img.data) v = rng.uniform(0, 1);
  const HashCode a = m.hash_forward(img);
  const HashCode b = flipped.hash_forward(img);
  for (std::size_t t = 0; t < a.length(); ++t) {
    // sign(0) = +1 makes exact zeros map to +1 on both, but random logits
    // are never exactly zero here
    CHECK(a.bits[t] == -b.bits[t]);
  }
}

TEST_CASE("pairwise_similarity") {
  LabelVector a{{1, 0, 0}};
  LabelVector b{{1, 0, 1}};
  LabelVector c{{0, 1, 0}};
  CHECK(pairwise_similarity(a, b) == 1);
  CHECK(pairwise_similarity(a, c) == 0);
  CHECK(pairwise_similarity(a, a) == 1);
  CHECK_THROWS_AS(pairwise_similarity(a, LabelVector{{1, 0}}), ShapeError);
}

TEST_CASE("pairwise_batch_loss corner cases") {
  PairwiseLossConfig cfg;
  cfg.margin = 1.0;
  cfg.quantization_weight = 0.0;

  // identical +-1 codes, similar pair: zero loss
  std::vector<Tensor> same{Tensor({2}, {1, 1}), Tensor({2}, {1, 1})};
  std::vector<LabelVector> sim{{{1, 0}}, {{1, 0}}};
  CHECK(pairwise_batch_loss(same, sim, cfg).value == 0.0);

  // antipodal codes, dissimilar, margin K/2: hinge already satisfied
  PairwiseLossConfig cfg2;
  cfg2.margin = 1.0;  // K/2 for K=2
  cfg2.quantization_weight = 0.0;
  std::vector<Tensor> anti{Tensor({2}, {1, 1}), Tensor({2}, {-1, -1})};
  std::vector<LabelVector> dis{{{1, 0}}, {{0, 1}}};
  CHECK(pairwise_batch_loss(anti, dis, cfg2).value == 0.0);

  std::vector<Tensor> one{Tensor({2}, {1, 1})};
  std::vector<LabelVector> lone{{{1, 0}}};
  CHECK_THROWS_AS(pairwise_batch_loss(one, lone, cfg), ArgumentError);
}

TEST_CASE("pairwise_batch_loss hand-computed three-sample batch") {
  // K=2, margin 1, quantization 0.1
  // codes: u0=(.5,.5) u1=(-.5,.5) u2=(.5,-.5); labels 0,0,1
  // pair (0,1) similar:    d = (2 - 0)/2   = 1      -> contributes 1
  // pair (0,2) dissimilar: d = (2 - 0)/2   = 1      -> hinge max(0,1-1)=0
  // pair (1,2) dissimilar: d = (2 + 0.5)/2 = 1.25   -> hinge 0
  // contrastive = 1/3; quantization = 0.1 * mean(1 - |u|) = 0.1 * 0.5
  std::vector<Tensor> codes{Tensor({2}, {0.5, 0.5}), Tensor({2}, {-0.5, 0.5}),
                            Tensor({2}, {0.5, -0.5})};
  std::vector<LabelVector> labels{{{1, 0}}, {{1, 0}}, {{0, 1}}};
  PairwiseLossConfig cfg;
  cfg.margin = 1.0;
  cfg.quantization_weight = 0.1;
  const auto loss = pairwise_batch_loss(codes, labels, cfg);
  CHECK(loss.value == doctest::Approx(1.0 / 3.0 + 0.05).epsilon(1e-12));
}

TEST_CASE("pairwise_batch_loss gradient matches finite differences") {
  Rng rng(77);
  PairwiseLossConfig cfg;
  cfg.margin = 4.0;
  cfg.quantization_weight = 0.01;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 3 + rng.below(4);
    const std::size_t k = 8;
    std::vector<Tensor> codes;
    std::vector<LabelVector> labels;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor c({k});
      for (auto& v : c.data) {
        // bounded away from the |u|=0 kink of the quantization term
        v = rng.uniform(0.05, 0.9) * (rng.below(2) ? 1.0 : -1.0);
      }
      codes.push_back(std::move(c));
      labels.push_back(single_label(rng.below(3), 3));
    }
    const auto loss = pairwise_batch_loss(codes, labels, cfg);
    for (std::size_t i = 0; i < n; ++i) {
      auto f = [&](const Tensor& probe) {
        std::vector<Tensor> c2 = codes;
        c2[i] = probe;
        return pairwise_batch_loss(c2, labels, cfg).value;
      };
      const Tensor numeric = numeric_gradient(f, codes[i], 1e-4);
      for (std::size_t t = 0; t < k; ++t) {
        CHECK(rel_err(loss.code_grads[i][t], numeric[t]) < 1e-4);
      }
    }
  }
}

TEST_CASE("pairwise_batch_loss is permutation invariant") {
  Rng rng(88);
  std::vector<Tensor> codes;
  std::vector<LabelVector> labels;
  for (std::size_t i = 0; i < 6; ++i) {
    Tensor c({8});
    for (auto& v : c.data) v = rng.uniform(-0.9, 0.9);
    codes.push_back(std::move(c));
    labels.push_back(single_label(rng.below(2), 2));
  }
  PairwiseLossConfig cfg = PairwiseLossConfig::defaults_for(8);
  const double base = pairwise_batch_loss(codes, labels, cfg).value;
  std::vector<std::size_t> perm{3, 1, 4, 0, 5, 2};
  std::vector<Tensor> pc;
  std::vector<LabelVector> pl;
  for (std::size_t p : perm) {
    pc.push_back(codes[p]);
    pl.push_back(labels[p]);
  }
  CHECK(pairwise_batch_loss(pc, pl, cfg).value ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("train contract") {
  const Dataset ds = tiny_dataset(3, 8, 123);
  const HashModel init = HashModel::init(tiny_config(42));
  PairwiseLossConfig loss_cfg = PairwiseLossConfig::defaults_for(8);
  SgdSchedule sched;
  sched.learning_rate = 0.05;
  sched.epochs = 0;
  sched.batch_size = 6;
  sched.seed = 7;

  SUBCASE("zero epochs returns the model unchanged") {
    const TrainResult r = train(init, ds, sched, loss_cfg);
    CHECK(r.model.same_parameters(init));
    CHECK(r.epoch_losses.empty());
  }

  SUBCASE("empty training set is an error") {
    Dataset empty;
    CHECK_THROWS_AS(train(init, empty, sched, loss_cfg), ArgumentError);
  }

  SUBCASE("training is bit-reproducible") {
    sched.epochs = 4;
    const TrainResult a = train(init, ds, sched, loss_cfg);
    const TrainResult b = train(init, ds, sched, loss_cfg);
    CHECK(a.model.same_parameters(b.model));
    CHECK(a.epoch_losses == b.epoch_losses);
  }

  SUBCASE("loss decreases on the tiny benchmark") {
    sched.epochs = 6;
    const TrainResult r = train(init, ds, sched, loss_cfg);
    int violations = 0;
    for (std::size_t e = 1; e < r.epoch_losses.size(); ++e) {
      if (r.epoch_losses[e] > r.epoch_losses[e - 1] + 1e-9) ++violations;
    }
    CHECK(violations <= 1);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
  }
}

TEST_CASE("checkpoint round-trip and corruption handling") {
  const fs::path dir = fs::temp_directory_path() / "hpl_ckpt_test";
  fs::create_directories(dir);
  const fs::path path = dir / "model.ckpt";

  HashModel m = HashModel::init(tiny_config(2024));
  save_checkpoint(m, path);

  SUBCASE("round-trip is bitwise") {
    const HashModel loaded = load_checkpoint(path);
    CHECK(loaded.same_parameters(m));
    CHECK(loaded.config.same_architecture(m.config));
    CHECK(loaded.config.seed == m.config.seed);
  }

  SUBCASE("truncated file is a format error") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }

  SUBCASE("bad magic is a format error") {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "NOPENOPE";
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }

  SUBCASE("config mismatch is reported") {
    HashModelConfig other = tiny_config(2024);
    other.code_length = 16;
    CHECK_THROWS_AS(load_checkpoint(path, other), FormatError);
    CHECK_NOTHROW(load_checkpoint(path, tiny_config(999)));  // seed may differ
  }

  fs::remove_all(dir);
}

TEST_CASE("model init rejects bad configs") {
  HashModelConfig cfg = tiny_config(1);
  cfg.code_length = 3;
  CHECK_THROWS_AS(HashModel::init(cfg), ArgumentError);
}
