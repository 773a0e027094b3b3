#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace hpl {

// Dense row-major tensor of doubles. Shapes are validated at module
// boundaries; flat indexing is the common access path in inner loops.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_in);
  Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in);

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  static Tensor zeros_like(const Tensor& t);
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
bool same_shape(const Tensor& a, const Tensor& b);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);
bool all_finite(const Tensor& t);
void require_finite(const Tensor& t, const char* what);
double dot(const Tensor& a, const Tensor& b);
void clamp01_inplace(Tensor& t);
Tensor clamp01(const Tensor& t);

// xoshiro256** with hand-rolled distributions. All randomness in the
// project flows through this class so runs are reproducible bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double gaussian();                     // N(0, 1), Box-Muller
  std::uint64_t below(std::uint64_t n);  // [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace hpl
