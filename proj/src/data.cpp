#include "hpl/data.hpp"

#include <string>
#include <unordered_set>

#include "hpl/binary_io.hpp"
#include "hpl/errors.hpp"

namespace hpl {

bool LabelVector::any() const {
  for (auto b : bits) {
    if (b) return true;
  }
  return false;
}

int pairwise_similarity(const LabelVector& a, const LabelVector& b) {
  if (a.size() != b.size()) {
    throw ShapeError("pairwise_similarity: label width mismatch");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.bits[i] && b.bits[i]) return 1;
  }
  return 0;
}

LabelVector single_label(std::size_t cls, std::size_t classes) {
  if (cls >= classes) throw ArgumentError("single_label: class out of range");
  LabelVector l;
  l.bits.assign(classes, 0);
  l.bits[cls] = 1;
  return l;
}

void validate_dataset(const Dataset& ds, std::size_t classes) {
  std::unordered_set<std::uint64_t> seen;
  for (const auto& s : ds.samples) {
    if (!seen.insert(s.id).second) {
      throw ArgumentError("dataset: duplicate id " + std::to_string(s.id));
    }
    if (s.label.size() != classes) {
      throw ShapeError("dataset: label width mismatch for id " +
                       std::to_string(s.id));
    }
    if (!s.label.any()) {
      throw ArgumentError("dataset: empty label for id " + std::to_string(s.id));
    }
    for (double v : s.image.data) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw NumericError("dataset: pixel outside [0,1] in id " +
                           std::to_string(s.id));
      }
    }
  }
}

namespace {

constexpr char kDatasetMagic[4] = {'H', 'P', 'D', '1'};

void write_split(ByteWriter& w, const Dataset& ds) {
  w.u8(static_cast<std::uint8_t>(ds.role));
  w.u64(ds.samples.size());
  for (const auto& s : ds.samples) {
    w.u64(s.id);
    for (auto b : s.label.bits) w.u8(b);
    w.f64_array(s.image.data.data(), s.image.size());
  }
}

Dataset read_split(ByteReader& r, std::size_t classes,
                   const std::vector<std::size_t>& dims) {
  Dataset ds;
  const std::uint8_t role = r.u8();
  if (role > 2) throw FormatError("dataset: bad split role tag");
  ds.role = static_cast<SplitRole>(role);
  const std::uint64_t count = r.u64();
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    s.id = r.u64();
    s.label.bits.resize(classes);
    for (auto& b : s.label.bits) b = r.u8();
    s.image = Tensor(dims);
    r.f64_array(s.image.data.data(), s.image.size());
  }
  return ds;
}

}  // namespace

void save_dataset_bundle(const DatasetBundle& bundle,
                         const std::filesystem::path& path) {
  const auto& dims = bundle.train.samples.empty()
                         ? bundle.database.samples.front().image.shape
                         : bundle.train.samples.front().image.shape;
  ByteWriter w(path);
  w.magic(kDatasetMagic);
  w.u64(bundle.classes);
  w.u64(dims[0]);
  w.u64(dims[1]);
  w.u64(dims[2]);
  w.u64(3);
  write_split(w, bundle.train);
  write_split(w, bundle.query);
  write_split(w, bundle.database);
  w.close();
}

DatasetBundle load_dataset_bundle(const std::filesystem::path& path) {
  ByteReader r(path);
  r.expect_magic(kDatasetMagic);
  DatasetBundle b;
  b.classes = r.u64();
  std::vector<std::size_t> dims(3);
  dims[0] = r.u64();
  dims[1] = r.u64();
  dims[2] = r.u64();
  if (r.u64() != 3) throw FormatError("dataset bundle: expected 3 splits");
  b.train = read_split(r, b.classes, dims);
  b.query = read_split(r, b.classes, dims);
  b.database = read_split(r, b.classes, dims);
  r.expect_eof();
  return b;
}

void save_dataset(const Dataset& ds, std::size_t classes,
                  const std::filesystem::path& path) {
  if (ds.samples.empty()) throw ArgumentError("save_dataset: empty dataset");
  const auto& dims = ds.samples.front().image.shape;
  ByteWriter w(path);
  w.magic(kDatasetMagic);
  w.u64(classes);
  w.u64(dims[0]);
  w.u64(dims[1]);
  w.u64(dims[2]);
  w.u64(1);
  write_split(w, ds);
  w.close();
}

Dataset load_dataset(const std::filesystem::path& path,
                     std::size_t* classes_out) {
  ByteReader r(path);
  r.expect_magic(kDatasetMagic);
  const std::size_t classes = r.u64();
  std::vector<std::size_t> dims(3);
  dims[0] = r.u64();
  dims[1] = r.u64();
  dims[2] = r.u64();
  if (r.u64() != 1) throw FormatError("dataset: expected a single split");
  Dataset ds = read_split(r, classes, dims);
  r.expect_eof();
  if (classes_out) *classes_out = classes;
  return ds;
}

}  // namespace hpl
