#include "nodebench/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "nodebench/container.hpp"
#include "nodebench/rng.hpp"

namespace nodebench {

Normalization normalization_for(const std::string& dataset_key) {
  if (dataset_key == "mnist") return Normalization{0.0, 255.0};
  if (dataset_key == "synthetic") return Normalization{127.5, 12.75};
  throw ConfigError("unknown dataset key '" + dataset_key + "' (expected mnist or synthetic)");
}

Tensor Normalization::apply(const Tensor& raw) const {
  std::vector<double> v(raw.numel());
  const auto x = raw.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (x[i] - mean) / std;
  return Tensor(raw.shape(), std::move(v));
}

void Dataset::validate() const {
  if (labels.empty()) throw InputError("dataset is empty");
  if (!images.defined() || images.dim(0) != labels.size()) {
    throw InputError("dataset has " + std::to_string(labels.size()) + " labels but images " +
                     (images.defined() ? to_string(images.shape()) : std::string("<none>")));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw InputError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  ensure_finite(images.data(), "dataset images");
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  const std::size_t n = size();
  const std::size_t stride = images.numel() / n;
  std::vector<double> v;
  v.reserve(indices.size() * stride);
  std::vector<int> l;
  l.reserve(indices.size());
  for (auto i : indices) {
    if (i >= n) throw InputError("select: index " + std::to_string(i) + " out of range");
    v.insert(v.end(), images.data().begin() + i * stride, images.data().begin() + (i + 1) * stride);
    l.push_back(labels[i]);
  }
  Shape shape = images.shape();
  shape[0] = indices.size();
  Dataset out;
  out.images = Tensor(std::move(shape), std::move(v));
  out.labels = std::move(l);
  out.num_classes = num_classes;
  out.normalization = normalization;
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

// -- IDX ------------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw ParseError(path.string() + ": truncated header at offset " + std::to_string(offset));
  }
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

void check_magic(std::uint32_t magic, std::uint32_t expected, const std::filesystem::path& path) {
  if (magic != expected) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "magic 0x%08x, expected 0x%08x", magic, expected);
    throw ParseError(path.string() + ": " + buf + " at offset 0");
  }
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
  out.write(b, 4);
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  check_magic(read_be32(img, 0, images_path), 0x00000803, images_path);
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  if (n == 0 || rows == 0 || cols == 0) {
    throw ParseError(images_path.string() + ": zero dimension in header at offset 4");
  }
  const std::size_t payload = n * rows * cols;
  if (img.size() - 16 < payload) {
    throw ParseError(images_path.string() + ": truncated payload, expected " +
                     std::to_string(payload) + " bytes from offset 16, found " +
                     std::to_string(img.size() - 16));
  }

  check_magic(read_be32(lab, 0, labels_path), 0x00000801, labels_path);
  const std::size_t n_labels = read_be32(lab, 4, labels_path);
  if (n_labels != n) {
    throw ParseError(labels_path.string() + ": " + std::to_string(n_labels) +
                     " labels at offset 4 but " + std::to_string(n) + " images");
  }
  if (lab.size() - 8 < n) {
    throw ParseError(labels_path.string() + ": truncated payload, expected " + std::to_string(n) +
                     " bytes from offset 8");
  }

  Dataset d;
  d.images = Tensor({n, 1, rows, cols},
                    std::vector<double>(img.begin() + 16, img.begin() + 16 + static_cast<std::ptrdiff_t>(payload)));
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    if (d.labels[i] > 9) {
      throw ParseError(labels_path.string() + ": label " + std::to_string(d.labels[i]) +
                       " at offset " + std::to_string(8 + i));
    }
  }
  d.num_classes = 10;
  d.normalization = Normalization{0.0, 255.0};
  return d;
}

Dataset load_mnist_split(const std::filesystem::path& root, const std::string& split) {
  if (split != "train" && split != "t10k") {
    throw ConfigError("MNIST split must be 'train' or 't10k', got '" + split + "'");
  }
  return load_mnist_idx(root / (split + "-images-idx3-ubyte"), root / (split + "-labels-idx1-ubyte"));
}

void write_mnist_idx(const Dataset& data, const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path) {
  if (data.images.ndim() != 4 || data.images.dim(1) != 1) {
    throw ShapeError("IDX export needs [N,1,H,W] images, got " + to_string(data.images.shape()));
  }
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw InputError("cannot open IDX output files for writing");
  const auto& s = data.images.shape();
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(s[0]));
  write_be32(img, static_cast<std::uint32_t>(s[2]));
  write_be32(img, static_cast<std::uint32_t>(s[3]));
  for (double v : data.images.data()) {
    const double c = std::clamp(std::round(v), 0.0, 255.0);
    img.put(static_cast<char>(static_cast<unsigned char>(c)));
  }
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(data.labels.size()));
  for (int l : data.labels) lab.put(static_cast<char>(l));
}

// -- synthetic ------------------------------------------------------------------

Dataset synthetic_blobs(const BlobOptions& o) {
  if (o.classes < 2) throw ConfigError("synthetic_blobs: need at least two classes");
  if (o.n_per_class == 0) throw ConfigError("synthetic_blobs: n_per_class must be positive");
  if (o.sample_shape.empty()) throw ConfigError("synthetic_blobs: empty sample shape");
  const std::size_t dim = numel(o.sample_shape);
  const bool as_image = o.sample_shape.size() == 3;
  Rng rng(derive_seed(o.seed, "blobs"));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> centres(o.classes, std::vector<double>(dim));
  for (auto& c : centres) {
    double norm = 0.0;
    for (auto& x : c) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : c) x *= o.separation / norm;
  }

  const std::size_t n = o.n_per_class * o.classes;
  std::vector<double> values(n * dim);
  Dataset d;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % o.classes;
    d.labels[i] = static_cast<int>(cls);
    for (std::size_t j = 0; j < dim; ++j) {
      double v = centres[cls][j] + normal(rng);
      if (as_image) v = std::clamp(127.5 + 12.75 * v, 0.0, 255.0);
      values[i * dim + j] = v;
    }
  }
  Shape shape{n};
  shape.insert(shape.end(), o.sample_shape.begin(), o.sample_shape.end());
  d.images = Tensor(std::move(shape), std::move(values));
  d.num_classes = o.classes;
  d.normalization = as_image ? Normalization{127.5, 12.75} : Normalization{0.0, 1.0};
  return d;
}

Dataset subset(const Dataset& data, std::size_t n, std::uint64_t seed) {
  data.validate();
  if (n == 0 || n > data.size()) {
    throw ConfigError("subset: requested " + std::to_string(n) + " of " +
                      std::to_string(data.size()) + " items");
  }
  if (n == data.size()) return data;
  Rng rng(derive_seed(seed, "subset"));
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  }
  for (auto& pool : by_class) std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  std::vector<std::size_t> cursor(data.num_classes, 0);
  while (chosen.size() < n) {
    for (std::size_t c = 0; c < data.num_classes && chosen.size() < n; ++c) {
      if (cursor[c] < by_class[c].size()) chosen.push_back(by_class[c][cursor[c]++]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return data.select(chosen);
}

// -- dump -------------------------------------------------------------------

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  Container c;
  c.metadata["format"] = "nodebench-dataset";
  c.metadata["num_classes"] = std::to_string(data.num_classes);
  const std::size_t n = data.labels.size();
  c.tensors.emplace_back("images", data.images);
  c.tensors.emplace_back("labels", Tensor({n}, std::vector<double>(data.labels.begin(), data.labels.end())));
  c.tensors.emplace_back("normalization",
                         Tensor({2}, std::vector<double>{data.normalization.mean, data.normalization.std}));
  write_container(path, c);
}

Dataset load_dataset(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.metadata["format"] != "nodebench-dataset") {
    throw InputError(path.string() + ": not a dataset dump");
  }
  Dataset d;
  d.images = c.tensor("images");
  const Tensor& labels = c.tensor("labels");
  for (double l : labels.data()) d.labels.push_back(static_cast<int>(l));
  d.num_classes = static_cast<std::size_t>(std::stoul(c.metadata.at("num_classes")));
  const Tensor& norm = c.tensor("normalization");
  d.normalization = Normalization{norm[0], norm[1]};
  d.validate();
  return d;
}

}  // namespace nodebench
