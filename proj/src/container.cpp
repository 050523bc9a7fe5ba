#include "nodebench/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nodebench/models.hpp"

namespace nodebench {

namespace {

constexpr char kMagic[4] = {'N', 'B', 'C', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void expect_magic() {
    need(4);
    if (std::memcmp(bytes_.data(), kMagic, 4) != 0) fail("bad magic");
    pos_ += 4;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw InputError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated container");
  }
  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw InputError("container has no tensor named '" + name + "'");
}

void write_container(const std::filesystem::path& path, const Container& container) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(Container::kVersion);
  w.u32(static_cast<std::uint32_t>(container.metadata.size()));
  for (const auto& [k, v] : container.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(container.tensors.size()));
  for (const auto& [name, t] : container.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.ndim()));
    for (auto extent : t.shape()) w.u64(extent);
    for (double x : t.data()) w.f64(x);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != Container::kVersion) r.fail("unsupported container version " + std::to_string(version));
  Container c;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.metadata[k] = r.str();
  }
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) r.fail("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& extent : shape) {
      extent = r.u64();
      if (extent == 0) r.fail("zero extent in tensor '" + name + "'");
    }
    std::vector<double> values(numel(shape));
    for (auto& x : values) x = r.f64();
    c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& run_config) {
  Container c;
  c.metadata["format"] = "nodebench-model";
  c.metadata["rm_kind"] = to_string(model.kind());
  c.metadata["model_config"] = model.config().serialize();
  c.metadata["run_config"] = run_config;
  for (const auto& [name, t] : model.named_parameters()) c.tensors.emplace_back(name, t.clone());
  write_container(path, c);
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, std::string* run_config) {
  Container c = read_container(path);
  if (c.metadata["format"] != "nodebench-model") {
    throw InputError(path.string() + ": not a model checkpoint");
  }
  auto model = std::make_unique<Model>(parse_rm_kind(c.metadata.at("rm_kind")),
                                       ModelConfig::deserialize(c.metadata.at("model_config")), 0);
  auto params = model->named_parameters();
  if (params.size() != c.tensors.size()) {
    throw InputError(path.string() + ": expected " + std::to_string(params.size()) +
                     " tensors, found " + std::to_string(c.tensors.size()));
  }
  for (auto& [name, t] : params) {
    const Tensor& stored = c.tensor(name);
    if (stored.shape() != t.shape()) {
      throw InputError(path.string() + ": tensor '" + name + "' has shape " +
                       to_string(stored.shape()) + ", model expects " + to_string(t.shape()));
    }
    std::copy(stored.data().begin(), stored.data().end(), t.mutable_data().begin());
  }
  if (run_config) *run_config = c.metadata["run_config"];
  return model;
}

}  // namespace nodebench
