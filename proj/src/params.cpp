#include "scnaps/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "scnaps/errors.hpp"

namespace scnaps {

Tensor& ParameterStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, values_.size());
  names_.push_back(name);
  values_.push_back(std::move(init));
  return values_.back();
}

bool ParameterStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParameterStore::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

Tensor& ParameterStore::get(std::string_view name) { return values_[index_of(name)]; }
const Tensor& ParameterStore::get(std::string_view name) const { return values_[index_of(name)]; }

std::size_t ParameterStore::scalar_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i].starts_with(prefix)) n += values_[i].size();
  return n;
}

BoundParameters::BoundParameters(ad::Tape& tape, const ParameterStore& store, bool requires_grad)
    : tape_(tape),
      store_(store),
      requires_grad_(requires_grad),
      bound_(store.size()),
      is_bound_(store.size(), false) {}

BoundParameters::BoundParameters(ad::Tape& tape, const ParameterStore& store, std::span<const ad::Var> leaves)
    : tape_(tape),
      store_(store),
      requires_grad_(true),
      bound_(leaves.begin(), leaves.end()),
      is_bound_(store.size(), true) {
  if (leaves.size() != store.size())
    throw ShapeError("BoundParameters: " + std::to_string(leaves.size()) + " leaves for " +
                     std::to_string(store.size()) + " parameters");
}

ad::Var BoundParameters::operator[](std::string_view name) const {
  const std::size_t i = store_.index_of(name);
  if (!is_bound_[i]) {
    bound_[i] = requires_grad_ ? tape_.leaf(store_.values()[i]) : tape_.constant(store_.values()[i]);
    is_bound_[i] = true;
  }
  return bound_[i];
}

std::vector<Tensor> BoundParameters::gradients() const {
  std::vector<Tensor> out;
  out.reserve(store_.size());
  for (std::size_t i = 0; i < store_.size(); ++i) {
    const Tensor& v = store_.values()[i];
    out.push_back(is_bound_[i] ? tape_.grad(bound_[i]) : Tensor(v.rows(), v.cols()));
  }
  return out;
}

// ---- checkpoint ---------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'C', 'N', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw ParseError("truncated", bytes_.size(),
                       "checkpoint truncated at byte offset " + std::to_string(bytes_.size()));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u64(out, c.episode);
  put_f64(out, c.validation_accuracy);
  put_u64(out, c.config_fingerprint);
  put_u32(out, static_cast<std::uint32_t>(c.params.size()));
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    const std::string& name = c.params.names()[i];
    const Tensor& t = c.params.values()[i];
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.data()) put_f64(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(8) != std::string(kMagic, 8)) throw ParseError("bad_magic", 0, "checkpoint: bad magic at byte offset 0");
  const std::size_t version_at = r.pos();
  if (const auto v = r.u32(); v != kVersion)
    throw ParseError("bad_version", version_at,
                     "checkpoint: unsupported version " + std::to_string(v) + " at byte offset 8");
  Checkpoint c;
  c.episode = r.u64();
  c.validation_accuracy = r.f64();
  c.config_fingerprint = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    std::string name = r.str(len);
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    r.need(std::size_t{rows} * cols * 8);
    std::vector<double> data(std::size_t{rows} * cols);
    for (double& v : data) v = r.f64();
    c.params.add(name, Tensor(rows, cols, std::move(data)));
  }
  if (!r.done())
    throw ParseError("trailing_bytes", r.pos(), "checkpoint: trailing bytes at offset " + std::to_string(r.pos()));
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return decode_checkpoint(bytes);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace scnaps
