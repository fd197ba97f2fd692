#include "rectflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <zlib.h>

#include "rectflow/error.hpp"

namespace rectflow {

std::string to_string(CheckpointKind kind) {
  switch (kind) {
    case CheckpointKind::Flow: return "flow";
    case CheckpointKind::CleanClassifier: return "clean-classifier";
    case CheckpointKind::NoiseAwareClassifier: return "noise-aware-classifier";
  }
  return "unknown";
}

namespace {

constexpr char kMagic[4] = {'A', 'F', 'L', 'W'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw FormatError("checkpoint is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text(std::uint64_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(c, p, static_cast<uInt>(n)));
}

nlohmann::json parse_json(const std::string& s, const char* what) {
  try {
    return nlohmann::json::parse(s);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("checkpoint {} is not valid JSON: {}", what, e.what()));
  }
}

}  // namespace

std::vector<std::uint8_t> serialize(Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointFormatVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.kind));
  w.text(ckpt.architecture.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.parameters.size()));
  for (std::size_t i = 0; i < ckpt.parameters.size(); ++i) {
    const std::string& name = ckpt.parameters.name(i);
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    const Matrix& a = ckpt.parameters.array(i);
    w.u64(static_cast<std::uint64_t>(a.rows()));
    w.u64(static_cast<std::uint64_t>(a.cols()));
    for (Eigen::Index k = 0; k < a.size(); ++k) w.f64(a.data()[k]);
  }
  w.text(ckpt.dataset.dump());
  w.u64(ckpt.seed);
  ckpt.checksum = crc(w.data().data(), w.data().size());
  w.u32(ckpt.checksum);
  return std::move(w.data());
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint (bad magic header)");
  }
  if (bytes.size() < 8) throw FormatError("checkpoint is truncated");
  const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  if (crc(bytes.data(), bytes.size() - 4) != stored) throw FormatError("checkpoint checksum mismatch");

  Reader r(bytes.first(bytes.size() - 4));
  r.text(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw FormatError(fmt::format("unsupported checkpoint format version {}", version));
  }
  Checkpoint c;
  const std::uint32_t kind = r.u32();
  if (kind < 1 || kind > 3) throw FormatError(fmt::format("unknown checkpoint kind {}", kind));
  c.kind = static_cast<CheckpointKind>(kind);
  c.architecture = parse_json(r.text(r.u64()), "architecture");
  const std::uint32_t n = r.u32();
  std::vector<ParameterSpec> specs;
  std::vector<Matrix> arrays;
  for (std::uint32_t i = 0; i < n; ++i) {
    ParameterSpec s;
    s.name = r.text(r.u32());
    s.rows = static_cast<Eigen::Index>(r.u64());
    s.cols = static_cast<Eigen::Index>(r.u64());
    r.need(static_cast<std::size_t>(s.rows * s.cols) * 8);
    Matrix a(s.rows, s.cols);
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = r.f64();
    specs.push_back(std::move(s));
    arrays.push_back(std::move(a));
  }
  c.parameters = ParameterStore(std::move(specs));
  for (std::size_t i = 0; i < arrays.size(); ++i) c.parameters.set(i, arrays[i]);
  c.dataset = parse_json(r.text(r.u64()), "dataset");
  c.seed = r.u64();
  if (r.pos() != bytes.size() - 4) throw FormatError("checkpoint has trailing bytes");
  c.checksum = stored;
  return c;
}

void save_checkpoint(const std::filesystem::path& path, Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write checkpoint '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("failed writing checkpoint '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

Checkpoint make_checkpoint(const VelocityField& field, const DatasetSpec& dataset, std::uint64_t seed) {
  return Checkpoint{CheckpointKind::Flow, field.architecture().to_json(), field.parameters().thawed_copy(),
                    dataset.to_json(), seed, 0};
}

Checkpoint make_checkpoint(const Classifier& classifier, const DatasetSpec& dataset, std::uint64_t seed) {
  return Checkpoint{classifier.time_aware() ? CheckpointKind::NoiseAwareClassifier : CheckpointKind::CleanClassifier,
                    classifier.architecture().to_json(), classifier.parameters().thawed_copy(), dataset.to_json(),
                    seed, 0};
}

VelocityField field_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::Flow) {
    throw FormatError(fmt::format("expected a flow checkpoint, found {}", to_string(ckpt.kind)));
  }
  try {
    VelocityField f(FieldArchitecture::from_json(ckpt.architecture), ckpt.parameters.thawed_copy());
    f.freeze();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("flow checkpoint architecture is malformed: {}", e.what()));
  }
}

std::shared_ptr<Classifier> classifier_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind == CheckpointKind::Flow) throw FormatError("expected a classifier checkpoint, found a flow");
  try {
    auto c = std::make_shared<Classifier>(ClassifierArchitecture::from_json(ckpt.architecture),
                                          ckpt.parameters.thawed_copy());
    c->freeze();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("classifier checkpoint architecture is malformed: {}", e.what()));
  }
}

}  // namespace rectflow
