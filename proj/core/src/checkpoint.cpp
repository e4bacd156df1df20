#include "instformer/checkpoint.hpp"

#include <cstring>

#include "binary_io.hpp"
#include "instformer/error.hpp"

namespace instformer {

namespace {
constexpr char kMagic[8] = {'I', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};
}

std::vector<std::uint8_t> serialize_checkpoint(const AssemblyModel& model) {
  detail::ByteWriter w;
  for (char c : kMagic) w.put(c);
  w.put(kCheckpointVersion);
  const auto& c = model.config();
  for (std::size_t v : {c.d_model, c.n_heads, c.n_layers, c.noise_dim, c.max_parts, c.n_pc, c.head_width, c.ffn_multiplier})
    w.put(static_cast<std::uint64_t>(v));
  w.put(c.noise_scale);
  w.put(static_cast<std::uint8_t>(c.encoding));
  w.put(static_cast<std::uint8_t>(model.has_decoder()));
  const auto& entries = model.parameters().entries();
  w.put(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    w.put_string(name);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    for (double v : t.value()) w.put(v);
  }
  const auto crc = detail::crc32_of(w.bytes().data(), w.bytes().size());
  w.put(crc);
  return std::move(w.bytes());
}

AssemblyModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("checkpoint: not a checkpoint file");
  detail::ByteReader r(bytes.data(), bytes.size() - 4);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint: version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (stored_crc != detail::crc32_of(bytes.data(), bytes.size() - 4))
    throw ChecksumMismatch("checkpoint: checksum mismatch", 0);

  ModelConfig c;
  for (std::size_t* f : {&c.d_model, &c.n_heads, &c.n_layers, &c.noise_dim, &c.max_parts, &c.n_pc, &c.head_width,
                         &c.ffn_multiplier})
    *f = static_cast<std::size_t>(r.get<std::uint64_t>());
  c.noise_scale = r.get<double>();
  const auto encoding = r.get<std::uint8_t>();
  if (encoding > static_cast<std::uint8_t>(EncodingMode::both)) throw FormatError("checkpoint: bad encoding mode");
  c.encoding = static_cast<EncodingMode>(encoding);
  const bool decoder = r.get<std::uint8_t>() != 0;
  if (!r.ok()) throw TruncatedFile("checkpoint: truncated header");

  AssemblyModel model(c, 0);
  if (decoder) model.add_decoder(0);
  auto& entries = model.parameters().entries();
  const auto count = r.get<std::uint32_t>();
  if (count != entries.size())
    throw FormatError("checkpoint: " + std::to_string(count) + " tensors, model expects " + std::to_string(entries.size()));
  for (auto& [name, t] : entries) {
    const auto stored = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    ad::Shape shape;
    for (std::uint32_t i = 0; i < rank && r.ok(); ++i) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    if (!r.ok()) throw TruncatedFile("checkpoint: truncated at tensor " + name);
    if (stored != name || shape != t.shape())
      throw FormatError("checkpoint: tensor '" + stored + "' " + ad::to_string(shape) + " does not match '" + name +
                        "' " + ad::to_string(t.shape()));
    auto& values = t.mutable_value();
    for (auto& v : values) v = r.get<double>();
    if (!r.ok()) throw TruncatedFile("checkpoint: truncated in tensor " + name);
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const AssemblyModel& model, const std::string& path) {
  detail::write_file(path, serialize_checkpoint(model));
}

AssemblyModel load_checkpoint(const std::string& path) { return deserialize_checkpoint(detail::read_file(path)); }

}  // namespace instformer
