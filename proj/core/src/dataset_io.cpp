#include "instformer/dataset_io.hpp"

#include <cstring>
#include <map>

#include "json.hpp"

#include "binary_io.hpp"
#include "instformer/error.hpp"

namespace instformer {

namespace {

constexpr char kMagic[8] = {'I', 'F', 'D', 'A', 'T', 'A', '\0', '\0'};

std::vector<std::uint8_t> encode_record(const AssemblySample& s) {
  detail::ByteWriter w;
  w.put(s.id);
  w.put(static_cast<std::uint8_t>(s.category));
  w.put(static_cast<std::uint8_t>(s.split));
  w.put(static_cast<std::uint32_t>(s.parts.size()));
  for (const auto& part : s.parts) {
    w.put(static_cast<std::uint32_t>(part.size()));
    for (const auto& p : part.points())
      for (int c = 0; c < 3; ++c) {
        const auto f = static_cast<float>(p[c]);
        if (static_cast<double>(f) != p[c])
          throw InvalidArgument("serialize_dataset: sample " + std::to_string(s.id) +
                                " has points that are not exactly representable as 32-bit floats");
        w.put(f);
      }
  }
  for (const auto& pose : s.gt_poses)
    for (double v : pose.to_array()) w.put(v);
  w.put(static_cast<std::uint32_t>(s.partition.n_classes()));
  for (const auto& cls : s.partition.classes()) {
    w.put(static_cast<std::uint32_t>(cls.size()));
    for (auto i : cls) w.put(static_cast<std::uint32_t>(i));
  }
  w.put(static_cast<std::uint32_t>(s.adjacency.size()));
  for (const auto& [i, j] : s.adjacency) {
    w.put(static_cast<std::uint32_t>(i));
    w.put(static_cast<std::uint32_t>(j));
  }
  w.put(static_cast<std::uint32_t>(s.contacts.size()));
  for (const auto& c : s.contacts) {
    w.put(static_cast<std::uint32_t>(c.i));
    w.put(static_cast<std::uint32_t>(c.j));
    for (int k = 0; k < 3; ++k) w.put(c.c_ij[k]);
    for (int k = 0; k < 3; ++k) w.put(c.c_ji[k]);
  }
  return std::move(w.bytes());
}

AssemblySample decode_record(const std::uint8_t* data, std::size_t size, std::size_t index) {
  detail::ByteReader r(data, size);
  auto fail = [&](const std::string& what) -> FormatError {
    return FormatError("dataset record " + std::to_string(index) + ": " + what);
  };
  AssemblySample s;
  s.id = r.get<std::uint64_t>();
  const auto category = r.get<std::uint8_t>();
  const auto split = r.get<std::uint8_t>();
  if (category > 2 || split > 2) throw fail("bad category or split tag");
  s.category = static_cast<Category>(category);
  s.split = static_cast<Split>(split);
  const auto n = r.get<std::uint32_t>();
  if (!r.ok() || n > r.remaining()) throw fail("bad part count");
  for (std::uint32_t p = 0; p < n; ++p) {
    const auto m = r.get<std::uint32_t>();
    if (!r.ok() || m > r.remaining() / 12) throw fail("bad point count");
    PointSet pts(m);
    for (auto& x : pts)
      for (int c = 0; c < 3; ++c) x[c] = static_cast<double>(r.get<float>());
    s.parts.emplace_back(std::move(pts));
  }
  for (std::uint32_t p = 0; p < n; ++p) {
    double v[7];
    for (auto& x : v) x = r.get<double>();
    s.gt_poses.push_back(Pose::from_array(v));
  }
  const auto k = r.get<std::uint32_t>();
  if (!r.ok() || k > r.remaining()) throw fail("bad class count");
  std::vector<std::vector<std::size_t>> classes(k);
  for (auto& cls : classes) {
    const auto c = r.get<std::uint32_t>();
    if (!r.ok() || c > r.remaining()) throw fail("bad class size");
    for (std::uint32_t t = 0; t < c; ++t) cls.push_back(r.get<std::uint32_t>());
  }
  if (!r.ok()) throw fail("truncated partition");
  s.partition = EquivalencePartition(std::move(classes), n);
  const auto a = r.get<std::uint32_t>();
  if (!r.ok() || a > r.remaining()) throw fail("bad adjacency count");
  for (std::uint32_t t = 0; t < a; ++t) {
    const std::size_t i = r.get<std::uint32_t>();
    const std::size_t j = r.get<std::uint32_t>();
    s.adjacency.emplace_back(i, j);
  }
  const auto c = r.get<std::uint32_t>();
  if (!r.ok() || c > r.remaining()) throw fail("bad contact count");
  for (std::uint32_t t = 0; t < c; ++t) {
    ContactPair pair;
    pair.i = r.get<std::uint32_t>();
    pair.j = r.get<std::uint32_t>();
    for (int q = 0; q < 3; ++q) pair.c_ij[q] = r.get<double>();
    for (int q = 0; q < 3; ++q) pair.c_ji[q] = r.get<double>();
    s.contacts.push_back(pair);
  }
  if (!r.ok()) throw fail("record body shorter than its fields");
  if (r.remaining() != 0) throw fail("trailing bytes in record");
  s.validate();
  return s;
}

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const std::vector<AssemblySample>& samples) {
  detail::ByteWriter w;
  for (char c : kMagic) w.put(c);
  w.put(kDatasetVersion);
  w.put(static_cast<std::uint64_t>(samples.size()));
  for (const auto& s : samples) {
    const auto record = encode_record(s);
    w.put(static_cast<std::uint64_t>(record.size()));
    w.put_bytes(record);
    w.put(detail::crc32_of(record.data(), record.size()));
  }
  return std::move(w.bytes());
}

std::vector<AssemblySample> deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    if (bytes.size() < sizeof(kMagic) && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0)
      throw TruncatedFile("dataset: file ends inside the header");
    throw FormatError("dataset: not a dataset file");
  }
  detail::ByteReader r(bytes.data() + sizeof(kMagic), bytes.size() - sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (!r.ok()) throw TruncatedFile("dataset: file ends inside the header");
  if (version != kDatasetVersion)
    throw VersionMismatch("dataset: format version " + std::to_string(version) + ", this build reads version " +
                          std::to_string(kDatasetVersion));
  std::vector<AssemblySample> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto size = r.get<std::uint64_t>();
    const std::uint8_t* record = r.ok() && size <= r.remaining() ? r.get_span(size) : nullptr;
    const auto crc = r.get<std::uint32_t>();
    if (!record || !r.ok())
      throw TruncatedFile("dataset: file truncated in record " + std::to_string(i) + " of " + std::to_string(count));
    if (crc != detail::crc32_of(record, size))
      throw ChecksumMismatch("dataset: checksum mismatch in record " + std::to_string(i), i);
    out.push_back(decode_record(record, size, i));
  }
  if (r.remaining() != 0) throw FormatError("dataset: trailing bytes after the last record");
  return out;
}

void save_dataset(const std::vector<AssemblySample>& samples, const std::string& path) {
  detail::write_file(path, serialize_dataset(samples));
}

std::vector<AssemblySample> load_dataset(const std::string& path) { return deserialize_dataset(detail::read_file(path)); }

std::string dataset_manifest(const std::vector<AssemblySample>& samples) {
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::size_t parts = 0;
  for (const auto& s : samples) {
    ++counts[std::string(to_string(s.category))][std::string(to_string(s.split))];
    parts += s.n_parts();
  }
  nlohmann::json j;
  j["format_version"] = kDatasetVersion;
  j["samples"] = samples.size();
  j["parts"] = parts;
  j["counts"] = counts;
  return j.dump(2) + "\n";
}

std::vector<AssemblySample> filter_split(const std::vector<AssemblySample>& samples, Split split) {
  std::vector<AssemblySample> out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(s);
  return out;
}

}  // namespace instformer
