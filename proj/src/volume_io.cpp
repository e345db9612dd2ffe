#include "anatomatch/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace anatomatch {
namespace {

using Bytes = std::vector<unsigned char>;
using nlohmann::json;

void put_u32(Bytes& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

void put_f32(Bytes& out, float f) { put_u32(out, std::bit_cast<uint32_t>(f)); }

Bytes frame(const char magic[4], const json& header) {
  const std::string h = header.dump();
  Bytes out(magic, magic + 4);
  put_u32(out, static_cast<uint32_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

struct Framed {
  json header;
  const unsigned char* payload = nullptr;
  size_t payload_bytes = 0;
};

Framed unframe(const Bytes& bytes, const char magic[4]) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0)
    fail(ErrorKind::Format, std::string("bad magic, expected ") + std::string(magic, 4));
  if (bytes.size() < 8) fail(ErrorKind::Truncated, "file ends inside the header length field");
  const uint32_t hlen = get_u32(bytes.data() + 4);
  if (bytes.size() - 8 < hlen) fail(ErrorKind::Truncated, "file ends inside the JSON header");
  Framed f;
  try {
    f.header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + hlen);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed JSON header: ") + e.what());
  }
  if (!f.header.is_object()) fail(ErrorKind::Format, "header is not a JSON object");
  f.payload = bytes.data() + 8 + hlen;
  f.payload_bytes = bytes.size() - 8 - hlen;
  return f;
}

template <class T>
T field(const json& h, const char* key) {
  if (!h.contains(key)) fail(ErrorKind::Format, std::string("header missing field '") + key + "'");
  try {
    return h.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Format, std::string("header field '") + key + "' has the wrong type");
  }
}

Dims header_dims(const json& h) {
  auto d = field<std::vector<int64_t>>(h, "dims");
  if (d.size() != 3 || d[0] <= 0 || d[1] <= 0 || d[2] <= 0)
    fail(ErrorKind::Format, "header 'dims' must be three positive integers");
  return {d[0], d[1], d[2]};
}

Spacing header_spacing(const json& h) {
  auto s = field<std::vector<double>>(h, "spacing_mm");
  if (s.size() != 3 || !(s[0] > 0) || !(s[1] > 0) || !(s[2] > 0))
    fail(ErrorKind::Format, "header 'spacing_mm' must be three positive numbers");
  return {s[0], s[1], s[2]};
}

size_t checked_count(const Framed& f, size_t elem_bytes, uint64_t expected) {
  if (f.payload_bytes % elem_bytes != 0)
    fail(ErrorKind::Truncated, "payload ends in the middle of an element");
  const uint64_t have = f.payload_bytes / elem_bytes;
  if (have != expected)
    fail(ErrorKind::Length, "payload holds " + std::to_string(have) + " elements but header implies " +
                                std::to_string(expected));
  return static_cast<size_t>(have);
}

std::vector<float> read_f32(const unsigned char* p, size_t n) {
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  return out;
}

}  // namespace

Bytes encode_volume(const EmbeddingVolume& vol) {
  const auto& d = vol.dims();
  const auto& s = vol.spacing();
  json h = {{"dims", {d.z, d.y, d.x}},
            {"channels", vol.channels()},
            {"spacing_mm", {s.z, s.y, s.x}},
            {"normalized", vol.normalized()}};
  Bytes out = frame("AEV1", h);
  out.reserve(out.size() + vol.data().size() * 4);
  for (float f : vol.data()) put_f32(out, f);
  return out;
}

EmbeddingVolume decode_embedding_volume(const Bytes& bytes) {
  const Framed f = unframe(bytes, "AEV1");
  const Dims d = header_dims(f.header);
  const int channels = field<int>(f.header, "channels");
  if (channels <= 0) fail(ErrorKind::Format, "header 'channels' must be positive");
  const Spacing s = header_spacing(f.header);
  const bool normalized = field<bool>(f.header, "normalized");
  const size_t n = checked_count(f, 4, static_cast<uint64_t>(d.count()) * channels);
  return EmbeddingVolume(d, channels, s, read_f32(f.payload, n), normalized);
}

Bytes encode_volume(const LabelVolume& vol) {
  const auto& d = vol.dims();
  const auto& s = vol.spacing();
  json h = {{"dims", {d.z, d.y, d.x}},
            {"num_classes", vol.num_classes()},
            {"spacing_mm", {s.z, s.y, s.x}}};
  Bytes out = frame("ALV1", h);
  out.reserve(out.size() + vol.data().size() * 2);
  for (uint16_t l : vol.data()) {
    out.push_back(static_cast<unsigned char>(l & 0xff));
    out.push_back(static_cast<unsigned char>(l >> 8));
  }
  return out;
}

LabelVolume decode_label_volume(const Bytes& bytes) {
  const Framed f = unframe(bytes, "ALV1");
  const Dims d = header_dims(f.header);
  const int k = field<int>(f.header, "num_classes");
  if (k <= 0 || k > 65536) fail(ErrorKind::Format, "header 'num_classes' out of range");
  const Spacing s = header_spacing(f.header);
  const size_t n = checked_count(f, 2, static_cast<uint64_t>(d.count()));
  std::vector<uint16_t> data(n);
  for (size_t i = 0; i < n; ++i)
    data[i] = static_cast<uint16_t>(f.payload[2 * i] | (f.payload[2 * i + 1] << 8));
  for (uint16_t l : data)
    if (l >= k) fail(ErrorKind::Format, "label value exceeds num_classes");
  return LabelVolume(d, k, s, std::move(data));
}

Bytes encode_head(const HeadWeights& h) {
  require(h.in > 0 && h.out > 0, "head shape must be positive");
  require(h.weights.size() == static_cast<size_t>(h.in) * h.out, "head weight count mismatch");
  Bytes out = frame("APH1", json{{"in", h.in}, {"out", h.out}, {"head", h.head}});
  for (float f : h.weights) put_f32(out, f);
  return out;
}

HeadWeights decode_head(const Bytes& bytes) {
  const Framed f = unframe(bytes, "APH1");
  HeadWeights h;
  h.in = field<int>(f.header, "in");
  h.out = field<int>(f.header, "out");
  h.head = field<std::string>(f.header, "head");
  if (h.in <= 0 || h.out <= 0) fail(ErrorKind::Format, "head shape must be positive");
  if (h.head != "appearance" && h.head != "semantic")
    fail(ErrorKind::Format, "head must be 'appearance' or 'semantic'");
  const size_t n = checked_count(f, 4, static_cast<uint64_t>(h.in) * h.out);
  h.weights = read_f32(f.payload, n);
  return h;
}

Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open for reading: " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::Io, "read failed: " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, Bytes(text.begin(), text.end()));
}

void write_volume(const EmbeddingVolume& vol, const std::filesystem::path& path) {
  write_file_bytes(path, encode_volume(vol));
}
EmbeddingVolume read_embedding_volume(const std::filesystem::path& path) {
  return decode_embedding_volume(read_file_bytes(path));
}
void write_volume(const LabelVolume& vol, const std::filesystem::path& path) {
  write_file_bytes(path, encode_volume(vol));
}
LabelVolume read_label_volume(const std::filesystem::path& path) {
  return decode_label_volume(read_file_bytes(path));
}
void write_head(const HeadWeights& h, const std::filesystem::path& path) {
  write_file_bytes(path, encode_head(h));
}
HeadWeights read_head(const std::filesystem::path& path) { return decode_head(read_file_bytes(path)); }

}  // namespace anatomatch
