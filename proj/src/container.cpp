#include "reident/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "reident/error.hpp"

namespace reident {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'I', 'D', 'E', 'N', 'S', '\0'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() { return read_le(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(read_le(4)); }

  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw IngestError("container truncated");
  }

  std::uint64_t read_le(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_container(const Container& c) {
  std::string out(kMagic, kMagic + 8);
  put_u32(out, kContainerVersion);
  put_u64(out, c.header.size());
  out += c.header;
  put_u64(out, c.arrays.size());
  for (const auto& array : c.arrays) {
    put_u64(out, array.size());
    for (double v : array) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Container decode_container(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw IngestError("not a model/transform container (bad magic)");
  }
  Reader r(bytes);
  r.text(8);
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    throw IngestError("unsupported container version " + std::to_string(version));
  }
  Container c;
  c.header = r.text(r.u64());
  const std::uint64_t count = r.u64();
  for (std::uint64_t a = 0; a < count; ++a) {
    const std::uint64_t n = r.u64();
    if (n > bytes.size() / 8) throw IngestError("container truncated");
    std::vector<double> array(n);
    for (auto& v : array) v = std::bit_cast<double>(r.u64());
    c.arrays.push_back(std::move(array));
  }
  if (!r.done()) throw IngestError("trailing bytes after container payload");
  return c;
}

void write_container(const std::filesystem::path& path, const Container& container) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  const std::string bytes = encode_container(container);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

}  // namespace reident
