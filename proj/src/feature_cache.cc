#include "gebc/feature_cache.h"

#include <bit>
#include <cmath>
#include <cstring>

#include "gebc/annotations.h"
#include "gebc/error.h"

namespace gebc {

static_assert(std::endian::native == std::endian::little,
              "cache encoding assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptCache("feature cache truncated");
  }

  std::string_view bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::string encode_features(const FeatureCacheEntry& entry) {
  if (entry.data.size() != entry.element_count()) {
    throw ShapeMismatch("feature entry '" + entry.extractor_name +
                        "': data length does not match shape");
  }
  for (float v : entry.data) {
    if (!std::isfinite(v)) {
      throw InvariantViolation("feature entry '" + entry.extractor_name +
                               "' contains non-finite values");
    }
  }
  std::string out;
  out.reserve(4 + 4 + 4 + entry.extractor_name.size() + 4 + 24 + entry.data.size() * 4);
  out.append(kFeatureCacheMagic.data(), kFeatureCacheMagic.size());
  put<uint32_t>(out, kFeatureCacheVersion);
  put<uint32_t>(out, static_cast<uint32_t>(entry.extractor_name.size()));
  out.append(entry.extractor_name);
  put<uint32_t>(out, 3);
  for (uint64_t d : entry.shape) put<uint64_t>(out, d);
  const size_t payload = entry.data.size() * sizeof(float);
  const size_t at = out.size();
  out.resize(at + payload);
  std::memcpy(out.data() + at, entry.data.data(), payload);
  return out;
}

FeatureCacheEntry decode_features(std::string_view bytes) {
  Reader r(bytes);
  const auto magic = r.take(4);
  if (std::memcmp(magic.data(), kFeatureCacheMagic.data(), 4) != 0) {
    throw CorruptCache("feature cache has bad magic");
  }
  const auto version = r.get<uint32_t>();
  if (version != kFeatureCacheVersion) {
    throw CorruptCache("unsupported feature cache version " + std::to_string(version));
  }
  FeatureCacheEntry e;
  const auto name_len = r.get<uint32_t>();
  e.extractor_name = std::string(r.take(name_len));
  if (r.get<uint32_t>() != 3) throw CorruptCache("feature cache rank must be 3");
  for (auto& d : e.shape) d = r.get<uint64_t>();
  const uint64_t count = e.element_count();
  if (e.shape[1] != 0 && e.shape[2] != 0 &&
      (count / e.shape[2] / e.shape[1] != e.shape[0])) {
    throw CorruptCache("feature cache dims overflow");
  }
  if (r.remaining() != count * sizeof(float)) {
    throw CorruptCache("feature cache payload length does not match its shape");
  }
  e.data.resize(count);
  const auto payload = r.take(count * sizeof(float));
  std::memcpy(e.data.data(), payload.data(), payload.size());
  return e;
}

void store_features(const FeatureCacheEntry& entry, const std::filesystem::path& path) {
  write_file_atomic(path, encode_features(entry));
}

FeatureCacheEntry load_features(const std::filesystem::path& path) {
  return decode_features(read_file(path));
}

}  // namespace gebc
