#pragma once

// Reader/writer for the safetensors layout:
//   u64 little-endian header length N | N bytes of UTF-8 JSON | raw tensor bytes.
// The JSON maps tensor name -> {"dtype", "shape", "data_offsets": [begin, end]},
// offsets relative to the first byte after the header.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lattr/error.hpp"

namespace lattr {

struct TensorInfo {
  std::string dtype;
  std::vector<std::size_t> shape;
  std::size_t begin = 0;  // relative to the data section
  std::size_t end = 0;

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
};

namespace detail {

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F64") return 8;
  if (dtype == "F32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  return 0;
}

inline float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t man = h & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0) {
    if (man == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((man & 0x400u) == 0) {
        man <<= 1;
        --exp;
      }
      man &= 0x3FFu;
      bits = sign | (exp << 23) | (man << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (man << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (man << 13);
  }
  return std::bit_cast<float>(bits);
}

inline float bf16_to_float(std::uint16_t h) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

template <typename Raw>
Raw load_le(const unsigned char* p) {
  Raw v{};
  std::memcpy(&v, p, sizeof(Raw));
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  return v;
}

}  // namespace detail

class SafetensorsFile {
 public:
  static SafetensorsFile open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open weight file " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    if (size < 8) throw ParseError("file shorter than the 8-byte header length", 0);
    unsigned char len_bytes[8];
    in.read(reinterpret_cast<char*>(len_bytes), 8);
    const auto header_len = detail::load_le<std::uint64_t>(len_bytes);
    if (header_len > size - 8) {
      throw ParseError("header length " + std::to_string(header_len) + " exceeds file size " +
                           std::to_string(size),
                       0);
    }
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    SafetensorsFile f;
    f.path_ = path;
    f.data_start_ = 8 + header_len;
    f.data_size_ = size - f.data_start_;
    f.parse_header(header);
    return f;
  }

  static SafetensorsFile from_bytes(std::vector<unsigned char> bytes) {
    if (bytes.size() < 8) throw ParseError("buffer shorter than the 8-byte header length", 0);
    const auto header_len = detail::load_le<std::uint64_t>(bytes.data());
    if (header_len > bytes.size() - 8) {
      throw ParseError("header length " + std::to_string(header_len) + " exceeds buffer size " +
                           std::to_string(bytes.size()),
                       0);
    }
    SafetensorsFile f;
    f.data_start_ = 8 + header_len;
    f.data_size_ = bytes.size() - f.data_start_;
    f.parse_header(std::string(bytes.begin() + 8, bytes.begin() + 8 + header_len));
    f.buffer_ = std::move(bytes);
    return f;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const TensorInfo& info(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw MissingTensorError(name);
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : tensors_) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  // Reads a tensor and converts it to T.
  template <typename T>
  std::vector<T> read(const std::string& name) const {
    const TensorInfo& ti = info(name);
    const std::size_t n = ti.numel();
    std::vector<unsigned char> raw(ti.end - ti.begin);
    if (!buffer_.empty()) {
      std::memcpy(raw.data(), buffer_.data() + data_start_ + ti.begin, raw.size());
    } else {
      std::ifstream in(path_, std::ios::binary);
      in.seekg(static_cast<std::streamoff>(data_start_ + ti.begin));
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
      if (!in) throw ParseError("truncated data for tensor '" + name + "'", data_start_ + ti.begin);
    }
    std::vector<T> out(n);
    const unsigned char* p = raw.data();
    if (ti.dtype == "F32") {
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(detail::load_le<float>(p + 4 * i));
    } else if (ti.dtype == "F64") {
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(detail::load_le<double>(p + 8 * i));
    } else if (ti.dtype == "F16") {
      for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<T>(detail::half_to_float(detail::load_le<std::uint16_t>(p + 2 * i)));
    } else {
      for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<T>(detail::bf16_to_float(detail::load_le<std::uint16_t>(p + 2 * i)));
    }
    return out;
  }

 private:
  void parse_header(const std::string& header) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON header: ") + e.what(), 8 + e.byte);
    }
    if (!j.is_object()) throw ParseError("header is not a JSON object", 8);
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "__metadata__") {
        if (!it->is_object()) throw ParseError("__metadata__ must be an object", 8);
        for (auto m = it->begin(); m != it->end(); ++m)
          if (m->is_string()) metadata_[m.key()] = m->get<std::string>();
        continue;
      }
      const auto& e = *it;
      if (!e.is_object() || !e.contains("dtype") || !e.contains("shape") ||
          !e.contains("data_offsets")) {
        throw ParseError("malformed entry for tensor '" + it.key() + "'", 8);
      }
      TensorInfo ti;
      ti.dtype = e["dtype"].get<std::string>();
      ti.shape = e["shape"].get<std::vector<std::size_t>>();
      const auto offs = e["data_offsets"].get<std::vector<std::size_t>>();
      if (offs.size() != 2 || offs[0] > offs[1]) {
        throw ParseError("bad data_offsets for tensor '" + it.key() + "'", 8);
      }
      ti.begin = offs[0];
      ti.end = offs[1];
      const std::size_t width = detail::dtype_size(ti.dtype);
      if (width == 0) throw ParseError("unsupported dtype '" + ti.dtype + "' for '" + it.key() + "'", 8);
      if (ti.end > data_size_) {
        throw ParseError("tensor '" + it.key() + "' extends past end of file", data_start_ + ti.end);
      }
      if (ti.end - ti.begin != ti.numel() * width) {
        throw ParseError("byte range of '" + it.key() + "' does not match its shape",
                         data_start_ + ti.begin);
      }
      tensors_.emplace(it.key(), std::move(ti));
    }
  }

  std::filesystem::path path_;
  std::vector<unsigned char> buffer_;
  std::size_t data_start_ = 0;
  std::size_t data_size_ = 0;
  std::map<std::string, TensorInfo> tensors_;
  std::map<std::string, std::string> metadata_;
};

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

// Serializes tensors as F32 (or F64 when `f64`), in the order given.
inline std::vector<unsigned char> encode_safetensors(const std::vector<NamedTensor>& tensors,
                                                     bool f64 = false) {
  nlohmann::json header = nlohmann::json::object();
  std::size_t offset = 0;
  const std::size_t width = f64 ? 8 : 4;
  for (const auto& t : tensors) {
    const std::size_t bytes = t.values.size() * width;
    header[t.name] = {{"dtype", f64 ? "F64" : "F32"},
                      {"shape", t.shape},
                      {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string h = header.dump();
  while ((8 + h.size()) % 8 != 0) h.push_back(' ');
  std::vector<unsigned char> out(8 + h.size() + offset);
  const std::uint64_t len = h.size();
  std::memcpy(out.data(), &len, 8);
  std::memcpy(out.data() + 8, h.data(), h.size());
  unsigned char* p = out.data() + 8 + h.size();
  for (const auto& t : tensors) {
    for (double v : t.values) {
      if (f64) {
        std::memcpy(p, &v, 8);
      } else {
        const float f = static_cast<float>(v);
        std::memcpy(p, &f, 4);
      }
      p += width;
    }
  }
  return out;
}

inline void write_safetensors(const std::filesystem::path& path,
                              const std::vector<NamedTensor>& tensors, bool f64 = false) {
  const auto bytes = encode_safetensors(tensors, f64);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace lattr
