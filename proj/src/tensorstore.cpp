#include "dogerm/tensorstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "dogerm/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace dogerm {

namespace {

using nlohmann::json;

constexpr const char* kMetadataKey = "__metadata__";

std::string build_header(const NamedTensorMap& map, std::vector<uint64_t>& offsets) {
  // json objects are backed by std::map, so keys serialize in lexicographic
  // order and the header bytes are deterministic.
  json header = json::object();
  uint64_t cursor = 0;
  offsets.clear();
  for (const auto& [name, tensor] : map) {
    uint64_t nbytes = static_cast<uint64_t>(tensor.numel()) * sizeof(float);
    json entry;
    entry["dtype"] = "F32";
    entry["shape"] = tensor.shape;
    entry["data_offsets"] = {cursor, cursor + nbytes};
    header[name] = std::move(entry);
    offsets.push_back(cursor);
    cursor += nbytes;
  }
  if (!map.metadata().empty()) {
    header[kMetadataKey] = map.metadata();
  }
  return header.dump();
}

struct RawEntry {
  std::string name;
  std::vector<int64_t> shape;
  uint64_t begin = 0;
  uint64_t end = 0;
};

uint64_t checked_numel_u64(const std::string& name, const std::vector<int64_t>& shape) {
  if (shape.empty()) {
    throw FormatError("tensor \"" + name + "\": rank must be >= 1");
  }
  uint64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) {
      throw FormatError("tensor \"" + name + "\": negative dimension");
    }
    if (d != 0 && n > (uint64_t{1} << 60) / static_cast<uint64_t>(d)) {
      throw FormatError("tensor \"" + name + "\": size overflow");
    }
    n *= static_cast<uint64_t>(d);
  }
  return n;
}

}  // namespace

NamedTensorMap load_checkpoint(const std::filesystem::path& path,
                               const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  in.seekg(0, std::ios::end);
  const uint64_t file_size = static_cast<uint64_t>(in.tellg());
  in.seekg(0, std::ios::beg);

  if (file_size < 8) {
    throw TruncationError(path.string() + ": file too small for header length");
  }
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) {
    throw IoError("read failure on " + path.string());
  }
  if (8 + header_len > file_size) {
    throw TruncationError(path.string() + ": declared header exceeds file size");
  }

  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) {
    throw IoError("read failure on " + path.string());
  }

  json header;
  try {
    header = json::parse(header_bytes);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": header is not valid JSON: " + e.what());
  }
  if (!header.is_object()) {
    throw FormatError(path.string() + ": header must be a JSON object");
  }

  const uint64_t data_size = file_size - 8 - header_len;

  NamedTensorMap map;
  std::vector<RawEntry> entries;
  for (const auto& [name, value] : header.items()) {
    if (name == kMetadataKey) {
      if (!value.is_object()) {
        throw FormatError(path.string() + ": __metadata__ must be an object");
      }
      std::map<std::string, std::string> meta;
      for (const auto& [k, v] : value.items()) {
        if (!v.is_string()) {
          throw FormatError(path.string() + ": __metadata__ values must be strings");
        }
        meta[k] = v.get<std::string>();
      }
      map.set_metadata_map(std::move(meta));
      continue;
    }
    if (name.empty()) {
      throw FormatError(path.string() + ": empty tensor name");
    }
    if (!value.is_object() || !value.contains("dtype") || !value.contains("shape") ||
        !value.contains("data_offsets")) {
      throw FormatError(path.string() + ": tensor \"" + name + "\": malformed entry");
    }
    if (value["dtype"] != "F32") {
      throw FormatError(path.string() + ": tensor \"" + name +
                        "\": unsupported dtype " + value["dtype"].dump());
    }
    RawEntry entry;
    entry.name = name;
    try {
      entry.shape = value["shape"].get<std::vector<int64_t>>();
      auto off = value["data_offsets"].get<std::vector<uint64_t>>();
      if (off.size() != 2) {
        throw FormatError(path.string() + ": tensor \"" + name +
                          "\": data_offsets must have two elements");
      }
      entry.begin = off[0];
      entry.end = off[1];
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": tensor \"" + name + "\": " + e.what());
    }
    if (entry.end < entry.begin) {
      throw FormatError(path.string() + ": tensor \"" + name + "\": end < begin");
    }
    const uint64_t numel = checked_numel_u64(name, entry.shape);
    if (entry.end - entry.begin != numel * sizeof(float)) {
      throw FormatError(path.string() + ": tensor \"" + name +
                        "\": offsets do not match shape");
    }
    if (entry.end > data_size) {
      throw TruncationError(path.string() + ": tensor \"" + name +
                            "\": data region is truncated");
    }
    entries.push_back(std::move(entry));
  }

  // Offsets must tile [0, data_size) exactly.
  std::vector<RawEntry> sorted = entries;
  std::sort(sorted.begin(), sorted.end(),
            [](const RawEntry& a, const RawEntry& b) { return a.begin < b.begin; });
  uint64_t cursor = 0;
  for (const RawEntry& e : sorted) {
    if (e.begin != cursor) {
      throw FormatError(path.string() + ": tensor \"" + e.name +
                        "\": offsets overlap or leave a gap");
    }
    cursor = e.end;
  }
  if (cursor != data_size) {
    throw FormatError(path.string() + ": declared offsets do not cover the data region");
  }

  const std::streamoff data_start = static_cast<std::streamoff>(8 + header_len);
  for (const RawEntry& e : entries) {
    Tensor t;
    t.shape = e.shape;
    t.data.resize(static_cast<size_t>((e.end - e.begin) / sizeof(float)));
    in.seekg(data_start + static_cast<std::streamoff>(e.begin));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(e.end - e.begin));
    if (!in) {
      throw IoError("read failure on " + path.string());
    }
    if (!options.allow_nonfinite) {
      for (size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(t.data[i])) {
          throw NonFiniteError("tensor \"" + e.name + "\" element " +
                               std::to_string(i) + " is not finite");
        }
      }
    }
    map.add(e.name, std::move(t));
  }
  return map;
}

void save_checkpoint(const NamedTensorMap& map, const std::filesystem::path& path) {
  std::vector<uint64_t> offsets;
  const std::string header = build_header(map, offsets);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  const uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, tensor] : map) {
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
  }
  out.flush();
  if (!out) {
    throw IoError("write failure on " + path.string());
  }
}

std::vector<TensorSummary> inspect(const NamedTensorMap& map) {
  std::vector<TensorSummary> out;
  out.reserve(map.size());
  for (const auto& [name, tensor] : map) {
    TensorSummary s;
    s.name = name;
    s.shape = tensor.shape;
    s.dtype = "F32";
    s.numel = tensor.numel();
    if (s.numel > 0) {
      double mn = std::numeric_limits<double>::infinity();
      double mx = -std::numeric_limits<double>::infinity();
      double sum = 0.0;
      for (float v : tensor.data) {
        const double d = v;
        mn = std::min(mn, d);
        mx = std::max(mx, d);
        sum += d;
      }
      s.min = mn;
      s.max = mx;
      s.mean = sum / static_cast<double>(s.numel);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dogerm
