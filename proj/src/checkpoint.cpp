#include "dsurf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dsurf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in native little-endian order");

namespace {

constexpr char kMagic[8] = {'D', 'S', 'U', 'R', 'F', 'C', 'K', '1'};

template <typename T>
const char* dtype_name();
template <>
const char* dtype_name<float>() { return "f32"; }
template <>
const char* dtype_name<double>() { return "f64"; }

template <typename U>
void append_pod(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U read_pod(const std::string& in, std::size_t& at) {
  if (at + sizeof(U) > in.size()) throw DataError("checkpoint: truncated file");
  U v;
  std::memcpy(&v, in.data() + at, sizeof(U));
  at += sizeof(U);
  return v;
}

}  // namespace

template <typename T>
void Checkpoint::put(const std::string& name, const ad::Matrix<T>& m) {
  Blob b;
  b.dtype = dtype_name<T>();
  b.rows = m.rows();
  b.cols = m.cols();
  b.bytes.assign(reinterpret_cast<const char*>(m.data()), sizeof(T) * m.size());
  tensors_[name] = std::move(b);
}

template <typename T>
ad::Matrix<T> Checkpoint::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw DataError("checkpoint: missing tensor '" + name + "'");
  const Blob& b = it->second;
  ad::Matrix<T> m(b.rows, b.cols);
  if (b.dtype == dtype_name<T>()) {
    std::memcpy(m.data(), b.bytes.data(), b.bytes.size());
  } else if (b.dtype == "f32") {
    ad::Matrix<float> src(b.rows, b.cols);
    std::memcpy(src.data(), b.bytes.data(), b.bytes.size());
    m = src.template cast<T>();
  } else {
    ad::Matrix<double> src(b.rows, b.cols);
    std::memcpy(src.data(), b.bytes.data(), b.bytes.size());
    m = src.template cast<T>();
  }
  return m;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : tensors_) out.push_back(k);
  return out;
}

std::string Checkpoint::serialize() const {
  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, b] : tensors_) {
    header["tensors"].push_back(
        {{"name", name}, {"dtype", b.dtype}, {"rows", b.rows}, {"cols", b.cols}, {"offset", offset}});
    offset += b.bytes.size();
  }
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  append_pod<std::uint32_t>(out, kVersion);
  append_pod<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [_, b] : tensors_) out += b.bytes;
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  std::size_t at = sizeof(kMagic);
  const auto version = read_pod<std::uint32_t>(bytes, at);
  if (version != kVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto len = read_pod<std::uint64_t>(bytes, at);
  if (at + len > bytes.size()) throw DataError("checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(bytes.substr(at, len));
  at += len;
  Checkpoint ck;
  ck.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    Blob b;
    b.dtype = t.at("dtype").get<std::string>();
    b.rows = t.at("rows").get<std::int64_t>();
    b.cols = t.at("cols").get<std::int64_t>();
    const std::size_t elem = b.dtype == "f32" ? 4 : (b.dtype == "f64" ? 8 : 0);
    if (elem == 0) throw DataError("checkpoint: unknown dtype " + b.dtype);
    const std::size_t size = elem * static_cast<std::size_t>(b.rows * b.cols);
    const std::size_t start = at + t.at("offset").get<std::size_t>();
    if (start + size > bytes.size()) throw DataError("checkpoint: truncated payload");
    b.bytes = bytes.substr(start, size);
    ck.tensors_[t.at("name").get<std::string>()] = std::move(b);
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + tmp.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

template void Checkpoint::put<float>(const std::string&, const ad::Matrix<float>&);
template void Checkpoint::put<double>(const std::string&, const ad::Matrix<double>&);
template ad::Matrix<float> Checkpoint::get<float>(const std::string&) const;
template ad::Matrix<double> Checkpoint::get<double>(const std::string&) const;

}  // namespace dsurf
