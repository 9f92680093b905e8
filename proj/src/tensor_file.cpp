#include "coder/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace coder {

static_assert(std::endian::native == std::endian::little,
              "tensor file format assumes a little-endian host");

namespace {
constexpr uint32_t kVersion = 1;
}

const TensorFile::Tensor* TensorFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const std::string& TensorFile::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("missing metadata key: " + key);
  return it->second;
}

void write_tensor_file(const std::string& path, const char magic[4], const TensorFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");

  std::string meta_text;
  for (const auto& [k, v] : file.meta) meta_text += k + " = " + v + "\n";

  out.write(magic, 4);
  uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  uint32_t meta_len = static_cast<uint32_t>(meta_text.size());
  out.write(reinterpret_cast<const char*>(&meta_len), 4);
  out.write(meta_text.data(), meta_len);
  uint32_t tensor_count = static_cast<uint32_t>(file.tensors.size());
  out.write(reinterpret_cast<const char*>(&tensor_count), 4);
  for (const auto& t : file.tensors) {
    if (t.data.size() != t.rows * t.cols)
      throw ValidationError("tensor " + t.name + " shape/data mismatch");
    uint32_t name_len = static_cast<uint32_t>(t.name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(t.name.data(), name_len);
    out.write(reinterpret_cast<const char*>(&t.rows), 8);
    out.write(reinterpret_cast<const char*>(&t.cols), 8);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {

void read_exact(std::ifstream& in, void* dst, size_t n, const std::string& path) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n) throw FormatError(path + ": truncated file");
}

}  // namespace

TensorFile read_tensor_file(const std::string& path, const char magic[4]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  char got_magic[4];
  read_exact(in, got_magic, 4, path);
  if (std::memcmp(got_magic, magic, 4) != 0)
    throw FormatError(path + ": bad magic, expected " + std::string(magic, 4));
  uint32_t version = 0;
  read_exact(in, &version, 4, path);
  if (version != kVersion)
    throw FormatError(path + ": unsupported version " + std::to_string(version));

  TensorFile file;
  uint32_t meta_len = 0;
  read_exact(in, &meta_len, 4, path);
  std::string meta_text(meta_len, '\0');
  if (meta_len > 0) read_exact(in, meta_text.data(), meta_len, path);
  size_t pos = 0;
  while (pos < meta_text.size()) {
    size_t eol = meta_text.find('\n', pos);
    if (eol == std::string::npos) eol = meta_text.size();
    std::string line = meta_text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    size_t sep = line.find(" = ");
    if (sep == std::string::npos) throw FormatError(path + ": malformed metadata line: " + line);
    file.meta[line.substr(0, sep)] = line.substr(sep + 3);
  }

  uint32_t tensor_count = 0;
  read_exact(in, &tensor_count, 4, path);
  for (uint32_t i = 0; i < tensor_count; ++i) {
    TensorFile::Tensor t;
    uint32_t name_len = 0;
    read_exact(in, &name_len, 4, path);
    t.name.resize(name_len);
    if (name_len > 0) read_exact(in, t.name.data(), name_len, path);
    read_exact(in, &t.rows, 8, path);
    read_exact(in, &t.cols, 8, path);
    t.data.resize(t.rows * t.cols);
    if (!t.data.empty())
      read_exact(in, t.data.data(), t.data.size() * sizeof(double), path);
    file.tensors.push_back(std::move(t));
  }
  // trailing bytes mean the file does not match its own declared layout
  char extra;
  if (in.read(&extra, 1); in.gcount() != 0)
    throw FormatError(path + ": trailing bytes after last tensor");
  return file;
}

}  // namespace coder
