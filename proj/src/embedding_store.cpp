#include "coder/embedding_store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace coder {

static_assert(std::endian::native == std::endian::little,
              "embedding file format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'D', 'R', 'E'};
constexpr uint32_t kVersion = 1;
constexpr size_t kHeaderBytes = 4 + 4 + 4 + 8;

}  // namespace

struct EmbeddingStore::Mapping {
  void* addr = nullptr;
  size_t length = 0;
  ~Mapping() {
    if (addr != nullptr) ::munmap(addr, length);
  }
};

EmbeddingStore EmbeddingStore::from_matrix(uint32_t dim, std::vector<float> rows_row_major) {
  if (dim == 0) throw ValidationError("embedding dim must be positive");
  if (rows_row_major.size() % dim != 0)
    throw ValidationError("matrix size not a multiple of dim");
  if (!all_finite(std::span<const float>(rows_row_major)))
    throw ValidationError("embedding matrix contains non-finite values");
  EmbeddingStore s;
  s.dim_ = dim;
  s.count_ = rows_row_major.size() / dim;
  s.owned_ = std::move(rows_row_major);
  s.data_ = s.owned_.data();
  return s;
}

std::vector<float> EmbeddingStore::get_rows(std::span<const uint32_t> ids) const {
  std::vector<float> out;
  out.reserve(ids.size() * dim_);
  for (uint32_t id : ids) {
    auto r = row(id);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

void write_embeddings(const std::string& path, uint32_t dim, std::span<const float> rows) {
  if (dim == 0) throw ValidationError("embedding dim must be positive");
  if (rows.size() % dim != 0) throw ValidationError("matrix size not a multiple of dim");
  if (!all_finite(rows)) throw ValidationError("refusing to write non-finite embeddings");
  uint64_t count = rows.size() / dim;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&dim), 4);
  out.write(reinterpret_cast<const char*>(&count), 8);
  out.write(reinterpret_cast<const char*>(rows.data()),
            static_cast<std::streamsize>(rows.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path);
}

EmbeddingStore open_embeddings(const std::string& path) {
  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw IoError("cannot open " + path);

  struct FdGuard {
    int fd;
    ~FdGuard() { ::close(fd); }
  } guard{fd};

  struct stat st{};
  if (::fstat(fd, &st) != 0) throw IoError("fstat failed: " + path);
  size_t file_size = static_cast<size_t>(st.st_size);
  if (file_size < kHeaderBytes) throw FormatError(path + ": file too small for header");

  char header[kHeaderBytes];
  ssize_t got = ::pread(fd, header, kHeaderBytes, 0);
  if (got != static_cast<ssize_t>(kHeaderBytes)) throw IoError("read failed: " + path);
  if (std::memcmp(header, kMagic, 4) != 0) throw FormatError(path + ": bad magic, not a CDRE file");
  uint32_t version = 0, dim = 0;
  uint64_t count = 0;
  std::memcpy(&version, header + 4, 4);
  std::memcpy(&dim, header + 8, 4);
  std::memcpy(&count, header + 12, 8);
  if (version != kVersion)
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  if (dim == 0) throw FormatError(path + ": dim must be positive");

  size_t expected = kHeaderBytes + static_cast<size_t>(count) * dim * sizeof(float);
  if (file_size != expected)
    throw FormatError(path + ": payload size mismatch (expected " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(file_size) + ")");

  EmbeddingStore s;
  s.dim_ = dim;
  s.count_ = count;
  if (count > 0) {
    void* addr = ::mmap(nullptr, file_size, PROT_READ, MAP_PRIVATE, fd, 0);
    if (addr == MAP_FAILED) throw IoError("mmap failed: " + path);
    s.mapping_ = std::make_shared<EmbeddingStore::Mapping>();
    s.mapping_->addr = addr;
    s.mapping_->length = file_size;
    s.data_ = reinterpret_cast<const float*>(static_cast<const char*>(addr) + kHeaderBytes);
  }
  return s;
}

FrozenDocEncoder::FrozenDocEncoder(uint32_t dim, int32_t vocab_size, uint64_t seed, NormMode norm)
    : dim_(dim), vocab_size_(vocab_size), seed_(seed), norm_(norm) {
  if (dim == 0) throw ValidationError("encoder dim must be positive");
  if (vocab_size < Vocab::kFirstRegular)
    throw ValidationError("vocab size must include the reserved specials");
  columns_.resize(static_cast<size_t>(vocab_size) * dim);
  auto rng = RngStream::from(seed, "frozen-doc-encoder");
  double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& x : columns_) x = rng.normal() * scale;
}

std::span<const double> FrozenDocEncoder::token_column(int32_t token_id) const {
  if (token_id < 0 || token_id >= vocab_size_)
    throw ValidationError("token id out of range: " + std::to_string(token_id));
  return {columns_.data() + static_cast<size_t>(token_id) * dim_, dim_};
}

std::vector<double> FrozenDocEncoder::token_direction(int32_t token_id) const {
  auto col = token_column(token_id);
  std::vector<double> dir(col.begin(), col.end());
  double norm2 = 0.0;
  for (double x : dir) norm2 += x * x;
  double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
  for (double& x : dir) x *= inv;
  return dir;
}

std::vector<double> FrozenDocEncoder::encode_counts(std::span<const int32_t> token_ids) const {
  std::vector<double> acc(dim_, 0.0);
  for (int32_t id : token_ids) {
    if (id < Vocab::kFirstRegular) continue;
    auto col = token_column(id);
    for (uint32_t j = 0; j < dim_; ++j) acc[j] += col[j];
  }
  if (norm_ == NormMode::L2) {
    double norm2 = 0.0;
    for (double x : acc) norm2 += x * x;
    if (norm2 > 0.0) {
      double inv = 1.0 / std::sqrt(norm2);
      for (double& x : acc) x *= inv;
    }
  }
  return acc;
}

std::vector<float> encode_documents(const FrozenDocEncoder& enc, const DocStore& docs,
                                    const Vocab& vocab, size_t max_doc_len) {
  if (vocab.size() > enc.vocab_size())
    throw ValidationError("encoder was built for a smaller vocab");
  std::vector<float> rows;
  rows.reserve(docs.count() * enc.dim());
  for (size_t i = 0; i < docs.count(); ++i) {
    auto ids = tokenize(docs.text(i), vocab, max_doc_len);
    auto vec = enc.encode_counts(ids);
    for (double x : vec) rows.push_back(static_cast<float>(x));
  }
  return rows;
}

}  // namespace coder
