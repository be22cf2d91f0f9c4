#ifndef KNNLAB_IO_HPP_
#define KNNLAB_IO_HPP_

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "knnlab/common.hpp"

// All file formats are little-endian. Serialization memcpys scalars, so the
// build is pinned to little-endian hosts.
static_assert(std::endian::native == std::endian::little,
              "knnlab file formats require a little-endian host");

namespace knnlab {

class BinaryWriter {
  public:
    explicit BinaryWriter(const std::string& path);
    ~BinaryWriter();
    BinaryWriter(const BinaryWriter&) = delete;
    BinaryWriter& operator=(const BinaryWriter&) = delete;

    void magic(const char tag[8]);
    void u8(uint8_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f32(float v);
    void f64(double v);
    void bytes(const void* data, size_t n);
    uint64_t offset() const { return offset_; }
    void close();

  private:
    std::FILE* f_ = nullptr;
    std::string path_;
    uint64_t offset_ = 0;
};

class BinaryReader {
  public:
    explicit BinaryReader(const std::string& path);
    ~BinaryReader();
    BinaryReader(const BinaryReader&) = delete;
    BinaryReader& operator=(const BinaryReader&) = delete;

    // Throws FormatError naming the file and offset if the tag mismatches.
    void expect_magic(const char tag[8]);
    uint8_t u8();
    uint32_t u32();
    uint64_t u64();
    float f32();
    double f64();
    void bytes(void* out, size_t n);
    void expect_eof();
    uint64_t offset() const { return offset_; }
    const std::string& path() const { return path_; }

    [[noreturn]] void fail(const std::string& what) const;

  private:
    std::FILE* f_ = nullptr;
    std::string path_;
    uint64_t offset_ = 0;
};

// Read-only memory map. Falls back to a heap copy when mmap is unavailable.
class MmapFile {
  public:
    MmapFile() = default;
    explicit MmapFile(const std::string& path);
    ~MmapFile();
    MmapFile(MmapFile&& other) noexcept;
    MmapFile& operator=(MmapFile&& other) noexcept;
    MmapFile(const MmapFile&) = delete;
    MmapFile& operator=(const MmapFile&) = delete;

    std::span<const std::byte> data() const { return {ptr_, size_}; }
    bool mapped() const { return is_mmap_; }

  private:
    const std::byte* ptr_ = nullptr;
    size_t size_ = 0;
    bool is_mmap_ = false;
    std::vector<std::byte> fallback_;
};

uint64_t fnv1a64_file(const std::string& path);
bool file_exists(const std::string& path);

}  // namespace knnlab

#endif  // KNNLAB_IO_HPP_
