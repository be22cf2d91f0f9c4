#include "knnlab/io.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cstring>
#include <utility>

namespace knnlab {

BinaryWriter::BinaryWriter(const std::string& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_) throw FormatError("cannot open for writing: " + path);
}

BinaryWriter::~BinaryWriter() {
    if (f_) std::fclose(f_);
}

void BinaryWriter::close() {
    if (f_ && std::fclose(f_) != 0) {
        f_ = nullptr;
        throw FormatError("write failed: " + path_);
    }
    f_ = nullptr;
}

void BinaryWriter::bytes(const void* data, size_t n) {
    if (n && std::fwrite(data, 1, n, f_) != n) throw FormatError("write failed: " + path_);
    offset_ += n;
}

void BinaryWriter::magic(const char tag[8]) { bytes(tag, 8); }
void BinaryWriter::u8(uint8_t v) { bytes(&v, 1); }
void BinaryWriter::u32(uint32_t v) { bytes(&v, 4); }
void BinaryWriter::u64(uint64_t v) { bytes(&v, 8); }
void BinaryWriter::f32(float v) { bytes(&v, 4); }
void BinaryWriter::f64(double v) { bytes(&v, 8); }

BinaryReader::BinaryReader(const std::string& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "rb");
    if (!f_) throw FormatError("cannot open: " + path);
}

BinaryReader::~BinaryReader() {
    if (f_) std::fclose(f_);
}

void BinaryReader::fail(const std::string& what) const {
    throw FormatError(path_ + ": " + what + " at byte " + std::to_string(offset_));
}

void BinaryReader::bytes(void* out, size_t n) {
    if (n && std::fread(out, 1, n, f_) != n) fail("truncated file");
    offset_ += n;
}

void BinaryReader::expect_magic(const char tag[8]) {
    char got[9] = {0};
    bytes(got, 8);
    if (std::memcmp(got, tag, 8) != 0) {
        offset_ -= 8;
        fail(std::string("bad magic, expected \"") + std::string(tag, 8) + "\"");
    }
}

uint8_t BinaryReader::u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
}
uint32_t BinaryReader::u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
}
uint64_t BinaryReader::u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
}
float BinaryReader::f32() {
    float v;
    bytes(&v, 4);
    return v;
}
double BinaryReader::f64() {
    double v;
    bytes(&v, 8);
    return v;
}

void BinaryReader::expect_eof() {
    unsigned char c;
    if (std::fread(&c, 1, 1, f_) == 1) fail("trailing bytes");
}

MmapFile::MmapFile(const std::string& path) {
    int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw FormatError("cannot open: " + path);
    struct stat st{};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw FormatError("cannot stat: " + path);
    }
    size_ = size_t(st.st_size);
    if (size_ == 0) {
        ::close(fd);
        return;
    }
    void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd, 0);
    if (p != MAP_FAILED) {
        ptr_ = static_cast<const std::byte*>(p);
        is_mmap_ = true;
        ::close(fd);
        return;
    }
    fallback_.resize(size_);
    size_t got = 0;
    while (got < size_) {
        ssize_t n = ::read(fd, fallback_.data() + got, size_ - got);
        if (n <= 0) {
            ::close(fd);
            throw FormatError("read failed: " + path);
        }
        got += size_t(n);
    }
    ::close(fd);
    ptr_ = fallback_.data();
}

MmapFile::~MmapFile() {
    if (is_mmap_ && ptr_) ::munmap(const_cast<std::byte*>(ptr_), size_);
}

MmapFile::MmapFile(MmapFile&& other) noexcept { *this = std::move(other); }

MmapFile& MmapFile::operator=(MmapFile&& other) noexcept {
    if (this != &other) {
        if (is_mmap_ && ptr_) ::munmap(const_cast<std::byte*>(ptr_), size_);
        ptr_ = other.ptr_;
        size_ = other.size_;
        is_mmap_ = other.is_mmap_;
        fallback_ = std::move(other.fallback_);
        if (!other.fallback_.empty()) ptr_ = fallback_.data();
        other.ptr_ = nullptr;
        other.size_ = 0;
        other.is_mmap_ = false;
    }
    return *this;
}

uint64_t fnv1a64_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw FormatError("cannot open: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    unsigned char buf[1 << 16];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) {
        for (size_t i = 0; i < n; ++i) {
            h ^= buf[i];
            h *= 0x100000001b3ULL;
        }
    }
    std::fclose(f);
    return h;
}

bool file_exists(const std::string& path) {
    struct stat st{};
    return ::stat(path.c_str(), &st) == 0;
}

}  // namespace knnlab
