#include "warptrack/tensor.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little, "WTT1 payloads are little-endian");

namespace warptrack {

namespace {

constexpr char kMagic[8] = {'W', 'T', 'T', 'E', 'N', 'S', 'R', '1'};

[[noreturn]] void format_error(const std::string& what, int64_t offset) {
  throw std::runtime_error("WTT1 format error at byte " + std::to_string(offset) + ": " + what);
}

}  // namespace

void write_wtt1(std::ostream& os, const Tensor<float>& t) {
  nlohmann::json hdr;
  hdr["dtype"] = "f32le";
  hdr["shape"] = t.shape();
  const std::string h = hdr.dump();
  uint32_t len = uint32_t(h.size());
  os.write(kMagic, 8);
  os.write(reinterpret_cast<const char*>(&len), 4);
  os.write(h.data(), std::streamsize(h.size()));
  os.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * 4));
  if (!os) throw std::runtime_error("WTT1: write failed");
}

Tensor<float> read_wtt1(std::istream& is, int64_t base) {
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) format_error("bad magic", base);
  uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 4);
  if (is.gcount() != 4) format_error("truncated header length", base + 8);
  std::string h(len, '\0');
  is.read(h.data(), std::streamsize(len));
  if (is.gcount() != std::streamsize(len)) format_error("truncated header", base + 12);
  nlohmann::json hdr = nlohmann::json::parse(h, nullptr, false);
  if (hdr.is_discarded() || !hdr.contains("dtype") || !hdr.contains("shape"))
    format_error("malformed JSON header", base + 12);
  if (hdr["dtype"] != "f32le") format_error("unsupported dtype " + hdr["dtype"].dump(), base + 12);
  Shape shape = hdr["shape"].get<Shape>();
  for (int64_t e : shape)
    if (e < 0) format_error("negative extent", base + 12);
  Tensor<float> t(shape, false);
  is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * 4));
  if (is.gcount() != std::streamsize(t.numel() * 4))
    format_error("payload shorter than header shape implies", base + 12 + int64_t(len));
  return t;
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), std::streamsize(bytes.size()));
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

void save_tensor(const std::string& path, const Tensor<float>& t) {
  std::ostringstream os(std::ios::binary);
  write_wtt1(os, t);
  atomic_write_file(path, os.str());
}

Tensor<float> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_wtt1(is);
}

}  // namespace warptrack
