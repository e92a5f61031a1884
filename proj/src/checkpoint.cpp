#include "warptrack/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace warptrack {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

constexpr char kMagic[8] = {'W', 'T', 'C', 'H', 'K', 'P', 'T', '1'};

std::string wtt1_bytes(const Tensor<float>& t) {
  std::ostringstream os(std::ios::binary);
  write_wtt1(os, t);
  return os.str();
}

}  // namespace

void save_checkpoint(const std::string& path, Model<float>& model, const OptimState<float>* opt, int64_t step,
                     const std::string& config_hash) {
  std::vector<std::pair<std::string, Tensor<float>>> entries;
  model.visit([&](const std::string& name, Tensor<float>& t) { entries.emplace_back(name, t); });
  if (opt) {
    check_dim(opt->m.size() == entries.size(), "save_checkpoint: optimizer state size mismatch");
    const size_t params = entries.size();
    for (size_t i = 0; i < params; ++i) entries.emplace_back("opt.m." + entries[i].first, opt->m[i]);
    for (size_t i = 0; i < params; ++i) entries.emplace_back("opt.v." + entries[i].first, opt->v[i]);
  }

  nlohmann::json manifest;
  manifest["step"] = step;
  manifest["config_hash"] = config_hash;
  manifest["has_optimizer"] = opt != nullptr;
  manifest["model_config"] = nlohmann::json::parse(model_config_to_json(model.config));
  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (auto& [name, t] : entries) {
    const std::string blob = wtt1_bytes(t);
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = payload.size();
    e["bytes"] = blob.size();
    tensors.push_back(e);
    payload += blob;
  }
  manifest["tensors"] = tensors;
  const std::string mstr = manifest.dump();

  std::string out;
  out.reserve(12 + mstr.size() + payload.size());
  out.append(kMagic, 8);
  uint32_t len = uint32_t(mstr.size());
  out.append(reinterpret_cast<const char*>(&len), 4);
  out += mstr;
  out += payload;
  atomic_write_file(path, out);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("WTC1 format error at byte 0: bad magic in " + path);
  uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 4);
  if (is.gcount() != 4) throw std::runtime_error("WTC1 format error at byte 8: truncated manifest length");
  std::string mstr(len, '\0');
  is.read(mstr.data(), std::streamsize(len));
  if (is.gcount() != std::streamsize(len))
    throw std::runtime_error("WTC1 format error at byte 12: truncated manifest");
  nlohmann::json manifest = nlohmann::json::parse(mstr, nullptr, false);
  if (manifest.is_discarded()) throw std::runtime_error("WTC1 format error at byte 12: malformed manifest");

  LoadedCheckpoint ck;
  ck.step = manifest.at("step").get<int64_t>();
  ck.config_hash = manifest.at("config_hash").get<std::string>();
  if (manifest.contains("model_config")) ck.model_config_json = manifest["model_config"].dump();
  const int64_t base = 12 + int64_t(len);
  for (const auto& e : manifest.at("tensors")) {
    const int64_t off = e.at("offset").get<int64_t>();
    is.seekg(base + off, std::ios::beg);
    ck.tensors[e.at("name").get<std::string>()] = read_wtt1(is, base + off);
  }
  return ck;
}

void restore_checkpoint(const LoadedCheckpoint& ck, Model<float>& model, OptimState<float>* opt,
                        const std::string& expect_hash) {
  if (!expect_hash.empty() && ck.config_hash != expect_hash)
    throw std::invalid_argument("checkpoint config hash " + ck.config_hash + " does not match current config " +
                             expect_hash);
  std::vector<std::pair<std::string, Tensor<float>*>> params;
  model.visit([&](const std::string& name, Tensor<float>& t) { params.emplace_back(name, &t); });
  auto fetch = [&](const std::string& name) -> const Tensor<float>& {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw std::runtime_error("checkpoint is missing tensor " + name);
    return it->second;
  };
  for (auto& [name, t] : params) {
    const Tensor<float>& src = fetch(name);
    check_dim(src.shape() == t->shape(), "checkpoint tensor " + name + " has shape " + shape_str(src.shape()) +
                                             ", expected " + shape_str(t->shape()));
    std::memcpy(t->data(), src.data(), size_t(t->numel()) * 4);
  }
  if (opt) {
    opt->m.clear();
    opt->v.clear();
    for (auto& [name, t] : params) {
      opt->m.push_back(fetch("opt.m." + name).clone());
      opt->v.push_back(fetch("opt.v." + name).clone());
    }
    opt->step = ck.step;
  }
}

}  // namespace warptrack
