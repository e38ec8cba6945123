#include "structfill/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "structfill/npy.hpp"
#include "structfill/rng.hpp"

namespace sfill {

namespace fs = std::filesystem;

void save_checkpoint(const std::string& dir, const CheckpointData& ck) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["step"] = ck.step;
  nlohmann::json entries = nlohmann::json::array();
  int idx = 0;
  for (const auto& [name, t] : ck.tensors) {
    std::ostringstream fn;
    fn << "t" << std::setw(4) << std::setfill('0') << idx++ << ".npy";
    const Shape s = t.shape();
    npy_save(dir + "/" + fn.str(), t.data(),
             {static_cast<int64_t>(s.n), s.c, s.h, s.w});
    entries.push_back({{"name", name},
                       {"file", fn.str()},
                       {"shape", {s.n, s.c, s.h, s.w}},
                       {"dtype", "<f4"}});
  }
  manifest["tensors"] = entries;
  manifest["extra"] = ck.extra;
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("save_checkpoint: cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
  if (!f) throw std::runtime_error("save_checkpoint: manifest write failed in " + dir);
}

CheckpointData load_checkpoint(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("load_checkpoint: no manifest.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(f);
  CheckpointData ck;
  ck.step = manifest.at("step").get<int64_t>();
  if (manifest.contains("extra"))
    ck.extra = manifest.at("extra").get<std::map<std::string, std::string>>();
  for (const auto& e : manifest.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    NpyArray arr = npy_load(dir + "/" + e.at("file").get<std::string>());
    const auto sh = e.at("shape").get<std::vector<int64_t>>();
    if (sh.size() != 4)
      throw std::runtime_error("load_checkpoint: tensor " + name + " has rank " +
                               std::to_string(sh.size()));
    Shape s(static_cast<int>(sh[0]), static_cast<int>(sh[1]), static_cast<int>(sh[2]),
            static_cast<int>(sh[3]));
    if (arr.numel() != s.numel())
      throw std::runtime_error("load_checkpoint: size mismatch for " + name);
    Tensor<float> t(s);
    if (arr.is_f32()) {
      std::copy(arr.f32(), arr.f32() + arr.numel(), t.data());
    } else {
      const double* p = arr.f64();
      for (int64_t i = 0; i < arr.numel(); ++i) t.data()[i] = static_cast<float>(p[i]);
    }
    ck.tensors.emplace_back(name, std::move(t));
  }
  return ck;
}

std::string checkpoint_digest(const CheckpointData& ck) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : ck.tensors) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(float), h);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("file_digest: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (f) {
    f.read(buf, sizeof(buf));
    const std::streamsize got = f.gcount();
    if (got > 0) h = fnv1a64(buf, static_cast<size_t>(got), h);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace sfill
