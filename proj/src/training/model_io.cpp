#include "debias/model_io.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>

#include "debias/errors.hpp"
#include "debias/random.hpp"
#include "debias/small_cnn.hpp"

namespace debias {

namespace {

constexpr char kMagic[8] = {'D', 'B', 'L', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("model file truncated");
  return v;
}
std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw IoError("model file truncated");
  return s;
}

}  // namespace

void save_model(const std::filesystem::path& path, Classifier& model, const nlohmann::json& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write model '{}'", path.string()));
  const std::string cfg = config.dump();
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, fnv1a64(cfg));
  put_string(out, cfg);
  put_string(out, model.architecture().dump());
  auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_string(out, p.name);
    put<std::uint64_t>(out, p.value.size());
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size_bytes()));
  }
  if (!out) throw IoError(fmt::format("failed writing model '{}'", path.string()));
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open model '{}'", path.string()));
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(fmt::format("'{}' is not a model container", path.string()));
  if (const auto v = get<std::uint32_t>(in); v != kVersion)
    throw IoError(fmt::format("unsupported model container version {}", v));
  LoadedModel lm;
  lm.config_hash = get<std::uint64_t>(in);
  const std::string cfg = get_string(in);
  if (fnv1a64(cfg) != lm.config_hash) throw IoError("model config hash mismatch");
  lm.config = nlohmann::json::parse(cfg);
  lm.model = make_classifier(nlohmann::json::parse(get_string(in)), 0);
  auto params = lm.model->parameters();
  const auto n = get<std::uint32_t>(in);
  if (n != params.size()) throw IoError("model tensor count does not match its architecture");
  for (auto& p : params) {
    const auto name = get_string(in);
    const auto count = get<std::uint64_t>(in);
    if (name != p.name || count != p.value.size())
      throw IoError(fmt::format("model tensor '{}' does not match architecture tensor '{}'", name, p.name));
    if (!in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size_bytes())))
      throw IoError("model file truncated");
  }
  return lm;
}

}  // namespace debias
