#include "fdn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json_io.hpp"

namespace fdn {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace {

constexpr char kMagic[8] = {'F', 'D', 'N', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("cannot open checkpoint " + path.string());
  }

  void bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }

  template <class T>
  T get() {
    T v;
    bytes(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }

  std::string string(std::uint64_t limit = 1u << 26) {
    const auto n = get<std::uint64_t>();
    if (n > limit) fail("implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint " + path_.string() + ": " + what);
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& extra_json) {
  auto meta = nlohmann::json::object();
  meta["extra"] = nlohmann::json::parse(extra_json);
  if (const auto* ens = dynamic_cast<const EnsembleModel*>(&model)) {
    meta["trained"] = ens->trained_flags();
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, detail::to_json(model.spec()).dump());
  put_string(out, meta.dump());
  put<std::uint64_t>(out, model.params().size());
  for (const auto& [name, t] : model.params()) {
    put_string(out, name);
    put<std::uint64_t>(out, t.rows());
    put<std::uint64_t>(out, t.cols());
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const ModelSpec spec = detail::model_spec_from_json(nlohmann::json::parse(r.string()));
  const auto meta = nlohmann::json::parse(r.string());

  LoadedCheckpoint out;
  out.model = make_model(spec);
  ParamStore& store = out.model->params();
  const auto count = r.get<std::uint64_t>();
  if (count != store.size()) {
    r.fail("stores " + std::to_string(count) + " parameters, spec expects " +
           std::to_string(store.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.string(4096);
    if (!store.contains(name)) r.fail("unexpected parameter '" + name + "'");
    Tensor& t = store.at(name);
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != t.rows() || cols != t.cols()) r.fail("shape mismatch for '" + name + "'");
    r.bytes(reinterpret_cast<char*>(t.data().data()), t.size() * sizeof(double));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  if (auto* ens = dynamic_cast<EnsembleModel*>(out.model.get())) {
    if (!meta.contains("trained")) r.fail("ensemble checkpoint without trained flags");
    ens->set_trained_flags(meta.at("trained").get<std::vector<bool>>());
  }
  out.extra_json = meta.contains("extra") ? meta.at("extra").dump() : "{}";
  return out;
}

}  // namespace fdn
