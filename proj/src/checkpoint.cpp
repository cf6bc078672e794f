#include "groupmix/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "groupmix/error.hpp"

namespace groupmix {
namespace {

constexpr char kMagic[4] = {'G', 'M', 'L', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kTextHeader = "groupmix-mlp v1";

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(is), ErrorKind::io, "truncated checkpoint " + path.string());
  return v;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Mlp load_binary(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  is.read(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorKind::io, "bad magic in " + path.string());
  require(get<std::uint32_t>(is, path) == kVersion, ErrorKind::io,
          "unsupported checkpoint version in " + path.string());
  const auto n_layers = get<std::uint32_t>(is, path);
  std::vector<LayerSpec> specs;
  for (std::uint32_t k = 0; k < n_layers; ++k) {
    LayerSpec s;
    s.in_dim = get<std::uint64_t>(is, path);
    s.out_dim = get<std::uint64_t>(is, path);
    const auto act = get<std::uint8_t>(is, path);
    require(act <= 1, ErrorKind::io, "bad activation code in " + path.string());
    s.activation = act == 0 ? Activation::relu : Activation::identity;
    specs.push_back(s);
  }
  Mlp mlp(std::move(specs));
  for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
    for (double& w : mlp.weights(k).values()) w = get<double>(is, path);
    for (double& b : mlp.bias(k)) b = get<double>(is, path);
  }
  return mlp;
}

Mlp load_text(std::istream& is, const std::filesystem::path& path) {
  std::string line;
  std::getline(is, line);
  require(line == kTextHeader, ErrorKind::io, "bad text checkpoint header in " + path.string());
  std::size_t n_layers = 0;
  {
    std::getline(is, line);
    std::istringstream ls(line);
    std::string key;
    ls >> key >> n_layers;
    require(key == "layers" && static_cast<bool>(ls), ErrorKind::io,
            "missing layer count in " + path.string());
  }
  std::vector<LayerSpec> specs;
  for (std::size_t k = 0; k < n_layers; ++k) {
    std::getline(is, line);
    std::istringstream ls(line);
    std::string key, act;
    LayerSpec s;
    ls >> key >> s.in_dim >> s.out_dim >> act;
    require(key == "layer" && static_cast<bool>(ls), ErrorKind::io,
            "bad layer line in " + path.string());
    s.activation = parse_activation(act);
    specs.push_back(s);
  }
  Mlp mlp(std::move(specs));
  auto read_values = [&](std::span<double> out) {
    std::getline(is, line);
    std::istringstream ls(line);
    for (double& v : out) {
      std::string tok;
      ls >> tok;
      require(!tok.empty(), ErrorKind::io, "short parameter row in " + path.string());
      v = std::strtod(tok.c_str(), nullptr);
    }
  };
  for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
    for (std::size_t r = 0; r < mlp.weights(k).rows(); ++r) read_values(mlp.weights(k).row(r));
    read_values(mlp.bias(k));
  }
  return mlp;
}

}  // namespace

void save_checkpoint(const Mlp& mlp, const std::filesystem::path& path, CheckpointFormat format) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path.string() + " for writing");
  if (format == CheckpointFormat::binary) {
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(mlp.num_layers()));
    for (const LayerSpec& s : mlp.layers()) {
      put<std::uint64_t>(os, s.in_dim);
      put<std::uint64_t>(os, s.out_dim);
      put<std::uint8_t>(os, s.activation == Activation::relu ? 0 : 1);
    }
    for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
      for (double w : mlp.weights(k).values()) put(os, w);
      for (double b : mlp.bias(k)) put(os, b);
    }
  } else {
    os << kTextHeader << "\nlayers " << mlp.num_layers() << '\n';
    for (const LayerSpec& s : mlp.layers())
      os << "layer " << s.in_dim << ' ' << s.out_dim << ' ' << to_string(s.activation) << '\n';
    auto write_row = [&](std::span<const double> v) {
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << fmt17(v[i]);
      os << '\n';
    };
    for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
      for (std::size_t r = 0; r < mlp.weights(k).rows(); ++r) write_row(mlp.weights(k).row(r));
      write_row(mlp.bias(k));
    }
  }
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path.string());
}

Mlp load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path.string());
  const int first = is.peek();
  if (first == kMagic[0]) return load_binary(is, path);
  return load_text(is, path);
}

}  // namespace groupmix
