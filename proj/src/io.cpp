#include "elsig/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace elsig {

namespace {

constexpr char kMagic[8] = {'E', 'L', 'S', 'I', 'G', 'M', 'A', 'T'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 |
         static_cast<std::uint32_t>(b[3]) << 24;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::filesystem::path sidecar_path(const std::filesystem::path& json_path,
                                   const std::string& suffix) {
  std::filesystem::path p = json_path;
  p.replace_extension();
  p += suffix;
  return p;
}

}  // namespace

void write_matrix(const std::filesystem::path& path, const MatrixRef& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  // Row-major doubles; x86-64 is little-endian, matching the format.
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof(double));
    }
  if (!out) throw IoError("short write to " + path.string());
}

Matrix read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("bad magic in " + path.string());
  const auto rows = static_cast<Index>(get_u32(in));
  const auto cols = static_cast<Index>(get_u32(in));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      double v;
      in.read(reinterpret_cast<char*>(&v), sizeof(double));
      m(i, j) = v;
    }
  if (!in) throw IoError("truncated matrix in " + path.string());
  return m;
}

void save_model(const std::filesystem::path& json_path,
                const FinalLayerParams& params) {
  const auto w_path = sidecar_path(json_path, ".w.mat");
  write_matrix(w_path, params.unembed);

  nlohmann::json j;
  j["v"] = params.vocab;
  j["d"] = params.dim;
  j["norm"] = norm_name(params.norm);
  j["eps"] = params.eps;
  j["seed"] = params.seed;
  j["gamma"] = std::vector<double>(params.scale.begin(), params.scale.end());
  j["beta"] = std::vector<double>(params.bias.begin(), params.bias.end());
  j["W"] = w_path.filename().string();
  if (params.resample_retries > 0) j["resample_retries"] = params.resample_retries;
  write_json(json_path, j);
}

FinalLayerParams load_model(const std::filesystem::path& json_path) {
  nlohmann::json j = read_json(json_path);
  FinalLayerParams p;
  p.vocab = j.at("v").get<Index>();
  p.dim = j.at("d").get<Index>();
  p.norm = norm_from_name(j.at("norm").get<std::string>());
  p.eps = j.at("eps").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.resample_retries = j.value("resample_retries", 0);

  const auto gamma = j.at("gamma").get<std::vector<double>>();
  const auto beta = j.at("beta").get<std::vector<double>>();
  if (static_cast<Index>(gamma.size()) != p.dim ||
      static_cast<Index>(beta.size()) != p.dim)
    throw IoError("model file: gamma/beta length does not match d");
  p.scale = Eigen::Map<const Vector>(gamma.data(), p.dim);
  p.bias = Eigen::Map<const Vector>(beta.data(), p.dim);

  const auto w_rel = j.at("W").get<std::string>();
  p.unembed = read_matrix(json_path.parent_path() / w_rel);
  if (p.unembed.rows() != p.vocab || p.unembed.cols() != p.dim)
    throw IoError("model file: W shape does not match v x d");
  return p;
}

void save_logprobs(const std::filesystem::path& json_path,
                   const LogprobMatrix& m) {
  const auto data_path = sidecar_path(json_path, ".mat");
  write_matrix(data_path, m.data);
  nlohmann::json j;
  j["v"] = m.vocab;
  j["n"] = m.count;
  j["token_ids"] = m.token_ids;
  j["data"] = data_path.filename().string();
  write_json(json_path, j);
}

LogprobMatrix load_logprobs(const std::filesystem::path& json_path) {
  nlohmann::json j = read_json(json_path);
  LogprobMatrix m;
  m.vocab = j.at("v").get<Index>();
  m.count = j.at("n").get<Index>();
  m.token_ids = j.at("token_ids").get<std::vector<std::int64_t>>();
  m.data = read_matrix(json_path.parent_path() /
                       j.at("data").get<std::string>());
  if (m.data.rows() != m.vocab || m.data.cols() != m.count)
    throw IoError("logprob file: matrix shape does not match header");
  if (static_cast<Index>(m.token_ids.size()) != m.vocab)
    throw IoError("logprob file: token_ids length does not match v");
  return m;
}

}  // namespace elsig
