#include "euda/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <sstream>

#include "euda/config.hpp"
#include "euda/error.hpp"

namespace euda {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 init failed");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

void save_manifest(const RunManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["tool_version"] = m.tool_version;
  j["config"] = nlohmann::json::parse(config_to_json(m.config));
  j["datasets"] = nlohmann::json::array();
  for (const auto& d : m.datasets) {
    j["datasets"].push_back({{"role", d.role}, {"path", d.path.string()}, {"sha256", d.sha256}});
  }
  j["artifacts"] = nlohmann::json::array();
  for (const auto& a : m.artifacts) j["artifacts"].push_back({{"role", a.role}, {"path", a.path.string()}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  }
  RunManifest m;
  try {
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = parse_config(j.at("config").dump());
    for (const auto& d : j.at("datasets")) {
      m.datasets.push_back({d.at("role").get<std::string>(), d.at("path").get<std::string>(),
                            d.at("sha256").get<std::string>()});
    }
    for (const auto& a : j.at("artifacts")) {
      m.artifacts.push_back({a.at("role").get<std::string>(), a.at("path").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  }
  for (const auto& d : m.datasets) {
    if (sha256_file(d.path) != d.sha256) {
      throw DataError(path.string() + ": digest of " + d.path.string() + " no longer matches the manifest");
    }
  }
  return m;
}

}  // namespace euda
