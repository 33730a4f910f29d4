#include "manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include "nowcast/errors.hpp"
#include "nowcast/text.hpp"

namespace nowcast::cli {

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256: init failed");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md;
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

RunManifest::RunManifest(std::string command) : command_(std::move(command)) {}

void RunManifest::set(const std::string& key, const std::string& value) { config_.emplace_back(key, value); }
void RunManifest::input(const std::filesystem::path& path) { inputs_.push_back(path); }
void RunManifest::output(const std::filesystem::path& path) { outputs_.push_back(path); }

void RunManifest::write(const std::filesystem::path& path, double wall_seconds) const {
  std::ostringstream os;
  os << "command=" << command_ << '\n';
  for (const auto& [k, v] : config_) os << "config." << k << '=' << v << '\n';
  for (std::size_t i = 0; i < inputs_.size(); ++i) {
    os << "input." << i << '=' << inputs_[i].string() << '\n';
    os << "input." << i << ".sha256=" << sha256_file(inputs_[i]) << '\n';
  }
  for (std::size_t i = 0; i < outputs_.size(); ++i) {
    os << "output." << i << '=' << outputs_[i].string() << '\n';
    os << "output." << i << ".sha256=" << sha256_file(outputs_[i]) << '\n';
  }
  os << "wall_seconds=" << format_number(wall_seconds) << '\n';
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << os.str();
}

}  // namespace nowcast::cli
