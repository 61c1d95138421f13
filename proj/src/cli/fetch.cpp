#include <fstream>
#include <iterator>
#include <sstream>

#include "opacgp/cli.hpp"
#include "opacgp/errors.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <openssl/evp.h>

namespace opacgp::cli {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("sha256: digest failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

std::string fetch_to_file(const std::string& url, const std::filesystem::path& out, const std::string& expected_sha256) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InputError("fetch: not an absolute URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_connection_timeout(10);
  client.set_read_timeout(30);
  const httplib::Result res = client.Get(path);
  if (!res) throw InputError("fetch: request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw InputError("fetch: HTTP status " + std::to_string(res->status));

  const std::string digest = sha256_hex(res->body);
  if (!expected_sha256.empty() && digest != expected_sha256) {
    throw InputError("fetch: checksum mismatch: got " + digest + ", expected " + expected_sha256);
  }
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream(out, std::ios::binary) << res->body;
  std::ofstream(out.string() + ".sha256") << digest << "  " << out.filename().string() << '\n';
  return digest;
}

}  // namespace opacgp::cli
