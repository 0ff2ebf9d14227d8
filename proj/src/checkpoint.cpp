#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tinyrl/config.hpp"
#include "tinyrl/error.hpp"
#include "tinyrl/policy.hpp"

namespace tinyrl {

namespace {

constexpr char kMagic[8] = {'T', 'I', 'N', 'Y', 'R', 'L', 'C', 'K'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class Cursor {
 public:
  explicit Cursor(const std::string& b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw ValueError("checkpoint: truncated data");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const PolicyParams& params) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointVersion);
  put_str(out, policy_config_to_json(params.config).dump());
  put_u64(out, params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const Tensor& t = params.tensors[i];
    put_str(out, params.names[i]);
    put_u64(out, t.shape().size());
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double x : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(x));
  }
  return out;
}

PolicyParams deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ValueError("checkpoint: bad magic");
  }
  const std::string body = bytes.substr(sizeof(kMagic));
  Cursor c(body);
  const std::uint32_t version = c.u32();
  if (version != kCheckpointVersion) {
    throw ValueError("checkpoint: unsupported version " + std::to_string(version));
  }
  nlohmann::json cj;
  try {
    cj = nlohmann::json::parse(c.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ValueError(std::string("checkpoint: bad config: ") + e.what());
  }
  PolicyParams p = init_policy(policy_config_from_json(cj, "checkpoint.config"), 0);
  const std::uint64_t count = c.u64();
  if (count != p.tensors.size()) throw ValueError("checkpoint: tensor count does not match the config");
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = c.str();
    if (name != p.names[i]) throw ValueError("checkpoint: expected tensor '" + p.names[i] + "', found '" + name + "'");
    const std::uint64_t rank = c.u64();
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(c.u64());
    if (shape != p.tensors[i].shape()) throw ValueError("checkpoint: shape mismatch for '" + name + "'");
    for (double& x : p.tensors[i].values()) x = std::bit_cast<double>(c.u64());
  }
  if (!c.done()) throw ValueError("checkpoint: trailing bytes");
  return p;
}

void save_checkpoint(const std::string& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(params);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error("cannot write checkpoint " + path);
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace tinyrl
