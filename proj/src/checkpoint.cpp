#include "itpn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "itpn/error.hpp"
#include "itpn/model.hpp"
#include "itpn/optim.hpp"
#include "itpn/teacher.hpp"

namespace itpn {

namespace {

constexpr char kMagic[8] = {'I', 'T', 'P', 'N', 'C', 'K', '1', '\0'};
constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw LoadError(LoadErrorKind::truncated, std::string("checkpoint truncated while reading ") + what + " at byte " +
                                                    std::to_string(pos_) + " (needs " + std::to_string(n) +
                                                    ", file has " + std::to_string(bytes_.size() - pos_) + " left)");
    }
  }

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void skip(std::size_t n) { pos_ += n; }
  const char* here() const { return bytes_.data() + pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Name/shape check of a stored group against live tensors. Returns one line
// per problem.
std::vector<std::string> group_problems(const CheckpointGroup& group, const ParamList& live) {
  std::vector<std::string> problems;
  std::unordered_map<std::string, const CheckpointTensor*> stored;
  for (const auto& t : group.tensors) stored[t.name] = &t;
  for (const auto& p : live) {
    auto it = stored.find(p.name);
    if (it == stored.end()) {
      problems.push_back(group.name + "/" + p.name + ": missing");
    } else if (it->second->shape != p.tensor.shape()) {
      problems.push_back(group.name + "/" + p.name + ": stored " + shape_str(it->second->shape) + ", live " +
                         shape_str(p.tensor.shape()));
    }
  }
  if (stored.size() != live.size()) {
    std::unordered_map<std::string, bool> known;
    for (const auto& p : live) known[p.name] = true;
    for (const auto& t : group.tensors)
      if (!known.count(t.name)) problems.push_back(group.name + "/" + t.name + ": unexpected");
  }
  return problems;
}

[[noreturn]] void throw_problems(const std::vector<std::string>& problems) {
  bool shape_only = true;
  std::string msg = "checkpoint does not match the model:";
  for (const auto& p : problems) {
    msg += "\n  " + p;
    if (p.find("stored ") == std::string::npos) shape_only = false;
  }
  throw LoadError(shape_only ? LoadErrorKind::shape_mismatch : LoadErrorKind::missing_tensor, msg);
}

void copy_group(const CheckpointGroup& group, const ParamList& live) {
  for (const auto& p : live) {
    const auto* t = group.find(p.name);
    auto dst = p.tensor.impl()->data.data();
    std::memcpy(dst, t->values.data(), t->values.size() * sizeof(Scalar));
  }
}

}  // namespace

const CheckpointTensor* CheckpointGroup::find(const std::string& tensor) const {
  for (const auto& t : tensors)
    if (t.name == tensor) return &t;
  return nullptr;
}

const CheckpointGroup* CheckpointBundle::find(const std::string& group) const {
  for (const auto& g : groups)
    if (g.name == group) return &g;
  return nullptr;
}

std::set<std::string> CheckpointBundle::group_names() const {
  std::set<std::string> out;
  for (const auto& g : groups) out.insert(g.name);
  return out;
}

CheckpointGroup make_group(const std::string& name, const ParamList& params) {
  CheckpointGroup g{name, {}};
  for (const auto& p : params) {
    const auto d = p.tensor.data();
    g.tensors.push_back({p.name, p.tensor.shape(), std::vector<Scalar>(d.begin(), d.end())});
  }
  return g;
}

std::string encode_checkpoint(const CheckpointBundle& bundle) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, bundle.version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.groups.size()));
  for (const auto& g : bundle.groups) {
    put_string(out, g.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(g.tensors.size()));
    for (const auto& t : g.tensors) {
      if (shape_numel(t.shape) != t.values.size()) {
        throw ContractError("checkpoint tensor " + t.name + " has " + std::to_string(t.values.size()) +
                            " values for shape " + shape_str(t.shape));
      }
      put_string(out, t.name);
      put<std::uint8_t>(out, kDtypeF64);
      put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
      for (auto e : t.shape) put<std::uint64_t>(out, e);
      put<std::uint64_t>(out, t.values.size() * sizeof(Scalar));
      for (Scalar v : t.values) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

CheckpointBundle decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  r.need(sizeof(kMagic), "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw LoadError(LoadErrorKind::bad_magic, "not a checkpoint file (bad magic)");
  }
  r.skip(sizeof(kMagic));
  CheckpointBundle bundle;
  bundle.version = r.get<std::uint32_t>("version");
  if (bundle.version != kCheckpointVersion) {
    throw LoadError(LoadErrorKind::version_mismatch, "checkpoint version " + std::to_string(bundle.version) +
                                                         ", this build reads version " +
                                                         std::to_string(kCheckpointVersion));
  }
  const auto n_groups = r.get<std::uint32_t>("group count");
  for (std::uint32_t gi = 0; gi < n_groups; ++gi) {
    CheckpointGroup g;
    g.name = r.get_string("group name");
    const auto n_tensors = r.get<std::uint32_t>("tensor count");
    for (std::uint32_t ti = 0; ti < n_tensors; ++ti) {
      CheckpointTensor t;
      t.name = r.get_string("tensor name");
      const auto dtype = r.get<std::uint8_t>("dtype");
      if (dtype != kDtypeF64) {
        throw LoadError(LoadErrorKind::unsupported_dtype,
                        "tensor " + g.name + "/" + t.name + " has dtype " + std::to_string(dtype));
      }
      const auto rank = r.get<std::uint8_t>("rank");
      for (std::uint8_t a = 0; a < rank; ++a) t.shape.push_back(r.get<std::uint64_t>("extent"));
      const auto payload = r.get<std::uint64_t>("payload size");
      const std::size_t expected = shape_numel(t.shape) * sizeof(Scalar);
      if (payload != expected) {
        throw LoadError(LoadErrorKind::size_mismatch, "tensor " + g.name + "/" + t.name + " declares " +
                                                          std::to_string(payload) + " payload bytes, shape " +
                                                          shape_str(t.shape) + " needs " + std::to_string(expected));
      }
      r.need(payload, "tensor payload");
      t.values.resize(shape_numel(t.shape));
      for (auto& v : t.values) v = std::bit_cast<Scalar>(r.get<std::uint64_t>("value"));
      g.tensors.push_back(std::move(t));
    }
    bundle.groups.push_back(std::move(g));
  }
  if (r.remaining() != 0) {
    throw LoadError(LoadErrorKind::size_mismatch,
                    "checkpoint has " + std::to_string(r.remaining()) + " trailing bytes after the last group");
  }
  return bundle;
}

void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(bundle);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

CheckpointBundle load_checkpoint(const std::filesystem::path& path, const std::set<std::string>& select) {
  CheckpointBundle all = decode_checkpoint(read_file(path));
  if (select.empty()) return all;
  CheckpointBundle out;
  out.version = all.version;
  for (const auto& name : select) {
    const auto* g = all.find(name);
    if (!g) throw LoadError(LoadErrorKind::missing_tensor, "checkpoint " + path.string() + " has no group " + name);
    out.groups.push_back(*g);
  }
  return out;
}

void apply_group(const CheckpointGroup& group, const ParamList& live) {
  const auto problems = group_problems(group, live);
  if (!problems.empty()) throw_problems(problems);
  copy_group(group, live);
}

CheckpointBundle capture(const ItpnModel& model, const TeacherState* teacher, const AdamW* optim) {
  CheckpointBundle b;
  b.groups.push_back(make_group(kGroupBackbone, model.backbone.parameters()));
  b.groups.push_back(make_group(kGroupNeck, model.neck.parameters()));
  b.groups.push_back(make_group(kGroupHeads, model.head_parameters()));
  if (teacher) b.groups.push_back(make_group(kGroupTeacher, teacher->network.parameters()));
  if (optim) b.groups.push_back(make_group(kGroupOptimizer, optim->state_tensors()));
  return b;
}

void restore(const CheckpointBundle& bundle, const std::set<std::string>& select, ItpnModel& model,
             TeacherState* teacher, AdamW* optim) {
  struct Target {
    const CheckpointGroup* group;
    ParamList live;
  };
  std::vector<Target> targets;
  std::vector<std::string> problems;
  for (const auto& name : select) {
    const auto* g = bundle.find(name);
    if (!g) {
      problems.push_back(name + ": group not in checkpoint");
      continue;
    }
    ParamList live;
    if (name == kGroupBackbone) {
      live = model.backbone.parameters();
    } else if (name == kGroupNeck) {
      live = model.neck.parameters();
    } else if (name == kGroupHeads) {
      live = model.head_parameters();
    } else if (name == kGroupTeacher) {
      if (!teacher) continue;
      live = teacher->network.parameters();
    } else if (name == kGroupOptimizer) {
      if (!optim) continue;
      live = optim->state_tensors();
    } else {
      problems.push_back(name + ": unknown group");
      continue;
    }
    auto p = group_problems(*g, live);
    problems.insert(problems.end(), p.begin(), p.end());
    targets.push_back({g, std::move(live)});
  }
  if (!problems.empty()) throw_problems(problems);
  for (const auto& t : targets) {
    if (t.group->name == kGroupOptimizer) {
      ParamList state;
      for (const auto& ct : t.group->tensors) state.push_back({ct.name, Tensor(ct.shape, ct.values), 0});
      optim->load_state(state);
    } else {
      copy_group(*t.group, t.live);
    }
  }
}

std::set<std::string> parse_load_groups(const std::string& text) {
  if (text == "backbone") return {kGroupBackbone};
  if (text == "backbone,neck" || text == "neck,backbone") return {kGroupBackbone, kGroupNeck};
  if (text == "all") return {kGroupBackbone, kGroupNeck, kGroupHeads};
  throw ConfigError("--load-groups must be backbone, backbone,neck or all (got '" + text + "')");
}

}  // namespace itpn
