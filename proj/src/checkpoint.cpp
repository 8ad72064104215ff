#include "cbmi/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace cbmi {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(const char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

struct IndexEntry {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::uint64_t offset = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int parse_int(const std::map<std::string, std::string>& m, const std::string& key, const fs::path& dir) {
  auto it = m.find(key);
  if (it == m.end()) throw std::runtime_error(dir.string() + "/manifest.txt: missing key '" + key + "'");
  return std::stoi(it->second);
}

double parse_double(const std::map<std::string, std::string>& m, const std::string& key, const fs::path& dir) {
  auto it = m.find(key);
  if (it == m.end()) throw std::runtime_error(dir.string() + "/manifest.txt: missing key '" + key + "'");
  return std::stod(it->second);
}

template <typename Scalar>
std::vector<std::pair<std::string, Matrix<Scalar>*>> collect(ModelParams<Scalar>& params) {
  std::vector<std::pair<std::string, Matrix<Scalar>*>> out;
  params.visit([&](const std::string& name, Tensor<Scalar>& t) { out.emplace_back(name, &t.value()); });
  return out;
}

}  // namespace

KeyValues read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return kv;
}

void write_key_values(const fs::path& path, const KeyValues& kv) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

std::map<std::string, std::string> read_manifest(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (auto& [k, v] : read_key_values(dir / "manifest.txt")) m[k] = v;
  if (m["format"] != kCheckpointFormat)
    throw std::runtime_error(dir.string() + "/manifest.txt: unsupported format '" + m["format"] + "'");
  return m;
}

template <typename Scalar>
void save_checkpoint(const fs::path& dir, ModelParams<Scalar>& params, const Vocabularies& vocabs, std::int64_t step,
                     const KeyValues& config, const OptimizerState<Scalar>* nmt_optimizer,
                     const OptimizerState<Scalar>* lm_optimizer) {
  // Write into a sibling temp directory and rename, so a crash never leaves a
  // half-written checkpoint under the final name.
  const fs::path tmp = dir.parent_path() / (dir.filename().string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  std::vector<std::pair<std::string, const Matrix<Scalar>*>> tensors;
  for (auto& [name, m] : collect(params)) tensors.emplace_back(name, m);
  auto add_state = [&](const char* tag, const OptimizerState<Scalar>* s) {
    if (!s) return;
    for (std::size_t i = 0; i < s->first.size(); ++i) {
      tensors.emplace_back(std::string("adam.") + tag + ".m." + std::to_string(i), &s->first[i]);
      tensors.emplace_back(std::string("adam.") + tag + ".v." + std::to_string(i), &s->second[i]);
    }
  };
  add_state("nmt", nmt_optimizer);
  add_state("lm", lm_optimizer);

  {
    std::ofstream bin(tmp / "tensors.bin", std::ios::binary);
    std::ofstream idx(tmp / "tensors.idx");
    if (!bin || !idx) throw std::runtime_error("cannot write checkpoint in " + tmp.string());
    std::uint64_t offset = 0;
    for (const auto& [name, m] : tensors) {
      idx << name << '\t' << m->rows() << ',' << m->cols() << '\t' << offset << '\n';
      for (Index i = 0; i < m->size(); ++i) write_le<Scalar>(bin, m->data()[i]);
      offset += static_cast<std::uint64_t>(m->size()) * sizeof(Scalar);
    }
  }
  vocabs.src.save(tmp / "vocab.src.txt");
  vocabs.tgt.save(tmp / "vocab.tgt.txt");
  write_key_values(tmp / "config.txt", config);

  std::string config_text;
  for (const auto& [k, v] : config) config_text += k + "=" + v + "\n";
  const ModelConfig& c = params.config;
  std::ostringstream hex;
  auto h = [&](std::uint64_t v) {
    hex.str("");
    hex << std::hex << std::setw(16) << std::setfill('0') << v;
    return hex.str();
  };
  KeyValues manifest{
      {"format", kCheckpointFormat},
      {"precision", std::to_string(sizeof(Scalar) * 8)},
      {"step", std::to_string(step)},
      {"has_optimizer", nmt_optimizer ? "1" : "0"},
      {"has_lm_optimizer", lm_optimizer ? "1" : "0"},
      {"nmt_optimizer_step", std::to_string(nmt_optimizer ? nmt_optimizer->step : 0)},
      {"lm_optimizer_step", std::to_string(lm_optimizer ? lm_optimizer->step : 0)},
      {"config_hash", h(fnv1a(config_text))},
      {"vocab_src_hash", h(vocabs.src.fingerprint())},
      {"vocab_tgt_hash", h(vocabs.tgt.fingerprint())},
      {"embed_dim", std::to_string(c.embed_dim)},
      {"ff_dim", std::to_string(c.ff_dim)},
      {"enc_layers", std::to_string(c.enc_layers)},
      {"dec_layers", std::to_string(c.dec_layers)},
      {"lm_layers", std::to_string(c.lm_layers)},
      {"heads", std::to_string(c.heads)},
      {"dropout_residual", format_double(c.dropout_residual)},
      {"dropout_attention", format_double(c.dropout_attention)},
      {"dropout_activation", format_double(c.dropout_activation)},
      {"vocab_size_src", std::to_string(c.vocab_size_src)},
      {"vocab_size_tgt", std::to_string(c.vocab_size_tgt)},
      {"share_vocab", c.share_vocab ? "1" : "0"},
  };
  if (nmt_optimizer) {
    manifest.emplace_back("adam_beta1", format_double(nmt_optimizer->hyper.beta1));
    manifest.emplace_back("adam_beta2", format_double(nmt_optimizer->hyper.beta2));
    manifest.emplace_back("adam_eps", format_double(nmt_optimizer->hyper.eps));
  }
  write_key_values(tmp / "manifest.txt", manifest);

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("checkpoint directory not found: " + dir.string());
  const auto manifest = read_manifest(dir);
  ModelConfig c;
  c.embed_dim = parse_int(manifest, "embed_dim", dir);
  c.ff_dim = parse_int(manifest, "ff_dim", dir);
  c.enc_layers = parse_int(manifest, "enc_layers", dir);
  c.dec_layers = parse_int(manifest, "dec_layers", dir);
  c.lm_layers = parse_int(manifest, "lm_layers", dir);
  c.heads = parse_int(manifest, "heads", dir);
  c.dropout_residual = parse_double(manifest, "dropout_residual", dir);
  c.dropout_attention = parse_double(manifest, "dropout_attention", dir);
  c.dropout_activation = parse_double(manifest, "dropout_activation", dir);
  c.vocab_size_src = parse_int(manifest, "vocab_size_src", dir);
  c.vocab_size_tgt = parse_int(manifest, "vocab_size_tgt", dir);
  c.share_vocab = parse_int(manifest, "share_vocab", dir) != 0;
  c.validate();
  const int precision = parse_int(manifest, "precision", dir);
  if (precision != 32 && precision != 64)
    throw std::runtime_error(dir.string() + "/manifest.txt: precision must be 32 or 64");

  Checkpoint<Scalar> ck{init_params<Scalar>(c, 0), {}, 0, std::nullopt, std::nullopt, {}, manifest};
  ck.step = std::stoll(manifest.at("step"));
  ck.vocabs.src = Vocabulary::load(dir / "vocab.src.txt");
  ck.vocabs.tgt = Vocabulary::load(dir / "vocab.tgt.txt");
  if (static_cast<int>(ck.vocabs.src.size()) != c.vocab_size_src ||
      static_cast<int>(ck.vocabs.tgt.size()) != c.vocab_size_tgt)
    throw std::runtime_error(dir.string() + ": vocabulary files do not match the model vocabulary sizes");
  if (fs::exists(dir / "config.txt")) ck.config = read_key_values(dir / "config.txt");

  const std::string payload = read_file(dir / "tensors.bin");
  std::map<std::string, IndexEntry> index;
  {
    std::ifstream in(dir / "tensors.idx");
    if (!in) throw std::runtime_error("cannot open " + (dir / "tensors.idx").string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      IndexEntry e;
      std::string shape;
      char comma = 0;
      if (!std::getline(ls, e.name, '\t') || !std::getline(ls, shape, '\t') || !(ls >> e.offset))
        throw std::runtime_error(dir.string() + "/tensors.idx: malformed line '" + line + "'");
      std::istringstream ss(shape);
      if (!(ss >> e.rows >> comma >> e.cols) || comma != ',')
        throw std::runtime_error(dir.string() + "/tensors.idx: malformed shape '" + shape + "'");
      index[e.name] = e;
    }
  }
  const std::size_t width = precision / 8;
  auto read_into = [&](const std::string& name, Matrix<Scalar>& m, Index rows, Index cols) {
    auto it = index.find(name);
    if (it == index.end()) throw std::runtime_error(dir.string() + ": tensor '" + name + "' missing");
    const IndexEntry& e = it->second;
    if (e.rows != rows || e.cols != cols)
      throw std::runtime_error(dir.string() + ": tensor '" + name + "' has shape " + std::to_string(e.rows) + "x" +
                               std::to_string(e.cols) + ", expected " + std::to_string(rows) + "x" +
                               std::to_string(cols));
    const std::uint64_t bytes = static_cast<std::uint64_t>(rows * cols) * width;
    if (e.offset + bytes > payload.size())
      throw std::runtime_error(dir.string() + ": tensor '" + name + "' runs past the end of tensors.bin");
    m.resize(rows, cols);
    const char* p = payload.data() + e.offset;
    for (Index i = 0; i < m.size(); ++i, p += width)
      m.data()[i] = width == 4 ? static_cast<Scalar>(read_le<float>(p)) : static_cast<Scalar>(read_le<double>(p));
  };

  std::vector<Tensor<Scalar>*> tensors;
  ck.params.visit([&](const std::string& name, Tensor<Scalar>& t) {
    read_into(name, t.value(), t.rows(), t.cols());
    tensors.push_back(&t);
  });

  auto load_state = [&](const char* tag, const std::vector<Tensor<Scalar>*>& group, const std::string& step_key) {
    AdamHyper hyper;
    hyper.beta1 = parse_double(manifest, "adam_beta1", dir);
    hyper.beta2 = parse_double(manifest, "adam_beta2", dir);
    hyper.eps = parse_double(manifest, "adam_eps", dir);
    OptimizerState<Scalar> s = make_optimizer_state<Scalar>(group, hyper);
    for (std::size_t i = 0; i < group.size(); ++i) {
      read_into(std::string("adam.") + tag + ".m." + std::to_string(i), s.first[i], group[i]->rows(),
                group[i]->cols());
      read_into(std::string("adam.") + tag + ".v." + std::to_string(i), s.second[i], group[i]->rows(),
                group[i]->cols());
    }
    s.step = std::stoll(manifest.at(step_key));
    return s;
  };
  std::vector<Tensor<Scalar>*> nmt, lm;
  ck.params.nmt.visit([&](const std::string&, Tensor<Scalar>& t) { nmt.push_back(&t); });
  ck.params.lm.visit([&](const std::string&, Tensor<Scalar>& t) { lm.push_back(&t); });
  if (manifest.count("has_optimizer") && manifest.at("has_optimizer") == "1")
    ck.nmt_optimizer = load_state("nmt", nmt, "nmt_optimizer_step");
  if (manifest.count("has_lm_optimizer") && manifest.at("has_lm_optimizer") == "1")
    ck.lm_optimizer = load_state("lm", lm, "lm_optimizer_step");
  return ck;
}

std::string checkpoint_hash(const fs::path& dir) {
  std::uint64_t h = fnv1a(read_file(dir / "manifest.txt"));
  h = fnv1a(read_file(dir / "tensors.bin"), h);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void require_same_vocab(const fs::path& dir, const Vocabularies& vocabs) {
  const Vocabulary src = Vocabulary::load(dir / "vocab.src.txt");
  const Vocabulary tgt = Vocabulary::load(dir / "vocab.tgt.txt");
  if (!(src == vocabs.src)) throw std::runtime_error("source vocabulary differs from the one in " + dir.string());
  if (!(tgt == vocabs.tgt)) throw std::runtime_error("target vocabulary differs from the one in " + dir.string());
}

void prune_checkpoints(const fs::path& root, std::int64_t keep) {
  if (keep <= 0 || !fs::is_directory(root)) return;
  std::vector<std::pair<std::int64_t, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("step_", 0) != 0 || name.find(".tmp") != std::string::npos) continue;
    found.emplace_back(std::stoll(name.substr(5)), entry.path());
  }
  std::sort(found.begin(), found.end());
  const auto excess = static_cast<std::int64_t>(found.size()) - keep;
  for (std::int64_t i = 0; i < excess; ++i) fs::remove_all(found[static_cast<std::size_t>(i)].second);
}

#define CBMI_INSTANTIATE_CHECKPOINT(S)                                                                           \
  template void save_checkpoint<S>(const fs::path&, ModelParams<S>&, const Vocabularies&, std::int64_t,        \
                                   const KeyValues&, const OptimizerState<S>*, const OptimizerState<S>*);      \
  template Checkpoint<S> load_checkpoint<S>(const fs::path&);

CBMI_INSTANTIATE_CHECKPOINT(float)
CBMI_INSTANTIATE_CHECKPOINT(double)

#undef CBMI_INSTANTIATE_CHECKPOINT

}  // namespace cbmi
