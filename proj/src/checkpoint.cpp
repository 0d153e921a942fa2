#include "layerpool/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "layerpool/io.hpp"

namespace layerpool {

namespace {

constexpr char kMagic[8] = {'L', 'P', 'O', 'O', 'L', 'C', 'K', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_bytes(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::size_t to_size(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint metadata lacks '" + key + "'");
  return static_cast<std::size_t>(std::stoull(it->second));
}

// Header lines are `key=value`; values may contain any byte except newline.
std::map<std::string, std::string> parse_header(std::string_view text) {
  std::map<std::string, std::string> out;
  for (const std::string& line : split(text, '\n')) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed checkpoint header line '" + line + "'");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace

std::string encode_checkpoint(Model& model, const Vocab& vocab, const std::map<std::string, std::string>& extra) {
  const ModelConfig& cfg = model.config();
  std::map<std::string, std::string> meta = extra;
  meta["layers"] = std::to_string(cfg.encoder.layers);
  meta["hidden"] = std::to_string(cfg.encoder.hidden);
  meta["heads"] = std::to_string(cfg.encoder.heads);
  meta["ffn"] = std::to_string(cfg.encoder.ffn);
  meta["vocab_size"] = std::to_string(cfg.encoder.vocab);
  meta["max_len"] = std::to_string(cfg.encoder.max_len);
  meta["dropout"] = format_real(cfg.encoder.dropout);
  meta["pooling"] = std::string(to_string(cfg.pooling));
  meta["classes"] = std::to_string(cfg.classes);
  std::string tokens;
  for (const std::string& t : vocab.tokens()) {
    if (!tokens.empty()) tokens += ' ';
    tokens += t;
  }
  meta["vocab"] = tokens;

  std::string header;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint metadata entry '" + k + "' cannot be encoded");
    }
    header += k + "=" + v + "\n";
  }

  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointVersion);
  put_bytes(out, header);
  const auto params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put_bytes(out, p->name);
    put_u32(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (Real v : p->value.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (std::memcmp(in.bytes(sizeof(kMagic)).data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto meta = parse_header(in.bytes(in.u32()));

  ModelConfig cfg;
  cfg.encoder.layers = to_size(meta, "layers");
  cfg.encoder.hidden = to_size(meta, "hidden");
  cfg.encoder.heads = to_size(meta, "heads");
  cfg.encoder.ffn = to_size(meta, "ffn");
  cfg.encoder.vocab = to_size(meta, "vocab_size");
  cfg.encoder.max_len = to_size(meta, "max_len");
  cfg.encoder.dropout = parse_real(meta.at("dropout"));
  cfg.pooling = parse_pooling(meta.at("pooling"));
  cfg.classes = to_size(meta, "classes");
  Vocab vocab = Vocab::from_tokens(split(meta.at("vocab"), ' '));
  if (vocab.size() != cfg.encoder.vocab) throw DataError("checkpoint vocabulary size disagrees with vocab_size");

  Model model(cfg, 0);
  const auto params = model.parameters();
  const std::uint32_t count = in.u32();
  if (count != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                    std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    const std::string name(in.bytes(in.u32()));
    if (name != p->name) throw DataError("checkpoint parameter '" + name + "' where '" + p->name + "' expected");
    Shape shape(in.u32());
    for (std::size_t& d : shape) d = in.u32();
    if (shape != p->value.shape()) {
      throw DataError("checkpoint parameter '" + name + "' has shape " + to_string(shape));
    }
    for (Real& v : p->value.values()) v = static_cast<Real>(std::bit_cast<float>(in.u32()));
  }
  if (!in.done()) throw DataError("trailing bytes after checkpoint parameters");
  return Checkpoint{std::move(model), std::move(vocab), meta};
}

void save_checkpoint(const std::filesystem::path& path, Model& model, const Vocab& vocab,
                     const std::map<std::string, std::string>& extra) {
  write_file_atomic(path, encode_checkpoint(model, vocab, extra));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace layerpool
