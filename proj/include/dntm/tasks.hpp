#pragma once

// Episode generators and dataset readers: copy, associative recall, bAbI text
// files and MNIST IDX files (optionally with a fixed pixel permutation).

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dntm/array.hpp"
#include "dntm/rng.hpp"

namespace dntm {

// One training or evaluation sequence. Dense tasks fill `inputs`; text tasks
// fill `tokens` (word ids per step). Bit tasks score `targets`, classification
// tasks score `labels`; only steps with mask = 1 are scored.
struct Episode {
  std::string task;
  std::size_t length = 0;
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::vector<double>> targets;
  std::vector<std::int64_t> labels;
  std::vector<std::uint8_t> mask;

  std::size_t steps() const { return mask.size(); }
  bool has_tokens() const { return !tokens.empty(); }
  bool has_labels() const { return !labels.empty(); }

  bool operator==(const Episode&) const = default;
};

// Episodes of identical step count stacked along the batch dimension.
template <typename Real>
struct EpisodeBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<Array<Real>> inputs;                           // [T] x [B, in]
  std::vector<std::vector<std::vector<std::size_t>>> tokens;  // [T][B] -> words
  std::vector<Array<Real>> targets;                          // [T] x [B, out]
  std::vector<std::vector<std::size_t>> labels;              // [T][B]
  std::vector<Array<Real>> mask;                             // [T] x [B, 1]

  bool has_tokens() const { return !tokens.empty(); }
  bool has_labels() const { return !labels.empty(); }
};

template <typename Real>
EpisodeBatch<Real> stack(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("stack: no episodes");
  const auto& first = episodes.front();
  EpisodeBatch<Real> out;
  out.batch = episodes.size();
  out.steps = first.steps();
  for (const auto& e : episodes) {
    if (e.steps() != out.steps) throw ShapeError("stack", Shape{out.steps}, Shape{e.steps()});
    if (e.has_tokens() != first.has_tokens() || e.has_labels() != first.has_labels()) {
      throw std::invalid_argument("stack: episodes of different kinds");
    }
  }
  const std::size_t B = out.batch, T = out.steps;
  for (std::size_t t = 0; t < T; ++t) {
    if (first.has_tokens()) {
      std::vector<std::vector<std::size_t>> words(B);
      for (std::size_t b = 0; b < B; ++b) words[b] = episodes[b].tokens.at(t);
      out.tokens.push_back(std::move(words));
    } else {
      const std::size_t in = first.inputs.at(t).size();
      Array<Real> x({B, in});
      for (std::size_t b = 0; b < B; ++b) {
        const auto& src = episodes[b].inputs.at(t);
        if (src.size() != in) throw ShapeError("stack inputs", Shape{in}, Shape{src.size()});
        std::copy(src.begin(), src.end(), x.row_span(b).begin());
      }
      out.inputs.push_back(std::move(x));
    }
    if (first.has_labels()) {
      std::vector<std::size_t> labels(B);
      for (std::size_t b = 0; b < B; ++b) labels[b] = static_cast<std::size_t>(std::max<std::int64_t>(0, episodes[b].labels.at(t)));
      out.labels.push_back(std::move(labels));
    } else {
      const std::size_t w = first.targets.at(t).size();
      Array<Real> y({B, w});
      for (std::size_t b = 0; b < B; ++b) {
        const auto& src = episodes[b].targets.at(t);
        if (src.size() != w) throw ShapeError("stack targets", Shape{w}, Shape{src.size()});
        std::copy(src.begin(), src.end(), y.row_span(b).begin());
      }
      out.targets.push_back(std::move(y));
    }
    Array<Real> m({B, 1});
    for (std::size_t b = 0; b < B; ++b) m[b] = static_cast<Real>(episodes[b].mask.at(t));
    out.mask.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Copy

struct CopyConfig {
  std::size_t width = 8;
  std::size_t min_len = 1;
  std::size_t max_len = 20;
};

inline std::size_t copy_input_dim(const CopyConfig& cfg) { return cfg.width + 2; }

// Channels: [0, width) payload bits, width = start marker, width + 1 = end
// marker. Layout: start, L payload steps, end, L replay steps (scored).
inline Episode gen_copy_length(Rng& rng, std::size_t len, std::size_t width) {
  if (width < 1) throw ConfigError("copy: width must be at least 1");
  if (len < 1) throw ConfigError("copy: length must be at least 1");
  const std::size_t in = width + 2, T = 2 * len + 2;
  Episode e;
  e.task = "copy";
  e.length = len;
  e.inputs.assign(T, std::vector<double>(in, 0.0));
  e.targets.assign(T, std::vector<double>(width, 0.0));
  e.mask.assign(T, 0);
  e.inputs[0][width] = 1.0;
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t k = 0; k < width; ++k) {
      const double bit = static_cast<double>(rng.next_u64() & 1u);
      e.inputs[1 + t][k] = bit;
      e.targets[len + 2 + t][k] = bit;
    }
    e.mask[len + 2 + t] = 1;
  }
  e.inputs[len + 1][width + 1] = 1.0;
  return e;
}

inline Episode gen_copy(Rng& rng, const CopyConfig& cfg) {
  if (cfg.min_len < 1 || cfg.min_len > cfg.max_len) throw ConfigError("copy: need 1 <= min_len <= max_len");
  const std::size_t len = cfg.min_len + rng.index(cfg.max_len - cfg.min_len + 1);
  return gen_copy_length(rng, len, cfg.width);
}

// ---------------------------------------------------------------------------
// Associative recall

struct RecallConfig {
  std::size_t width = 6;
  std::size_t item_len = 3;
  std::size_t min_items = 2;
  std::size_t max_items = 6;
};

inline std::size_t recall_input_dim(const RecallConfig& cfg) { return cfg.width + 2; }

// Channels: [0, width) bits, width = item delimiter, width + 1 = query
// delimiter. Layout: n x (delimiter, item), query delimiter, query item, query
// delimiter, then item_len answer steps (scored) reproducing the item that
// followed the query item.
inline Episode gen_recall_items(Rng& rng, std::size_t items, const RecallConfig& cfg) {
  if (cfg.width < 1 || cfg.item_len < 1) throw ConfigError("recall: width and item_len must be positive");
  if (items < 2) throw ConfigError("recall: need at least two items");
  const std::size_t W = cfg.width, L = cfg.item_len, in = W + 2;
  std::vector<std::vector<std::vector<double>>> payload(items, std::vector<std::vector<double>>(L, std::vector<double>(W)));
  for (auto& item : payload) {
    for (auto& row : item) {
      for (auto& bit : row) bit = static_cast<double>(rng.next_u64() & 1u);
    }
  }
  const std::size_t query = rng.index(items - 1);

  Episode e;
  e.task = "recall";
  e.length = items;
  auto push = [&](std::vector<double> x, std::vector<double> y, bool scored) {
    e.inputs.push_back(std::move(x));
    e.targets.push_back(std::move(y));
    e.mask.push_back(scored ? 1 : 0);
  };
  auto marker = [&](std::size_t channel) {
    std::vector<double> x(in, 0.0);
    x[channel] = 1.0;
    return x;
  };
  auto padded = [&](const std::vector<double>& bits) {
    std::vector<double> x(in, 0.0);
    std::copy(bits.begin(), bits.end(), x.begin());
    return x;
  };
  const std::vector<double> none(W, 0.0);
  for (const auto& item : payload) {
    push(marker(W), none, false);
    for (const auto& row : item) push(padded(row), none, false);
  }
  push(marker(W + 1), none, false);
  for (const auto& row : payload[query]) push(padded(row), none, false);
  push(marker(W + 1), none, false);
  for (const auto& row : payload[query + 1]) push(std::vector<double>(in, 0.0), row, true);
  return e;
}

inline Episode gen_recall(Rng& rng, const RecallConfig& cfg) {
  if (cfg.min_items < 2 || cfg.min_items > cfg.max_items) throw ConfigError("recall: need 2 <= min_items <= max_items");
  const std::size_t items = cfg.min_items + rng.index(cfg.max_items - cfg.min_items + 1);
  return gen_recall_items(rng, items, cfg);
}

// ---------------------------------------------------------------------------
// bAbI

class BabiParseError : public std::runtime_error {
 public:
  BabiParseError(std::size_t line, const std::string& what)
      : std::runtime_error("bAbI line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct BabiFact {
  int id = 0;
  std::string text;
  bool operator==(const BabiFact&) const = default;
};

// One question with the facts of its story that precede it.
struct BabiStory {
  std::size_t story_index = 0;
  std::vector<BabiFact> facts;
  int question_id = 0;
  std::string question;
  std::string answer;
  std::vector<int> supporting_ids;
  bool operator==(const BabiStory&) const = default;
};

inline std::vector<BabiStory> parse_babi_text(const std::string& text) {
  std::vector<BabiStory> out;
  std::vector<BabiFact> facts;
  std::vector<int> seen;  // every line id in the current story
  std::size_t story = 0;
  int last_id = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0) throw BabiParseError(lineno, "missing line id");
    int id = 0;
    try {
      std::size_t used = 0;
      id = std::stoi(line.substr(0, space), &used);
      if (used != space || id < 1) throw std::invalid_argument("id");
    } catch (const std::exception&) {
      throw BabiParseError(lineno, "bad line id '" + line.substr(0, space) + "'");
    }
    if (id == 1) {
      if (last_id != 0) ++story;
      facts.clear();
      seen.clear();
    } else if (id != last_id + 1) {
      throw BabiParseError(lineno, "line id " + std::to_string(id) + " does not follow " + std::to_string(last_id));
    }
    last_id = id;
    seen.push_back(id);
    const std::string body = line.substr(space + 1);
    const auto tab = body.find('\t');
    if (tab == std::string::npos) {
      facts.push_back({id, body});
      continue;
    }
    BabiStory s;
    s.story_index = story;
    s.facts = facts;
    s.question_id = id;
    s.question = body.substr(0, tab);
    const std::string rest = body.substr(tab + 1);
    const auto tab2 = rest.find('\t');
    if (tab2 == std::string::npos) throw BabiParseError(lineno, "question without supporting ids");
    s.answer = rest.substr(0, tab2);
    if (s.answer.empty()) throw BabiParseError(lineno, "empty answer");
    std::istringstream ids(rest.substr(tab2 + 1));
    std::string tok;
    while (ids >> tok) {
      int sid = 0;
      try {
        std::size_t used = 0;
        sid = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument("id");
      } catch (const std::exception&) {
        throw BabiParseError(lineno, "bad supporting id '" + tok + "'");
      }
      if (sid < 1 || sid >= id || std::find(seen.begin(), seen.end(), sid) == seen.end()) {
        throw BabiParseError(lineno, "dangling supporting id " + std::to_string(sid));
      }
      s.supporting_ids.push_back(sid);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<BabiStory> parse_babi(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open bAbI file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_babi_text(ss.str());
}

// Inverse of parse_babi_text for files whose stories end with a question.
inline std::string serialize_babi(const std::vector<BabiStory>& stories) {
  std::ostringstream out;
  std::size_t current = static_cast<std::size_t>(-1);
  int emitted = 0;
  for (const auto& s : stories) {
    if (s.story_index != current) {
      current = s.story_index;
      emitted = 0;
    }
    for (const auto& f : s.facts) {
      if (f.id > emitted) out << f.id << ' ' << f.text << '\n';
    }
    out << s.question_id << ' ' << s.question << '\t' << s.answer << '\t';
    for (std::size_t i = 0; i < s.supporting_ids.size(); ++i) out << (i ? " " : "") << s.supporting_ids[i];
    out << '\n';
    emitted = s.question_id;
  }
  return out.str();
}

// Lowercased words with trailing sentence punctuation removed.
inline std::vector<std::string> babi_tokens(const std::string& sentence) {
  std::vector<std::string> out;
  std::istringstream in(sentence);
  std::string w;
  while (in >> w) {
    while (!w.empty() && (w.back() == '.' || w.back() == '?' || w.back() == '!')) w.pop_back();
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (!w.empty()) out.push_back(w);
  }
  return out;
}

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words) {
    for (auto& w : words) add(w);
  }

  std::size_t add(const std::string& word) {
    auto [it, inserted] = index_.emplace(word, words_.size());
    if (inserted) words_.push_back(word);
    return it->second;
  }

  std::size_t id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw std::out_of_range("word not in vocabulary: " + word);
    return it->second;
  }

  bool contains(const std::string& word) const { return index_.contains(word); }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

inline Vocabulary build_vocabulary(const std::vector<BabiStory>& stories) {
  Vocabulary v;
  for (const auto& s : stories) {
    for (const auto& f : s.facts) {
      for (const auto& w : babi_tokens(f.text)) v.add(w);
    }
    for (const auto& w : babi_tokens(s.question)) v.add(w);
    v.add(s.answer);
  }
  return v;
}

// One step per fact followed by the question step, which carries the label.
inline Episode babi_episode(const BabiStory& s, const Vocabulary& vocab, std::size_t max_facts = 0) {
  Episode e;
  e.task = "babi";
  std::size_t first = 0;
  if (max_facts && s.facts.size() > max_facts) first = s.facts.size() - max_facts;
  auto encode = [&](const std::string& sentence) {
    std::vector<std::size_t> ids;
    for (const auto& w : babi_tokens(sentence)) ids.push_back(vocab.id(w));
    if (ids.empty()) throw std::invalid_argument("babi_episode: empty sentence");
    return ids;
  };
  for (std::size_t i = first; i < s.facts.size(); ++i) {
    e.tokens.push_back(encode(s.facts[i].text));
    e.labels.push_back(-1);
    e.mask.push_back(0);
  }
  e.tokens.push_back(encode(s.question));
  e.labels.push_back(static_cast<std::int64_t>(vocab.id(s.answer)));
  e.mask.push_back(1);
  e.length = e.tokens.size();
  return e;
}

// ---------------------------------------------------------------------------
// MNIST IDX

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PixelDataset {
  std::size_t rows = 0, cols = 0;
  std::vector<std::vector<float>> images;  // each rows*cols values in [0, 1]
  std::vector<std::uint8_t> labels;
  std::vector<std::size_t> permutation;   // pixel order applied to every image
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw IdxError(path + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

}  // namespace detail

// Fisher-Yates permutation of [0, n) drawn from `seed`.
inline std::vector<std::size_t> pixel_permutation(std::size_t n, std::optional<std::uint64_t> seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  if (!seed) return p;
  Rng rng(*seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
  return p;
}

// Loads an IDX image/label pair. With a permutation seed every image is
// reordered by the same fixed permutation (pMNIST); without, pixels stay in
// scan-line order.
inline PixelDataset load_idx(const std::string& images_path, const std::string& labels_path,
                             std::optional<std::uint64_t> permutation_seed) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IdxError("cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IdxError("cannot open " + labels_path);

  if (auto magic = detail::read_be32(img, images_path); magic != 2051) {
    throw IdxError(images_path + ": bad magic " + std::to_string(magic) + " (expected 2051)");
  }
  const std::size_t n = detail::read_be32(img, images_path);
  PixelDataset ds;
  ds.rows = detail::read_be32(img, images_path);
  ds.cols = detail::read_be32(img, images_path);
  if (auto magic = detail::read_be32(lab, labels_path); magic != 2049) {
    throw IdxError(labels_path + ": bad magic " + std::to_string(magic) + " (expected 2049)");
  }
  const std::size_t nl = detail::read_be32(lab, labels_path);
  if (nl != n) throw IdxError("image count " + std::to_string(n) + " != label count " + std::to_string(nl));
  if (ds.rows == 0 || ds.cols == 0) throw IdxError(images_path + ": zero image dimension");

  const std::size_t pixels = ds.rows * ds.cols;
  ds.permutation = pixel_permutation(pixels, permutation_seed);
  std::vector<unsigned char> raw(pixels);
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels))) {
      throw IdxError(images_path + ": truncated at image " + std::to_string(i));
    }
    std::vector<float> seq(pixels);
    for (std::size_t k = 0; k < pixels; ++k) seq[k] = static_cast<float>(raw[ds.permutation[k]]) / 255.0f;
    ds.images.push_back(std::move(seq));
  }
  ds.labels.resize(n);
  if (!lab.read(reinterpret_cast<char*>(ds.labels.data()), static_cast<std::streamsize>(n))) {
    throw IdxError(labels_path + ": truncated labels");
  }
  return ds;
}

// Pixel-per-step episode; the class label is scored at the last step.
inline Episode pixel_episode(const PixelDataset& ds, std::size_t index) {
  Episode e;
  e.task = "pmnist";
  const auto& img = ds.images.at(index);
  e.length = img.size();
  for (float v : img) e.inputs.push_back({static_cast<double>(v)});
  e.labels.assign(img.size(), -1);
  e.mask.assign(img.size(), 0);
  e.labels.back() = ds.labels.at(index);
  e.mask.back() = 1;
  return e;
}

// ---------------------------------------------------------------------------
// Episode dumps: one JSON object per line; numeric payloads are base64 of
// little-endian float64 (inputs, targets) or raw bytes (mask).

namespace detail {

inline constexpr char kBase64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t n = (std::uint32_t{bytes[i]} << 16) | (i + 1 < bytes.size() ? std::uint32_t{bytes[i + 1]} << 8 : 0u) |
                            (i + 2 < bytes.size() ? std::uint32_t{bytes[i + 2]} : 0u);
    out += kBase64[(n >> 18) & 63];
    out += kBase64[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? kBase64[(n >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kBase64[n & 63] : '=';
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4) throw std::invalid_argument("base64: length not a multiple of 4");
  std::vector<unsigned char> out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t n = 0;
    int pad = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = text[i + k];
      int v = 0;
      if (c == '=') {
        ++pad;
      } else if ((v = value(c)) < 0) {
        throw std::invalid_argument("base64: bad character");
      }
      n = (n << 6) | static_cast<std::uint32_t>(v);
    }
    out.push_back(static_cast<unsigned char>(n >> 16));
    if (pad < 2) out.push_back(static_cast<unsigned char>((n >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(n & 0xff));
  }
  return out;
}

inline std::vector<unsigned char> pack_f64(const std::vector<std::vector<double>>& rows) {
  std::vector<unsigned char> out;
  for (const auto& row : rows) {
    for (double v : row) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int k = 0; k < 8; ++k) out.push_back(static_cast<unsigned char>(bits >> (8 * k)));
    }
  }
  return out;
}

inline std::vector<std::vector<double>> unpack_f64(const std::vector<unsigned char>& bytes, std::size_t rows,
                                                   std::size_t cols) {
  if (bytes.size() != rows * cols * 8) throw std::invalid_argument("episode dump: payload size mismatch");
  std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
  for (std::size_t i = 0; i < rows * cols; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= std::uint64_t{bytes[i * 8 + k]} << (8 * k);
    std::memcpy(&out[i / cols][i % cols], &bits, sizeof bits);
  }
  return out;
}

}  // namespace detail

inline std::string episode_to_jsonl(const Episode& e) {
  nlohmann::json j;
  j["task"] = e.task;
  j["length"] = e.length;
  j["steps"] = e.steps();
  j["mask"] = detail::base64_encode(std::vector<unsigned char>(e.mask.begin(), e.mask.end()));
  if (e.has_tokens()) {
    j["tokens"] = e.tokens;
  } else {
    j["input_dim"] = e.inputs.empty() ? 0 : e.inputs.front().size();
    j["inputs"] = detail::base64_encode(detail::pack_f64(e.inputs));
  }
  if (e.has_labels()) {
    j["labels"] = e.labels;
  } else {
    j["target_dim"] = e.targets.empty() ? 0 : e.targets.front().size();
    j["targets"] = detail::base64_encode(detail::pack_f64(e.targets));
  }
  return j.dump();
}

inline Episode episode_from_jsonl(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  Episode e;
  e.task = j.at("task").get<std::string>();
  e.length = j.at("length").get<std::size_t>();
  const auto steps = j.at("steps").get<std::size_t>();
  const auto mask = detail::base64_decode(j.at("mask").get<std::string>());
  e.mask.assign(mask.begin(), mask.end());
  if (e.mask.size() != steps) throw std::invalid_argument("episode dump: mask length mismatch");
  if (j.contains("tokens")) {
    e.tokens = j.at("tokens").get<std::vector<std::vector<std::size_t>>>();
  } else {
    e.inputs = detail::unpack_f64(detail::base64_decode(j.at("inputs").get<std::string>()), steps,
                                  j.at("input_dim").get<std::size_t>());
  }
  if (j.contains("labels")) {
    e.labels = j.at("labels").get<std::vector<std::int64_t>>();
  } else {
    e.targets = detail::unpack_f64(detail::base64_decode(j.at("targets").get<std::string>()), steps,
                                   j.at("target_dim").get<std::size_t>());
  }
  return e;
}

}  // namespace dntm
