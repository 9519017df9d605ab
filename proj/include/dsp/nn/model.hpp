#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dsp/error.hpp"
#include "dsp/linearize.hpp"
#include "dsp/nn/graph.hpp"
#include "dsp/random.hpp"
#include "dsp/text.hpp"

namespace dsp::nn {

inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kUnk = "<unk>";

/// One training or inference pair: encoder tokens and the linearized target.
struct Example {
  Tokens source;
  LinearSeq target;
};

/// Output symbols (ontology) and source-side word types. The extended output
/// distribution places ontology symbols at [0, |ontology|) and source
/// positions after them.
class Vocabulary {
 public:
  Vocabulary() {
    add_word(std::string(kUnk));
    add_word(std::string(kTurnSeparator));
    add_symbol(std::string(kClose));
    add_symbol(std::string(kSeparator));
    add_symbol(std::string(kEos));
  }

  static Vocabulary build(const std::vector<Example>& examples) {
    Vocabulary v;
    std::vector<std::string> openers;
    for (const auto& ex : examples) {
      for (const auto& t : ex.source) v.add_word(t);
      for (const auto& t : ex.target)
        if (is_opening_symbol(t)) openers.push_back(t);
    }
    std::sort(openers.begin(), openers.end());
    openers.erase(std::unique(openers.begin(), openers.end()), openers.end());
    for (const auto& o : openers) v.add_symbol(o);
    return v;
  }

  int ontology_size() const { return static_cast<int>(symbols_.size()); }
  int word_count() const { return static_cast<int>(words_.size()); }

  /// Index of an ontology symbol or -1.
  int symbol(const std::string& s) const {
    auto it = symbol_index_.find(s);
    return it == symbol_index_.end() ? -1 : it->second;
  }
  const std::string& symbol_name(int i) const { return symbols_[static_cast<std::size_t>(i)]; }
  const std::vector<std::string>& symbols() const { return symbols_; }
  int eos() const { return symbol(std::string(kEos)); }
  int close() const { return symbol(std::string(kClose)); }
  int separator() const { return symbol(std::string(kSeparator)); }

  /// Word id, `<unk>` when unseen.
  int word(const std::string& w) const {
    auto it = word_index_.find(w);
    return it == word_index_.end() ? 0 : it->second;
  }
  bool has_word(const std::string& w) const { return word_index_.count(w) != 0; }
  const std::vector<std::string>& words() const { return words_; }

  /// Source tokens that the copy path may point at. Anything from_linear
  /// would read as structure is excluded.
  bool copyable(const std::string& token) const {
    return token != kTurnSeparator && token != kClose && token != kSeparator && !is_opening_symbol(token) &&
           symbol(token) < 0;
  }

  nlohmann::json to_json() const { return {{"symbols", symbols_}, {"words", words_}}; }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.symbols_.clear();
    v.symbol_index_.clear();
    v.words_.clear();
    v.word_index_.clear();
    for (const auto& s : j.at("symbols")) v.add_symbol(s.get<std::string>());
    for (const auto& w : j.at("words")) v.add_word(w.get<std::string>());
    return v;
  }

 private:
  void add_symbol(const std::string& s) {
    if (symbol_index_.emplace(s, static_cast<int>(symbols_.size())).second) symbols_.push_back(s);
  }
  void add_word(const std::string& w) {
    if (word_index_.emplace(w, static_cast<int>(words_.size())).second) words_.push_back(w);
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> symbol_index_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> word_index_;
};

struct ModelConfig {
  int embed_dim = 64;
  int hidden = 128;
  int layers = 2;
  int heads = 4;
  int attention_dim = 0;  // 0: same as hidden
  int max_source_len = 512;
  int max_depth = 10;
  double init_scale = 0.1;
  /// How head attentions combine into the copy distribution: "learned"
  /// weighs them with a per-step softmax over heads, "mean" averages them.
  std::string head_mixing = "learned";

  int attn_dim() const { return attention_dim > 0 ? attention_dim : hidden; }

  void check() const {
    if (embed_dim <= 0 || hidden <= 0 || layers <= 0 || heads <= 0)
      throw Error(Errc::ConfigError, "model dimensions must be positive");
    if (attn_dim() % heads != 0)
      throw Error(Errc::ConfigError, "attention dim must be divisible by the head count");
    if (head_mixing != "learned" && head_mixing != "mean")
      throw Error(Errc::ConfigError, "head_mixing must be 'learned' or 'mean'");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"embed_dim", c.embed_dim},   {"hidden", c.hidden},
       {"layers", c.layers},         {"heads", c.heads},
       {"attention_dim", c.attention_dim}, {"max_source_len", c.max_source_len},
       {"max_depth", c.max_depth},   {"init_scale", c.init_scale},
       {"head_mixing", c.head_mixing}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.hidden = j.value("hidden", d.hidden);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.attention_dim = j.value("attention_dim", d.attention_dim);
  c.max_source_len = j.value("max_source_len", d.max_source_len);
  c.max_depth = j.value("max_depth", d.max_depth);
  c.init_scale = j.value("init_scale", d.init_scale);
  c.head_mixing = j.value("head_mixing", d.head_mixing);
}

template <typename Real>
struct Parameter {
  std::string name;
  Matrix<Real> value;
};

/// Named dense arrays in a fixed order.
template <typename Real>
class ParameterSet {
 public:
  int add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    index_.emplace(name, static_cast<int>(params_.size()));
    params_.push_back({std::move(name), Matrix<Real>::Zero(rows, cols)});
    return static_cast<int>(params_.size()) - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return params_[i]; }
  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& p : params_)
      if (!p.value.allFinite()) return false;
    return true;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& p : params_) {
      int i = out.add(p.name, p.value.rows(), p.value.cols());
      out[static_cast<std::size_t>(i)].value = p.value.template cast<Other>();
    }
    return out;
  }

 private:
  std::vector<Parameter<Real>> params_;
  std::unordered_map<std::string, int> index_;
};

/// Source tokens mapped to `<unk>` for one example (word dropout).
using UnkTypes = std::unordered_set<std::string>;

/// Pointer-generator decoder over a bidirectional recurrent encoder.
///
/// At each step the decoder features x_t give an ontology distribution
/// p_gen = softmax(W_g x_t + b_g). A copy query W_c x_t + b_c attends over the
/// encoder states with multi-head attention. The copy distribution p_copy is
/// a convex combination of the head attentions, either with weights
/// softmax(W_m x_t + b_m) or uniform, and the attended context is omega_t. The gate
/// p_gate = sigmoid(W_a [x_t ; omega_t] + b_a) mixes the two into the
/// extended distribution [p_gate * p_gen ; (1 - p_gate) * p_copy].
///
/// Shapes (E embed, H hidden, D attention, A heads, V ontology, W words):
///   embed.word     E x W          embed.symbol  E x (V + 1), last column BOS
///   enc.L.dir.wx   4H x in        in = E for layer 0, 2H above
///   enc.L.dir.wh   4H x H         enc.L.dir.b   4H x 1
///   bridge.{h,c}L  H x 2H (+ H x 1 bias)
///   dec.L.wx       4H x in        in = E + D for layer 0, H above
///   attn.wk/wv     D x 2H         attn.wo       D x D
///   copy.w         D x H          gen.w         V x H
///   gate.w         1 x (H + D)    copy.mix.w    A x H (learned mixing only)
template <typename Real>
class PointerGenerator {
 public:
  using Mat = Matrix<Real>;

  struct DecoderState {
    std::vector<Var> h;
    std::vector<Var> c;
    Var context;
  };

  struct Encoded {
    Tokens source;
    Var states;  // 2H x T
    std::vector<Var> key_heads;
    std::vector<Var> value_heads;
    DecoderState init;
  };

  struct Step {
    Var x;
    Var p_gen;
    Var p_copy;
    Var omega;
    Var p_gate;
    Var p_ext;
    DecoderState state;
  };

  PointerGenerator(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
      : config_(config), vocab_(std::move(vocab)) {
    config_.check();
    build_layout();
    initialize(seed);
  }

  PointerGenerator(ModelConfig config, Vocabulary vocab, ParameterSet<Real> params)
      : config_(config), vocab_(std::move(vocab)) {
    config_.check();
    build_layout();
    if (params.size() != params_.size())
      throw Error(Errc::ShapeMismatch, "parameter count does not match the model layout");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = params[i];
      auto& dst = params_[i];
      if (src.name != dst.name || src.value.rows() != dst.value.rows() ||
          src.value.cols() != dst.value.cols())
        throw Error(Errc::ShapeMismatch, "parameter '" + src.name + "' does not match '" + dst.name + "'");
      dst.value = src.value;
    }
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterSet<Real>& params() { return params_; }
  const ParameterSet<Real>& params() const { return params_; }

  /// Index of a named parameter (throws when absent).
  int param_index(const std::string& name) const {
    int i = params_.find(name);
    if (i < 0) throw Error(Errc::ConfigError, "no parameter named " + name);
    return i;
  }

  Var p(Graph<Real>& g, int index) const { return g.param(index, params_[static_cast<std::size_t>(index)].value); }

  int word_id(const std::string& token, const UnkTypes* unk) const {
    if (unk && unk->count(token)) return vocab_.word(std::string(kUnk));
    return vocab_.word(token);
  }

  Encoded encode(Graph<Real>& g, const Tokens& source, const UnkTypes* unk = nullptr) const {
    const auto T = static_cast<Eigen::Index>(source.size());
    if (T == 0) throw Error(Errc::EmptyInput, "encoder input is empty");
    if (T > config_.max_source_len)
      throw Error(Errc::OverMaxLen, std::to_string(T) + " tokens exceed " + std::to_string(config_.max_source_len));
    const int H = config_.hidden;

    std::vector<Var> cols;
    cols.reserve(source.size());
    Var word_table = p(g, layout_.embed_word);
    for (const auto& tok : source) cols.push_back(g.column(word_table, word_id(tok, unk)));
    Var x = g.concat_cols(cols);

    Var top_fwd, top_bwd;
    for (int l = 0; l < config_.layers; ++l) {
      std::array<Var, 2> dir_out;
      for (int dir = 0; dir < 2; ++dir) {
        const auto& lp = layout_.enc[static_cast<std::size_t>(l)][static_cast<std::size_t>(dir)];
        Var projected = g.affine(p(g, lp.wx), x, p(g, lp.b));
        Var wh = p(g, lp.wh);
        std::vector<Var> outs(source.size());
        Var h, c;
        for (Eigen::Index k = 0; k < T; ++k) {
          Eigen::Index t = dir == 0 ? k : T - 1 - k;
          Var z = g.column(projected, t);
          if (h.valid()) z = g.add(z, g.matmul(wh, h));
          auto cell = g.lstm_cell(z, c);
          h = cell.h;
          c = cell.c;
          outs[static_cast<std::size_t>(t)] = h;
        }
        dir_out[static_cast<std::size_t>(dir)] = g.concat_cols(outs);
      }
      x = g.concat_rows({dir_out[0], dir_out[1]});
      top_fwd = dir_out[0];
      top_bwd = dir_out[1];
    }

    Encoded enc;
    enc.source = source;
    enc.states = x;
    const int D = config_.attn_dim();
    const int dh = D / config_.heads;
    Var keys = g.affine(p(g, layout_.attn_wk), x, p(g, layout_.attn_bk));
    Var values = g.affine(p(g, layout_.attn_wv), x, p(g, layout_.attn_bv));
    for (int a = 0; a < config_.heads; ++a) {
      enc.key_heads.push_back(g.slice_rows(keys, a * dh, dh));
      enc.value_heads.push_back(g.slice_rows(values, a * dh, dh));
    }

    Var summary = g.concat_rows({g.column(top_fwd, T - 1), g.column(top_bwd, 0)});
    for (int l = 0; l < config_.layers; ++l) {
      const auto& b = layout_.bridge[static_cast<std::size_t>(l)];
      enc.init.h.push_back(g.tanh(g.affine(p(g, b.wh), summary, p(g, b.bh))));
      enc.init.c.push_back(g.tanh(g.affine(p(g, b.wc), summary, p(g, b.bc))));
    }
    enc.init.context = g.zeros(D, 1);
    (void)H;
    return enc;
  }

  /// Embedding of the beginning-of-sequence decoder input.
  Var bos_embedding(Graph<Real>& g) const {
    return g.column(p(g, layout_.embed_symbol), vocab_.ontology_size());
  }

  /// Decoder input for a previously emitted target token.
  Var output_embedding(Graph<Real>& g, const std::string& token, const UnkTypes* unk = nullptr) const {
    int s = vocab_.symbol(token);
    if (s >= 0) return g.column(p(g, layout_.embed_symbol), s);
    return g.column(p(g, layout_.embed_word), word_id(token, unk));
  }

  Step decode_step(Graph<Real>& g, const Encoded& enc, Var prev_embedding, const DecoderState& state) const {
    if (g.value(prev_embedding).rows() != config_.embed_dim || g.value(prev_embedding).cols() != 1)
      throw Error(Errc::ShapeMismatch, "decoder input embedding");
    if (state.h.size() != static_cast<std::size_t>(config_.layers) || state.c.size() != state.h.size())
      throw Error(Errc::ShapeMismatch, "decoder state layers");
    Step step;
    Var input = g.concat_rows({prev_embedding, state.context});
    for (int l = 0; l < config_.layers; ++l) {
      const auto& lp = layout_.dec[static_cast<std::size_t>(l)];
      Var z = g.add(g.affine(p(g, lp.wx), input, p(g, lp.b)),
                    g.matmul(p(g, lp.wh), state.h[static_cast<std::size_t>(l)]));
      auto cell = g.lstm_cell(z, state.c[static_cast<std::size_t>(l)]);
      step.state.h.push_back(cell.h);
      step.state.c.push_back(cell.c);
      input = cell.h;
    }
    step.x = input;
    step.p_gen = g.softmax(g.affine(p(g, layout_.gen_w), step.x, p(g, layout_.gen_b)));

    const int D = config_.attn_dim();
    const int dh = D / config_.heads;
    const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
    Var query = g.affine(p(g, layout_.copy_w), step.x, p(g, layout_.copy_b));
    std::vector<Var> attentions, contexts;
    for (int a = 0; a < config_.heads; ++a) {
      Var q = g.slice_rows(query, a * dh, dh);
      Var scores = g.scale(g.matmul_tn(enc.key_heads[static_cast<std::size_t>(a)], q), inv_sqrt);
      Var attn = g.softmax(scores);
      attentions.push_back(attn);
      contexts.push_back(g.matmul(enc.value_heads[static_cast<std::size_t>(a)], attn));
    }
    if (attentions.size() == 1) {
      step.p_copy = attentions[0];
    } else if (layout_.mix_w >= 0) {
      Var weights = g.softmax(g.affine(p(g, layout_.mix_w), step.x, p(g, layout_.mix_b)));
      step.p_copy = g.matmul(g.concat_cols(attentions), weights);
    } else {
      step.p_copy = g.scale(g.add_all(attentions), Real(1) / static_cast<Real>(config_.heads));
    }
    step.omega = g.affine(p(g, layout_.attn_wo), g.concat_rows(contexts), p(g, layout_.attn_bo));
    step.p_gate = g.sigmoid(
        g.affine(p(g, layout_.gate_w), g.concat_rows({step.x, step.omega}), p(g, layout_.gate_b)));
    step.p_ext = g.concat_rows({g.mul_scalar(step.p_gen, step.p_gate),
                                g.mul_scalar(step.p_copy, g.one_minus(step.p_gate))});
    step.state.context = step.omega;
    return step;
  }

  /// Rows of the extended distribution that emit `token`: its ontology index
  /// if any, plus every copyable source position holding it.
  std::vector<Eigen::Index> output_rows(const Tokens& source, const std::string& token) const {
    std::vector<Eigen::Index> rows;
    int s = vocab_.symbol(token);
    if (s >= 0) rows.push_back(s);
    if (vocab_.copyable(token))
      for (std::size_t i = 0; i < source.size(); ++i)
        if (source[i] == token) rows.push_back(vocab_.ontology_size() + static_cast<Eigen::Index>(i));
    return rows;
  }

  /// Teacher-forced negative log-likelihood of `target` followed by EOS.
  Var sequence_nll(Graph<Real>& g, const Tokens& source, const LinearSeq& target,
                   const UnkTypes* unk = nullptr) const {
    for (const auto& tok : target)
      if (output_rows(source, tok).empty())
        throw Error(Errc::UncopiableToken, "'" + tok + "' is neither an ontology symbol nor a source token");
    Encoded enc = encode(g, source, unk);
    DecoderState state = enc.init;
    Var prev = bos_embedding(g);
    std::vector<Var> terms;
    terms.reserve(target.size() + 1);
    for (std::size_t t = 0; t <= target.size(); ++t) {
      const std::string& tok = t < target.size() ? target[t] : vocab_.symbol_name(vocab_.eos());
      Step step = decode_step(g, enc, prev, state);
      terms.push_back(g.log(g.gather_sum(step.p_ext, output_rows(source, tok))));
      state = step.state;
      if (t < target.size()) prev = output_embedding(g, tok, unk);
    }
    return g.scale(g.add_all(terms), Real(-1));
  }

 private:
  struct LstmParams {
    int wx = -1, wh = -1, b = -1;
  };
  struct BridgeParams {
    int wh = -1, bh = -1, wc = -1, bc = -1;
  };
  struct Layout {
    int embed_word = -1, embed_symbol = -1;
    std::vector<std::array<LstmParams, 2>> enc;
    std::vector<BridgeParams> bridge;
    std::vector<LstmParams> dec;
    int attn_wk = -1, attn_bk = -1, attn_wv = -1, attn_bv = -1, attn_wo = -1, attn_bo = -1;
    int copy_w = -1, copy_b = -1, mix_w = -1, mix_b = -1, gen_w = -1, gen_b = -1, gate_w = -1, gate_b = -1;
  };

  void build_layout() {
    const int E = config_.embed_dim, H = config_.hidden, D = config_.attn_dim();
    const int V = vocab_.ontology_size();
    layout_.embed_word = params_.add("embed.word", E, vocab_.word_count());
    layout_.embed_symbol = params_.add("embed.symbol", E, V + 1);
    for (int l = 0; l < config_.layers; ++l) {
      std::array<LstmParams, 2> dirs;
      for (int dir = 0; dir < 2; ++dir) {
        std::string prefix = "enc." + std::to_string(l) + (dir == 0 ? ".fwd" : ".bwd");
        int in = l == 0 ? E : 2 * H;
        dirs[static_cast<std::size_t>(dir)] = {params_.add(prefix + ".wx", 4 * H, in),
                                               params_.add(prefix + ".wh", 4 * H, H),
                                               params_.add(prefix + ".b", 4 * H, 1)};
      }
      layout_.enc.push_back(dirs);
    }
    for (int l = 0; l < config_.layers; ++l) {
      std::string prefix = "bridge." + std::to_string(l);
      layout_.bridge.push_back({params_.add(prefix + ".wh", H, 2 * H), params_.add(prefix + ".bh", H, 1),
                                params_.add(prefix + ".wc", H, 2 * H), params_.add(prefix + ".bc", H, 1)});
    }
    for (int l = 0; l < config_.layers; ++l) {
      std::string prefix = "dec." + std::to_string(l);
      int in = l == 0 ? E + D : H;
      layout_.dec.push_back({params_.add(prefix + ".wx", 4 * H, in), params_.add(prefix + ".wh", 4 * H, H),
                             params_.add(prefix + ".b", 4 * H, 1)});
    }
    layout_.attn_wk = params_.add("attn.wk", D, 2 * H);
    layout_.attn_bk = params_.add("attn.bk", D, 1);
    layout_.attn_wv = params_.add("attn.wv", D, 2 * H);
    layout_.attn_bv = params_.add("attn.bv", D, 1);
    layout_.attn_wo = params_.add("attn.wo", D, D);
    layout_.attn_bo = params_.add("attn.bo", D, 1);
    layout_.copy_w = params_.add("copy.w", D, H);
    layout_.copy_b = params_.add("copy.b", D, 1);
    if (config_.head_mixing == "learned" && config_.heads > 1) {
      layout_.mix_w = params_.add("copy.mix.w", config_.heads, H);
      layout_.mix_b = params_.add("copy.mix.b", config_.heads, 1);
    }
    layout_.gen_w = params_.add("gen.w", V, H);
    layout_.gen_b = params_.add("gen.b", V, 1);
    layout_.gate_w = params_.add("gate.w", 1, H + D);
    layout_.gate_b = params_.add("gate.b", 1, 1);
  }

  // Weights uniform in [-s, s]; biases zero except LSTM forget gates at 1.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    const double s = config_.init_scale;
    const int H = config_.hidden;
    for (auto& prm : params_) {
      bool bias = prm.value.cols() == 1 && prm.name.find(".b") != std::string::npos;
      if (bias) {
        prm.value.setZero();
        bool lstm = prm.name.rfind("enc.", 0) == 0 || prm.name.rfind("dec.", 0) == 0;
        if (lstm) prm.value.middleRows(H, H).setOnes();
        continue;
      }
      for (Eigen::Index c = 0; c < prm.value.cols(); ++c)
        for (Eigen::Index r = 0; r < prm.value.rows(); ++r)
          prm.value(r, c) = static_cast<Real>(rng.uniform(-s, s));
    }
  }

  ModelConfig config_;
  Vocabulary vocab_;
  ParameterSet<Real> params_;
  Layout layout_;
};

}  // namespace dsp::nn
