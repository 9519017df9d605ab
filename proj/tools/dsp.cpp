// Command-line front end: convert, validate, synth, train, eval, predict, gradcheck.
// Exit codes: 0 success, 1 usage, 2 data error, 3 check failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "dsp/dsp.hpp"

namespace fs = std::filesystem;
using namespace dsp;

namespace {

constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kCheckFailed = 3;

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Shared {
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string config;
  std::string checkpoint;
};

// Relative paths that do not exist are looked up under $DSP_DATA_DIR.
std::string resolve(const std::string& path) {
  if (path.empty() || path == "-" || fs::path(path).is_absolute() || fs::exists(path)) return path;
  if (const char* root = std::getenv("DSP_DATA_DIR")) {
    fs::path candidate = fs::path(root) / path;
    if (fs::exists(candidate)) return candidate.string();
  }
  return path;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(resolve(path));
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, path + ": " + e.what());
  }
}

data::Dataset read_any(const std::string& path, const std::string& format) {
  const std::string p = resolve(path);
  if (p == "-") {
    std::stringstream buffer;
    buffer << std::cin.rdbuf();
    std::string text = buffer.str();
    std::istringstream sniff_in(text), in(text);
    return data::read_dataset(in, format == "auto" ? data::sniff_format(sniff_in) : data::parse_format(format),
                              "<stdin>");
  }
  data::Format f = format == "auto" ? data::sniff_format(p) : data::parse_format(format);
  return data::load_dataset({f, p, data::Split::Train});
}

// Output stream for a path, stdout for "-" or empty.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw Error(Errc::IoError, "cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

nn::TrainConfig train_config(const Shared& shared) {
  nn::TrainConfig c;
  if (!shared.config.empty()) c = read_json_file(shared.config).get<nn::TrainConfig>();
  if (shared.seed_given) c.seed = shared.seed;
  return c;
}

// --- convert ------------------------------------------------------------------

struct ConvertArgs {
  std::string from, to = "decoupled", input = "-", output = "-";
};

int run_convert(const ConvertArgs& a) {
  std::ifstream file;
  if (a.input != "-") {
    file.open(resolve(a.input));
    if (!file) throw Error(Errc::IoError, "cannot read " + a.input);
  }
  std::istream& in = a.input == "-" ? std::cin : file;
  Output out(a.output);

  if (a.from == "state") {
    if (a.to != "decoupled") throw CLI::ValidationError("--to", "state converts only to decoupled");
    auto ds = data::read_dataset(in, data::Format::DialogueStateJsonl, a.input);
    data::write_sessions(out.stream(), ds.sessions);
    std::cerr << "converted " << ds.sessions.size() << " sessions\n";
    return 0;
  }
  const bool to_compositional = a.to == "compositional";
  if (to_compositional != (a.from == "decoupled"))
    throw CLI::ValidationError("--to", "supported: compositional|flat|state -> decoupled, decoupled -> compositional");

  std::size_t converted = 0, not_recoverable = 0, invalid = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      if (a.from == "flat") {
        auto [frame, utterance] = parse_flat_line(line);
        out.stream() << join(utterance) << '\t' << to_linear_string(flat_to_decoupled(frame, utterance)) << '\n';
      } else {
        auto tab = line.rfind('\t');
        if (tab == std::string::npos) throw Error(Errc::ParseError, "expected utterance TAB tree");
        const std::string utterance = line.substr(0, tab), tree_text = line.substr(tab + 1);
        if (to_compositional) {
          auto tree = from_linear(tree_text, {TreeForm::Decoupled});
          Tokens words = tokenize(utterance);
          auto recoupled = to_linear_string(recouple(tree, words));
          out.stream() << join(words) << '\t' << recoupled << '\n';
        } else {
          auto tree = from_linear(tree_text, {TreeForm::Compositional});
          auto decoupled = to_linear_string(decouple(tree));
          out.stream() << join(leaves(tree)) << '\t' << decoupled << '\n';
        }
      }
      ++converted;
    } catch (const Error& e) {
      if (e.code() == Errc::NotRecoverable) ++not_recoverable;
      else if (e.code() == Errc::InvalidInput) ++invalid;
      else throw Error(e.code(), a.input + ":" + std::to_string(lineno) + ": " + e.detail());
    }
  }
  std::cerr << "converted " << converted << ", not recoverable " << not_recoverable << ", invalid input " << invalid
            << '\n';
  return 0;
}

// --- validate -----------------------------------------------------------------

int run_validate(const std::string& input, const std::string& format) {
  auto ds = read_any(input, format);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
  const auto& s = ds.stats;
  std::cout << "ok: " << s.sessions << " sessions, " << s.size << " annotated turns, " << s.ref_tags
            << " ref tags, avg session length " << s.avg_session_length << ", avg utterance length "
            << s.avg_utterance_length << '\n';
  return 0;
}

// --- synth --------------------------------------------------------------------

struct SynthArgs {
  std::size_t sessions = 100;
  std::string output = "-";
  bool heldout = false;
  std::string id_prefix = "synth";
};

int run_synth(const SynthArgs& a, const Shared& shared) {
  auto g = data::default_grammar();
  if (!shared.config.empty()) {
    auto j = read_json_file(shared.config);
    g.p_explicit = j.value("p_explicit", g.p_explicit);
    g.p_implicit = j.value("p_implicit", g.p_implicit);
    g.p_nested = j.value("p_nested", g.p_nested);
    g.p_assistant = j.value("p_assistant", g.p_assistant);
    g.min_turns = j.value("min_turns", g.min_turns);
    g.max_turns = j.value("max_turns", g.max_turns);
    g.seed = j.value("seed", g.seed);
  }
  if (shared.seed_given) g.seed = shared.seed;
  if (a.sessions == 0) throw CLI::ValidationError("--sessions", "must be at least 1");
  auto sessions = data::generate_synthetic(g, a.sessions, {a.heldout, a.id_prefix});
  Output out(a.output);
  data::write_sessions(out.stream(), sessions);
  return 0;
}

// --- train --------------------------------------------------------------------

struct TrainArgs {
  std::string train, valid, history, format = "auto";
  std::size_t epochs = 0;
};

int run_train(const TrainArgs& a, const Shared& shared) {
  if (shared.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
  auto config = train_config(shared);
  if (a.epochs > 0) config.epochs = a.epochs;
  auto train_set = data::make_examples(read_any(a.train, a.format).sessions);
  std::vector<nn::Example> valid_set;
  if (!a.valid.empty()) valid_set = data::make_examples(read_any(a.valid, a.format).sessions);
  std::cerr << train_set.size() << " training examples, " << valid_set.size() << " validation examples\n";

  auto result = nn::train(train_set, valid_set, config, [](const nn::EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " loss " << r.train_loss;
    if (r.valid_frame_acc) std::cerr << " valid_fa " << *r.valid_frame_acc << (r.averaged ? " (averaged)" : "");
    std::cerr << '\n';
    return true;
  });
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  nn::save_checkpoint(result.model, shared.checkpoint, {config.seed, result.history.size()});
  if (!a.history.empty()) {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& r : result.history) {
      nlohmann::json row{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"learning_rate", r.learning_rate},
                         {"averaged", r.averaged}};
      row["valid_frame_acc"] = r.valid_frame_acc ? nlohmann::json(*r.valid_frame_acc) : nlohmann::json();
      h.push_back(row);
    }
    Output out(a.history);
    out.stream() << nlohmann::json{{"config", config}, {"history", h}}.dump(2) << '\n';
  }
  return 0;
}

// --- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string data, predictions, output, model_name = "pointer-generator", format = "auto";
  std::size_t beam = 5;
  bool count_all_turns = false;
};

int run_eval(const EvalArgs& a, const Shared& shared) {
  auto golds = read_any(a.data, a.format).sessions;
  std::vector<std::vector<Prediction>> session_preds;  // top-1 per user turn
  BeamList beams;
  std::vector<SemanticTree> gold_trees;

  if (!a.predictions.empty()) {
    auto preds = read_any(a.predictions, "session").sessions;
    if (preds.size() != golds.size())
      throw Error(Errc::AlignmentError, "prediction and gold files hold different session counts");
    for (std::size_t s = 0; s < golds.size(); ++s) {
      session_preds.emplace_back();
      auto gi = golds[s].user_turn_indices(), pi = preds[s].user_turn_indices();
      if (gi.size() != pi.size()) throw Error(Errc::AlignmentError, "session " + golds[s].id + " turn counts differ");
      for (std::size_t k = 0; k < gi.size(); ++k) {
        const auto& pred = preds[s].turns[pi[k]].gold;
        session_preds.back().push_back(pred);
        if (!golds[s].turns[gi[k]].gold) continue;
        beams.push_back({pred});
        gold_trees.push_back(*golds[s].turns[gi[k]].gold);
      }
    }
  } else {
    if (shared.checkpoint.empty()) throw CLI::RequiredError("--checkpoint or --predictions");
    auto model = nn::load_checkpoint(resolve(shared.checkpoint)).model;
    for (const auto& s : golds) {
      session_preds.emplace_back();
      for (std::size_t i : s.user_turn_indices()) {
        auto beam = nn::predict_beam(model, build_encoder_input(s, i).tokens, a.beam);
        session_preds.back().push_back(beam.front());
        if (!s.turns[i].gold) continue;
        beams.push_back(std::move(beam));
        gold_trees.push_back(*s.turns[i].gold);
      }
    }
  }

  std::vector<EvalReport> rows;
  std::set<std::size_t> widths{1, std::max<std::size_t>(1, a.beam)};
  for (std::size_t k : widths) rows.push_back(evaluate_beams(beams, gold_trees, k));
  CarryoverEvalOptions copts;
  copts.counting.count_all_turns = a.count_all_turns;
  auto carry = carryover_report(session_preds, golds, copts);

  std::cout << format_eval_table(a.model_name, rows) << '\n' << format_carryover_table(a.model_name, carry);
  if (!a.output.empty()) {
    nlohmann::ordered_json j{{"eval", nlohmann::ordered_json::array()}, {"carryover", to_json(carry)}};
    for (const auto& r : rows) j["eval"].push_back(to_json(r));
    Output out(a.output);
    out.stream() << j.dump(2) << '\n';
  }
  return 0;
}

// --- predict ------------------------------------------------------------------

// Reads one session from stdin, one turn per line. Lines starting with
// "assistant:" are assistant turns; every other line is a user turn and
// gets a parse on stdout.
int run_predict(const Shared& shared, std::size_t beam, const std::string& text) {
  if (shared.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
  auto model = nn::load_checkpoint(resolve(shared.checkpoint)).model;
  Session session;
  auto add_line = [&](std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) return;
    const std::string prefix = "assistant:";
    if (line.rfind(prefix, 0) == 0) session.turns.push_back({Role::Assistant, tokenize(line.substr(prefix.size())), {}});
    else session.turns.push_back({Role::User, tokenize(line), {}});
  };
  if (!text.empty()) {
    add_line(text);
  } else {
    std::string line;
    while (std::getline(std::cin, line)) add_line(line);
  }
  if (session.user_turn_indices().empty()) throw Error(Errc::EmptyInput, "no user turn on input");
  for (std::size_t i : session.user_turn_indices()) {
    auto hyps = nn::beam_search(model, build_encoder_input(session, i).tokens, {.k = std::max<std::size_t>(1, beam)});
    if (hyps.empty()) {
      std::cout << "<no parse>\n";
      continue;
    }
    std::cout << join(hyps.front().tokens) << '\n';
  }
  return 0;
}

// --- gradcheck ----------------------------------------------------------------

int run_gradcheck(const Shared& shared, double tolerance, const std::string& input, std::size_t samples) {
  nn::TrainConfig config = train_config(shared);
  if (shared.config.empty()) {
    config.model.embed_dim = 8;
    config.model.hidden = 12;
    config.model.heads = 2;
    // Larger weights keep every gradient well above finite-difference noise.
    config.model.init_scale = 0.5;
  }
  std::vector<nn::Example> examples;
  if (!input.empty()) {
    examples = data::make_examples(read_any(input, "auto").sessions);
  } else {
    auto g = data::default_grammar();
    g.seed = config.seed;
    g.min_turns = g.max_turns = 2;
    examples = data::make_examples(data::generate_synthetic(g, 4));
  }
  if (examples.empty()) throw Error(Errc::EmptyInput, "no examples for the gradient check");
  nn::PointerGenerator<double> model(config.model, nn::Vocabulary::build(examples), config.seed);
  nn::GradCheckOptions opts;
  opts.samples_per_param = samples;
  opts.seed = config.seed;
  const nn::Example& ex = examples.back();
  auto r = nn::grad_check(model, {ex}, opts);
  for (const auto& [group, err] : r.per_group) std::cout << group << ' ' << err << '\n';
  std::cout << "max relative error " << r.max_rel_error << " over " << r.entries.size() << " coordinates\n";
  if (!(r.max_rel_error < tolerance)) throw CheckFailure("gradient check above tolerance " + std::to_string(tolerance));
  return 0;
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigError: return kUsage;
    default: return kDataError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoupled semantic parsing toolkit"};
  app.require_subcommand(1);
  Shared shared;

  auto add_shared = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { shared.seed = s, shared.seed_given = true; }, "Random seed");
    sub->add_option("--config", shared.config, "JSON config file");
    sub->add_option("--checkpoint", shared.checkpoint, "Model checkpoint path");
  };

  ConvertArgs convert_args;
  auto* convert = app.add_subcommand("convert", "Convert between tree representations");
  add_shared(convert);
  convert->add_option("--from", convert_args.from, "compositional | flat | state | decoupled")
      ->required()
      ->check(CLI::IsMember({"compositional", "flat", "state", "decoupled"}));
  convert->add_option("--to", convert_args.to, "decoupled | compositional")
      ->check(CLI::IsMember({"decoupled", "compositional"}));
  convert->add_option("-i,--input", convert_args.input, "Input file, - for stdin");
  convert->add_option("-o,--output", convert_args.output, "Output file, - for stdout");

  std::string validate_input, validate_format = "auto";
  auto* validate = app.add_subcommand("validate", "Load and validate a dataset file");
  add_shared(validate);
  validate->add_option("input", validate_input, "Dataset file")->required();
  validate->add_option("--format", validate_format, "auto | top | session | flat | state");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate synthetic sessions");
  add_shared(synth);
  synth->add_option("-n,--sessions", synth_args.sessions, "Number of sessions");
  synth->add_option("-o,--output", synth_args.output, "Output file, - for stdout");
  synth->add_flag("--heldout", synth_args.heldout, "Use held-out slot fillers");
  synth->add_option("--id-prefix", synth_args.id_prefix, "Session id prefix");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a pointer-generator parser");
  add_shared(train);
  train->add_option("--train", train_args.train, "Training data")->required();
  train->add_option("--valid", train_args.valid, "Validation data");
  train->add_option("--history", train_args.history, "Write per-epoch history JSON here");
  train->add_option("--epochs", train_args.epochs, "Override the configured epoch count");
  train->add_option("--format", train_args.format, "auto | top | session | flat | state");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint or a prediction file against gold sessions");
  add_shared(eval);
  eval->add_option("--data", eval_args.data, "Gold data")->required();
  eval->add_option("--predictions", eval_args.predictions, "Predicted sessions (JSON lines) instead of a model");
  eval->add_option("--beam", eval_args.beam, "Beam size");
  eval->add_option("-o,--output", eval_args.output, "Write the JSON report here");
  eval->add_option("--model-name", eval_args.model_name, "Row label in the tables");
  eval->add_option("--format", eval_args.format, "auto | top | session | flat | state");
  eval->add_flag("--count-all-turns", eval_args.count_all_turns, "Count assistant turns in slot distances");

  std::size_t predict_beam = 5;
  std::string predict_text;
  auto* predict = app.add_subcommand("predict", "Parse a session read from stdin");
  add_shared(predict);
  predict->add_option("--beam", predict_beam, "Beam size");
  predict->add_option("--text", predict_text, "Parse this single utterance instead of stdin");

  double gc_tolerance = 1e-4;
  std::string gc_input;
  std::size_t gc_samples = 6;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  add_shared(gradcheck);
  gradcheck->add_option("--tolerance", gc_tolerance, "Maximum relative error");
  gradcheck->add_option("--input", gc_input, "Take the example from this dataset");
  gradcheck->add_option("--samples", gc_samples, "Coordinates sampled per parameter array");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*convert) return run_convert(convert_args);
    if (*validate) return run_validate(validate_input, validate_format);
    if (*synth) return run_synth(synth_args, shared);
    if (*train) return run_train(train_args, shared);
    if (*eval) return run_eval(eval_args, shared);
    if (*predict) return run_predict(shared, predict_beam, predict_text);
    if (*gradcheck) return run_gradcheck(shared, gc_tolerance, gc_input, gc_samples);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
