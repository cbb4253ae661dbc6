#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "docwin/attention.hpp"
#include "docwin/evaluation.hpp"
#include "docwin/experiment.hpp"
#include "docwin/synthetic.hpp"

namespace fs = std::filesystem;
using namespace docwin;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path existing(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " path is required");
  if (!fs::exists(path)) throw UsageError(what + " not found: " + path);
  return path;
}

fs::path output_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("--out is required");
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<Index> parse_list(const std::string& text) {
  std::vector<Index> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw UsageError("not an integer list: " + text);
    }
  }
  return out;
}

std::vector<std::string> parse_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string strategy;
  Index k = 0;
  std::string variant;
  Index w = 0;
  std::string pos_enc;
  std::string align;
  Index beam = 12;
  double alpha = 1.0;
  std::string out;
};

// gen
struct GenArgs {
  std::string task = "formality";
  Index docs = 500;
  Index valid_docs = 100;
  Index test_docs = 100;
};

int cmd_gen(const GenArgs& a, const Flags& f, bool seed_set) {
  const fs::path dir = output_dir(f.out);
  SyntheticOptions o;
  o.seed = seed_set ? f.seed : 1;
  const std::uint64_t base = o.seed;
  const std::pair<const char*, Index> splits[] = {{"train", a.docs}, {"valid", a.valid_docs}, {"test", a.test_docs}};
  std::uint64_t offset = 0;
  for (const auto& [name, count] : splits) {
    o.docs = count;
    o.seed = base + offset++;
    write_corpus(dir / (std::string(name) + ".jsonl"), generate_task(a.task, o));
  }
  ExperimentConfig config;
  config.task = a.task;
  config.train_path = (dir / "train.jsonl").string();
  config.valid_path = (dir / "valid.jsonl").string();
  config.test_path = (dir / "test.jsonl").string();
  config.seed = base;
  config.save(dir / "config.json");
  std::cout << "wrote " << a.task << " corpora to " << dir.string() << "\n";
  return 0;
}

ExperimentConfig resolve_config(const Flags& f, const CLI::App& cmd) {
  ExperimentConfig c = ExperimentConfig::load(existing(f.config, "config"));
  if (cmd.count("--seed") > 0) c.seed = f.seed;
  if (cmd.count("--variant") > 0) c.model.set_variant(parse_attention_variant(f.variant));
  if (cmd.count("--w") > 0) c.model.window = f.w;
  if (cmd.count("--pos-enc") > 0) c.model.pos_enc = parse_pos_enc(f.pos_enc);
  if (cmd.count("--align") > 0) c.model.align = parse_align_mode(f.align);
  if (cmd.count("--k") > 0) c.training.context = f.k < 0 ? kFullDocument : f.k;
  if (cmd.count("--strategy") > 0) c.decode.strategy = parse_strategy(f.strategy);
  if (cmd.count("--beam") > 0) c.decode.beam = f.beam;
  if (cmd.count("--alpha") > 0) c.decode.alpha = f.alpha;
  if (cmd.count("--out") > 0) c.out_dir = f.out;
  return c;
}

int cmd_train(const Flags& f, const CLI::App& cmd) {
  ExperimentConfig c = resolve_config(f, cmd);
  const Corpus train_corpus = read_corpus(existing(c.train_path, "training corpus"));
  const Corpus valid_corpus = read_corpus(existing(c.valid_path, "validation corpus"));
  c.model.vocab_size = 0;
  {
    ModelConfig probe = c.model;
    probe.vocab_size = 5;
    try {
      probe.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const fs::path dir = output_dir(c.out_dir);
  c.save(dir / "config.json");
  const TrainOutcome outcome = train_experiment(c, train_corpus, valid_corpus, [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " loss " << r.train_loss << " valid_ppl " << r.valid_ppl << (r.best ? " *" : "")
              << "\n";
  });
  for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << "\n";
  outcome.checkpoint.save(dir / "checkpoint.json");
  write_text(dir / "train_log.jsonl", log_to_jsonl(outcome.result.log));
  std::cout << "best epoch " << outcome.result.best_epoch << ", valid perplexity " << outcome.result.best_valid_ppl
            << "\n";
  return 0;
}

struct CheckpointArgs {
  std::string checkpoint;
  std::string corpus;
};

int cmd_translate(const CheckpointArgs& a, const Flags& f, const CLI::App& cmd) {
  Checkpoint ck = Checkpoint::load(existing(a.checkpoint, "checkpoint"));
  const Corpus corpus = read_corpus(existing(a.corpus, "corpus"));
  DecodeConfig d;
  d.strategy = cmd.count("--strategy") > 0 ? parse_strategy(f.strategy)
                                           : (ck.context == kFullDocument ? Strategy::Fsd : Strategy::Sd);
  d.k = cmd.count("--k") > 0 ? f.k : (ck.context == kFullDocument ? 0 : ck.context);
  d.beam = f.beam;
  d.alpha = f.alpha;
  if (d.k < 0 || d.beam < 1 || d.alpha < 0.0) throw UsageError("--k >= 0, --beam >= 1 and --alpha >= 0 required");
  if (cmd.count("--align") > 0) ck.config.align = parse_align_mode(f.align);
  const fs::path dir = output_dir(f.out);
  nlohmann::json run = {{"checkpoint", a.checkpoint}, {"corpus", a.corpus}, {"decode", d.to_json()},
                        {"align", to_string(ck.config.align)}};
  write_text(dir / "translate.json", run.dump(2) + "\n");
  const TranslationOutcome outcome = translate_corpus(ck, corpus, d);
  for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << "\n";
  write_corpus(dir / "hyp.jsonl", outcome.hypotheses);
  std::cout << "translated " << outcome.hypotheses.size() << " documents, " << outcome.misaligned_documents
            << " misaligned\n";
  return 0;
}

struct EvalArgs {
  std::string hyp;
  std::string ref;
  std::string metrics = "pronoun,formality";
  std::string contrastive;
  std::string checkpoint;
  std::string lexicon;
};

int cmd_eval(const EvalArgs& a, const Flags& f, const CLI::App& cmd) {
  const auto metrics = parse_names(a.metrics);
  if (metrics.empty()) throw UsageError("no metric selected");
  for (const auto& m : metrics) {
    if (m != "pronoun" && m != "formality" && m != "contrastive" && m != "marker") throw UsageError("unknown metric " + m);
  }
  const LexiconTagger tagger = a.lexicon.empty() ? LexiconTagger::shipped() : LexiconTagger::load(existing(a.lexicon, "lexicon"));
  nlohmann::json report = nlohmann::json::object();
  std::vector<SentenceTriple> triples;
  Corpus hyps;
  Corpus refs;
  auto need_corpora = [&] {
    if (!refs.empty()) return;
    hyps = read_corpus(existing(a.hyp, "hypothesis corpus"));
    refs = read_corpus(existing(a.ref, "reference corpus"));
    triples = align_triples(hyps, refs);
  };
  for (const auto& m : metrics) {
    if (m == "pronoun") {
      need_corpora();
      report["pronoun"] = pronoun_f1(triples, tagger).to_json();
    } else if (m == "formality") {
      need_corpora();
      report["formality"] = formality_f1(triples, tagger).to_json();
    } else if (m == "marker") {
      need_corpora();
      std::vector<std::vector<Sentence>> sentences;
      std::map<std::string, const Document*> by_id;
      for (const auto& h : hyps) by_id[h.doc_id] = &h;
      for (const auto& r : refs) sentences.push_back(by_id.count(r.doc_id) ? by_id[r.doc_id]->target : std::vector<Sentence>{});
      const MarkerAccuracy acc = formality_marker_accuracy(refs, sentences);
      report["marker"] = {{"correct", acc.correct}, {"total", acc.total}, {"accuracy", acc.accuracy()}};
    } else {
      const auto cases = read_contrastive_cases(existing(a.contrastive, "contrastive cases"));
      const Checkpoint ck = Checkpoint::load(existing(a.checkpoint, "checkpoint"));
      const Model model(ck.config, ck.params);
      const ModelScorer scorer(model, ck.ratio);
      const Index k = cmd.count("--k") > 0 ? (f.k < 0 ? kFullDocument : f.k) : ck.context;
      const ContrastiveReport r = contrastive_accuracy(cases, model_case_scorer(scorer, ck.vocab, k));
      report["contrastive"] = {{"points", r.points}, {"cases", r.cases}, {"accuracy", r.accuracy}};
    }
  }
  const std::string text = report.dump(2) + "\n";
  if (!f.out.empty()) write_text(output_dir(f.out) / "report.json", text);
  std::cout << text;
  return 0;
}

struct BenchArgs {
  std::string lengths = "736,1472,2208";
  std::string variants = "full,lst,window";
  std::string windows = "10,20";
  Index heads = 1;
};

int cmd_bench_cost(const BenchArgs& a, const Flags& f, const CLI::App& cmd) {
  const auto lengths = parse_list(a.lengths);
  std::vector<Index> windows = parse_list(a.windows);
  if (cmd.count("--w") > 0) windows = {f.w};
  if (lengths.empty()) throw UsageError("no lengths given");
  std::ostringstream csv;
  csv << "variant,w,length,queries,keys,pairs,activation_elements,ratio_to_first\n";
  for (const auto& name : parse_names(a.variants)) {
    const AttentionVariant variant = parse_attention_variant(name);
    const std::vector<std::optional<Index>> ws =
        variant == AttentionVariant::Window ? std::vector<std::optional<Index>>(windows.begin(), windows.end())
                                            : std::vector<std::optional<Index>>{std::nullopt};
    for (const auto& w : ws) {
      Index first = 0;
      for (Index length : lengths) {
        const CostReport r = attention_cost(length, length, variant, w, a.heads);
        if (first == 0) first = r.pairs;
        char ratio[32];
        std::snprintf(ratio, sizeof ratio, "%.4f", static_cast<double>(r.pairs) / static_cast<double>(first));
        csv << r.variant << ',' << (w ? std::to_string(*w) : "") << ',' << length << ',' << r.queries << ',' << r.keys
            << ',' << r.pairs << ',' << r.activation_elements << ',' << ratio << '\n';
      }
    }
  }
  if (!f.out.empty()) write_text(output_dir(f.out) / "cost.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

int cmd_attn_focus(const CheckpointArgs& a, const Flags& f, const CLI::App& cmd) {
  Checkpoint ck = Checkpoint::load(existing(a.checkpoint, "checkpoint"));
  const Corpus corpus = read_corpus(existing(a.corpus, "corpus"));
  if (cmd.count("--align") > 0) ck.config.align = parse_align_mode(f.align);
  const Index k = cmd.count("--k") > 0 ? (f.k < 0 ? kFullDocument : f.k) : ck.context;
  const Model model(ck.config, ck.params);
  const CrossAttentionProbe probe = model_probe(model, ck.ratio);
  std::map<Index, FocusMass> by_sentence;
  FocusMass total;
  for (const auto& doc : corpus) {
    for (Index n = 1; n <= doc.size(); ++n) {
      const FocusMass m = attention_focus(probe, ck.vocab, doc, n, k);
      by_sentence[n] += m;
      total += m;
    }
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [n, m] : by_sentence) rows.push_back({{"sentence", n}, {"attention_percent", m.percentage()}});
  nlohmann::json report = {{"context", k},
                           {"variant", to_string(ck.config.cross)},
                           {"align", to_string(ck.config.align)},
                           {"attention_percent", total.percentage()},
                           {"by_sentence", rows}};
  const std::string text = report.dump(2) + "\n";
  if (!f.out.empty()) write_text(output_dir(f.out) / "attn_focus.json", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Document-level sequence-to-sequence toolkit with window attention"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&f](CLI::App* cmd) {
    cmd->add_option("--config", f.config, "experiment config JSON");
    cmd->add_option("--seed", f.seed, "random seed");
    cmd->add_option("--strategy", f.strategy, "decoding strategy")->check(CLI::IsMember({"fsd", "sd"}));
    cmd->add_option("--k", f.k, "context sentences (negative: whole document)");
    cmd->add_option("--variant", f.variant, "attention variant")->check(CLI::IsMember({"full", "lst", "window"}));
    cmd->add_option("--w", f.w, "window radius")->check(CLI::PositiveNumber);
    cmd->add_option("--pos-enc", f.pos_enc, "positional encoding")->check(CLI::IsMember({"abs", "rel"}));
    cmd->add_option("--align", f.align, "decode-time alignment")->check(CLI::IsMember({"identity", "ratio", "sent"}));
    cmd->add_option("--beam", f.beam, "beam size")->check(CLI::PositiveNumber);
    cmd->add_option("--alpha", f.alpha, "length normalization exponent");
    cmd->add_option("--out", f.out, "output directory");
  };

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate synthetic corpora");
  gen->add_option("--task", gen_args.task, "copy, reversal or formality")
      ->check(CLI::IsMember({"copy", "reversal", "formality"}));
  gen->add_option("--docs", gen_args.docs, "training documents")->check(CLI::PositiveNumber);
  gen->add_option("--valid-docs", gen_args.valid_docs, "validation documents")->check(CLI::PositiveNumber);
  gen->add_option("--test-docs", gen_args.test_docs, "test documents")->check(CLI::PositiveNumber);
  add_common(gen);

  auto* train = app.add_subcommand("train", "train a model from an experiment config");
  add_common(train);

  CheckpointArgs tr_args;
  auto* translate = app.add_subcommand("translate", "decode a corpus with a checkpoint");
  translate->add_option("--checkpoint", tr_args.checkpoint, "checkpoint JSON")->required();
  translate->add_option("--corpus", tr_args.corpus, "source corpus JSONL")->required();
  add_common(translate);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "score hypotheses");
  eval->add_option("--hyp", eval_args.hyp, "hypothesis corpus JSONL");
  eval->add_option("--ref", eval_args.ref, "reference corpus JSONL");
  eval->add_option("--metrics", eval_args.metrics, "comma list of pronoun, formality, marker, contrastive");
  eval->add_option("--contrastive", eval_args.contrastive, "contrastive cases JSONL");
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint for contrastive scoring");
  eval->add_option("--lexicon", eval_args.lexicon, "tagger lexicon JSON");
  add_common(eval);

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench-cost", "attention pair counts per variant and length");
  bench->add_option("--lengths", bench_args.lengths, "comma list of sequence lengths");
  bench->add_option("--variants", bench_args.variants, "comma list of variants");
  bench->add_option("--windows", bench_args.windows, "comma list of window radii");
  bench->add_option("--heads", bench_args.heads, "attention heads")->check(CLI::PositiveNumber);
  add_common(bench);

  CheckpointArgs focus_args;
  auto* focus = app.add_subcommand("attn-focus", "cross-attention mass on the current sentence");
  focus->add_option("--checkpoint", focus_args.checkpoint, "checkpoint JSON")->required();
  focus->add_option("--corpus", focus_args.corpus, "parallel corpus JSONL")->required();
  add_common(focus);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_args, f, gen->count("--seed") > 0);
    if (train->parsed()) return cmd_train(f, *train);
    if (translate->parsed()) return cmd_translate(tr_args, f, *translate);
    if (eval->parsed()) return cmd_eval(eval_args, f, *eval);
    if (bench->parsed()) return cmd_bench_cost(bench_args, f, *bench);
    if (focus->parsed()) return cmd_attn_focus(focus_args, f, *focus);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
