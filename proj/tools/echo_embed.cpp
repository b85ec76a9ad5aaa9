// echo-embed: command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 runtime or protocol error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "echoembed/echoembed.hpp"

namespace ee = echoembed;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 2;

struct ModelOptions {
  ee::ToyModelConfig config;
  std::string attention = "causal";
  std::string checkpoint;
  CLI::Option* attention_flag = nullptr;
};

void add_model_options(CLI::App& cmd, ModelOptions& m) {
  cmd.add_option("--model-seed", m.config.seed, "Toy model initialization seed")->capture_default_str();
  cmd.add_option("--vocab", m.config.vocab_size, "Toy vocabulary size (last id is the end token)")
      ->capture_default_str();
  cmd.add_option("--dim", m.config.dim, "Toy model width")->capture_default_str();
  cmd.add_option("--layers", m.config.n_layers, "Toy transformer layers")->capture_default_str();
  cmd.add_option("--heads", m.config.n_heads, "Attention heads")->capture_default_str();
  cmd.add_option("--max-seq-len", m.config.max_seq_len, "Longest token sequence")->capture_default_str();
  cmd.add_option("--init-std", m.config.init_std, "Standard deviation of initial weights")->capture_default_str();
  m.attention_flag = cmd.add_option("--attention", m.attention, "causal or bidirectional")
                         ->check(CLI::IsMember({"causal", "bidirectional"}))
                         ->capture_default_str();
  cmd.add_option("--checkpoint", m.checkpoint, "Load toy weights from a checkpoint instead of initializing");
}

ee::ToyModel build_model(ModelOptions& m) {
  m.config.attention = ee::parse_attention(m.attention);
  if (m.checkpoint.empty()) return ee::ToyModel::init(m.config);
  return ee::load_checkpoint(m.checkpoint);
}

std::unique_ptr<ee::ToyBackend> build_toy_backend(ModelOptions& m) {
  auto model = build_model(m);
  const auto mode = m.attention_flag->count() > 0 ? ee::parse_attention(m.attention) : model.config().attention;
  return std::make_unique<ee::ToyBackend>(std::move(model), mode);
}

struct BackendOptions {
  std::string kind = "toy";
  std::string provider_addr;
  int timeout_ms = 30000;
};

void add_backend_options(CLI::App& cmd, BackendOptions& b) {
  if (const char* env = std::getenv("ECHO_EMBED_PROVIDER")) b.provider_addr = env;
  cmd.add_option("--backend", b.kind, "toy or provider")
      ->check(CLI::IsMember({"toy", "provider"}))
      ->capture_default_str();
  cmd.add_option("--provider-addr", b.provider_addr,
                 "host:port, tcp://host:port or unix:/path (default: $ECHO_EMBED_PROVIDER)");
  cmd.add_option("--timeout-ms", b.timeout_ms, "Provider reply timeout")->capture_default_str();
}

std::unique_ptr<ee::Backend> build_backend(const BackendOptions& b, ModelOptions& m) {
  if (b.kind == "provider") {
    return std::make_unique<ee::ProviderBackend>(ee::connect_stream(b.provider_addr),
                                                 std::chrono::milliseconds(b.timeout_ms));
  }
  return build_toy_backend(m);
}

struct TemplateOptions {
  std::string strategy = "echo";
  std::string pooling = "mean";
  std::string template_file;
  std::optional<std::uint64_t> template_seed;
  bool eos = false;
};

void add_template_options(CLI::App& cmd, TemplateOptions& t) {
  cmd.add_option("--strategy", t.strategy, "classical, echo or summarization")
      ->check(CLI::IsMember({"classical", "echo", "summarization"}))
      ->capture_default_str();
  cmd.add_option("--pooling", t.pooling, "mean, last or sequence-last")
      ->check(CLI::IsMember({"mean", "last", "sequence-last"}))
      ->capture_default_str();
  cmd.add_option("--template-file", t.template_file, "Template family config to sample from");
  cmd.add_option("--template-seed", t.template_seed, "Sample the template instead of using the default");
  cmd.add_flag("--eos", t.eos, "Append the trainable end token (toy backend)");
}

ee::TemplateFamilies load_families(const std::string& file) {
  return ee::load_template_families(file.empty() ? std::filesystem::path(ECHOEMBED_DATA_DIR) / "template_families.json"
                                                 : std::filesystem::path(file));
}

ee::Template choose_template(ee::Strategy strategy, const TemplateOptions& t) {
  if (!t.template_seed && t.template_file.empty()) return ee::default_template(strategy);
  return ee::sample_templates(strategy, 1, t.template_seed.value_or(0), load_families(t.template_file)).front();
}

/// Opens `path` for writing, "-" meaning stdout.
class OutputSink {
 public:
  explicit OutputSink(const std::string& path) {
    if (path == "-" || path.empty()) return;
    file_.open(path);
    if (!file_) throw ee::Error(ee::Errc::io_error, "cannot write " + path);
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream file;
  if (path != "-") {
    file.open(path);
    if (!file) throw ee::Error(ee::Errc::io_error, "cannot read " + path);
  }
  std::istream& in = path == "-" ? std::cin : file;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

// ---------------------------------------------------------------------------

struct EmbedCommand {
  ModelOptions model;
  BackendOptions backend;
  TemplateOptions tmpl;
  std::string input = "-";
  std::string output = "-";

  int run() {
    const auto strategy = ee::parse_strategy(tmpl.strategy);
    const auto pooling = ee::parse_pooling(tmpl.pooling);
    const auto t = choose_template(strategy, tmpl);
    auto be = build_backend(backend, model);
    ee::EmbedOptions opts;
    opts.append_eos = tmpl.eos;
    OutputSink out(output);
    for (const auto& line : read_lines(input)) {
      const auto e = ee::embed(line, t, pooling, *be, opts);
      json j{{"embedding", e.values},
             {"dim", e.values.size()},
             {"strategy", ee::to_string(strategy)},
             {"pooling", ee::to_string(e.pooling)},
             {"pooled_tokens", e.cardinality}};
      out.stream() << j.dump() << '\n';
    }
    return 0;
  }
};

struct BenchCommand {
  ModelOptions model;
  BackendOptions backend;
  std::vector<std::string> structures{"S1", "S2", "S3"};
  std::vector<std::string> strategies{"classical", "echo", "summarization"};
  std::vector<std::string> poolings{"mean", "last"};
  std::string span = "full";
  std::optional<std::uint64_t> noise_seed;
  std::optional<std::uint64_t> template_seed;
  std::string template_file;
  std::string data_dir = ECHOEMBED_DATA_DIR;
  std::string output = "-";
  std::string margins_path;

  int run() {
    auto be = build_backend(backend, model);
    OutputSink out(output);
    std::optional<OutputSink> margins;
    if (!margins_path.empty()) {
      margins.emplace(margins_path);
      margins->stream() << "structure,strategy,pooling,index,margin\n";
    }
    out.stream() << "structure,strategy,pooling,accuracy,n\n";
    const ee::ToyTokenizer noise_tokenizer(model.config.vocab_size);
    for (const auto& sname : structures) {
      auto triplets = ee::load_corpus(ee::parse_structure(sname), data_dir);
      if (noise_seed) triplets = ee::append_noise_token(std::move(triplets), *noise_seed, noise_tokenizer);
      for (const auto& stname : strategies) {
        const auto strategy = ee::parse_strategy(stname);
        if (strategy == ee::Strategy::summarization && span == "a") {
          std::cerr << "note: summarization has no occurrence span; skipped for --span a\n";
          continue;
        }
        TemplateOptions topts;
        topts.template_seed = template_seed;
        topts.template_file = template_file;
        const auto t = choose_template(strategy, topts);
        std::vector<ee::Pooling> pools;
        for (const auto& p : poolings) {
          auto pooling = ee::parse_pooling(p);
          if (strategy == ee::Strategy::summarization) pooling = ee::Pooling::sequence_last;
          if (std::find(pools.begin(), pools.end(), pooling) == pools.end()) pools.push_back(pooling);
        }
        for (const auto pooling : pools) {
          if (span == "a" && pooling == ee::Pooling::sequence_last) continue;
          const auto fn = span == "a" ? ee::a_span_embedder(t, pooling, *be) : ee::occurrence_embedder(t, pooling, *be);
          const auto report = ee::triplet_accuracy(triplets, fn);
          out.stream() << sname << ',' << stname << ',' << ee::to_string(pooling) << ',' << report.accuracy << ','
                       << report.margins.size() << '\n';
          if (margins) {
            for (std::size_t i = 0; i < report.margins.size(); ++i) {
              margins->stream() << sname << ',' << stname << ',' << ee::to_string(pooling) << ',' << i << ','
                                << json(report.margins[i]).dump() << '\n';
            }
          }
        }
      }
    }
    return 0;
  }
};

struct TrainCommand {
  ModelOptions model;
  std::string data;
  std::size_t synthetic = 64;
  std::string synthetic_structure = "S1";
  std::uint64_t data_seed = 0;
  std::string instruction = "Retrieve a sentence with the same meaning";
  std::string strategy = "echo";
  std::string pooling = "mean";
  ee::TrainConfig config;
  std::string checkpoint_out;
  std::string loss_log = "-";
  bool grad_check = false;
  double grad_tolerance = 1e-4;

  int run() {
    config.strategy = ee::parse_strategy(strategy);
    config.pooling = ee::parse_pooling(pooling);
    config.validate();
    auto m = build_model(model);
    const auto examples =
        data.empty() ? ee::examples_from_triplets(
                           ee::make_synthetic_triplets(ee::parse_structure(synthetic_structure), synthetic, data_seed),
                           "synthetic-" + synthetic_structure, instruction)
                     : ee::load_training_data(data);
    if (grad_check) {
      const auto batches = ee::make_batches(examples, 2, config.seed);
      const auto it = std::find_if(batches.begin(), batches.end(), [](const ee::Batch& b) { return b.members.size() >= 2; });
      if (it == batches.end()) throw ee::Error(ee::Errc::invalid_config, "gradient check needs two examples from one dataset");
      std::vector<const ee::TrainingExample*> probe;
      for (auto i : it->members) probe.push_back(&examples[i]);
      const auto report = ee::gradient_check(m, probe, config);
      for (const auto& g : report.groups) {
        std::cerr << json{{"tensor", g.tensor}, {"relative_error", g.relative_error}}.dump() << '\n';
      }
      if (!report.passed(grad_tolerance)) {
        std::cerr << "error: gradient check failed (max relative error " << report.max_relative_error << ")\n";
        return kExitRuntime;
      }
    }
    const auto result = ee::train(std::move(m), examples, config);
    ee::save_checkpoint(result.model, checkpoint_out);
    OutputSink log(loss_log);
    log.stream() << "step,loss\n";
    for (std::size_t i = 0; i < result.step_losses.size(); ++i) {
      log.stream() << i << ',' << json(result.step_losses[i]).dump() << '\n';
    }
    return 0;
  }
};

struct AnalyzeCommand {
  ModelOptions model;
  BackendOptions backend;
  TemplateOptions tmpl;
  std::string pairs_path;
  std::string reference_strategy;
  std::string reference_pooling;
  std::string reference_addr;
  double fraction = 0.1;
  double bin_width = 1.0;
  std::string output = "-";
  std::string summary;

  int run() {
    std::ifstream in(pairs_path);
    if (!in) throw ee::Error(ee::Errc::io_error, "cannot read " + pairs_path);
    auto pairs = ee::parse_pairs(in);

    const auto strategy = ee::parse_strategy(tmpl.strategy);
    const auto pooling = ee::parse_pooling(tmpl.pooling);
    const auto t = choose_template(strategy, tmpl);
    auto be = build_backend(backend, model);
    ee::EmbedOptions opts;
    opts.append_eos = tmpl.eos;
    const ee::TextEmbedFn strategy_fn = [&](const std::string& s) { return ee::embed(s, t, pooling, *be, opts); };

    // The reference embedder defaults to the strategy's own configuration.
    std::unique_ptr<ee::Backend> ref_backend;
    ee::Backend* ref_be = be.get();
    if (!reference_addr.empty()) {
      ref_backend = std::make_unique<ee::ProviderBackend>(ee::connect_stream(reference_addr),
                                                          std::chrono::milliseconds(backend.timeout_ms));
      ref_be = ref_backend.get();
    }
    const auto ref_strategy = reference_strategy.empty() ? strategy : ee::parse_strategy(reference_strategy);
    const auto ref_pooling = reference_pooling.empty() ? pooling : ee::parse_pooling(reference_pooling);
    const auto ref_t = ref_strategy == strategy ? t : ee::default_template(ref_strategy);
    const ee::TextEmbedFn reference_fn = [&](const std::string& s) {
      return ee::embed(s, ref_t, ref_pooling, *ref_be, ref_be == be.get() ? opts : ee::EmbedOptions{});
    };

    for (auto& p : pairs) p.predicted_sim = ee::cosine(strategy_fn(p.x), strategy_fn(p.y));
    const auto first = ee::select_top_fraction(pairs, reference_fn, ee::Half::first, fraction);
    const auto second = ee::select_top_fraction(pairs, reference_fn, ee::Half::second, fraction);
    const auto report = ee::overestimation_report(pairs, first, second, bin_width);

    std::vector<double> pred, gold;
    for (const auto& p : pairs) {
      pred.push_back(p.predicted_sim);
      gold.push_back(p.gold_score);
    }
    OutputSink out(output);
    ee::write_report_csv(report, out.stream());
    const json s{{"n", pairs.size()},
                 {"spearman", ee::spearman(pred, gold)},
                 {"first_half_n", report.first_half.members.size()},
                 {"first_half_mean", report.first_half.mean},
                 {"second_half_n", report.second_half.members.size()},
                 {"second_half_mean", report.second_half.mean}};
    if (summary.empty()) {
      std::cerr << s.dump() << '\n';
    } else {
      OutputSink sink(summary);
      sink.stream() << s.dump() << '\n';
    }
    return 0;
  }
};

struct SamplePromptsCommand {
  std::string strategy = "echo";
  std::size_t count = 10;
  std::uint64_t seed = 0;
  std::string template_file;

  int run() {
    const auto strat = ee::parse_strategy(strategy);
    const auto templates = ee::sample_templates(strat, count, seed, load_families(template_file));
    for (std::size_t i = 0; i < templates.size(); ++i) {
      auto j = ee::to_json(templates[i]);
      j["seed"] = seed;
      j["index"] = i;
      j["example"] = ee::render(templates[i], "She loves summer").text;
      std::cout << j.dump() << '\n';
    }
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Echo, classical and summarization text embeddings over a toy transformer or an external provider"};
  app.require_subcommand(1);

  EmbedCommand embed;
  auto* embed_cmd = app.add_subcommand("embed", "Embed each input line; one JSON object per line");
  add_template_options(*embed_cmd, embed.tmpl);
  add_backend_options(*embed_cmd, embed.backend);
  add_model_options(*embed_cmd, embed.model);
  embed_cmd->add_option("--input", embed.input, "Input file, '-' for stdin")->capture_default_str();
  embed_cmd->add_option("--output,-o", embed.output, "Output file, '-' for stdout")->capture_default_str();

  BenchCommand bench;
  auto* bench_cmd = app.add_subcommand("bench", "Triplet accuracy on the bundled structure corpora");
  add_backend_options(*bench_cmd, bench.backend);
  add_model_options(*bench_cmd, bench.model);
  bench_cmd->add_option("--structures", bench.structures, "Any of S1 S2 S3")->capture_default_str();
  bench_cmd->add_option("--strategies", bench.strategies, "Any of classical echo summarization")
      ->capture_default_str();
  bench_cmd->add_option("--poolings", bench.poolings, "Any of mean last sequence-last")->capture_default_str();
  bench_cmd->add_option("--span", bench.span, "full occurrence or the A-portion only")
      ->check(CLI::IsMember({"full", "a"}))
      ->capture_default_str();
  bench_cmd->add_option("--noise-seed", bench.noise_seed, "Append one random token to every sentence");
  bench_cmd->add_option("--template-seed", bench.template_seed, "Sample templates instead of the defaults");
  bench_cmd->add_option("--template-file", bench.template_file, "Template family config");
  bench_cmd->add_option("--data-dir", bench.data_dir, "Directory with structure1..3.jsonl")->capture_default_str();
  bench_cmd->add_option("--output,-o", bench.output, "Accuracy CSV, '-' for stdout")->capture_default_str();
  bench_cmd->add_option("--margins", bench.margins_path, "Per-triplet margin CSV");

  TrainCommand train;
  auto* train_cmd = app.add_subcommand("train", "Contrastive training of the toy model");
  add_model_options(*train_cmd, train.model);
  train_cmd->add_option("--data", train.data, "Training JSONL; synthetic triplets when omitted");
  train_cmd->add_option("--synthetic", train.synthetic, "Number of synthetic triplets")->capture_default_str();
  train_cmd->add_option("--synthetic-structure", train.synthetic_structure, "S1, S2 or S3")
      ->check(CLI::IsMember({"S1", "S2", "S3"}))
      ->capture_default_str();
  train_cmd->add_option("--data-seed", train.data_seed, "Synthetic data seed")->capture_default_str();
  train_cmd->add_option("--instruction", train.instruction, "Task instruction for synthetic data")
      ->capture_default_str();
  train_cmd->add_option("--strategy", train.strategy, "classical or echo")
      ->check(CLI::IsMember({"classical", "echo"}))
      ->capture_default_str();
  train_cmd->add_option("--pooling", train.pooling, "mean or last")
      ->check(CLI::IsMember({"mean", "last"}))
      ->capture_default_str();
  train_cmd->add_option("--tau", train.config.tau, "Softmax temperature")->capture_default_str();
  train_cmd->add_option("--lr", train.config.learning_rate, "Learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", train.config.momentum, "Momentum")->capture_default_str();
  train_cmd->add_option("--batch-size", train.config.batch_size, "Batch size")->capture_default_str();
  train_cmd->add_option("--steps", train.config.steps, "Optimizer steps")->capture_default_str();
  train_cmd->add_option("--seed", train.config.seed, "Batching seed")->capture_default_str();
  train_cmd->add_option("--checkpoint-out", train.checkpoint_out, "Where to write the trained weights")->required();
  train_cmd->add_option("--loss-log", train.loss_log, "Per-step loss CSV, '-' for stdout")->capture_default_str();
  train_cmd->add_flag("--grad-check", train.grad_check, "Verify gradients by finite differences first");
  train_cmd->add_option("--grad-tolerance", train.grad_tolerance, "Max relative error for --grad-check")
      ->capture_default_str();

  AnalyzeCommand analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Rank-error analysis over scored sentence pairs");
  add_template_options(*analyze_cmd, analyze.tmpl);
  add_backend_options(*analyze_cmd, analyze.backend);
  add_model_options(*analyze_cmd, analyze.model);
  analyze_cmd->add_option("--pairs", analyze.pairs_path, "JSONL with x, y, score")->required();
  analyze_cmd->add_option("--reference-strategy", analyze.reference_strategy, "Embedder used to pick subsets")
      ->check(CLI::IsMember({"classical", "echo", "summarization"}));
  analyze_cmd->add_option("--reference-pooling", analyze.reference_pooling, "Pooling of the reference embedder")
      ->check(CLI::IsMember({"mean", "last", "sequence-last"}));
  analyze_cmd->add_option("--reference-provider-addr", analyze.reference_addr, "Provider for the reference embedder");
  analyze_cmd->add_option("--fraction", analyze.fraction, "Top fraction per half")->capture_default_str();
  analyze_cmd->add_option("--bin-width", analyze.bin_width, "Histogram bin width")->capture_default_str();
  analyze_cmd->add_option("--output,-o", analyze.output, "Report CSV, '-' for stdout")->capture_default_str();
  analyze_cmd->add_option("--summary", analyze.summary, "Summary JSON file (stderr when omitted)");

  SamplePromptsCommand sample;
  auto* sample_cmd = app.add_subcommand("sample-prompts", "Print sampled templates as JSON lines");
  sample_cmd->add_option("--strategy", sample.strategy, "classical, echo or summarization")
      ->check(CLI::IsMember({"classical", "echo", "summarization"}))
      ->capture_default_str();
  sample_cmd->add_option("--count", sample.count, "How many templates")->capture_default_str();
  sample_cmd->add_option("--seed", sample.seed, "Sampler seed")->capture_default_str();
  sample_cmd->add_option("--template-file", sample.template_file, "Template family config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*embed_cmd) return embed.run();
    if (*bench_cmd) return bench.run();
    if (*train_cmd) return train.run();
    if (*analyze_cmd) return analyze.run();
    if (*sample_cmd) return sample.run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 1;
}
