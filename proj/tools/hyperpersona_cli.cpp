// hyperpersona: synthesise corpora, train and evaluate perspectivist
// systems, run the hyperparameter grid and count trainable parameters.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

#include "hyperpersona/accounting.hpp"
#include "hyperpersona/config.hpp"
#include "hyperpersona/corpus.hpp"
#include "hyperpersona/report.hpp"
#include "hyperpersona/synthgen.hpp"
#include "hyperpersona/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace hyperpersona;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

fs::path sidecar_path(const fs::path& corpus) {
  fs::path p = corpus;
  p.replace_extension();
  p += ".personas.jsonl";
  return p;
}

int cmd_synth(const std::string& config_path, const std::string& out) {
  SynthConfig cfg;
  if (!config_path.empty()) cfg = synth_config_from(read_key_values(config_path));
  const SynthCorpus synth = generate(cfg);
  const fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ostringstream corpus_text, personas_text;
  write_jsonl(synth.corpus, corpus_text);
  write_persona_sidecar(synth, personas_text);
  write_file_atomic(out_path, corpus_text.str());
  write_file_atomic(sidecar_path(out_path), personas_text.str());
  std::cout << "wrote " << synth.corpus.records().size() << " records to " << out_path.string() << " and personas to "
            << sidecar_path(out_path).string() << '\n';
  return 0;
}

TrainConfig load_train_config(const std::string& config_path, const std::string& system, const std::string& seeds) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = train_config_from(read_key_values(config_path));
  if (!system.empty()) cfg.system = parse_system(system);
  if (!seeds.empty()) cfg.seeds = parse_seed_list(seeds);
  cfg.validate();
  return cfg;
}

PerspectivistCorpus load_corpus(const std::string& path, const std::string& schema) {
  FieldMap fields;
  if (!schema.empty()) fields = FieldMap::from_file(schema);
  return load_jsonl(path, fields);
}

// Table over every system directory in `out` that holds an aggregate.
std::string comparison_table(const fs::path& out) {
  std::vector<Aggregate> systems;
  const SystemKind order[] = {SystemKind::SingleTask, SystemKind::Aart, SystemKind::Ae, SystemKind::SeparateLora,
                              SystemKind::Hypernet};
  for (SystemKind kind : order) {
    const fs::path agg = out / to_string(kind) / "aggregate.json";
    if (!fs::exists(agg)) continue;
    std::ifstream in(agg);
    std::stringstream text;
    text << in.rdbuf();
    systems.push_back(parse_aggregate_report(text.str()));
  }
  return render_comparison_table(systems);
}

int cmd_run(const std::string& corpus_path, const std::string& schema, const std::string& system,
            const std::string& config_path, const std::string& seeds, const std::string& out, int jobs,
            bool progress, bool checkpoints) {
  TrainConfig cfg = load_train_config(config_path, system, seeds);
  cfg.log_progress = progress;
  const PerspectivistCorpus corpus = load_corpus(corpus_path, schema);
  std::vector<RunArtifacts> artifacts;
  const auto runs = multi_seed(corpus, cfg, jobs, checkpoints ? &artifacts : nullptr);

  const fs::path dir = fs::path(out) / to_string(cfg.system);
  fs::create_directories(dir);
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const std::string stem = "seed_" + std::to_string(runs[k].seed);
    write_file_atomic(dir / (stem + ".json"), run_report_json(runs[k]));
    if (checkpoints) save_checkpoint(artifacts[k].checkpoint, dir / (stem + ".ckpt"));
  }
  write_file_atomic(dir / "aggregate.json", aggregate_report_json(aggregate(runs), cfg.seeds));
  const std::string table = comparison_table(out);
  write_file_atomic(fs::path(out) / "table.txt", table);
  std::cout << table;
  return 0;
}

int cmd_grid(const std::string& corpus_path, const std::string& schema, const std::string& system,
             const std::string& config_path, std::uint64_t seed, const std::string& out, int jobs, bool progress) {
  TrainConfig cfg = load_train_config(config_path, system, "");
  cfg.log_progress = progress;
  const PerspectivistCorpus corpus = load_corpus(corpus_path, schema);
  const SplitBundle split = stratified_split(corpus, seed);
  const GridResult grid = grid_search(corpus, split, cfg, seed, jobs);
  const fs::path dir = fs::path(out) / to_string(cfg.system);
  fs::create_directories(dir);
  write_file_atomic(dir / "grid.json", grid_report_json(grid));
  const std::string table = render_grid_table(grid);
  write_file_atomic(dir / "grid.txt", table);
  std::cout << table;
  return 0;
}

int cmd_count(const std::string& system, const std::string& geometry, int annotators, int rank) {
  const SystemKind kind = parse_system(system);
  EncoderConfig enc;
  if (geometry == "desk") {
    enc = EncoderConfig::desk();
  } else if (geometry == "roberta") {
    enc = EncoderConfig::roberta();
  } else {
    throw ConfigError("--geometry must be desk or roberta (got '" + geometry + "')");
  }
  HypernetCountOptions options;
  options.rank = rank;
  const ParamBreakdown counts = count_system(kind, enc, annotators, options);
  std::cout << render_param_counts(counts, system + " @ " + geometry + ", #A=" + std::to_string(annotators));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perspectivist classification with a LoRA-generating hypernetwork"};
  app.require_subcommand(1);

  std::string config_path, out, corpus_path, schema, system, seeds, geometry = "desk";
  int jobs = 1;
  int annotators = 1;
  int rank = 2;
  std::uint64_t seed = 0;
  bool progress = false;
  bool checkpoints = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus and its persona sidecar");
  synth->add_option("--config", config_path, "Synthesis config (key = value)");
  synth->add_option("--out", out, "Output JSONL path")->required();

  auto* run = app.add_subcommand("run", "Train and evaluate one system over several seeds");
  run->add_option("--corpus", corpus_path, "Corpus JSONL")->required();
  run->add_option("--schema", schema, "Field-mapping JSON for non-canonical corpora");
  run->add_option("--system", system, "hypernet | single_task | aart | ae | separate_lora");
  run->add_option("--config", config_path, "Training config (key = value)");
  run->add_option("--seeds", seeds, "Seed list, e.g. 1..10 or 1,2,3");
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--jobs", jobs, "Parallel workers")->check(CLI::PositiveNumber);
  run->add_flag("--progress", progress, "Progress lines on stderr");
  run->add_flag("--checkpoints", checkpoints, "Also write one checkpoint per seed");

  auto* grid = app.add_subcommand("grid", "Dropout x learning-rate grid on the dev split");
  grid->add_option("--corpus", corpus_path, "Corpus JSONL")->required();
  grid->add_option("--schema", schema, "Field-mapping JSON for non-canonical corpora");
  grid->add_option("--system", system, "System to tune");
  grid->add_option("--config", config_path, "Training config (key = value)");
  grid->add_option("--seed", seed, "Split and initialisation seed");
  grid->add_option("--out", out, "Output directory")->required();
  grid->add_option("--jobs", jobs, "Parallel workers")->check(CLI::PositiveNumber);
  grid->add_flag("--progress", progress, "Progress lines on stderr");

  auto* count = app.add_subcommand("count-params", "Itemised trainable-parameter count");
  count->add_option("--system", system, "System")->required();
  count->add_option("--geometry", geometry, "desk | roberta");
  count->add_option("--annotators", annotators, "Number of annotators")->check(CLI::NonNegativeNumber);
  count->add_option("--rank", rank, "Adapter rank")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(config_path, out);
    if (*run) return cmd_run(corpus_path, schema, system, config_path, seeds, out, jobs, progress, checkpoints);
    if (*grid) return cmd_grid(corpus_path, schema, system, config_path, seed, out, jobs, progress);
    if (*count) return cmd_count(system, geometry, annotators, rank);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
