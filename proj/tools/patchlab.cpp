// patchlab command-line front end.
//
// Exit codes: 0 ok, 1 config error, 2 model/format error, 3 anything else.

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>

#include "patchlab/patchlab.hpp"

namespace pl = patchlab;

namespace {

struct options {
  std::string config;
  std::optional<std::string> seed;
  std::optional<std::string> outdir;
  std::optional<std::size_t> n;
  int verbosity = 0;
  std::string model;
  std::optional<std::string> tokenizer;
};

void write_run_env(const pl::run_context& ctx) {
  nlohmann::json j = {{"workers", ctx.workers}, {"outdir", ctx.outdir.string()}};
  const char* t = std::getenv("PATCHLAB_THREADS");
  j["PATCHLAB_THREADS"] = t ? nlohmann::json(t) : nlohmann::json();
  pl::detail::write_atomic(ctx.outdir / "run_env.json", j.dump(2) + '\n');
}

std::optional<std::uint64_t> flag_seed(const options& o) {
  if (!o.seed) return std::nullopt;
  auto s = pl::parse_seed(*o.seed);
  if (!s) throw pl::config_error("--seed must be a non-negative integer, got '" + *o.seed + "'");
  return s;
}

void summarize(const pl::report_bundle& b, const pl::run_context& ctx) {
  std::cerr << b.kind << ": wrote " << ctx.outdir.string() << " (" << b.records.size() << " records, "
            << b.tables.size() << " tables, seed " << ctx.seed << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patchlab: transformer inference with activation patching"};
  app.require_subcommand(1);
  options o;

  using runner = std::function<pl::report_bundle(const pl::run_context&)>;
  const std::vector<std::tuple<std::string, std::string, runner>> experiments = {
      {"scan", "rewrite-score scan over (layer, token)", pl::run_scan},
      {"flip", "demographic flip ratios with and without patching", pl::run_flip},
      {"perplexity", "judge perplexity of patched completions", pl::run_perplexity},
      {"risk", "depression-risk disparity under residual patching", pl::run_risk},
      {"rank", "differential-diagnosis ranks and Mann-Whitney tests", pl::run_rank},
      {"generate", "sample completions, optionally with interventions", pl::run_generate},
      {"capture", "capture activations for a prompt", pl::run_capture},
  };
  std::map<CLI::App*, runner> runners;
  for (const auto& [name, help, fn] : experiments) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "experiment config (.toml or .json)")->required();
    sub->add_option("--seed", o.seed, "seed (overrides PATCHLAB_SEED and the config)");
    sub->add_option("--outdir", o.outdir, "output directory (overrides the config)");
    sub->add_option("--n", o.n, "sample count override");
    sub->add_flag("-v,--verbose", o.verbosity, "print a summary to stderr");
    runners[sub] = fn;
  }
  auto* inspect = app.add_subcommand("inspect-model", "print model config, tensors and tokenizer summary");
  inspect->add_option("--model", o.model, "model file (.plab or .gguf)")->required();
  inspect->add_option("--tokenizer", o.tokenizer, "tokenizer JSON (not needed for GGUF)");
  inspect->add_option("--outdir", o.outdir, "also write report.json here");
  inspect->add_flag("-v,--verbose", o.verbosity, "print a summary to stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (inspect->parsed()) {
      const auto b = pl::inspect_model(o.model, o.tokenizer ? std::optional<pl::fs::path>(*o.tokenizer) : std::nullopt);
      if (o.outdir) {
        pl::emit_report(b, *o.outdir);
      } else {
        std::cout << pl::report_json(b).dump(2) << '\n';
      }
      return 0;
    }
    for (const auto& [sub, fn] : runners) {
      if (!sub->parsed()) continue;
      auto ctx = pl::make_context(o.config, flag_seed(o), o.outdir, o.n, o.verbosity);
      ctx.workers = pl::worker_cap_from_env(1);
      const auto b = fn(ctx);
      pl::emit_report(b, ctx.outdir);
      write_run_env(ctx);
      if (ctx.verbosity > 0) summarize(b, ctx);
      return 0;
    }
  } catch (const pl::config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const pl::format_error& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 3;
}
