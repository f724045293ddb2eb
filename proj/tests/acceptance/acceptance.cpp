// Acceptance run: one PASS/FAIL/SKIP line per criterion. Exit status is
// nonzero when any criterion fails.
//
// Criterion 11 needs a user model:
//   PATCHLAB_ACCEPT_MODEL      path to a small F16/F32 instruct GGUF
//   PATCHLAB_ACCEPT_CHAT       optional JSON file with a chat template
//   PATCHLAB_ACCEPT_N          samples per cell (default 20)

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "patchlab/patchlab.hpp"
#include "patchlab/toy/builder.hpp"

using namespace patchlab;

namespace {

const fs::path fixtures = PATCHLAB_FIXTURES;
const fs::path configs = fixtures / "configs";

struct outcome {
  enum { pass, fail, skip } status = pass;
  std::string detail;
};

struct checker {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  outcome done(std::string detail = {}) const {
    if (failures.empty()) return {outcome::pass, detail};
    std::string all;
    for (const auto& f : failures) all += (all.empty() ? "" : "; ") + f;
    return {outcome::fail, all};
  }
};

std::string num(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

run_context context(const std::string& name, std::optional<std::size_t> n = std::nullopt) {
  auto ctx = make_context(configs / name, std::nullopt, std::nullopt, n);
  ctx.workers = worker_cap_from_env(1);
  return ctx;
}

outcome formula_oracles() {
  checker c;
  const double rs[][3] = {{0.2, 0.6, 0.5},    {0.0, 0.3, 0.3},     {0.5, 0.75, 0.5}, {0.5, 0.25, -0.5},
                          {0.9, 0.95, 0.5},   {0.1, 0.1, 0.0},     {0.0, 1.0, 1.0},  {0.75, 1.0, 1.0},
                          {0.6, 0.0, -1.5},   {0.25, 0.4375, 0.25}};
  for (const auto& x : rs) c.expect(std::fabs(rewrite_score(x[0], x[1]) - x[2]) <= 1e-9, "rewrite_score case");
  for (int i = 0; i < 100; ++i) {
    const double p = i / 100.0;
    c.expect(std::fabs(rewrite_score(p, 1.0) - 1.0) <= 1e-9, "rewrite_score(p,1)");
    c.expect(std::fabs(rewrite_score(p, p)) <= 1e-9, "rewrite_score(p,p)");
  }
  using iv = std::vector<int>;
  const std::vector<std::tuple<iv, iv, double>> dr = {
      {{1}, {0}, 1.0},          {{0}, {1}, -1.0},         {{1, 1}, {1, 1}, 0.0},
      {{1, 0}, {0, 0}, 0.5},    {{1, 0, 1}, {0, 1, 0}, 1.0 / 3}, {{0, 0, 0, 1}, {1, 1, 0, 0}, -0.25},
      {{1, 1, 1, 1}, {0, 0, 0, 0}, 1.0}, {{1, 0, 1, 0, 1}, {1, 0, 0, 0, 0}, 0.4},
      {{0, 1, 0, 1, 0, 1}, {0, 0, 0, 0, 0, 1}, 1.0 / 3}, {{1, 1, 0, 0, 0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0, 0, 0, 1}, 0.1}};
  for (const auto& [u, v, want] : dr) c.expect(std::fabs(delta_risk(u, v) - want) <= 1e-9, "delta_risk case");
  const double ln2 = std::log(2.0), ln10 = std::log(10.0);
  const std::vector<std::pair<std::vector<double>, double>> pp = {
      {{0.0}, 1.0},          {{-ln2}, 2.0},           {{-ln2, -ln2}, 2.0},       {{-ln10, 0.0}, std::sqrt(10.0)},
      {{-2 * ln2, 0.0}, 2.0}, {{-ln2, -3 * ln2}, 4.0}, {{-std::log(592.0)}, 592.0}, {{-1.0, -2.0, -3.0}, std::exp(2.0)},
      {{-0.5, -0.5, -0.5, -0.5}, std::exp(0.5)},     {{-ln10, -ln10, -ln10}, 10.0}};
  for (const auto& [lp, want] : pp) c.expect(std::fabs(perplexity(lp) - want) <= 1e-9, "perplexity case");
  return c.done(num(std::size(rs) + dr.size() + pp.size()) + " cases");
}

outcome self_patch_identity() {
  checker c;
  const auto tok = tokenizer::load(fixtures / "models" / "toy_tokenizer.json");
  const auto m = load_model(fixtures / "models" / "toy.plab");
  const auto ids = render_chat(chat_template{}, tok, "Compose a brief presentation of a patient presenting with asthma.").tokens;
  const std::set<hook_site> sites(std::begin(all_hook_sites), std::end(all_hook_sites));
  const auto base = forward(m, ids, sites);
  double worst = 0.0;
  std::size_t n = 0;
  for (int l = 0; l < m.config.n_layers; ++l)
    for (hook_site s : all_hook_sites)
      for (std::size_t p = 0; p < ids.size(); ++p) {
        const std::vector<resolved_patch> patch{{l, s, p, base.trace.at(l, s, p)}};
        const auto r = forward(m, ids, {}, patch);
        for (std::size_t i = 0; i < r.logits.data.size(); ++i)
          worst = std::max(worst, static_cast<double>(std::fabs(r.logits.data[i] - base.logits.data[i])));
        ++n;
      }
  c.expect(worst <= 1e-5, "max logit change " + num(worst));
  return c.done(num(n) + " (layer, site, token) patches, max change " + num(worst));
}

outcome window_enumeration() {
  checker c;
  std::size_t n = 0;
  for (int L = 1; L <= 40; ++L)
    for (int w = 0; w <= 6; ++w)
      for (int l = 0; l < L; ++l) {
        std::vector<int> want;
        for (int k = 0; k < L; ++k)
          if (std::abs(k - l) <= w) want.push_back(k);
        c.expect(resolve_window(l, w, L) == want, "window " + num(l) + "/" + num(w) + "/" + num(L));
        ++n;
      }
  return c.done(num(n) + " triples");
}

outcome planted_localization() {
  checker c;
  const auto scan = run_scan(context("scan.toml"));
  const auto& am = scan.metrics["argmax"];
  const int layer = am["layer"].get<int>();
  c.expect(layer == toy::gender_layer, "scan argmax layer " + num(layer));
  c.expect(am["column"] == scan.metrics["condition_column"], "scan argmax column is not the condition's last token");
  for (const auto& [cond, v] : scan.metrics["conditions"].items())
    c.expect(v["argmax"]["layer"] == toy::gender_layer && v["argmax"]["token_index"] == v["condition_last"],
             "per-condition argmax off for " + cond);

  auto ctx = context("flip_gender.toml", 200);
  ctx.config["flip"]["layer"] = layer;
  const auto flip = run_flip(ctx);
  std::string detail = "argmax (layer " + num(layer) + ", " + am["label"].get<std::string>() + ")";
  for (const auto& [name, t] : flip.metrics["targets"].items()) {
    const auto& c2 = t["cells"]["c=2"];
    const double r = c2["ratio"].is_number() ? c2["ratio"].get<double>() : 0.0;
    c.expect(r >= 0.95, name + " c=2 ratio " + num(r));
    detail += ", " + name + " c=2 " + num(r);
  }
  return c.done(detail);
}

outcome window_monotonicity() {
  checker c;
  const auto flip = run_flip(context("flip_race.toml", 200));
  std::string detail;
  for (const auto& [name, t] : flip.metrics["targets"].items()) {
    const auto& cells = t["cells"];
    for (const char* s : {"c=1", "c=2"}) {
      const double w0 = cells[std::string("w=0 ") + s]["ratio"].get<double>();
      const double w1 = cells[std::string("w=1 ") + s]["ratio"].get<double>();
      c.expect(w1 >= w0, name + " " + s + ": w=1 " + num(w1) + " < w=0 " + num(w0));
      detail += std::string(detail.empty() ? "" : ", ") + s + " w0 " + num(w0) + " w1 " + num(w1);
    }
  }
  return c.done(detail);
}

double brute_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size(), n1 = a.size();
  const double mean = 0.5 * static_cast<double>(a.size() * b.size());
  const double dev = std::fabs(mann_whitney_u(a, b) - mean);
  std::size_t hit = 0, all = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != n1) continue;
    std::vector<double> x, y;
    for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1u ? x : y).push_back(pooled[i]);
    ++all;
    if (std::fabs(mann_whitney_u(x, y) - mean) >= dev - 1e-12) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(all);
}

outcome mann_whitney_checks() {
  checker c;
  std::mt19937 g(101);
  std::size_t n = 0;
  for (std::size_t n1 = 1; n1 <= 6; ++n1)
    for (std::size_t n2 = 1; n2 <= 6; ++n2)
      for (int range : {2, 4, 1000})
        for (int rep = 0; rep < 5; ++rep) {
          std::uniform_int_distribution<int> d(1, range);
          std::vector<double> a(n1), b(n2);
          for (auto& x : a) x = d(g);
          for (auto& x : b) x = d(g);
          const auto r = mann_whitney(a, b);
          c.expect(r.exact && std::fabs(r.p - brute_p(a, b)) <= 1e-12, "exact p for " + num(n1) + "x" + num(n2));
          ++n;
        }
  std::normal_distribution<double> nd(0.0, 1.0);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> a(15), b(15);
    for (auto& x : a) x = nd(g) + (rep % 5) * 0.3;
    for (auto& x : b) x = nd(g);
    worst = std::max(worst, std::fabs(mann_whitney_normal(a, b).p - mann_whitney_exact(a, b).p));
  }
  c.expect(worst <= 0.01, "normal approximation off by " + num(worst));
  return c.done(num(n) + " exact cases, approximation max |dp| " + num(worst));
}

outcome perplexity_checks() {
  checker c;
  const auto uni = run_perplexity(context("perplexity_uniform.toml"));
  const double V = uni.metrics["rows"]["before"]["mean"].get<double>();
  const auto tok = tokenizer::load(fixtures / "models" / "toy_tokenizer.json");
  for (const auto& [name, row] : uni.metrics["rows"].items())
    c.expect(std::fabs(row["mean"].get<double>() - static_cast<double>(tok.size())) <= 1e-6,
             "uniform judge " + name + " = " + num(row["mean"].get<double>()));
  const auto p = run_perplexity(context("perplexity.toml"));
  const double d = p.metrics["rows"]["distortion"]["mean"].get<double>();
  const double m = p.metrics["rows"]["matched_single_point"]["mean"].get<double>();
  c.expect(d > m, "distortion " + num(d) + " <= matched " + num(m));
  return c.done("uniform " + num(V) + " (vocab " + num(tok.size()) + "), distortion " + num(d) + " > matched " + num(m));
}

outcome metric_laws() {
  checker c;
  std::mt19937 g(7);
  std::bernoulli_distribution b(0.5);
  for (int k = 0; k < 1000; ++k) {
    std::vector<int> u(1 + k % 23), v(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = b(g), v[i] = b(g);
    c.expect(delta_risk(u, v) == -delta_risk(v, u), "antisymmetry");
  }
  const auto lex = default_lexicon();
  const auto notes = generate_notes(500, 99);
  std::size_t strict = 0;
  for (const auto& n : notes)
    for (const auto& [t, cf] : {std::pair{"male", "female"}, std::pair{"female", "male"}})
      if (strict_assignment(n.text, t, cf, lex, demographic_mode::gender)) {
        ++strict;
        c.expect(relaxed_assignment(n.text, cf, lex, demographic_mode::gender), "strict without relaxed");
      }
  std::vector<std::string> labels = {"male", "female", "unstated", "male", "ambiguous", "female", "male"};
  const double r0 = flip_ratio(labels, "male").ratio;
  for (int k = 0; k < 200; ++k) {
    std::shuffle(labels.begin(), labels.end(), g);
    c.expect(flip_ratio(labels, "male").ratio == r0, "flip_ratio permutation");
  }
  return c.done("1000 pairs, 500 texts (" + num(strict) + " strict), 200 permutations");
}

int run_cli(const std::string& args, int threads) {
  const std::string cmd =
      "PATCHLAB_THREADS=" + std::to_string(threads) + " " + std::string(PATCHLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::map<std::string, std::string> report_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "run_env.json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  return out;
}

outcome reproducibility() {
  checker c;
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"scan", "scan.toml"},        {"flip", "flip_gender.toml"}, {"flip", "flip_race.toml"},
      {"perplexity", "perplexity.toml"}, {"risk", "risk_gender.toml"}, {"risk", "risk_race.toml"},
      {"rank", "rank.toml"},        {"generate", "generate.toml"}, {"capture", "capture.toml"}};
  const auto root = fs::temp_directory_path() / "patchlab_accept_repro";
  fs::remove_all(root);
  std::size_t files = 0;
  for (const auto& [sub, cfg] : runs) {
    std::map<std::string, std::string> first;
    for (int threads : {1, 8})
      for (int rep = 0; rep < 2; ++rep) {
        const auto out = root / (cfg + "_" + std::to_string(threads) + "_" + std::to_string(rep));
        const int rc = run_cli(sub + " --config " + (configs / cfg).string() + " --outdir " + out.string(), threads);
        c.expect(rc == 0, sub + " " + cfg + " exited " + num(rc));
        const auto got = report_files(out);
        if (first.empty()) {
          first = got;
          files += got.size();
        } else {
          c.expect(got == first, cfg + " differs at " + num(threads) + " threads");
        }
      }
  }
  for (int threads : {1, 8}) {
    const auto out = root / ("inspect_" + std::to_string(threads));
    run_cli("inspect-model --model " + (fixtures / "models" / "toy.plab").string() + " --tokenizer " +
                (fixtures / "models" / "toy_tokenizer.json").string() + " --outdir " + out.string(),
            threads);
  }
  c.expect(!report_files(root / "inspect_1").empty() && report_files(root / "inspect_1") == report_files(root / "inspect_8"),
           "inspect-model differs");
  return c.done(num(runs.size() + 1) + " commands x 4 runs, " + num(files) + " files each");
}

outcome gguf_subset() {
  checker c;
  std::ifstream in(fixtures / "models" / "tiny_reference.json");
  const auto ref = nlohmann::json::parse(in);
  const auto ids = ref.at("tokens").get<std::vector<token_id>>();
  const auto want = ref.at("logits").get<std::vector<std::vector<double>>>();
  const auto m = load_model(fixtures / "models" / "tiny_f32.gguf");
  const auto r = forward(m, ids);
  double worst = 0.0;
  for (std::size_t p = 0; p < ids.size(); ++p)
    for (std::size_t v = 0; v < want[p].size(); ++v) worst = std::max(worst, std::fabs(r.logits.row(p)[v] - want[p][v]));
  c.expect(worst <= 1e-4, "max logit error " + num(worst));
  const int rc = run_cli("inspect-model --model " + (fixtures / "models" / "tiny_q4.gguf").string(), 1);
  c.expect(rc == 2, "quantized fixture exit code " + num(rc));
  return c.done("max logit error " + num(worst) + ", quantized exit " + num(rc));
}

outcome user_model_direction() {
  const char* model = std::getenv("PATCHLAB_ACCEPT_MODEL");
  if (model == nullptr || *model == '\0') return {outcome::skip, "PATCHLAB_ACCEPT_MODEL not set"};
  checker c;
  const std::size_t n = [] {
    const char* v = std::getenv("PATCHLAB_ACCEPT_N");
    return v ? static_cast<std::size_t>(std::stoul(v)) : std::size_t{20};
  }();
  nlohmann::json base = {{"model", model}, {"seed", 1}, {"sampler", {{"temperature", 0.7}, {"max_tokens", 64}}}};
  if (const char* chat = std::getenv("PATCHLAB_ACCEPT_CHAT"); chat != nullptr && *chat != '\0') {
    std::ifstream cin(chat);
    base["chat"] = nlohmann::json::parse(cin);
  }
  const auto dir = fs::temp_directory_path() / "patchlab_accept_user";
  fs::create_directories(dir);
  auto ctx_for = [&](const nlohmann::json& j, const std::string& name) {
    std::ofstream(dir / name) << j.dump(2);
    auto ctx = make_context(dir / name);
    ctx.workers = worker_cap_from_env(1);
    return ctx;
  };
  auto scan_cfg = base;
  scan_cfg["scan"] = {{"conditions", {"multiple sclerosis"}}, {"source_prompt", "The patient is Male"}};
  const auto scan = run_scan(ctx_for(scan_cfg, "scan.json"));
  const int layer = scan.metrics["argmax"]["layer"].get<int>();
  auto flip_cfg = base;
  flip_cfg["n"] = n;
  flip_cfg["flip"] = {{"layer", layer},
                      {"cells", {{{"name", "c=2"}, {"scale", 2.0}}}},
                      {"targets", {{{"condition", "multiple sclerosis"}, {"label", "male"},
                                    {"source_prompt", "The patient is Male"}}}}};
  const auto flip = run_flip(ctx_for(flip_cfg, "flip.json"));
  const auto& cells = flip.metrics["targets"].begin().value()["cells"];
  const auto ratio = [](const nlohmann::json& x) { return x["ratio"].is_number() ? x["ratio"].get<double>() : 0.0; };
  const double before = ratio(cells["before"]), after = ratio(cells["c=2"]);
  c.expect(after > before, "male ratio did not increase: " + num(before) + " -> " + num(after));
  return c.done("layer " + num(layer) + ", male ratio " + num(before) + " -> " + num(after));
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<outcome()>>> criteria = {
      {"formula oracles", formula_oracles},
      {"patch-with-self identity", self_patch_identity},
      {"window resolution", window_enumeration},
      {"planted-circuit localization", planted_localization},
      {"sliding-window monotonicity", window_monotonicity},
      {"Mann-Whitney exact and approximate", mann_whitney_checks},
      {"perplexity: uniform judge and distortion baseline", perplexity_checks},
      {"metric laws", metric_laws},
      {"reproducibility across runs and threads", reproducibility},
      {"GGUF subset", gguf_subset},
      {"user model direction of effect", user_model_direction},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {outcome::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == outcome::pass ? "PASS" : o.status == outcome::fail ? "FAIL" : "SKIP";
    char time[32];
    std::snprintf(time, sizeof time, "%.2fs", secs);
    std::cout << "criterion " << i + 1 << " " << tag << " [" << time << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
    failed += o.status == outcome::fail;
  }
  return failed == 0 ? 0 : 1;
}
