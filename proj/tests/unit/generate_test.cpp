#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace patchlab;

TEST(Rng, CounterBasedAndReproducible) {
  counter_rng a(42), b(42);
  std::vector<std::uint64_t> xs;
  for (int i = 0; i < 10; ++i) xs.push_back(a.next_u64());
  for (int i = 0; i < 10; ++i) EXPECT_EQ(b.next_u64(), xs[static_cast<std::size_t>(i)]);
  EXPECT_EQ(counter_rng::at(42, 0, 3), xs[3]);
  EXPECT_NE(counter_rng(43).next_u64(), xs[0]);
  counter_rng c(7);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = c.next_double();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(Sampler, GreedyTiesGoLow) {
  counter_rng r(1);
  const std::vector<double> p{0.1, 0.4, 0.4, 0.1};
  EXPECT_EQ(sample_next(p, 0.0, r), 1);
  EXPECT_EQ(r.counter(), 1u);
}

TEST(Sampler, FrequenciesFollowTemperedDistribution) {
  const std::vector<double> p{0.5, 0.3, 0.2};
  for (double T : {1.0, 0.5}) {
    std::vector<double> want(3);
    double z = 0;
    for (std::size_t i = 0; i < 3; ++i) z += (want[i] = std::pow(p[i], 1.0 / T));
    std::vector<int> count(3, 0);
    const int n = 40000;
    for (int k = 0; k < n; ++k) {
      counter_rng r(static_cast<std::uint64_t>(k));
      ++count[static_cast<std::size_t>(sample_next(p, T, r))];
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(count[i] / double(n), want[i] / z, 0.01) << "T=" << T;
  }
}

TEST(Sampler, ZeroProbabilityNeverDrawn) {
  const std::vector<double> p{0.0, 1.0, 0.0};
  for (std::uint64_t k = 0; k < 200; ++k) {
    counter_rng r(k);
    EXPECT_EQ(sample_next(p, 0.7, r), 1);
  }
}

TEST(Chat, RenderTracksUserOffset) {
  const auto& t = tu::toy_model();
  const chat_template ct;
  const auto r = render_chat(ct, t.tok, "Hello there");
  EXPECT_EQ(r.text, "<|endoftext|><|user|>\nHello there\n<|assistant|>");
  EXPECT_EQ(r.text.substr(r.user_offset, 11), "Hello there");
  EXPECT_EQ(r.last_index, r.tokens.size() - 1);
  EXPECT_EQ(t.tok.decode(r.tokens), r.text);
}

TEST(Generate, BatchIsDeterministicAcrossWorkers) {
  const auto& t = tu::toy_model();
  const auto prompt = render_chat(chat_template{}, t.tok, "Compose a brief presentation of a patient presenting with asthma.");
  generation_job j;
  j.prompt_id = "p";
  j.tokens = prompt.tokens;
  sampler_config s;
  s.seed = 100;
  s.max_tokens = 40;
  s.stop_tokens = {*t.tok.special("<|endoftext|>")};
  const auto one = batch_generate(t.model, t.tok, {j}, 6, s, 1);
  const auto many = batch_generate(t.model, t.tok, {j}, 6, s, 4);
  ASSERT_EQ(one.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(nlohmann::json(one[k]), nlohmann::json(many[k]));
    EXPECT_EQ(one[k].seed, 100 + k);
    EXPECT_EQ(one[k].index, k);
    // a record is reproducible on its own from its seed
    sampler_config single = s;
    single.seed = one[k].seed;
    EXPECT_EQ(generate(t.model, t.tok, prompt.tokens, {}, single).completion_tokens, one[k].completion_tokens);
  }
}

TEST(Generate, StopsAtMaxTokensAndStopToken) {
  const auto& t = tu::toy_model();
  const auto prompt = render_chat(chat_template{}, t.tok, "Compose a brief presentation of a patient presenting with asthma.");
  sampler_config s;
  s.temperature = 0.0;
  s.max_tokens = 3;
  const auto r = generate(t.model, t.tok, prompt.tokens, {}, s);
  EXPECT_EQ(r.completion_tokens.size(), 3u);
  EXPECT_EQ(r.stop_reason, "max_tokens");
  s.max_tokens = 200;
  s.temperature = 0.7;
  s.seed = 5;
  s.stop_tokens = {*t.tok.special("<|endoftext|>")};
  const auto full = generate(t.model, t.tok, prompt.tokens, {}, s);
  EXPECT_EQ(full.stop_reason, "stop_token");
  EXPECT_EQ(full.completion_text.rfind("Gender:", 0), 0u) << full.completion_text;
}
