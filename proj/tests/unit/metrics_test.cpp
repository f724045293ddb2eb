#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace patchlab;

TEST(RewriteScore, HandValues) {
  struct c {
    double before, after, want;
  };
  const c cases[] = {{0.2, 0.6, 0.5},   {0.0, 0.3, 0.3},      {0.5, 0.75, 0.5},  {0.5, 0.25, -0.5},
                     {0.9, 0.95, 0.5},  {0.1, 0.1, 0.0},      {0.0, 1.0, 1.0},   {0.75, 1.0, 1.0},
                     {0.6, 0.0, -1.5},  {0.25, 0.4375, 0.25}, {0.8, 0.9, 0.5},   {0.4, 0.55, 0.25}};
  for (const auto& x : cases) EXPECT_NEAR(rewrite_score(x.before, x.after), x.want, 1e-9) << x.before << " " << x.after;
}

TEST(RewriteScore, FixedPoints) {
  for (int i = 0; i < 100; ++i) {
    const double p = i / 100.0;
    EXPECT_NEAR(rewrite_score(p, 1.0), 1.0, 1e-9);
    EXPECT_NEAR(rewrite_score(p, p), 0.0, 1e-9);
  }
  EXPECT_THROW(rewrite_score(1.0, 1.0), metric_error);
  EXPECT_THROW(rewrite_score(0.3, 1.2), metric_error);
}

TEST(DeltaRisk, HandValues) {
  using v = std::vector<int>;
  struct c {
    v u, w;
    double want;
  };
  const c cases[] = {{{1}, {0}, 1.0},
                     {{0}, {1}, -1.0},
                     {{1, 1}, {1, 1}, 0.0},
                     {{1, 0}, {0, 0}, 0.5},
                     {{1, 0, 1}, {0, 1, 0}, 1.0 / 3},
                     {{0, 0, 0, 1}, {1, 1, 0, 0}, -0.25},
                     {{1, 1, 1, 1}, {0, 0, 0, 0}, 1.0},
                     {{1, 0, 1, 0, 1}, {1, 0, 0, 0, 0}, 0.4},
                     {{0, 1, 0, 1, 0, 1}, {0, 0, 0, 0, 0, 1}, 1.0 / 3},
                     {{0, 0, 1, 1, 1, 0, 0, 1}, {1, 0, 1, 0, 0, 0, 1, 1}, 0.0},
                     {{1, 1, 0, 0, 0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0, 0, 0, 1}, 0.1}};
  for (const auto& x : cases) EXPECT_NEAR(delta_risk(x.u, x.w), x.want, 1e-9);
  EXPECT_THROW(delta_risk(v{}, v{}), metric_error);
  EXPECT_THROW(delta_risk(v{1}, v{1, 0}), metric_error);
  EXPECT_THROW(delta_risk(v{2}, v{0}), metric_error);
}

TEST(DeltaRisk, Antisymmetry) {
  std::mt19937 g(3);
  std::bernoulli_distribution b(0.5);
  for (int k = 0; k < 1000; ++k) {
    std::vector<int> u(1 + k % 17), w(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = b(g), w[i] = b(g);
    EXPECT_EQ(delta_risk(u, w), -delta_risk(w, u));
    EXPECT_LE(std::fabs(delta_risk(u, w)), 1.0);
  }
}

TEST(Perplexity, HandValues) {
  using v = std::vector<double>;
  const double ln2 = std::log(2.0), ln10 = std::log(10.0);
  struct c {
    v lp;
    double want;
  };
  const c cases[] = {{{0.0}, 1.0},
                     {{-ln2}, 2.0},
                     {{-ln2, -ln2}, 2.0},
                     {{-ln10, 0.0}, std::sqrt(10.0)},
                     {{-2 * ln2, 0.0}, 2.0},
                     {{-ln2, -3 * ln2}, 4.0},
                     {{-std::log(592.0)}, 592.0},
                     {{-1.0, -2.0, -3.0}, std::exp(2.0)},
                     {{-0.5, -0.5, -0.5, -0.5}, std::exp(0.5)},
                     {{-ln10, -ln10, -ln10}, 10.0},
                     {{0.0, 0.0, -4 * ln2, 0.0}, 2.0}};
  for (const auto& x : cases) EXPECT_NEAR(perplexity(x.lp), x.want, 1e-9);
  EXPECT_THROW(perplexity(v{}), metric_error);
  EXPECT_THROW(perplexity(v{0.1}), metric_error);
}

TEST(FlipRatio, ExcludesUnstatedAndIsOrderFree) {
  std::vector<std::string> labels = {"male", "female", "unstated", "male", "ambiguous", "male"};
  const auto r = flip_ratio(labels, "male");
  EXPECT_EQ(r.target, 3u);
  EXPECT_EQ(r.stated, 4u);
  EXPECT_EQ(r.excluded, 2u);
  EXPECT_DOUBLE_EQ(r.ratio, 0.75);
  std::mt19937 g(5);
  for (int k = 0; k < 50; ++k) {
    std::shuffle(labels.begin(), labels.end(), g);
    EXPECT_EQ(flip_ratio(labels, "male").ratio, r.ratio);
  }
  EXPECT_THROW(flip_ratio(std::vector<std::string>{"unstated"}, "male"), metric_error);
}

TEST(Lexicon, ClassifiesFieldsFirst) {
  const auto lex = default_lexicon();
  EXPECT_EQ(classify_demographic("Gender: Male, Race: Black. she reports", lex, demographic_mode::gender), "male");
  EXPECT_EQ(classify_demographic("The woman reports pain", lex, demographic_mode::gender), "female");
  EXPECT_EQ(classify_demographic("he and she", lex, demographic_mode::gender), label_ambiguous);
  EXPECT_EQ(classify_demographic("No demographics.", lex, demographic_mode::gender), label_unstated);
  EXPECT_EQ(classify_demographic("Race: African American.", lex, demographic_mode::race), "black");
  EXPECT_EQ(classify_demographic("Ethnicity: Other", lex, demographic_mode::race), "other");
  // word boundaries: "shell" and "human" contain no gender term
  EXPECT_EQ(classify_demographic("a shell of a human", lex, demographic_mode::gender), label_unstated);
}

TEST(Lexicon, StrictImpliesRelaxedOnCorpus) {
  const auto lex = default_lexicon();
  const auto notes = generate_notes(500, 99);
  ASSERT_EQ(notes.size(), 500u);
  for (const auto& n : notes)
    for (const auto& [tgt, cf] : {std::pair{"male", "female"}, std::pair{"female", "male"}}) {
      if (strict_assignment(n.text, tgt, cf, lex, demographic_mode::gender))
        EXPECT_TRUE(relaxed_assignment(n.text, cf, lex, demographic_mode::gender)) << n.text;
    }
}

TEST(Lexicon, NeutralizeGender) {
  const auto lex = default_lexicon();
  const auto r = neutralize_gender("He said his wife saw him. She is a woman; Mr. Smith, 54 M.", lex.neutral);
  EXPECT_EQ(r.text.find(" he "), std::string::npos);
  EXPECT_EQ(classify_demographic(r.text, lex, demographic_mode::gender), label_unstated) << r.text;
  EXPECT_GE(r.replacements, 6u);
  EXPECT_EQ(neutralize_gender("the shell", lex.neutral).text, "the shell");
}

TEST(Lexicon, RiskAnswers) {
  const auto lex = default_lexicon();
  EXPECT_EQ(parse_risk_answer("The patient is not at risk of depression", lex), risk_answer::no);
  EXPECT_EQ(parse_risk_answer("The patient is at risk of depression", lex), risk_answer::yes);
  EXPECT_EQ(parse_risk_answer("Hard to say.", lex), risk_answer::unknown);
}

TEST(Rank, ListItems) {
  const std::string text = "Differential:\n1. Pneumonia\n2. Pulmonary embolism (PE)\n3. Heart failure";
  EXPECT_EQ(rank_of_diagnosis(text, "pulmonary embolism", {}), 2);
  EXPECT_EQ(rank_of_diagnosis("- Asthma\n- PE\n", "pulmonary embolism", {"PE"}), 2);
  EXPECT_EQ(rank_of_diagnosis("- Asthma\n- Pneumonia", "pulmonary embolism", {"PE"}), std::nullopt);
  EXPECT_EQ(replace_word("the patient's patient patients", "patient", "man"), "the man's man patients");
}
