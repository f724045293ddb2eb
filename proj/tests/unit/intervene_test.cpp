#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace patchlab;

TEST(Window, MatchesEnumeration) {
  for (int L = 1; L <= 40; ++L)
    for (int w = 0; w <= 6; ++w)
      for (int l = 0; l < L; ++l) {
        std::vector<int> want;
        for (int k = 0; k < L; ++k)
          if (std::abs(k - l) <= w) want.push_back(k);
        ASSERT_EQ(resolve_window(l, w, L), want) << l << " " << w << " " << L;
      }
  EXPECT_THROW(resolve_window(4, 0, 4), index_error);
  EXPECT_THROW(resolve_window(-1, 0, 4), index_error);
  EXPECT_THROW(resolve_window(1, -1, 4), config_error);
}

TEST(Intervention, ResolvesOnePatchPerWindowLayer) {
  const auto& t = tu::toy_model();
  const auto src = render_plain(t.tok, "The patient is Male");
  const auto tr = capture(t.model, src.tokens, {hook_site::mlp_out});
  EXPECT_EQ(tr.size(), 4 * src.tokens.size());
  intervention_spec s;
  s.source_token_index = src.tokens.size() - 1;
  s.target_token_index = 7;
  s.layer = 2;
  s.window_radius = 1;
  s.scale = 2.0;
  const auto p = resolve_intervention(s, tr, 4);
  ASSERT_EQ(p.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(p[i].layer, static_cast<int>(i) + 1);
    EXPECT_EQ(p[i].token_index, 7u);
    const auto& v = tr.at(p[i].layer, hook_site::mlp_out, s.source_token_index);
    for (std::size_t k = 0; k < v.size(); ++k) ASSERT_EQ(p[i].replacement[k], v[k] * 2.0f);
  }
  s.site = hook_site::attn_out;
  EXPECT_THROW(resolve_intervention(s, tr, 4), experiment_error);
  s.scale = 0.0;
  EXPECT_THROW(s.validate(), config_error);
}

TEST(Intervention, SpecJsonRoundTrip) {
  intervention_spec s{"The patient is Male", 3, hook_site::residual_post, 9, 2, 1, 2.5};
  const auto j = nlohmann::json(s);
  const auto back = j.get<intervention_spec>();
  EXPECT_EQ(nlohmann::json(back), j);
  auto bad = j;
  bad.erase("layer");
  EXPECT_THROW(bad.get<intervention_spec>(), config_error);
}

TEST(Distortion, SubsetSizeAndLayers) {
  EXPECT_EQ(distortion_subset_size(10, 0.5), 5u);
  EXPECT_EQ(distortion_subset_size(11, 0.5), 6u);
  EXPECT_EQ(distortion_subset_size(1, 0.5), 1u);
  EXPECT_EQ(distortion_subset_size(7, 0.3), 2u);
  const std::vector<float> v(8, 1.0f);
  distortion_params p;
  p.layers = {0, 2, 3};
  p.seed = 17;
  const auto patches = distortion_baseline(11, v, p, 4);
  ASSERT_EQ(patches.size(), 3u * 6u);
  std::map<int, std::set<std::size_t>> by_layer;
  for (const auto& x : patches) {
    by_layer[x.layer].insert(x.token_index);
    EXPECT_LT(x.token_index, 11u);
    EXPECT_EQ(x.replacement[0], 20.0f);
  }
  EXPECT_EQ(by_layer.size(), 3u);
  for (const auto& [l, s] : by_layer) {
    EXPECT_EQ(s.size(), 6u);
    EXPECT_EQ(s, by_layer.begin()->second);  // same positions at every layer
  }
  EXPECT_EQ(distortion_baseline(11, v, p, 4).size(), patches.size());
  // different seeds pick different subsets at least sometimes
  std::set<std::set<std::size_t>> seen;
  for (std::uint64_t k = 0; k < 20; ++k) {
    p.seed = k;
    std::set<std::size_t> s;
    for (const auto& x : distortion_baseline(11, v, p, 4)) s.insert(x.token_index);
    seen.insert(s);
  }
  EXPECT_GT(seen.size(), 5u);
  p.layers = {4};
  EXPECT_THROW(distortion_baseline(11, v, p, 4), index_error);
}
