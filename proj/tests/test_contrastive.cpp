#include <cmath>

#include "asiseg/contrastive.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace asiseg;
using testutil::error_of;

namespace {

oracle::Matrix to_matrix(const torch::Tensor& t) {
  auto d = t.to(torch::kFloat64).contiguous();
  oracle::Matrix m(d.size(0), std::vector<double>(d.size(1)));
  for (int64_t i = 0; i < d.size(0); ++i) {
    for (int64_t j = 0; j < d.size(1); ++j) m[i][j] = d[i][j].item<double>();
  }
  return m;
}

ClassPooledEmbeddings embeddings(const torch::Tensor& values, std::vector<bool> present) {
  return {values, std::move(present)};
}

}  // namespace

TEST_SUITE("contrastive") {

TEST_CASE("one key token: every output row is its value projection") {
  ParamInit init(1);
  DistinguishingAttention attn(6, 4, init);
  TokenSequence fp{torch::randn({5, 6})}, fn{torch::randn({1, 6})};
  auto out = distinguishing_attention(fp, fn, attn).tokens;
  CHECK(out.sizes() == fp.tokens.sizes());
  auto v = attn->value->forward(fn.tokens);
  for (int64_t i = 0; i < 5; ++i) CHECK(testutil::max_abs_diff(out[i], v[0]) < 1e-7);
}

TEST_CASE("zeroed value projection gives zero output") {
  ParamInit init(2);
  DistinguishingAttention attn(6, 4, init);
  {
    torch::NoGradGuard g;
    attn->value->weight.zero_();
    attn->value->bias.zero_();
  }
  auto out = distinguishing_attention({torch::randn({3, 6})}, {torch::randn({4, 6})}, attn).tokens;
  CHECK((out == 0).all().item<bool>());
}

TEST_CASE("3 query tokens against 4 key tokens match the loop oracle") {
  ParamInit init(3);
  DistinguishingAttention attn(5, 3, init);
  TokenSequence fp{torch::randn({3, 5})}, fn{torch::randn({4, 5})};
  auto out = distinguishing_attention(fp, fn, attn).tokens;
  auto expect = oracle::attention(to_matrix(attn->query->forward(fp.tokens)), to_matrix(attn->key->forward(fn.tokens)),
                                  to_matrix(attn->value->forward(fn.tokens)));
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t c = 0; c < 5; ++c) CHECK(out[i][c].item<double>() == doctest::Approx(expect[i][c]).epsilon(1e-5));
  }
}

TEST_CASE("attention rows are convex combinations") {
  ParamInit init(4);
  DistinguishingAttention attn(8, 8, init);
  auto w = attn->weights(torch::randn({6, 8}) * 4, torch::randn({9, 8}) * 4);
  CHECK((w >= 0).all().item<bool>());
  CHECK(testutil::max_abs_diff(w.sum(1), torch::ones({6})) < 1e-6);
}

TEST_CASE("distinguishing_attention errors") {
  ParamInit init(5);
  DistinguishingAttention attn(6, 4, init);
  CHECK(error_of([&] { distinguishing_attention({torch::randn({3, 6})}, {torch::zeros({0, 6})}, attn); }) ==
        ErrorCode::kArgument);
  CHECK(error_of([&] { distinguishing_attention({torch::randn({3, 6})}, {torch::randn({2, 5})}, attn); }) ==
        ErrorCode::kShape);
  CHECK(error_of([&] { distinguishing_attention({torch::randn({3, 5})}, {torch::randn({2, 5})}, attn); }) ==
        ErrorCode::kShape);
}

TEST_CASE("inverse_residual identities") {
  auto p = torch::randn({4, 3});
  CHECK(testutil::bitwise_equal(inverse_residual({p}, {torch::zeros({4, 3})}).tokens, p));
  CHECK((inverse_residual({p}, {p}).tokens == 0).all().item<bool>());
  auto a = torch::randn({4, 3});
  auto out = inverse_residual({p}, {a}).tokens;
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t c = 0; c < 3; ++c) CHECK(out[i][c].item<float>() == p[i][c].item<float>() - a[i][c].item<float>());
  }
  CHECK(error_of([&] { inverse_residual({p}, {torch::randn({3, 3})}); }) == ErrorCode::kShape);
}

TEST_CASE("refine subtracts attention over the concatenated irrelevant tokens") {
  ParamInit init(6);
  DistinguishingAttention attn(4, 4, init);
  IntentPartition part;
  part.required = torch::randn({2, 2, 4});
  part.irrelevant = torch::randn({3, 2, 2, 4});
  part.irrelevant_classes = {0, 1, 3};
  part.target_class = 2;
  auto r = refine(part, attn);
  auto fp = to_tokens(part.required);
  TokenSequence fn{part.irrelevant.reshape({12, 4})};
  auto expect = inverse_residual(fp, distinguishing_attention(fp, fn, attn)).tokens;
  CHECK(testutil::max_abs_diff(r.required_refined.tokens, expect) < 1e-6);
  CHECK(r.irrelevant_refined.sizes() == torch::IntArrayRef({3, 4, 4}));
  for (int64_t j = 0; j < 3; ++j) {
    TokenSequence nj{part.irrelevant[j].reshape({4, 4})};
    auto nj_star = inverse_residual(nj, distinguishing_attention(nj, fp, attn)).tokens;
    CHECK(testutil::max_abs_diff(r.irrelevant_refined[j], nj_star) < 1e-6);
  }
}

TEST_CASE("refine with one class keeps P unchanged") {
  ParamInit init(7);
  DistinguishingAttention attn(4, 4, init);
  IntentPartition part;
  part.required = torch::randn({2, 2, 4});
  part.irrelevant = torch::zeros({0, 2, 2, 4});
  auto r = refine(part, attn);
  CHECK(testutil::bitwise_equal(r.required_refined.tokens, part.required.reshape({4, 4})));
  CHECK(r.irrelevant_refined.size(0) == 0);
}

TEST_CASE("pool_gt_features: one cell, full image, two cells, absent class") {
  ImageFeatureMap f{torch::randn({8, 8, 5}), 64, 64};
  auto masks = torch::zeros({4, 64, 64}, torch::kUInt8);
  masks[0].slice(0, 16, 24).slice(1, 40, 48).fill_(1);  // exactly cell (2, 5)
  masks[1].fill_(1);
  masks[2][3][3] = 1;   // one pixel in cell (0, 0)
  masks[2][60][9] = 1;  // one pixel in cell (7, 1)
  auto pooled = pool_gt_features(f, masks);
  CHECK(pooled.present == std::vector<bool>{true, true, true, false});
  CHECK(testutil::max_abs_diff(pooled.values[0], f.values[2][5]) < 1e-6);
  CHECK(testutil::max_abs_diff(pooled.values[1], f.values.mean({0, 1})) < 1e-6);
  CHECK(testutil::max_abs_diff(pooled.values[2], (f.values[0][0] + f.values[7][1]) / 2) < 1e-6);
}

TEST_CASE("pool_gt_features rejects non-binary and misaligned masks") {
  ImageFeatureMap f{torch::randn({8, 8, 5}), 64, 64};
  auto masks = torch::zeros({2, 64, 64}, torch::kUInt8);
  masks[1][0][0] = 2;
  CHECK(error_of([&] { pool_gt_features(f, masks); }) == ErrorCode::kValidation);
  CHECK(error_of([&] { pool_gt_features(f, torch::zeros({2, 60, 64})); }) == ErrorCode::kShape);
}

TEST_CASE("equal logits give ln of the number of present classes") {
  auto p = torch::zeros({4}, torch::kFloat64);
  auto all7 = embeddings(torch::randn({7, 4}, torch::kFloat64), std::vector<bool>(7, true));
  CHECK(contrastive_loss(p, all7, 3, 0.07)->item<double>() == doctest::Approx(std::log(7.0)).epsilon(1e-9));
  CHECK(std::abs(contrastive_loss(p, all7, 3, 0.07)->item<double>() - 1.945910) < 1e-6);
  auto two = embeddings(torch::randn({7, 4}, torch::kFloat64), {false, true, false, false, true, false, false});
  CHECK(std::abs(contrastive_loss(p, two, 4, 0.07)->item<double>() - std::log(2.0)) < 1e-6);
}

TEST_CASE("equal logits via identical embeddings and a nonzero anchor") {
  auto row = torch::randn({4}, torch::kFloat64);
  auto v = embeddings(row.expand({7, 4}).clone(), std::vector<bool>(7, true));
  CHECK(std::abs(contrastive_loss(torch::randn({4}, torch::kFloat64), v, 0, 0.5)->item<double>() - std::log(7.0)) <
        1e-6);
}

TEST_CASE("contrastive loss falls toward 0 as the target margin grows") {
  auto v = embeddings(torch::eye(3, torch::kFloat64), {true, true, true});
  double previous = INFINITY;
  for (double m : {0.0, 0.1, 0.5, 1.0, 2.0, 3.0}) {
    auto p = torch::tensor({m, 0.0, 0.0}, torch::kFloat64);
    const double loss = contrastive_loss(p, v, 0, 0.07)->item<double>();
    CHECK(loss >= 0.0);
    CHECK(loss < previous);
    previous = loss;
  }
  // Past a margin of ~10 the loss rounds to exactly 0 in double.
  const double far = contrastive_loss(torch::tensor({100.0, 0.0, 0.0}, torch::kFloat64), v, 0, 0.07)->item<double>();
  CHECK(far >= 0.0);
  CHECK(far < 1e-12);
}

TEST_CASE("contrastive loss is finite for huge logits") {
  auto v = embeddings(torch::randn({5, 3}, torch::kFloat64) * 1e4, std::vector<bool>(5, true));
  auto loss = contrastive_loss(torch::randn({3}, torch::kFloat64), v, 1, 0.07);
  CHECK(std::isfinite(loss->item<double>()));
  CHECK(loss->item<double>() >= 0.0);
}

TEST_CASE("absent target is skipped; invalid tau is rejected") {
  auto v = embeddings(torch::randn({3, 2}), {true, false, true});
  CHECK_FALSE(contrastive_loss(torch::randn({2}), v, 1, 0.07).has_value());
  CHECK(error_of([&] { contrastive_loss(torch::randn({2}), v, 0, 0.0); }) == ErrorCode::kArgument);
  CHECK(error_of([&] { contrastive_loss(torch::randn({2}), v, 0, -1.0); }) == ErrorCode::kArgument);
  CHECK(error_of([&] { contrastive_loss(torch::randn({2}), v, 3, 0.07); }) == ErrorCode::kArgument);
}

TEST_CASE("batched contrastive loss flags absent targets and matches the single form") {
  auto values = torch::randn({2, 4, 3}, torch::kFloat64);
  auto present = torch::tensor({true, true, false, true, false, true, true, true}).reshape({2, 4});
  auto pooled = torch::randn({2, 3}, torch::kFloat64);
  auto [loss, valid] = batched_contrastive_loss(pooled, values, present, torch::tensor({1, 0}), 0.1);
  CHECK(valid[0].item<bool>());
  CHECK_FALSE(valid[1].item<bool>());
  CHECK(std::isfinite(loss[1].item<double>()));
  auto single = contrastive_loss(pooled[0], embeddings(values[0], {true, true, false, true}), 1, 0.1);
  CHECK(loss[0].item<double>() == doctest::Approx(single->item<double>()).epsilon(1e-12));
}

TEST_CASE("emit_prompts counts: K = 7 and K = 1") {
  ParamInit init(8);
  Linear proj(6, 6, init);
  RefinedFeatures seven{{torch::randn({4, 6})}, torch::randn({6, 4, 6})};
  auto pp = emit_prompts(seven, proj);
  CHECK(pp.foreground.sizes() == torch::IntArrayRef({1, 6}));
  CHECK(pp.background.sizes() == torch::IntArrayRef({6, 6}));
  RefinedFeatures one{{torch::randn({4, 6})}, torch::zeros({0, 4, 6})};
  auto p1 = emit_prompts(one, proj);
  CHECK(p1.foreground.size(0) == 1);
  CHECK(p1.background.size(0) == 0);
}

TEST_CASE("identity projection of a single-token P* returns that token") {
  ParamInit init(9);
  Linear proj(5, 5, init);
  {
    torch::NoGradGuard g;
    proj->weight.copy_(torch::eye(5));
    proj->bias.zero_();
  }
  auto token = torch::randn({1, 5});
  auto pp = emit_prompts({{token}, torch::randn({2, 1, 5})}, proj);
  CHECK(testutil::max_abs_diff(pp.foreground, token) < 1e-7);
  CHECK(testutil::max_abs_diff(pp.background[1], torch::zeros({5})) > 0);
}

TEST_CASE("background prompts pool each class separately") {
  ParamInit init(10);
  Linear proj(3, 2, init);
  auto n = torch::randn({2, 4, 3});
  auto pp = emit_prompts({{torch::randn({4, 3})}, n}, proj);
  for (int64_t j = 0; j < 2; ++j) {
    CHECK(testutil::max_abs_diff(pp.background[j], proj->forward(n[j].mean(0))) < 1e-6);
  }
}

}  // TEST_SUITE
