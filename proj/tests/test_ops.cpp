/* Copyright 2026 The melvec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cmath>
#include <vector>

#include "doctest.h"
#include "melvec/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace melvec;
using melvec::testing::gradcheck;
using melvec::testing::NamedLeaf;

namespace {

// Weighted scalar readout so gradient checks see non-uniform output grads.
Tensor<double> weighted(const Tensor<double>& t, Rng& rng) {
  auto w = Tensor<double>::randn(t.shape(), rng);
  return sum(mul(t, w));
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TEST_CASE("matmul by identity is the identity") {
  auto eye = Tensor<double>::from_data({3, 3},
                                       {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto v = Tensor<double>::from_data({3, 1}, {2.5, -1.0, 4.0});
  auto out = matmul(eye, v);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out.at(i) == v.at(i));

  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto eye2 = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  auto b = matmul(a, eye2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(b.at(i) == a.at(i));
}

TEST_CASE("matmul names both shapes on mismatch") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul matches the naive oracle") {
  Rng rng(11);
  auto a = Tensor<double>::randn({5, 4}, rng);
  auto b = Tensor<double>::randn({4, 3}, rng);
  auto c = matmul(a, b);
  const auto expect = testing::naive_matmul(
      {a.values().begin(), a.values().end()},
      {b.values().begin(), b.values().end()}, 5, 4, 3);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(c.at(i) == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(12);
  auto a = Tensor<double>::randn({5, 4}, rng);
  auto b = Tensor<double>::randn({4, 3}, rng);
  Rng wrng(13);
  auto report = gradcheck({{"a", a}, {"b", b}},
                          [&] {
                            Rng r(13);
                            return weighted(matmul(a, b), r);
                          });
  CHECK(report.max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// conv1d_grouped
// ---------------------------------------------------------------------------

TEST_CASE("conv1d kernel=1 identity weights pass input through") {
  const std::size_t len = 6, d = 4;
  Rng rng(21);
  auto x = Tensor<double>::randn({len, d}, rng);
  // groups == channels, kernel 1, each filter weight 1: pure identity.
  auto w = Tensor<double>::full({d, 1, 1}, 1.0);
  auto out = conv1d_grouped(x, w, Tensor<double>(), 1, d);
  for (std::size_t i = 0; i < len * d; ++i) CHECK(out.at(i) == x.at(i));
}

TEST_CASE("conv1d zero input yields zero (or bias) output") {
  const std::size_t len = 5, d = 4, k = 3, groups = 2;
  auto x = Tensor<double>::zeros({len, d});
  Rng rng(22);
  auto w = Tensor<double>::randn({d, d / groups, k}, rng);
  auto out = conv1d_grouped(x, w, Tensor<double>(), k, groups);
  for (std::size_t i = 0; i < len * d; ++i) CHECK(out.at(i) == 0.0);

  auto bias = Tensor<double>::from_data({d}, {1.0, -2.0, 0.5, 3.0});
  auto out_b = conv1d_grouped(x, w, bias, k, groups);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      CHECK(out_b.at(t * d + c) == bias.at(c));
    }
  }
}

TEST_CASE("conv1d matches the direct nested-loop oracle") {
  const std::size_t len = 10, d = 4, k = 3, groups = 2;
  Rng rng(23);
  auto x = Tensor<double>::randn({len, d}, rng);
  auto w = Tensor<double>::randn({d, d / groups, k}, rng);
  auto bias = Tensor<double>::randn({d}, rng);
  auto out = conv1d_grouped(x, w, bias, k, groups);
  const auto expect = testing::naive_conv1d_grouped(
      {x.values().begin(), x.values().end()},
      {w.values().begin(), w.values().end()},
      {bias.values().begin(), bias.values().end()}, len, d, k, groups);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(out.at(i) == doctest::Approx(expect[i]).epsilon(1e-13));
  }
}

TEST_CASE("conv1d with an even kernel keeps the output length") {
  const std::size_t len = 9, d = 4, k = 4, groups = 4;
  Rng rng(24);
  auto x = Tensor<double>::randn({len, d}, rng);
  auto w = Tensor<double>::randn({d, 1, k}, rng);
  auto out = conv1d_grouped(x, w, Tensor<double>(), k, groups);
  CHECK(out.rows() == len);
  const auto expect = testing::naive_conv1d_grouped(
      {x.values().begin(), x.values().end()},
      {w.values().begin(), w.values().end()}, {}, len, d, k, groups);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(out.at(i) == doctest::Approx(expect[i]).epsilon(1e-13));
  }
}

TEST_CASE("conv1d rejects indivisible channel grouping") {
  auto x = Tensor<float>::zeros({4, 6});
  auto w = Tensor<float>::zeros({6, 2, 3});
  CHECK_THROWS_AS(conv1d_grouped(x, w, Tensor<float>(), 3, 4), ConfigError);
}

TEST_CASE("conv1d gradient matches finite differences") {
  const std::size_t len = 7, d = 4, k = 3, groups = 2;
  Rng rng(25);
  auto x = Tensor<double>::randn({len, d}, rng);
  auto w = Tensor<double>::randn({d, d / groups, k}, rng);
  auto bias = Tensor<double>::randn({d}, rng);
  auto report =
      gradcheck({{"x", x}, {"w", w}, {"bias", bias}}, [&] {
        Rng r(26);
        return weighted(conv1d_grouped(x, w, bias, k, groups), r);
      });
  CHECK(report.max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

TEST_CASE("layer_norm maps constant rows to zero") {
  auto x = Tensor<double>::full({2, 5}, 3.7);
  auto gain = Tensor<double>::full({5}, 1.0);
  auto bias = Tensor<double>::zeros({5});
  auto out = layer_norm(x, gain, bias, 1e-5);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out.at(i) == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("layer_norm leaves an already-normalized row nearly unchanged") {
  auto x = Tensor<double>::from_data({1, 2}, {1.0, -1.0});
  auto gain = Tensor<double>::full({2}, 1.0);
  auto bias = Tensor<double>::zeros({2});
  auto out = layer_norm(x, gain, bias, 1e-12);
  CHECK(out.at(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(out.at(1) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm output rows have zero mean and unit variance") {
  Rng rng(31);
  auto x = Tensor<double>::randn({4, 8}, rng);
  auto gain = Tensor<double>::full({8}, 1.0);
  auto bias = Tensor<double>::zeros({8});
  auto out = layer_norm(x, gain, bias, 1e-5);
  for (std::size_t i = 0; i < 4; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 8; ++j) mu += out.at(i * 8 + j);
    mu /= 8.0;
    for (std::size_t j = 0; j < 8; ++j) {
      var += (out.at(i * 8 + j) - mu) * (out.at(i * 8 + j) - mu);
    }
    var /= 8.0;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("layer_norm gradient matches finite differences") {
  Rng rng(32);
  auto x = Tensor<double>::randn({3, 6}, rng);
  auto gain = Tensor<double>::rand_uniform({6}, rng, 0.5, 1.5);
  auto bias = Tensor<double>::randn({6}, rng);
  auto report =
      gradcheck({{"x", x}, {"gain", gain}, {"bias", bias}}, [&] {
        Rng r(33);
        return weighted(layer_norm(x, gain, bias, 1e-5), r);
      });
  CHECK(report.max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// gelu
// ---------------------------------------------------------------------------

TEST_CASE("gelu fixed points and asymptotics") {
  auto x = Tensor<double>::from_data({4}, {0.0, 1.0, 10.0, -10.0});
  auto y = gelu(x);
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == doctest::Approx(1.0 * testing::normal_cdf(1.0)).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(0.8413447).epsilon(1e-6));
  CHECK(y.at(2) == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(std::abs(y.at(3)) < 1e-9);
}

TEST_CASE("gelu gradient matches finite differences") {
  Rng rng(41);
  auto x = Tensor<double>::randn({4, 5}, rng);
  auto report = gradcheck({{"x", x}}, [&] {
    Rng r(42);
    return weighted(gelu(x), r);
  });
  CHECK(report.max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// softmax / log_softmax
// ---------------------------------------------------------------------------

TEST_CASE("softmax of uniform logits is uniform") {
  auto x = Tensor<double>::full({7}, 1.234);
  auto y = softmax(x);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(y.at(i) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax survives huge logits via max subtraction") {
  auto x = Tensor<double>::from_data({2}, {1000.0, 1000.0});
  auto y = softmax(x);
  CHECK(y.at(0) == doctest::Approx(0.5));
  CHECK(y.at(1) == doctest::Approx(0.5));
}

TEST_CASE("softmax matches the naive formula in 64-bit") {
  Rng rng(51);
  auto x = Tensor<double>::randn({3, 7}, rng);
  auto y = softmax(x);
  auto ly = log_softmax(x);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> row(7);
    for (std::size_t j = 0; j < 7; ++j) row[j] = x.at(i * 7 + j);
    const auto expect = testing::naive_softmax(row);
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(y.at(i * 7 + j) == doctest::Approx(expect[j]).epsilon(1e-12));
      CHECK(ly.at(i * 7 + j) ==
            doctest::Approx(std::log(expect[j])).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  Rng rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = Tensor<float>::randn({4, 9}, rng, 5.0f);
    auto y = softmax(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        CHECK(y.at(i * 9 + j) >= 0.0f);
        total += y.at(i * 9 + j);
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax and log_softmax gradients match finite differences") {
  Rng rng(53);
  auto x = Tensor<double>::randn({3, 5}, rng);
  auto r1 = gradcheck({{"x", x}}, [&] {
    Rng r(54);
    return weighted(softmax(x), r);
  });
  CHECK(r1.max_rel_err < 1e-6);
  auto x2 = Tensor<double>::randn({3, 5}, rng);
  auto r2 = gradcheck({{"x", x2}}, [&] {
    Rng r(55);
    return weighted(log_softmax(x2), r);
  });
  CHECK(r2.max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// cosine similarity
// ---------------------------------------------------------------------------

TEST_CASE("cosine similarity fixed cases") {
  auto v = Tensor<double>::from_data({3}, {0.3, -1.2, 2.0});
  CHECK(cosine_similarity(v, v).item() == doctest::Approx(1.0).epsilon(1e-12));

  auto e1 = Tensor<double>::from_data({2}, {1.0, 0.0});
  auto e2 = Tensor<double>::from_data({2}, {0.0, 1.0});
  CHECK(cosine_similarity(e1, e2).item() == doctest::Approx(0.0));

  auto a = Tensor<double>::from_data({2}, {1.0, 2.0});
  auto b = Tensor<double>::from_data({2}, {2.0, 4.0});
  CHECK(cosine_similarity(a, b).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cosine similarity at zero vectors is 0 with zero gradient") {
  auto z = Tensor<double>::zeros({3});
  auto b = Tensor<double>::from_data({3}, {1.0, 2.0, 3.0});
  z.set_requires_grad(true);
  auto sim = cosine_similarity(z, b);
  CHECK(sim.item() == 0.0);
  backward(sim);
  for (double g : z.grad()) CHECK(g == 0.0);
}

TEST_CASE("cosine similarity gradient matches finite differences") {
  Rng rng(61);
  auto a = Tensor<double>::randn({6}, rng);
  auto b = Tensor<double>::randn({6}, rng);
  auto report = gradcheck({{"a", a}, {"b", b}},
                          [&] { return cosine_similarity(a, b); });
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("row_cosine agrees with per-row cosine_similarity") {
  Rng rng(62);
  auto a = Tensor<double>::randn({4, 5}, rng);
  auto b = Tensor<double>::randn({4, 5}, rng);
  auto rows = row_cosine(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> ar(a.values().begin() + i * 5,
                           a.values().begin() + (i + 1) * 5);
    std::vector<double> br(b.values().begin() + i * 5,
                           b.values().begin() + (i + 1) * 5);
    CHECK(rows.at(i) ==
          doctest::Approx(testing::naive_cosine(ar, br)).epsilon(1e-12));
  }
  auto report = gradcheck({{"a", a}, {"b", b}}, [&] {
    Rng r(63);
    return weighted(row_cosine(a, b), r);
  });
  CHECK(report.max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

TEST_CASE("take_rows gathers and accumulates gradient on repeats") {
  auto x = Tensor<double>::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  auto out = take_rows(x, {2, 0, 2});
  CHECK(out.at(0) == 5.0);
  CHECK(out.at(2) == 1.0);
  backward(sum(out));
  CHECK(x.grad()[0] == 1.0);  // row 0 used once
  CHECK(x.grad()[4] == 2.0);  // row 2 used twice
  CHECK(x.grad()[2] == 0.0);  // row 1 unused
  CHECK_THROWS_AS(take_rows(x, {3}), ShapeError);
}

TEST_CASE("structural op gradients match finite differences") {
  Rng rng(71);
  auto x = Tensor<double>::randn({5, 4}, rng);
  auto emb = Tensor<double>::randn({4}, rng);
  auto row = Tensor<double>::randn({4}, rng);

  auto r1 = gradcheck({{"x", x}}, [&] {
    Rng r(72);
    return weighted(transpose(slice_rows(slice_cols(x, 1, 3), 1, 3)), r);
  });
  CHECK(r1.max_rel_err < 1e-6);

  auto r2 = gradcheck({{"x", x}, {"emb", emb}}, [&] {
    Rng r(73);
    return weighted(replace_rows(x, {0, 3}, emb), r);
  });
  CHECK(r2.max_rel_err < 1e-6);

  auto r3 = gradcheck({{"x", x}, {"row", row}}, [&] {
    Rng r(74);
    return weighted(prepend_row(row, x), r);
  });
  CHECK(r3.max_rel_err < 1e-6);

  auto r4 = gradcheck({{"x", x}}, [&] {
    Rng r(75);
    auto cols = std::vector<Tensor<double>>{select_col(x, 0), select_col(x, 2)};
    return weighted(stack_cols(cols), r);
  });
  CHECK(r4.max_rel_err < 1e-6);

  auto a = Tensor<double>::randn({3}, rng);
  auto b = Tensor<double>::randn({3}, rng);
  auto r5 = gradcheck({{"a", a}, {"b", b}}, [&] {
    Rng r(76);
    return weighted(stack_rows(std::vector<Tensor<double>>{a, b, a}), r);
  });
  CHECK(r5.max_rel_err < 1e-6);

  auto r6 = gradcheck({{"x", x}}, [&] {
    Rng r(77);
    return weighted(concat_cols(std::vector<Tensor<double>>{x, x}), r);
  });
  CHECK(r6.max_rel_err < 1e-6);

  auto r7 = gradcheck({{"x", x}}, [&] {
    Rng r(78);
    return weighted(take_rows(x, {1, 1, 4, 0}), r);
  });
  CHECK(r7.max_rel_err < 1e-6);

  auto r8 = gradcheck({{"x", x}}, [&] {
    Rng r(79);
    return weighted(select_per_row(x, {3, 0, 1, 2, 1}), r);
  });
  CHECK(r8.max_rel_err < 1e-6);
}

TEST_CASE("replace_rows leaves unmasked rows bitwise untouched") {
  Rng rng(81);
  auto x = Tensor<float>::randn({6, 3}, rng);
  auto emb = Tensor<float>::randn({3}, rng);
  auto out = replace_rows(x, {1, 4}, emb);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t j = 0; j < 3; ++j) {
      const float expect = (t == 1 || t == 4) ? emb.at(j) : x.at(t * 3 + j);
      CHECK(out.at(t * 3 + j) == expect);
    }
  }
}

// ---------------------------------------------------------------------------
// pooling primitives
// ---------------------------------------------------------------------------

TEST_CASE("mean/max/min over valid rows") {
  auto x = Tensor<double>::from_data({3, 1}, {1.0, 3.0, 2.0});
  CHECK(mean_rows(x, 3).at(0) == doctest::Approx(2.0));
  CHECK(max_rows(x, 3).at(0) == 3.0);
  CHECK(min_rows(x, 3).at(0) == 1.0);
  // Restricting valid length excludes later rows.
  CHECK(max_rows(x, 1).at(0) == 1.0);
  CHECK_THROWS_AS(mean_rows(x, 0), ShapeError);
  CHECK_THROWS_AS(mean_rows(x, 4), ShapeError);
}

TEST_CASE("max ties route gradient to the earliest row") {
  auto x = Tensor<double>::from_data({3, 1}, {5.0, 5.0, 1.0});
  x.set_requires_grad(true);
  backward(sum(max_rows(x, 3)));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("pooling gradients match finite differences") {
  Rng rng(82);
  auto x = Tensor<double>::randn({6, 4}, rng);
  auto r1 = gradcheck({{"x", x}}, [&] {
    Rng r(83);
    return weighted(mean_rows(x, 5), r);
  });
  CHECK(r1.max_rel_err < 1e-6);
  auto r2 = gradcheck({{"x", x}}, [&] {
    Rng r(84);
    return weighted(max_rows(x, 5), r);
  });
  CHECK(r2.max_rel_err < 1e-6);
  auto r3 = gradcheck({{"x", x}}, [&] {
    Rng r(85);
    return weighted(min_rows(x, 5), r);
  });
  CHECK(r3.max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// misc ops
// ---------------------------------------------------------------------------

TEST_CASE("xlogx handles zero with zero gradient") {
  auto x = Tensor<double>::from_data({3}, {0.0, 1.0, 0.5});
  x.set_requires_grad(true);
  auto y = xlogx(x);
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(2) == doctest::Approx(0.5 * std::log(0.5)));
  backward(sum(y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("xlogx gradient matches finite differences away from zero") {
  Rng rng(91);
  auto x = Tensor<double>::rand_uniform({8}, rng, 0.05, 1.0);
  auto report = gradcheck({{"x", x}}, [&] {
    Rng r(92);
    return weighted(xlogx(x), r);
  });
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("dropout is identity in eval mode and scales in train mode") {
  Rng rng(93);
  auto x = Tensor<float>::full({100}, 1.0f);
  auto eval_out = dropout(x, 0.5, /*train=*/false, rng);
  CHECK(eval_out.node() == x.node());

  auto train_out = dropout(x, 0.5, /*train=*/true, rng);
  int zeros = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const float v = train_out.at(i);
    CHECK((v == 0.0f || v == 2.0f));
    zeros += v == 0.0f;
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
}

TEST_CASE("time_stack shapes and values") {
  auto x = Tensor<double>::from_data({4, 1}, {1, 2, 3, 4});
  auto out = time_stack(x, 4);
  CHECK(out.shape() == Shape{1, 4});
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == double(i + 1));

  Rng rng(94);
  auto x8 = Tensor<double>::randn({8, 2}, rng);
  CHECK(time_stack(x8, 4).shape() == Shape{2, 8});

  auto x10 = Tensor<double>::randn({10, 2}, rng);
  auto stacked = time_stack(x10, 4);
  CHECK(stacked.shape() == Shape{2, 8});  // two trailing frames dropped
  CHECK(stacked.at(stacked.size() - 1) == x10.at(8 * 2 - 1));

  auto x3 = Tensor<double>::randn({3, 2}, rng);
  CHECK_THROWS_AS(time_stack(x3, 4), ShapeError);
}

TEST_CASE("time_stack gradient matches finite differences") {
  Rng rng(95);
  auto x = Tensor<double>::randn({10, 3}, rng);
  auto report = gradcheck({{"x", x}}, [&] {
    Rng r(96);
    return weighted(time_stack(x, 4), r);
  });
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("add_rowvec and transpose gradients match finite differences") {
  Rng rng(97);
  auto x = Tensor<double>::randn({4, 3}, rng);
  auto b = Tensor<double>::randn({3}, rng);
  auto report = gradcheck({{"x", x}, {"b", b}}, [&] {
    Rng r(98);
    return weighted(transpose(add_rowvec(x, b)), r);
  });
  CHECK(report.max_rel_err < 1e-6);
}
