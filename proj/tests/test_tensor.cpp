#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mvsc/grad_check.hpp"
#include "mvsc/rng.hpp"
#include "mvsc/tensor.hpp"

using namespace mvsc;

namespace {

// Independent triple-loop reference for matmul.
std::vector<double> matmul_ref(const std::vector<double>& a,
                               const std::vector<double>& b, std::size_t m,
                               std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) {
        acc += a[i * k + kk] * b[kk * n + j];
      }
      out[i * n + j] = acc;
    }
  }
  return out;
}

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> data(numel(shape));
  for (double& v : data) v = rng.uniform(-1.0, 1.0);
  return requires_grad ? Tensor::param(std::move(shape), std::move(data))
                       : Tensor::constant(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("matmul identity and zero") {
  Tensor eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::constant({2, 2}, {3.5, -1.25, 2.0, 7.75});
  Tensor b = matmul(eye, a);
  REQUIRE(b.values() == a.values());

  Tensor zero = Tensor::zeros({3, 2});
  Tensor c = matmul(zero, a);
  for (double v : c.values()) REQUIRE(v == 0.0);
}

TEST_CASE("matmul matches triple-loop reference") {
  Rng rng(7);
  Tensor a = random_tensor({5, 4}, rng);
  Tensor b = random_tensor({4, 3}, rng);
  Tensor c = matmul(a, b);
  const std::vector<double> expected =
      matmul_ref(a.values(), b.values(), 5, 4, 3);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    REQUIRE(std::abs(c.values()[i] - expected[i]) < 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner dims") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  REQUIRE_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("softmax basics") {
  Tensor x = Tensor::constant({3}, {0.0, 0.0, 0.0});
  Tensor y = softmax(x, 0);
  for (double v : y.values()) REQUIRE(v == Catch::Approx(1.0 / 3.0));

  Tensor logs = Tensor::constant(
      {3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  Tensor p = softmax(logs, 0);
  REQUIRE(p.values()[0] == Catch::Approx(1.0 / 6.0).epsilon(1e-12));
  REQUIRE(p.values()[1] == Catch::Approx(2.0 / 6.0).epsilon(1e-12));
  REQUIRE(p.values()[2] == Catch::Approx(3.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and row sums") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({4, 6}, rng);
    const double shift = rng.uniform(-50.0, 50.0);
    std::vector<double> shifted = x.values();
    for (double& v : shifted) v += shift;
    Tensor y1 = softmax(x, 1);
    Tensor y2 = softmax(Tensor::constant({4, 6}, shifted), 1);
    for (std::size_t i = 0; i < y1.size(); ++i) {
      REQUIRE(std::abs(y1.values()[i] - y2.values()[i]) < 1e-12);
    }
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 6; ++c) sum += y1.values()[r * 6 + c];
      REQUIRE(std::abs(sum - 1.0) < 1e-9);
      for (std::size_t c = 0; c < 6; ++c) {
        REQUIRE(y1.values()[r * 6 + c] >= 0.0);
      }
    }
  }
}

TEST_CASE("softmax along columns matches transposed rows") {
  Rng rng(13);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor by_cols = softmax(x, 0);
  Tensor by_rows_t = transpose(softmax(transpose(x), 1));
  for (std::size_t i = 0; i < x.size(); ++i) {
    REQUIRE(by_cols.values()[i] == Catch::Approx(by_rows_t.values()[i]));
  }
}

TEST_CASE("conv2d sums each block with an all-ones kernel") {
  // 4x4 single-channel input, stride 2: each output is the sum of its
  // 2x2 block (sliding-window oracle, computed by hand below).
  std::vector<double> img(16);
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i + 1);
  Tensor x = Tensor::constant({1, 4, 4}, img);
  Tensor w = Tensor::constant({1, 1, 2, 2}, {1, 1, 1, 1});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 2);
  REQUIRE(y.shape() == Shape{1, 2, 2});
  auto block_sum = [&](std::size_t gy, std::size_t gx) {
    double s = 0.0;
    for (std::size_t ky = 0; ky < 2; ++ky) {
      for (std::size_t kx = 0; kx < 2; ++kx) {
        s += img[(gy * 2 + ky) * 4 + gx * 2 + kx];
      }
    }
    return s;
  };
  for (std::size_t gy = 0; gy < 2; ++gy) {
    for (std::size_t gx = 0; gx < 2; ++gx) {
      REQUIRE(y.values()[gy * 2 + gx] == block_sum(gy, gx));
    }
  }
}

TEST_CASE("conv2d one-hot kernel picks the block corner") {
  Rng rng(3);
  Tensor x = random_tensor({2, 6, 6}, rng);
  std::vector<double> w(1 * 2 * 3 * 3, 0.0);
  w[0] = 1.0;  // channel 0, kernel position (0, 0)
  Tensor weight = Tensor::constant({1, 2, 3, 3}, w);
  Tensor y = conv2d(x, weight, Tensor::zeros({1}), 3);
  for (std::size_t gy = 0; gy < 2; ++gy) {
    for (std::size_t gx = 0; gx < 2; ++gx) {
      REQUIRE(y.values()[gy * 2 + gx] ==
              x.values()[(0 * 6 + gy * 3) * 6 + gx * 3]);
    }
  }
}

TEST_CASE("conv2d averaging kernel preserves a constant input") {
  const double c = 0.37;
  Tensor x = Tensor::full({3, 8, 8}, c);
  const std::size_t s = 4;
  Tensor w = Tensor::full({2, 3, s, s}, 1.0 / (s * s * 3.0));
  Tensor y = conv2d(x, w, Tensor::zeros({2}), s);
  for (double v : y.values()) REQUIRE(v == Catch::Approx(c).epsilon(1e-12));
}

TEST_CASE("conv2d rejects non-divisible spatial dims") {
  Tensor x = Tensor::zeros({1, 5, 4});
  Tensor w = Tensor::zeros({1, 1, 2, 2});
  REQUIRE_THROWS_AS(conv2d(x, w, Tensor::zeros({1}), 2), ShapeError);
}

TEST_CASE("conv_transpose2d writes one block per token") {
  Tensor z = Tensor::constant({1, 1, 1}, {2.5});
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = conv_transpose2d(z, w, Tensor::zeros({1}), 3);
  REQUIRE(y.shape() == Shape{1, 3, 3});
  for (double v : y.values()) REQUIRE(v == 2.5);

  Tensor zero = Tensor::zeros({2, 2, 2});
  Tensor w2 = Tensor::full({2, 1, 2, 2}, 0.7);
  Tensor y2 = conv_transpose2d(zero, w2, Tensor::zeros({1}), 2);
  for (double v : y2.values()) REQUIRE(v == 0.0);
}

TEST_CASE("conv_transpose2d perturbation stays in its block") {
  Rng rng(5);
  Tensor w = random_tensor({2, 3, 4, 4}, rng);
  Tensor b = random_tensor({3}, rng);
  std::vector<double> base(2 * 2 * 2);
  for (double& v : base) v = rng.uniform(-1.0, 1.0);
  Tensor y0 = conv_transpose2d(Tensor::constant({2, 2, 2}, base),
                               w, b, 4);
  // Perturb token (gy, gx) = (1, 0) on channel 1.
  std::vector<double> bumped = base;
  bumped[(1 * 2 + 1) * 2 + 0] += 1.0;
  Tensor y1 = conv_transpose2d(Tensor::constant({2, 2, 2}, bumped), w, b, 4);
  const std::size_t h = 8, wdt = 8, s = 4;
  for (std::size_t co = 0; co < 3; ++co) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < wdt; ++j) {
        const double d = std::abs(y1.values()[(co * h + i) * wdt + j] -
                                  y0.values()[(co * h + i) * wdt + j]);
        const bool inside = (i / s == 1) && (j / s == 0);
        if (inside) {
          REQUIRE(d > 0.0);
        } else {
          REQUIRE(d == 0.0);
        }
      }
    }
  }
}

TEST_CASE("backward product rule") {
  Tensor x = Tensor::param({1}, {2.0});
  Tensor y = Tensor::param({1}, {3.0});
  Tensor loss = mul(x, y);
  backward(loss);
  REQUIRE(x.grad()[0] == 3.0);
  REQUIRE(y.grad()[0] == 2.0);
}

TEST_CASE("softmax cross-entropy gradient is probabilities minus one-hot") {
  Tensor logits = Tensor::param({1, 4}, {0.2, -1.3, 0.7, 0.1});
  Tensor loss = cross_entropy_mean(logits, {2});
  backward(loss);
  Tensor probs = softmax(Tensor::constant({4}, logits.values()), 0);
  for (std::size_t c = 0; c < 4; ++c) {
    const double expected = probs.values()[c] - (c == 2 ? 1.0 : 0.0);
    REQUIRE(logits.grad()[c] == Catch::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::param({2}, {1.0, 2.0});
  REQUIRE_THROWS_AS(backward(x), ContractError);
}

TEST_CASE("composite graph matches finite differences") {
  Rng rng(17);
  Tensor a = random_tensor({3, 3}, rng, true);
  Tensor b = random_tensor({3, 3}, rng, true);
  Tensor v = random_tensor({3}, rng, true);
  Tensor probe = random_tensor({3, 3}, rng);  // breaks row-sum invariance
  // Four ops deep: matmul -> gelu -> row shift -> softmax -> weighted sum.
  auto f = [&] {
    return sum_all(
        mul(softmax(add_rowvec(gelu(matmul(a, b)), v), 1), probe));
  };
  REQUIRE(grad_check(f, {a, b, v}, 1e-5) < 1e-4);
}

TEST_CASE("grad_check is near-exact for linear maps") {
  Rng rng(19);
  Tensor w = random_tensor({4, 2}, rng, true);
  Tensor x = random_tensor({1, 4}, rng);
  auto f = [&] { return sum_all(matmul(x, w)); };
  REQUIRE(grad_check(f, {w}, 1e-4) < 1e-10);
}

TEST_CASE("grad_check of a constant function is zero") {
  Tensor x = Tensor::param({3}, {1.0, 2.0, 3.0});
  auto f = [&] { return Tensor::scalar(42.0); };
  REQUIRE(grad_check(f, {x}, 1e-5) == 0.0);
}

TEST_CASE("every differentiable op passes randomized gradient checks") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const std::size_t r = 2 + seed % 3;
    const std::size_t c = 2 + (seed / 2) % 3;

    SECTION("seed " + std::to_string(seed)) {
      Tensor a = random_tensor({r, c}, rng, true);
      Tensor b = random_tensor({c, r}, rng, true);
      Tensor v = random_tensor({c}, rng, true);
      Tensor g = random_tensor({c}, rng, true);

      Tensor probe = random_tensor({r, c}, rng);
      REQUIRE(grad_check([&] { return sum_all(matmul(a, b)); }, {a, b}) <
              1e-4);
      REQUIRE(grad_check([&] { return sum_all(mul(softmax(a, 1), probe)); },
                         {a}) < 1e-4);
      REQUIRE(grad_check([&] { return sum_all(gelu(a)); }, {a}) < 1e-4);
      REQUIRE(grad_check([&] { return sum_all(mul(a, a)); }, {a}) < 1e-4);
      REQUIRE(grad_check([&] { return sum_all(add_rowvec(a, v)); }, {a, v}) <
              1e-4);
      REQUIRE(grad_check([&] { return sum_all(mul_rowvec(a, v)); }, {a, v}) <
              1e-4);
      REQUIRE(grad_check([&] { return sum_all(layer_norm(a, g, v)); },
                         {a, g, v}) < 1e-4);
      REQUIRE(grad_check(
                  [&] { return sum_all(gather_rows(a, {0, r - 1, 0})); },
                  {a}) < 1e-4);
      REQUIRE(grad_check([&] { return sum_all(slice_cols(a, 0, c - 1)); },
                         {a}) < 1e-4);
      REQUIRE(grad_check(
                  [&] { return sum_all(concat_rows({a, transpose(b)})); },
                  {a, b}) < 1e-4);
      REQUIRE(grad_check([&] { return mean_all(transpose(a)); }, {a}) < 1e-4);
      REQUIRE(grad_check(
                  [&] { return sum_all(reshape(a, {a.size()})); }, {a}) <
              1e-4);

      Tensor s = Tensor::param({1}, {rng.uniform(-1.0, 1.0)});
      REQUIRE(grad_check([&] { return sum_all(scale_by(a, s)); }, {a, s}) <
              1e-4);

      Tensor img = random_tensor({2, 4, 4}, rng, true);
      Tensor cw = random_tensor({3, 2, 2, 2}, rng, true);
      Tensor cb = random_tensor({3}, rng, true);
      REQUIRE(grad_check([&] { return sum_all(conv2d(img, cw, cb, 2)); },
                         {img, cw, cb}) < 1e-4);

      Tensor tok = random_tensor({3, 2, 2}, rng, true);
      Tensor tw = random_tensor({3, 2, 2, 2}, rng, true);
      Tensor tb = random_tensor({2}, rng, true);
      REQUIRE(grad_check(
                  [&] { return sum_all(conv_transpose2d(tok, tw, tb, 2)); },
                  {tok, tw, tb}) < 1e-4);

      Tensor logits = random_tensor({r, 3}, rng, true);
      std::vector<std::size_t> labels(r);
      for (std::size_t i = 0; i < r; ++i) labels[i] = i % 3;
      REQUIRE(grad_check([&] { return cross_entropy_mean(logits, labels); },
                         {logits}) < 1e-4);

      Tensor bn_in = random_tensor({4, c}, rng, true);
      Tensor bn_g = random_tensor({c}, rng, true);
      Tensor bn_b = random_tensor({c}, rng, true);
      Tensor bn_probe = random_tensor({4, c}, rng);
      std::vector<double> rm(c, 0.0), rv(c, 1.0);
      REQUIRE(grad_check(
                  [&] {
                    std::vector<double> m = rm, va = rv;
                    return sum_all(mul(
                        batch_norm_train(bn_in, bn_g, bn_b, m, va), bn_probe));
                  },
                  {bn_in, bn_g, bn_b}) < 1e-4);
      REQUIRE(grad_check(
                  [&] {
                    return sum_all(batch_norm_eval(bn_in, bn_g, bn_b, rm, rv));
                  },
                  {bn_in, bn_g, bn_b}) < 1e-4);
    }
  }
}

TEST_CASE("gradients accumulate across fan-out") {
  Tensor x = Tensor::param({1}, {3.0});
  Tensor loss = add(mul(x, x), x);  // x^2 + x, d/dx = 2x + 1
  backward(loss);
  REQUIRE(x.grad()[0] == Catch::Approx(7.0));
}

TEST_CASE("untouched parameters read zero gradient") {
  Tensor used = Tensor::param({1}, {1.0});
  Tensor unused = Tensor::param({2, 2}, {1, 2, 3, 4});
  backward(mul(used, used));
  for (double g : unused.grad()) REQUIRE(g == 0.0);
}

TEST_CASE("topological order visits each node exactly once") {
  Tensor x = Tensor::param({1}, {2.0});
  Tensor y = mul(x, x);
  Tensor z = add(y, y);  // diamond: y feeds z twice
  auto order = topo_order(z);
  std::unordered_set<const detail::Node*> seen;
  for (const auto* n : order) REQUIRE(seen.insert(n).second);
  REQUIRE(seen.count(x.node()) == 1);
  REQUIRE(seen.count(y.node()) == 1);
  REQUIRE(seen.count(z.node()) == 1);
  backward(z);
  REQUIRE(x.grad()[0] == Catch::Approx(8.0));  // d(2x^2)/dx
}

TEST_CASE("gradient shapes match their tensors") {
  Rng rng(23);
  Tensor a = random_tensor({3, 4}, rng, true);
  Tensor b = random_tensor({4, 2}, rng, true);
  backward(sum_all(matmul(a, b)));
  REQUIRE(a.grad().size() == a.size());
  REQUIRE(b.grad().size() == b.size());
}

TEST_CASE("forward evaluation is deterministic and finite") {
  Rng rng1(99), rng2(99);
  Tensor a1 = random_tensor({4, 4}, rng1);
  Tensor a2 = random_tensor({4, 4}, rng2);
  Tensor y1 = softmax(gelu(matmul(a1, a1)), 1);
  Tensor y2 = softmax(gelu(matmul(a2, a2)), 1);
  REQUIRE(y1.values() == y2.values());
  REQUIRE(all_finite(y1));
}

TEST_CASE("mutating a non-leaf tensor is rejected") {
  Tensor x = Tensor::param({1}, {1.0});
  Tensor y = mul(x, x);
  REQUIRE_THROWS_AS(y.mutable_values(), ContractError);
}
