// Copyright 2026 The vggtocc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vggtocc/diff.hpp"
#include "vggtocc/gradcheck.hpp"

using namespace vggtocc;
using namespace vggtocc::diff;

namespace {

// Contracts an op output against fixed random weights so every output entry
// contributes to the checked scalar.
Var contract(const Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Var w = y.graph().constant(oracle::random_tensor(y.shape(), rng));
  return sum(mul(y, w));
}

double check(const TensorFn& fn, std::vector<Tensor> inputs) {
  return grad_check(fn, std::move(inputs)).max_rel_err;
}

}  // namespace

TEST_CASE("linear, activations and layernorm forward") {
  Graph g;
  Var x = g.constant(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var eye = g.constant(Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Var zero = g.constant(Tensor({3}, 0.0));
  CHECK(linear(x, eye, zero).value().vec() == x.value().vec());

  Var z = g.constant(Tensor::scalar(0.0));
  CHECK(sigmoid(z).value()[0] == 0.5);
  CHECK(silu(z).value()[0] == 0.0);
  CHECK(relu(g.constant(Tensor::scalar(-2.0))).value()[0] == 0.0);

  Var c = g.constant(Tensor({1, 8}, 3.25));
  for (double v : layernorm(c).value().vec()) CHECK(v == 0.0);

  CHECK_THROWS_AS(linear(x, g.constant(Tensor({2, 2})), {}), ShapeError);
}

TEST_CASE("softmax values and invariances") {
  Graph g;
  Var a = softmax(g.constant(Tensor::from({2}, {0, 0})), 0);
  CHECK(a.value()[0] == 0.5);
  CHECK(a.value()[1] == 0.5);
  Var b = softmax(g.constant(Tensor::from({2}, {0, -0.23025})), 0);
  CHECK(b.value()[0] == doctest::Approx(0.5573).epsilon(1e-4));
  CHECK(b.value()[1] == doctest::Approx(0.4427).epsilon(1e-4));

  std::mt19937_64 rng(1);
  Tensor logits = oracle::random_tensor({3, 5, 4}, rng, -4, 4);
  Tensor shifted = logits;
  for (double& v : shifted.vec()) v += 17.5;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Var s1 = softmax(g.constant(logits), axis);
    Var s2 = softmax(g.constant(shifted), axis);
    for (std::size_t i = 0; i < s1.size(); ++i) {
      CHECK(std::abs(s1.value()[i] - s2.value()[i]) < 1e-12);
    }
  }
  // Rows along the last axis sum to one.
  Var s = softmax(g.constant(logits), 2);
  for (std::size_t r = 0; r < 15; ++r) {
    double t = 0;
    for (std::size_t j = 0; j < 4; ++j) t += s.value()[r * 4 + j];
    CHECK(std::abs(t - 1.0) < 1e-12);
  }
}

TEST_CASE("bilinear_sample") {
  std::mt19937_64 rng(2);
  Graph g;
  Tensor map = oracle::random_tensor({4, 6, 3}, rng);
  Var m = g.constant(map);
  // Pixel (row 2, col 3) has centre u = 3.5/6, v = 2.5/4.
  Var s = bilinear_sample(m, g.constant(Tensor::from({1, 2}, {3.5 / 6, 2.5 / 4})));
  for (std::size_t c = 0; c < 3; ++c) CHECK(s.value()[c] == map.at({2, 3, c}));

  Var cst = g.constant(Tensor({4, 6, 3}, 2.5));
  Var s2 = bilinear_sample(cst, g.constant(Tensor::from({3, 2}, {0.1, 0.9, -0.3, 1.4, 0.5, 0.5})));
  for (double v : s2.value().vec()) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));

  Tensor uv = oracle::random_tensor({5, 2}, rng, 0.1, 0.9);
  const double err = check(
      [](Graph&, std::span<const Var> in) {
        return contract(bilinear_sample(in[0], in[1]));
      },
      {map, uv});
  CHECK(err < 1e-5);
}

TEST_CASE("trilinear_upsample2") {
  Graph g;
  Var c7 = trilinear_upsample2(g.constant(Tensor({2, 3, 1, 2}, 7.0)));
  CHECK(c7.shape() == Shape{4, 6, 2, 2});
  for (double v : c7.value().vec()) CHECK(v == doctest::Approx(7.0).epsilon(1e-15));

  Var one = trilinear_upsample2(g.constant(Tensor({1, 1, 1, 1}, 4.0)));
  CHECK(one.shape() == Shape{2, 2, 2, 1});
  for (double v : one.value().vec()) CHECK(v == 4.0);

  // Ramp 0, 1, 2 along X: children sit at source coordinates
  // -0.25 (clamped), 0.25, 0.75, 1.25, 1.75, 2.25 (clamped).
  Var ramp = trilinear_upsample2(g.constant(Tensor::from({3, 1, 1, 1}, {0, 1, 2})));
  const double expected[6] = {0.0, 0.25, 0.75, 1.25, 1.75, 2.0};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(ramp.value()[i * 4] == doctest::Approx(expected[i]).epsilon(1e-15));
  }
}

TEST_CASE("dwconv3d") {
  std::mt19937_64 rng(3);
  Graph g;
  Tensor grid = oracle::random_tensor({4, 4, 4, 2}, rng);
  Tensor delta({3, 3, 3, 2}, 0.0);
  delta.at({1, 1, 1, 0}) = delta.at({1, 1, 1, 1}) = 1.0;
  Var id = dwconv3d(g.constant(grid), g.constant(delta));
  CHECK(id.value().vec() == grid.vec());

  Var ones = dwconv3d(g.constant(Tensor({3, 3, 3, 1}, 1.0)),
                      g.constant(Tensor({3, 3, 3, 1}, 1.0)));
  CHECK(ones.value().at({1, 1, 1, 0}) == 27.0);
  CHECK(ones.value().at({0, 0, 0, 0}) == 8.0);

  Tensor kernel = oracle::random_tensor({3, 3, 3, 2}, rng);
  Var y = dwconv3d(g.constant(grid), g.constant(kernel));
  Tensor ref = oracle::naive_dwconv(grid, kernel);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(std::abs(y.value()[i] - ref[i]) < 1e-12);
  }
  // No cross-channel mixing: perturbing channel 0 leaves channel 1 alone.
  Tensor grid2 = grid;
  for (std::size_t v = 0; v < 64; ++v) grid2[v * 2] += 1.0;
  Var y2 = dwconv3d(g.constant(grid2), g.constant(kernel));
  for (std::size_t v = 0; v < 64; ++v) CHECK(y2.value()[v * 2 + 1] == y.value()[v * 2 + 1]);
}

TEST_CASE("elementwise contracts") {
  Graph g;
  Var x = g.input(Tensor::from({3}, {1, 2, 3}));
  Var d = detach(x);
  CHECK(d.value().vec() == x.value().vec());
  Var loss = sum(mul(d, x));
  g.backward(loss);
  // Only the live operand carries gradient: d/dx (stop(x) * x) = stop(x).
  CHECK(x.grad().vec() == std::vector<double>{1, 2, 3});

  CHECK(log(g.constant(Tensor::scalar(1.0))).value()[0] == 0.0);
  Var cat = concat_channels(g.constant(Tensor({2, 3}, 1.0)), g.constant(Tensor({2, 5}, 2.0)));
  CHECK(cat.shape() == Shape{2, 8});

  Var num = g.input(Tensor::from({3}, {1, 2, 0}));
  Var den = g.input(Tensor::from({3}, {4, 1e-12, 0}));
  Var q = guarded_div(num, den);
  CHECK(q.value()[0] == 0.25);
  CHECK(q.value()[1] == 2.0 / kDivEps);
  CHECK(q.value()[2] == 0.0);
  g.backward(sum(q));
  const Tensor gd = den.grad();
  CHECK(gd[0] == -1.0 / 16.0);
  CHECK(gd[1] == 0.0);
}

TEST_CASE("grad_check basics") {
  std::mt19937_64 rng(4);
  Tensor x = oracle::random_tensor({7}, rng);
  auto r = grad_check([](Graph&, std::span<const Var> in) { return sum(mul(in[0], in[0])); },
                      {x});
  CHECK(r.max_rel_err < 1e-9);
  CHECK(r.entries == 7);

  // A detached path: analytic gradient is exactly zero although the value
  // depends on the input.
  Graph g;
  Var xin = g.input(x);
  Var y = sum(mul(detach(xin), detach(xin)));
  CHECK(y.requires_grad() == false);
  Var z = add(y, scale(sum(xin), 0.0));
  g.backward(z);
  const Tensor gx = xin.grad();
  for (double v : gx.vec()) CHECK(v == 0.0);
  Tensor xp = x;
  xp[0] += 1e-3;
  Graph g2;
  Var y2 = sum(mul(detach(g2.input(xp)), detach(g2.input(xp))));
  CHECK(y2.value()[0] != y.value()[0]);
}

TEST_CASE("every op backward matches central differences") {
  std::mt19937_64 rng(5);
  auto R = [&](Shape s, double lo = -1, double hi = 1) {
    return oracle::random_tensor(std::move(s), rng, lo, hi);
  };
  using Ins = std::span<const Var>;
  struct Case {
    const char* name;
    TensorFn fn;
    std::vector<Tensor> inputs;
  };
  std::vector<Case> cases = {
      {"add", [](Graph&, Ins in) { return contract(add(in[0], in[1])); }, {R({3, 4}), R({3, 4})}},
      {"sub", [](Graph&, Ins in) { return contract(sub(in[0], in[1])); }, {R({3, 4}), R({3, 4})}},
      {"mul", [](Graph&, Ins in) { return contract(mul(in[0], in[1])); }, {R({3, 4}), R({3, 4})}},
      {"div", [](Graph&, Ins in) { return contract(div(in[0], in[1])); }, {R({3, 4}), R({3, 4}, 0.5, 2)}},
      {"guarded_div", [](Graph&, Ins in) { return contract(guarded_div(in[0], in[1])); }, {R({3, 4}), R({3, 4}, 0.5, 2)}},
      {"scale", [](Graph&, Ins in) { return contract(scale(add_scalar(in[0], 0.3), -1.7)); }, {R({6})}},
      {"one_minus", [](Graph&, Ins in) { return contract(one_minus(in[0])); }, {R({6})}},
      {"log", [](Graph&, Ins in) { return contract(log(in[0])); }, {R({6}, 0.2, 3)}},
      {"reshape", [](Graph&, Ins in) { return contract(reshape(in[0], {4, 3})); }, {R({3, 4})}},
      {"mean", [](Graph&, Ins in) { return mean(mul(in[0], in[0])); }, {R({3, 4})}},
      {"relu", [](Graph&, Ins in) { return contract(relu(in[0])); }, {R({20})}},
      {"silu", [](Graph&, Ins in) { return contract(silu(in[0])); }, {R({20}, -3, 3)}},
      {"sigmoid", [](Graph&, Ins in) { return contract(sigmoid(in[0])); }, {R({20}, -3, 3)}},
      {"tanh", [](Graph&, Ins in) { return contract(tanh(in[0])); }, {R({20}, -3, 3)}},
      {"linear", [](Graph&, Ins in) { return contract(linear(in[0], in[1], in[2])); },
       {R({2, 3, 4}), R({4, 5}), R({5})}},
      {"grouped_linear", [](Graph&, Ins in) { return contract(grouped_linear(in[0], in[1], in[2])); },
       {R({3, 2, 4}), R({2, 4, 3}), R({6})}},
      {"layernorm", [](Graph&, Ins in) { return contract(layernorm(in[0], in[1], in[2])); },
       {R({4, 6}), R({6}), R({6})}},
      {"softmax0", [](Graph&, Ins in) { return contract(softmax(in[0], 0)); }, {R({3, 4, 2}, -2, 2)}},
      {"softmax1", [](Graph&, Ins in) { return contract(softmax(in[0], 1)); }, {R({3, 4, 2}, -2, 2)}},
      {"softmax2", [](Graph&, Ins in) { return contract(softmax(in[0], 2)); }, {R({3, 4, 2}, -2, 2)}},
      {"concat", [](Graph&, Ins in) { return contract(concat_channels(in[0], in[1])); },
       {R({2, 3, 2}), R({2, 3, 4})}},
      {"mul_broadcast", [](Graph&, Ins in) { return contract(mul_broadcast(in[0], in[1], 3)); },
       {R({2, 4, 3}), R({4})}},
      {"expand_last", [](Graph&, Ins in) { return contract(expand_last(in[0], 5)); }, {R({3, 1})}},
      {"masked_fill",
       [](Graph&, Ins in) {
         const std::uint8_t mask[6] = {1, 0, 1, 1, 0, 1};
         return contract(masked_fill(in[0], mask, -3.0));
       },
       {R({6})}},
      {"bilinear", [](Graph&, Ins in) { return contract(bilinear_sample(in[0], in[1])); },
       {R({5, 4, 3}), R({7, 2}, 0.05, 0.95)}},
      {"deform_aggregate",
       [](Graph&, Ins in) {
         const Var levels[2] = {in[0], in[1]};
         return contract(deform_aggregate(levels, in[2], in[3]));
       },
       {R({5, 6, 3}), R({3, 4, 3}), R({2, 2, 2, 3, 2}, 0.05, 0.95), R({2, 2, 2, 3})}},
      {"trilinear", [](Graph&, Ins in) { return contract(trilinear_upsample2(in[0])); }, {R({2, 3, 2, 2})}},
      {"dwconv3d", [](Graph&, Ins in) { return contract(dwconv3d(in[0], in[1], in[2])); },
       {R({3, 3, 2, 2}), R({3, 3, 3, 2}), R({2})}},
      {"split_children", [](Graph&, Ins in) { return contract(split_children(in[0])); }, {R({2, 1, 1, 16})}},
  };
  for (auto& c : cases) {
    CAPTURE(std::string(c.name));
    const auto r = grad_check(c.fn, c.inputs);
    CAPTURE(r.worst);
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("backward is deterministic across repeated runs") {
  std::mt19937_64 rng(6);
  Tensor map = oracle::random_tensor({6, 5, 4}, rng);
  Tensor uv = oracle::random_tensor({2, 2, 1, 8, 2}, rng, 0, 1);
  Tensor w = oracle::random_tensor({2, 2, 1, 8}, rng);
  auto run = [&]() {
    Graph g;
    Var m = g.input(map);
    Var u = g.input(uv);
    Var wt = g.input(w);
    const Var levels[1] = {m};
    Var y = contract(layernorm(reshape(deform_aggregate(levels, u, wt), {2, 8})));
    g.backward(y);
    return std::make_tuple(m.grad().vec(), u.grad().vec(), wt.grad().vec());
  };
  CHECK(run() == run());
}

TEST_CASE("split_children places parent blocks into children") {
  Graph g;
  Tensor parent({1, 1, 1, 8});
  for (std::size_t i = 0; i < 8; ++i) parent[i] = static_cast<double>(i);
  Var out = split_children(g.constant(parent));
  CHECK(out.shape() == Shape{2, 2, 2, 1});
  for (std::size_t dx = 0; dx < 2; ++dx)
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dz = 0; dz < 2; ++dz)
        CHECK(out.value().at({dx, dy, dz, 0}) == static_cast<double>(dx * 4 + dy * 2 + dz));
}
