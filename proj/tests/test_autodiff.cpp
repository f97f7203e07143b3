#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "udalm/rng.hpp"
#include "udalm/tape.hpp"
#include "udalm/tensor.hpp"

using udalm::Rng;
using udalm::Tensor;
using udalm::ad::Tape;
using udalm::ad::Value;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(r, c);
  for (double& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

// keeps relu/gelu inputs away from the kink so central differences are clean
Tensor random_tensor_away_from_zero(int r, int c, Rng& rng) {
  Tensor t = random_tensor(r, c, rng);
  for (double& x : t.v)
    if (std::abs(x) < 1e-2) x = x < 0 ? x - 1e-2 : x + 1e-2;
  return t;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

// Central finite differences against the analytic gradient of a scalar
// produced by `build` from the given inputs. Inputs are edited in place for
// the perturbed evaluations.
double max_grad_rel_err(std::vector<Tensor>& inputs,
                        const std::function<Value(Tape&, std::vector<Value>&)>& build) {
  constexpr double kEps = 1e-5;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Value> vals;
    for (auto& t : inputs) vals.push_back(tape.input(t, true));
    Value loss = build(tape, vals);
    tape.backward(loss);
    for (auto& v : vals) analytic.push_back(tape.grad(v));
  }
  auto eval = [&]() {
    Tape tape;
    std::vector<Value> vals;
    for (auto& t : inputs) vals.push_back(tape.input(t, false));
    return tape.value(build(tape, vals)).v[0];
  };
  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    for (std::size_t i = 0; i < inputs[ti].size(); ++i) {
      double keep = inputs[ti].v[i];
      inputs[ti].v[i] = keep + kEps;
      double up = eval();
      inputs[ti].v[i] = keep - kEps;
      double down = eval();
      inputs[ti].v[i] = keep;
      double fd = (up - down) / (2.0 * kEps);
      worst = std::max(worst, rel_err(analytic[ti].v[i], fd));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul identity") {
  Rng rng(1);
  Tensor a = random_tensor(3, 3, rng);
  Tensor eye(3, 3);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tape tape;
  Value out = tape.matmul(tape.input(eye), tape.input(a));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(tape.value(out).v[i] == a.v[i]);
}

TEST_CASE("softmax rows are normalized positives") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(4, 7, rng, -30.0, 30.0);
    Tape tape;
    const Tensor& s = tape.value(tape.softmax_rows(tape.input(x)));
    for (int i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 7; ++j) {
        CHECK(s.at(i, j) > 0.0);
        sum += s.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("layer_norm rows have mean 0 and unit variance before affine") {
  Rng rng(3);
  Tensor x = random_tensor(6, 32, rng);
  Tape tape;
  const Tensor& y = tape.value(tape.layer_norm(tape.input(x)));
  for (int i = 0; i < 6; ++i) {
    double mean = 0.0;
    for (int j = 0; j < 32; ++j) mean += y.at(i, j);
    mean /= 32;
    CHECK(std::abs(mean) <= 1e-9);
    double var = 0.0;
    for (int j = 0; j < 32; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 32;
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }
}

TEST_CASE("gelu fixed points") {
  Tape tape;
  Tensor x(1, 3, {0.0, 10.0, -10.0});
  const Tensor& y = tape.value(tape.gelu(tape.input(x)));
  CHECK(y.v[0] == 0.0);
  CHECK(y.v[1] == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(y.v[2]) < 1e-9);
}

TEST_CASE("cross_entropy ignores the ignore index") {
  Rng rng(4);
  Tensor logits = random_tensor(3, 5, rng);
  Tape tape;
  Value in = tape.input(logits);
  double with_ignored = tape.value(tape.cross_entropy(in, {2, -100, 4}, -100)).v[0];
  Tape tape2;
  Tensor two_rows(2, 5);
  for (int j = 0; j < 5; ++j) {
    two_rows.at(0, j) = logits.at(0, j);
    two_rows.at(1, j) = logits.at(2, j);
  }
  double without = tape2.value(tape2.cross_entropy(tape2.input(two_rows), {2, 4}, -100)).v[0];
  CHECK(with_ignored == doctest::Approx(without).epsilon(1e-15));

  Tape tape3;
  double all_ignored =
      tape3.value(tape3.cross_entropy(tape3.input(logits), {-100, -100, -100}, -100)).v[0];
  CHECK(all_ignored == 0.0);
}

TEST_CASE("backward of sum is ones; scaling by zero gives zeros") {
  Rng rng(5);
  Tensor x = random_tensor(3, 4, rng);
  {
    Tape tape;
    Value in = tape.input(x, true);
    Value loss = tape.sum_all(in);
    tape.backward(loss);
    for (double g : tape.grad(in).v) CHECK(g == 1.0);
  }
  {
    Tape tape;
    Value in = tape.input(x, true);
    Value loss = tape.sum_all(tape.scale(in, 0.0));
    tape.backward(loss);
    for (double g : tape.grad(in).v) CHECK(g == 0.0);
  }
}

TEST_CASE("fan-out accumulates additively: d(x+x)/dx == 2 exactly") {
  Rng rng(6);
  Tensor x = random_tensor(2, 3, rng);
  Tape tape;
  Value in = tape.input(x, true);
  Value loss = tape.sum_all(tape.add(in, in));
  tape.backward(loss);
  for (double g : tape.grad(in).v) CHECK(g == 2.0);
}

TEST_CASE("grad_reverse forward identity, backward exact -lambda scaling") {
  Tensor x(1, 2, {1.0, 2.0});
  {
    Tape tape;
    Value out = tape.grad_reverse(tape.input(x), 0.01);
    CHECK(tape.value(out).v[0] == 1.0);
    CHECK(tape.value(out).v[1] == 2.0);
  }
  for (double lambda : {0.0, 0.01, 0.1, 1.0}) {
    Rng rng(7);
    Tensor g = random_tensor(1, 6, rng);
    Tape tape;
    Value in = tape.input(g, true);
    // sum(grad_reverse(x)) has upstream gradient of exactly 1 per element
    Value loss = tape.sum_all(tape.grad_reverse(in, lambda));
    tape.backward(loss);
    for (double gv : tape.grad(in).v) CHECK(gv == -lambda * 1.0);
  }
  // upstream [1,1] at lambda 0.01 -> [-0.01,-0.01]
  Tape tape;
  Value in = tape.input(Tensor(1, 2, {5.0, -3.0}), true);
  tape.backward(tape.sum_all(tape.grad_reverse(in, 0.01)));
  CHECK(tape.grad(in).v[0] == -0.01);
  CHECK(tape.grad(in).v[1] == -0.01);
  CHECK_THROWS(tape.grad_reverse(in, -0.5));
}

TEST_CASE("non-scalar loss rejected; shape mismatch names the nodes") {
  Tape tape;
  Value a = tape.input(Tensor(2, 3));
  CHECK_THROWS_AS(tape.backward(a), udalm::ShapeError);
  Value b = tape.input(Tensor(4, 2));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("matmul"), udalm::ShapeError);
}

TEST_CASE("per-op gradients match central finite differences") {
  Rng rng(42);
  constexpr double kTol = 1e-4;
  constexpr int kTrials = 20;

  // fixed random projection makes every output element matter in the scalar
  auto make_weights = [&](int r, int c) { return random_tensor(r, c, rng, -1.0, 1.0); };
  auto scalarize = [](Tape& tape, Value x, const Tensor& w) {
    Value wv = tape.input(w, false);
    return tape.sum_all(tape.matmul_nt(x, wv));
  };
  auto check_op = [&](std::vector<Tensor> in, int out_r, int out_c,
                      const std::function<Value(Tape&, std::vector<Value>&)>& op) {
    Tensor w = make_weights(out_r, out_c);
    double err = max_grad_rel_err(in, [&](Tape& t, std::vector<Value>& v) {
      return scalarize(t, op(t, v), w);
    });
    CHECK(err < kTol);
  };

  for (int trial = 0; trial < kTrials; ++trial) {
    check_op({random_tensor(3, 4, rng), random_tensor(4, 5, rng)}, 3, 5,
             [](Tape& t, std::vector<Value>& v) { return t.matmul(v[0], v[1]); });
    check_op({random_tensor(3, 4, rng), random_tensor(5, 4, rng)}, 3, 5,
             [](Tape& t, std::vector<Value>& v) { return t.matmul_nt(v[0], v[1]); });
    check_op({random_tensor(3, 4, rng), random_tensor(3, 4, rng)}, 3, 4,
             [](Tape& t, std::vector<Value>& v) { return t.add(v[0], v[1]); });
    check_op({random_tensor(3, 4, rng), random_tensor(1, 4, rng)}, 3, 4,
             [](Tape& t, std::vector<Value>& v) { return t.add_rowvec(v[0], v[1]); });
    check_op({random_tensor(3, 4, rng), random_tensor(1, 4, rng)}, 3, 4,
             [](Tape& t, std::vector<Value>& v) { return t.mul_rowvec(v[0], v[1]); });
    check_op({random_tensor_away_from_zero(3, 4, rng)}, 3, 4,
             [](Tape& t, std::vector<Value>& v) { return t.relu(v[0]); });
    check_op({random_tensor_away_from_zero(3, 4, rng)}, 3, 4,
             [](Tape& t, std::vector<Value>& v) { return t.gelu(v[0]); });
    check_op({random_tensor(3, 8, rng)}, 3, 8,
             [](Tape& t, std::vector<Value>& v) { return t.layer_norm(v[0]); });
    check_op({random_tensor(3, 6, rng)}, 3, 6,
             [](Tape& t, std::vector<Value>& v) { return t.softmax_rows(v[0]); });
    {
      std::vector<Tensor> in = {random_tensor(4, 6, rng)};
      std::vector<int> targets = {1, -100, 5, 0};
      double err = max_grad_rel_err(in, [&](Tape& t, std::vector<Value>& v) {
        return t.cross_entropy(v[0], targets, -100);
      });
      CHECK(err < kTol);
    }
    // one-hot scatter of the gather op, checked through the table gradient
    check_op({random_tensor(7, 5, rng)}, 5, 5, [](Tape& t, std::vector<Value>& v) {
      return t.embedding_gather(v[0], {0, 3, 3, 6, 1});
    });
    check_op({random_tensor(5, 4, rng)}, 4, 4, [](Tape& t, std::vector<Value>& v) {
      return t.select_rows(v[0], {0, 2, 2, 4});
    });
    check_op({random_tensor(3, 8, rng)}, 3, 4,
             [](Tape& t, std::vector<Value>& v) { return t.slice_cols(v[0], 2, 4); });
    check_op({random_tensor(3, 4, rng), random_tensor(3, 2, rng)}, 3, 6,
             [](Tape& t, std::vector<Value>& v) { return t.concat_cols(v[0], v[1]); });
    {
      std::vector<Tensor> in = {random_tensor(3, 4, rng)};
      double err = max_grad_rel_err(in, [&](Tape& t, std::vector<Value>& v) {
        return t.mean_all(v[0]);
      });
      CHECK(err < kTol);
    }
  }
}

TEST_CASE("two-layer MLP with softmax cross-entropy matches finite differences") {
  Rng rng(99);
  std::vector<int> targets = {2, 0, 3};
  std::vector<Tensor> in = {
      random_tensor(3, 6, rng),   // inputs
      random_tensor(6, 8, rng),   // w1
      random_tensor(1, 8, rng),   // b1
      random_tensor(8, 4, rng),   // w2
      random_tensor(1, 4, rng),   // b2
  };
  double err = max_grad_rel_err(in, [&](Tape& t, std::vector<Value>& v) {
    Value h = t.gelu(t.add_rowvec(t.matmul(v[0], v[1]), v[2]));
    Value logits = t.add_rowvec(t.matmul(h, v[3]), v[4]);
    return t.cross_entropy(logits, targets, -100);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("identical seeds give bitwise-identical forwards and gradients") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(4, 6, rng);
    Tensor w = random_tensor(6, 3, rng);
    Tape tape;
    Value xin = tape.input(x, true);
    Value win = tape.input(w, true);
    Value loss = tape.cross_entropy(tape.matmul(xin, tape.layer_norm(win)), {0, 1, 2, 0}, -100);
    tape.backward(loss);
    std::vector<double> out;
    out.push_back(tape.value(loss).v[0]);
    for (double g : tape.grad(xin).v) out.push_back(g);
    for (double g : tape.grad(win).v) out.push_back(g);
    return out;
  };
  auto a = run(123), b = run(123), c = run(124);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("gradient map covers unreached parameters with zeros") {
  Tape tape;
  Tensor used(2, 2, {1.0, 2.0, 3.0, 4.0});
  used.requires_grad = true;
  Tensor unused(2, 2, {1.0, 1.0, 1.0, 1.0});
  unused.requires_grad = true;
  Value u = tape.param(used, "used");
  tape.param(unused, "unused");
  tape.backward(tape.sum_all(u));
  auto grads = tape.gradient_map();
  REQUIRE(grads.count("used") == 1);
  REQUIRE(grads.count("unused") == 1);
  for (double g : grads["used"].v) CHECK(g == 1.0);
  for (double g : grads["unused"].v) CHECK(g == 0.0);
}
