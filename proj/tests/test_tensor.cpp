#include "doctest.h"
#include "gradcheck_suite.hpp"

#include "cbmi/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

using namespace cbmi;
using cbmi::testing::op_grad_checks;

namespace {

Matrix<double> row(std::initializer_list<double> values) {
  Matrix<double> m(1, static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) m(0, i++) = v;
  return m;
}

}  // namespace

TEST_CASE("tensor rank and shape validation") {
  Tensor<double> v({3});
  CHECK(v.rows() == 1);
  CHECK(v.cols() == 3);
  CHECK(v.size() == 3);
  Tensor<double> m({2, 5}, true);
  CHECK(m.grad().rows() == 2);
  CHECK(m.grad().cols() == 5);
  CHECK_THROWS_AS(Tensor<double>(std::vector<Index>{1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<double>(std::vector<Index>{2, 2}, Matrix<double>::Zero(3, 2)), std::invalid_argument);
}

TEST_CASE("softmax examples") {
  Tape<double> tape(false);
  auto p = softmax(tape.constant(row({std::log(1.0), std::log(3.0)}))).value();
  CHECK(p(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  p = softmax(tape.constant(row({0.0, 0.0}))).value();
  CHECK(p(0, 0) == 0.5);
  CHECK(p(0, 1) == 0.5);

  p = softmax(tape.constant(row({1000.0, 1000.0}))).value();
  CHECK(p(0, 0) == 0.5);
  CHECK(p(0, 1) == 0.5);
}

TEST_CASE("softmax rejects non-finite rows and names the row") {
  Tape<double> tape(false);
  Matrix<double> x = Matrix<double>::Zero(3, 2);
  x(2, 1) = std::nan("");
  try {
    softmax(tape.constant(x));
    FAIL("expected an error");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  x(2, 1) = INFINITY;
  CHECK_THROWS_AS(log_softmax(tape.constant(x)), std::domain_error);
}

TEST_CASE("layer_norm examples") {
  Tape<double> tape(false);
  auto ones3 = tape.constant(Matrix<double>::Ones(1, 3));
  auto zeros3 = tape.constant(Matrix<double>::Zero(1, 3));
  auto y = layer_norm(tape.constant(row({1, 1, 1})), ones3, zeros3).value();
  for (Index i = 0; i < 3; ++i) CHECK(y(0, i) == 0.0);

  auto ones2 = tape.constant(Matrix<double>::Ones(1, 2));
  auto zeros2 = tape.constant(Matrix<double>::Zero(1, 2));
  y = layer_norm(tape.constant(row({0, 2})), ones2, zeros2).value();
  CHECK(std::abs(y(0, 0) + 1.0) < 1e-4);
  CHECK(std::abs(y(0, 1) - 1.0) < 1e-4);

  auto bias = tape.constant(row({0.5, -2.0, 3.0}));
  y = layer_norm(tape.constant(row({4, -1, 7})), zeros3, bias).value();
  CHECK(y(0, 0) == 0.5);
  CHECK(y(0, 1) == -2.0);
  CHECK(y(0, 2) == 3.0);
}

TEST_CASE("weighted cross-entropy examples") {
  Tape<double> tape(false);
  auto lp = tape.constant(row({std::log(0.5), std::log(0.5)}));
  const std::vector<TokenId> target{1};
  auto ce = [&](double w) {
    const std::vector<double> weights{w};
    return weighted_cross_entropy(lp, target, weights, 0.0).value()(0, 0);
  };
  CHECK(ce(1.0) == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(ce(0.0) == 0.0);
  CHECK(ce(2.0) == doctest::Approx(1.3863).epsilon(1e-4));
}

TEST_CASE("weighted cross-entropy ignores pad targets and checks shapes") {
  Tape<double> tape(false);
  auto lp = tape.constant(Matrix<double>::Constant(2, 3, std::log(1.0 / 3.0)));
  const std::vector<TokenId> targets{kPadId, 2};
  const std::vector<double> weights{5.0, 1.0};
  CHECK(weighted_cross_entropy(lp, targets, weights, 0.0).value()(0, 0) == doctest::Approx(std::log(3.0)));
  const std::vector<double> short_weights{1.0};
  CHECK_THROWS_AS(weighted_cross_entropy(lp, targets, short_weights, 0.0), std::invalid_argument);
  const std::vector<TokenId> short_targets{1};
  CHECK_THROWS_AS(weighted_cross_entropy(lp, short_targets, weights, 0.0), std::invalid_argument);
  const std::vector<TokenId> bad_targets{1, 3};
  CHECK_THROWS_AS(weighted_cross_entropy(lp, bad_targets, weights, 0.0), std::out_of_range);
}

TEST_CASE("backward of sum gives ones") {
  Tensor<double> x({3}, true);
  x.value() << 0.3, -2.0, 5.0;
  Tape<double> tape;
  tape.backward(sum(tape.leaf(x)));
  CHECK(x.grad() == Matrix<double>::Ones(1, 3));
}

TEST_CASE("backward on a non-scalar throws") {
  Tensor<double> x({3}, true);
  Tape<double> tape;
  CHECK_THROWS_AS(tape.backward(tape.leaf(x)), std::invalid_argument);
}

TEST_CASE("cross-entropy gradient is w * (softmax - onehot)") {
  Tensor<double> logits = Tensor<double>::from_matrix(row({0.2, -1.0, 2.5, 0.7}), true);
  const std::vector<TokenId> target{2};
  const double w = 1.7;
  const std::vector<double> weights{w};
  Tape<double> tape;
  tape.backward(weighted_cross_entropy(log_softmax(tape.leaf(logits)), target, weights, 0.0));
  Matrix<double> expected = softmax_rows(logits.value());
  expected(0, 2) -= 1.0;
  expected *= w;
  CHECK((logits.grad() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("inference tape records no gradients") {
  Tensor<double> x({2, 2}, true);
  x.value().setConstant(1.0);
  Tape<double> tape(false);
  tape.backward(sum(tape.leaf(x)));
  CHECK(x.grad().isZero());
}

TEST_CASE("embedding rejects ids outside the vocabulary") {
  Tape<double> tape(false);
  auto table = tape.constant(Matrix<double>::Zero(4, 2));
  const std::vector<TokenId> ids{1, 4};
  CHECK_THROWS_AS(embedding(table, ids), std::out_of_range);
}

TEST_CASE("dropout with rate zero or without a generator is the identity") {
  Tape<double> tape(false);
  auto x = tape.constant(Matrix<double>::Ones(3, 3));
  Rng rng(1);
  CHECK(dropout(x, 0.0, &rng).id() == x.id());
  CHECK(dropout(x, 0.5, nullptr).id() == x.id());
}

TEST_CASE("attention keeps sentences apart and respects causality") {
  Matrix<double> q = Matrix<double>::Random(5, 4), k = Matrix<double>::Random(5, 4), v = Matrix<double>::Random(5, 4);
  const std::vector<Segment> segs{{0, 2}, {2, 3}};
  Tape<double> tape(false);
  const Matrix<double> base = attention(tape.constant(q), tape.constant(k), tape.constant(v), segs, segs, 2, true).value();
  Matrix<double> v2 = v;
  v2.row(4).setConstant(9.0);
  v2.row(0).setConstant(-3.0);
  const Matrix<double> changed =
      attention(tape.constant(q), tape.constant(k), tape.constant(v2), segs, segs, 2, true).value();
  CHECK(base.row(2) == changed.row(2));
  CHECK(base.row(3) == changed.row(3));
  CHECK(base.row(0) != changed.row(0));
  CHECK(base.row(4) != changed.row(4));
}

TEST_CASE("every op matches central finite differences at 64-bit") {
  for (const auto& [name, result] : op_grad_checks()) {
    INFO(name << " worst relative error " << result.worst);
    CHECK(result.checked > 0);
    CHECK(result.passed == result.checked);
  }
}
