#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "skelgcn/losses.hpp"
#include "skelgcn/rng.hpp"

using namespace skelgcn;

TEST_CASE("cross entropy anchors") {
  SUBCASE("uniform logits over four classes cost ln 4") {
    const Tensor logits = Tensor::zeros({1, 4});
    const double loss = ops::cross_entropy(logits, {2}).item();
    CHECK(std::abs(loss - std::log(4.0)) <= 1e-12);
  }
  SUBCASE("a dominant true logit drives the loss to zero") {
    Tensor logits = Tensor::zeros({1, 3});
    double prev = ops::cross_entropy(logits, {1}).item();
    for (double v : {2.0, 5.0, 10.0, 20.0, 40.0}) {
      logits.data()[1] = v;
      const double loss = ops::cross_entropy(logits, {1}).item();
      CHECK(loss < prev);  // monotone toward the limit
      prev = loss;
    }
    CHECK(prev <= 1e-15);
  }
}

TEST_CASE("projection produces unit embeddings for any input") {
  auto rng = make_rng(derive_seed(1, "project"));
  const int rows = 9, dim = 6;
  const ProjectionHead head = ProjectionHead::init(rows, dim, rng);

  SUBCASE("constant-per-row input pools to that constant") {
    Tensor z = Tensor::zeros({rows, 4});
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < 4; ++c) z.data()[static_cast<std::size_t>(r * 4 + c)] = 0.5 * r;
    }
    const Tensor f = project(z, head);
    // oracle: pooled row r equals 0.5*r, then linear map plus normalization
    std::vector<double> expect(static_cast<std::size_t>(dim), 0.0);
    for (int d = 0; d < dim; ++d) {
      for (int r = 0; r < rows; ++r) expect[static_cast<std::size_t>(d)] += 0.5 * r * head.weight.at({r, d});
      expect[static_cast<std::size_t>(d)] += head.bias.at({d});
    }
    double norm = 0.0;
    for (double v : expect) norm += v * v;
    norm = std::sqrt(norm);
    for (int d = 0; d < dim; ++d) {
      CHECK(std::abs(f.at({0, d}) - expect[static_cast<std::size_t>(d)] / norm) <= 1e-12);
    }
  }
  SUBCASE("embeddings are unit length") {
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor z = Tensor::randn({rows, 5}, rng, 3.0);
      const Tensor f = project(z, head);
      double sq = 0.0;
      for (double v : f.data()) sq += v * v;
      CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-6);
    }
  }
  SUBCASE("gradient audit through the head") {
    Tensor z = Tensor::randn({rows, 5}, rng, 1.0, true).set_name("z");
    const Tensor w = Tensor::randn({dim, 1}, rng, 1.0);
    auto loss = [&] { return ops::matmul(project(z, head), w); };
    const AuditReport report = grad_audit({z, head.weight, head.bias}, loss);
    CHECK(report.max_rel_err <= 1e-4);
  }
}

TEST_CASE("bank update follows the momentum recurrence") {
  auto rng = make_rng(derive_seed(2, "bank"));
  const int classes = 3, dim = 4;

  SUBCASE("zero momentum copies the class mean") {
    ClassBank bank = ClassBank::init(classes, dim, 0.0, rng);
    const Tensor f1 = Tensor::from_data({1, dim}, {1, 2, 3, 4});
    const Tensor f2 = Tensor::from_data({1, dim}, {3, 2, 1, 0});
    bank_update(bank, {f1, f2}, {1, 1});
    for (int d = 0; d < dim; ++d) {
      CHECK(bank.rows.at({1, d}) == (f1.at({0, d}) + f2.at({0, d})) / 2.0);
    }
  }
  SUBCASE("absent classes stay untouched") {
    ClassBank bank = ClassBank::init(classes, dim, 0.5, rng);
    const std::vector<double> before(bank.rows.data().begin(), bank.rows.data().end());
    bank_update(bank, {Tensor::from_data({1, dim}, {1, 1, 1, 1})}, {0});
    for (int d = 0; d < dim; ++d) {
      CHECK(bank.rows.at({1, d}) == before[static_cast<std::size_t>(dim + d)]);
      CHECK(bank.rows.at({2, d}) == before[static_cast<std::size_t>(2 * dim + d)]);
    }
  }
  SUBCASE("constant target contracts geometrically") {
    for (double alpha : {0.0, 0.5, 0.9}) {
      ClassBank bank = ClassBank::init(classes, dim, alpha, rng);
      const Tensor target = Tensor::from_data({1, dim}, {0.25, -0.5, 1.0, 0.0});
      std::vector<double> m0(bank.rows.data().begin(), bank.rows.data().begin() + dim);
      double base = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double diff = m0[static_cast<std::size_t>(d)] - target.at({0, d});
        base += diff * diff;
      }
      base = std::sqrt(base);
      for (int t = 1; t <= 10; ++t) {
        bank_update(bank, {target}, {0});
        double dist = 0.0;
        for (int d = 0; d < dim; ++d) {
          const double diff = bank.rows.at({0, d}) - target.at({0, d});
          dist += diff * diff;
        }
        dist = std::sqrt(dist);
        const double expect = std::pow(alpha, t) * base;
        CHECK(std::abs(dist - expect) <= 1e-12 * std::max(1.0, base));
      }
    }
  }
  SUBCASE("hand-unrolled three steps at alpha 0.9 from zero") {
    ClassBank bank = ClassBank::init(classes, dim, 0.9, rng);
    std::fill(bank.rows.data().begin(), bank.rows.data().end(), 0.0);
    Tensor e1 = Tensor::zeros({1, dim});
    e1.data()[0] = 1.0;
    // scalar oracle with identical arithmetic
    double m = 0.0;
    for (int t = 0; t < 3; ++t) {
      bank_update(bank, {e1}, {0});
      m = 0.9 * m + (1.0 - 0.9) * 1.0;
    }
    CHECK(bank.rows.at({0, 0}) == m);
    CHECK(std::abs(bank.rows.at({0, 0}) - 0.271) <= 1e-12);  // 1 - 0.9^3
    for (int d = 1; d < dim; ++d) CHECK(bank.rows.at({0, d}) == 0.0);
  }
  SUBCASE("validation") {
    ClassBank bank = ClassBank::init(classes, dim, 0.9, rng);
    CHECK_THROWS_AS(bank_update(bank, {}, {}), ConfigError);
    CHECK_THROWS_AS(bank_update(bank, {Tensor::zeros({1, dim})}, {5}), ConfigError);
    CHECK_THROWS_AS(ClassBank::init(classes, dim, 1.0, rng), ConfigError);
  }
}

TEST_CASE("contrastive loss anchors") {
  auto rng = make_rng(derive_seed(3, "csc"));
  const int classes = 3, dim = 4;

  SUBCASE("identical anchors cost exactly ln c") {
    ClassBank bank = ClassBank::init(classes, dim, 0.9, rng);
    for (int k = 1; k < classes; ++k) {
      for (int d = 0; d < dim; ++d) {
        bank.rows.data()[static_cast<std::size_t>(k * dim + d)] = bank.rows.at({0, d});
      }
    }
    const Tensor f = ops::l2_normalize(Tensor::randn({1, dim}, rng, 1.0));
    const double loss = csc_loss(f, 1, bank, 0.125).item();
    CHECK(std::abs(loss - std::log(3.0)) <= 1e-9);
  }
  SUBCASE("dominant positive similarity drives the loss to zero") {
    ClassBank bank = ClassBank::init(classes, dim, 0.9, rng);
    Tensor f = Tensor::zeros({1, dim});
    for (int d = 0; d < dim; ++d) {
      f.data()[static_cast<std::size_t>(d)] = bank.rows.at({0, d});
    }
    // f aligned with anchor 0; small temperature sharpens the ratio
    const double loss = csc_loss(f, 0, bank, 0.01).item();
    CHECK(loss <= 1e-6);
  }
  SUBCASE("orthonormal anchors against a basis feature, tau = 0.125") {
    ClassBank bank = ClassBank::init(classes, 3, 0.9, rng);
    std::fill(bank.rows.data().begin(), bank.rows.data().end(), 0.0);
    for (int k = 0; k < classes; ++k) {
      bank.rows.data()[static_cast<std::size_t>(k * 3 + k)] = 1.0;
    }
    Tensor f = Tensor::zeros({1, 3});
    f.data()[0] = 1.0;
    const double loss = csc_loss(f, 0, bank, 0.125).item();
    // direct evaluation: -log(e^8 / (e^8 + 2))
    const double expect = -std::log(std::exp(8.0) / (std::exp(8.0) + 2.0));
    CHECK(std::abs(loss - expect) <= 1e-12);
    CHECK(loss >= 0.0);
  }
  SUBCASE("loss is nonnegative on random inputs") {
    ClassBank bank = ClassBank::init(classes, dim, 0.9, rng);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor f = ops::l2_normalize(Tensor::randn({1, dim}, rng, 1.0));
      CHECK(csc_loss(f, trial % classes, bank, 0.125).item() >= 0.0);
    }
  }
  SUBCASE("temperature and label validation") {
    ClassBank bank = ClassBank::init(classes, dim, 0.9, rng);
    const Tensor f = Tensor::zeros({1, dim});
    CHECK_THROWS_AS(csc_loss(f, 0, bank, 0.0), ConfigError);
    CHECK_THROWS_AS(csc_loss(f, 0, bank, -1.0), ConfigError);
    CHECK_THROWS_AS(csc_loss(f, classes, bank, 0.125), ConfigError);
  }
}

TEST_CASE("no gradient reaches the bank") {
  auto rng = make_rng(derive_seed(5, "bank_nograd"));
  const int classes = 3, dim = 4;
  ClassBank bank = ClassBank::init(classes, dim, 0.9, rng);
  Tensor f = Tensor::randn({1, dim}, rng, 1.0, true).set_name("f");
  Tape tape;
  {
    Tape::Scope scope(tape);
    tape.backward(csc_loss(f, 1, bank, 0.125));
  }
  CHECK(f.has_grad());
  CHECK_FALSE(bank.rows.has_grad());
  CHECK_FALSE(bank.rows.impl()->from_op);

  // gradients on f are insensitive to zeroing the bank's tape state because
  // the loss snapshots anchors by value; a different bank changes the loss,
  // not the wiring
  const std::vector<double> grad_before(f.grad().begin(), f.grad().end());
  f.zero_grad();
  Tape tape2;
  {
    Tape::Scope scope(tape2);
    tape2.backward(csc_loss(f, 1, bank, 0.125));
  }
  for (std::size_t i = 0; i < grad_before.size(); ++i) {
    CHECK(f.grad()[i] == grad_before[i]);
  }
}

TEST_CASE("contrastive gradient matches finite differences through the feature") {
  auto rng = make_rng(derive_seed(7, "csc_grad"));
  ClassBank bank = ClassBank::init(4, 5, 0.9, rng);
  Tensor f = Tensor::randn({1, 5}, rng, 1.0, true).set_name("f");
  auto loss = [&] { return csc_loss(ops::l2_normalize(f), 2, bank, 0.125); };
  const AuditReport report = grad_audit({f}, loss);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("total loss combines the two terms linearly") {
  const Tensor ce = Tensor::scalar(1.0);
  const Tensor csc = Tensor::scalar(2.0);
  SUBCASE("lambda zero leaves the cross entropy bit-identical") {
    CHECK(total_loss(ce, csc, 0.0).item() == ce.item());
  }
  SUBCASE("paper operating point") {
    CHECK(total_loss(ce, csc, 0.3).item() == doctest::Approx(1.6).epsilon(1e-12));
  }
  SUBCASE("linearity in lambda") {
    const double a = total_loss(ce, csc, 0.2).item();
    const double b = total_loss(ce, csc, 0.5).item();
    const double c = total_loss(ce, csc, 0.7).item();
    CHECK(std::abs((a + b) - (c + ce.item())) <= 1e-12);
  }
  SUBCASE("negative lambda is rejected") {
    CHECK_THROWS_AS(total_loss(ce, csc, -0.1), ConfigError);
  }
}
