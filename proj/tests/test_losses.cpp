#include <doctest.h>

#include <cmath>

#include "csasr/losses.hpp"
#include "csasr/ops.hpp"
#include "support.hpp"

using namespace csasr;

TEST_CASE("ctc loss matches brute-force path enumeration") {
  Rng rng(42);
  std::uniform_int_distribution<std::size_t> frames(1, 6);
  std::uniform_int_distribution<int> label(1, 3);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = frames(rng), V = 4;
    std::uniform_int_distribution<std::size_t> len(0, T);
    std::vector<int> target(len(rng));
    for (auto& t : target) t = label(rng);
    const auto lp = testing::random_log_probs(T, V, rng);
    bool infeasible = false;
    const double got = ctc_loss(Tensor::from_data({T, V}, lp), target, 0, &infeasible).item();
    if (ctc_min_frames(target) > T) {
      CHECK(infeasible);
      CHECK(std::isinf(got));
      continue;
    }
    CAPTURE(trial);
    CHECK_FALSE(infeasible);
    CHECK(got == doctest::Approx(testing::brute_force_ctc(lp, T, V, target, 0)).epsilon(1e-10));
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("ctc edge cases") {
  // One frame, one label: -log p(label).
  const std::vector<double> lp{std::log(0.2), std::log(0.5), std::log(0.3)};
  const Tensor x = Tensor::from_data({1, 3}, lp);
  CHECK(ctc_loss(x, std::vector<int>{1}, 0).item() == doctest::Approx(-std::log(0.5)));
  // Empty target: all blanks.
  CHECK(ctc_loss(x, std::vector<int>{}, 0).item() == doctest::Approx(-std::log(0.2)));
  // Repeated labels need a separating blank.
  CHECK(ctc_min_frames(std::vector<int>{1, 1}) == 3);
  CHECK(ctc_min_frames(std::vector<int>{1, 2}) == 2);
  bool infeasible = false;
  const Tensor two = Tensor::from_data({2, 3}, std::vector<double>(6, std::log(1.0 / 3)), true);
  const Tensor l = ctc_loss(two, std::vector<int>{1, 1}, 0, &infeasible);
  CHECK(infeasible);
  CHECK(std::isinf(l.item()));
  CHECK_THROWS(ctc_loss(x, std::vector<int>{0}, 0));
}

TEST_CASE("label-smoothed cross entropy closed form") {
  // logits [2,0,0,0], target 0, eps 0.1
  const double z = std::exp(2.0) + 3.0;
  const double nll0 = -(2.0 - std::log(z));
  const double nll_other = std::log(z);
  const double expected = 0.9 * nll0 + 0.1 * (nll0 + 3 * nll_other) / 4.0;
  const Tensor logits = Tensor::from_data({1, 4}, {2, 0, 0, 0});
  CHECK(label_smoothed_ce(logits, std::vector<int>{0}, 0.1).item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(label_smoothed_ce(logits, std::vector<int>{0}, 0.0).item() == doctest::Approx(nll0).epsilon(1e-12));

  const Tensor uniform = Tensor::zeros({3, 4});
  CHECK(label_smoothed_ce(uniform, std::vector<int>{0, 1, 2}, 0.1).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(label_smoothed_ce(uniform, std::vector<int>{0, 1, 4}, 0.1), std::out_of_range);
}

TEST_CASE("ignored positions drop out of the mean") {
  const Tensor logits = Tensor::from_data({2, 2}, {5, 0, 0, 0});
  const double one = label_smoothed_ce(Tensor::from_data({1, 2}, {5, 0}), std::vector<int>{0}, 0.0).item();
  CHECK(label_smoothed_ce(logits, std::vector<int>{0, 1}, 0.0, 1).item() == doctest::Approx(one));
}

TEST_CASE("asr and joint loss arithmetic") {
  CHECK(asr_loss(2.0, 1.0, 0.3) == doctest::Approx(1.3));
  CHECK(joint_loss(2.0, 1.0, 1.0, 0.3, 0.5) == doctest::Approx(1.8));
  const Tensor c = Tensor::scalar(2.0), a = Tensor::scalar(1.0), l = Tensor::scalar(1.0);
  CHECK(asr_loss(c, a, 0.3).item() == doctest::Approx(1.3));
  CHECK(joint_loss(c, a, l, 0.3, 0.5).item() == doctest::Approx(1.8));
  LossBreakdown x{1, 2, 3, 4, 0.3, 0.5};
  x += x;
  CHECK(x.scaled(0.5).total == doctest::Approx(4.0));
}
