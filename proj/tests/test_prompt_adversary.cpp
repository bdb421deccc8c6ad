#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gdro/diagnostics.hpp"
#include "gdro/prompt_adversary.hpp"

using namespace gdro;

namespace {

// With decay 1 the EMA adopts the signal directly, which lets tests pin
// scores exactly through the public update path.
PromptAdversary with_scores(const std::vector<double>& scores,
                            PromptAdversaryOptions options) {
  options.ema_decay = 1.0;
  options.normalize_by_share = false;
  PromptAdversary adversary(static_cast<int>(scores.size()), options);
  std::vector<std::optional<double>> losses(scores.begin(), scores.end());
  std::vector<double> shares(scores.size(),
                             1.0 / static_cast<double>(scores.size()));
  adversary.update_scores(losses, shares);
  return adversary;
}

}  // namespace

TEST_CASE("defaults match the documented configuration") {
  const PromptAdversaryOptions options;
  CHECK(options.ema_decay == 0.12);
  CHECK(options.learning_rate == 0.65);
  CHECK(options.exploration == 0.01);
  CHECK(options.weight_cap == 15.0);
  CHECK(options.score_clip == 10.0);
  CHECK(options.share_floor == 0.01);
  CHECK(options.normalize_by_share);
}

TEST_CASE("EMA update follows (1-beta) S + beta * signal") {
  PromptAdversaryOptions options;
  options.ema_decay = 0.12;
  options.normalize_by_share = false;
  PromptAdversary adversary(1, options);
  adversary.update_scores({1.0 / 0.12}, std::vector<double>{1.0});  // S = 1.0
  CHECK(adversary.scores()[0] == doctest::Approx(1.0).epsilon(1e-12));
  adversary.update_scores({2.0}, std::vector<double>{1.0});
  CHECK(adversary.scores()[0] == doctest::Approx(1.12).epsilon(1e-12));
}

TEST_CASE("share normalization divides by the floored share") {
  PromptAdversaryOptions options;
  options.ema_decay = 1.0;
  options.share_floor = 0.01;
  options.normalize_by_share = true;
  PromptAdversary adversary(2, options);
  adversary.update_scores({0.5, 0.4}, std::vector<double>{0.25, 0.001});
  CHECK(adversary.scores()[0] == doctest::Approx(2.0));     // 0.5 / 0.25
  CHECK(adversary.scores()[1] == doctest::Approx(10.0));    // 0.4 / floor,
                                                            // clipped at C
}

TEST_CASE("empty bins keep their score") {
  PromptAdversaryOptions options;
  options.ema_decay = 0.5;
  options.normalize_by_share = false;
  PromptAdversary adversary(2, options);
  adversary.update_scores({2.0, 2.0}, std::vector<double>{0.5, 0.5});
  const double frozen = adversary.scores()[1];
  adversary.update_scores({4.0, std::nullopt}, std::vector<double>{1.0, 0.0});
  CHECK(adversary.scores()[1] == frozen);
  CHECK(adversary.scores()[0] != frozen);
}

TEST_CASE("non-finite losses are rejected and logged") {
  PromptAdversaryOptions options;
  options.normalize_by_share = false;
  PromptAdversary adversary(2, options);
  adversary.update_scores({std::nan(""), 1.0}, std::vector<double>{0.5, 0.5});
  CHECK(adversary.scores()[0] == 0.0);
  CHECK(adversary.scores()[1] != 0.0);
  REQUIRE(adversary.events().size() == 1);
  CHECK(adversary.events()[0].find("bin 0") != std::string::npos);
}

TEST_CASE("scores stay clipped to [-C, C] after every update") {
  PromptAdversaryOptions options;
  options.ema_decay = 1.0;
  options.score_clip = 10.0;
  options.normalize_by_share = false;
  PromptAdversary adversary(2, options);
  adversary.update_scores({1e6, -1e6}, std::vector<double>{0.5, 0.5});
  CHECK(adversary.scores()[0] == 10.0);
  CHECK(adversary.scores()[1] == -10.0);
}

TEST_CASE("equal scores give the uniform distribution") {
  PromptAdversaryOptions options;
  const PromptAdversary adversary = with_scores({1.3, 1.3, 1.3, 1.3}, options);
  for (double q : adversary.bin_distribution())
    CHECK(q == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("two-bin softmax and exploration mixing match hand arithmetic") {
  PromptAdversaryOptions options;
  options.learning_rate = 1.0;
  options.exploration = 0.0;
  const PromptAdversary plain = with_scores({0.0, std::log(3.0)}, options);
  const std::vector<double> q0 = plain.bin_distribution();
  CHECK(q0[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(q0[1] == doctest::Approx(0.75).epsilon(1e-12));

  options.exploration = 0.01;
  const PromptAdversary mixed = with_scores({0.0, std::log(3.0)}, options);
  const std::vector<double> q1 = mixed.bin_distribution();
  CHECK(q1[0] == doctest::Approx(0.2525).epsilon(1e-12));
  CHECK(q1[1] == doctest::Approx(0.7475).epsilon(1e-12));
}

TEST_CASE("distribution respects the exploration floor") {
  PromptAdversaryOptions options;
  options.exploration = 0.01;
  const PromptAdversary adversary =
      with_scores({10.0, -10.0, 9.5, -9.5, 0.0}, options);
  for (double q : adversary.bin_distribution()) CHECK(q >= 0.01 / 5 - 1e-15);
  double sum = 0.0;
  for (double q : adversary.bin_distribution()) sum += q;
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("gamma = 1 forces the uniform distribution regardless of scores") {
  PromptAdversaryOptions options;
  options.exploration = 1.0;
  const PromptAdversary adversary = with_scores({5.0, -3.0, 0.5}, options);
  for (double q : adversary.bin_distribution())
    CHECK(q == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("common score shifts leave q and weight ratios unchanged") {
  PromptAdversaryOptions options;
  options.learning_rate = 0.65;
  const std::vector<double> scores{1.0, -2.0, 0.25, 3.0};
  const PromptAdversary a = with_scores(scores, options);
  std::vector<double> shifted = scores;
  for (double& s : shifted) s += 1.5;
  const PromptAdversary b = with_scores(shifted, options);

  const std::vector<double> qa = a.bin_distribution();
  const std::vector<double> qb = b.bin_distribution();
  for (std::size_t i = 0; i < qa.size(); ++i)
    CHECK(qa[i] == doctest::Approx(qb[i]).epsilon(1e-12));

  const std::vector<double> wa = a.raw_weights();
  const std::vector<double> wb = b.raw_weights();
  for (std::size_t i = 1; i < wa.size(); ++i)
    CHECK(wa[i] / wa[0] == doctest::Approx(wb[i] / wb[0]).epsilon(1e-12));
}

TEST_CASE("multiplier is the capped exponential weight") {
  PromptAdversaryOptions options;
  options.learning_rate = 0.65;
  options.score_clip = 10.0;
  options.weight_cap = 15.0;
  const PromptAdversary adversary = with_scores({0.0, 5.0, -1.0}, options);
  CHECK(adversary.advantage_multiplier(0) == doctest::Approx(1.0));
  // e^{0.65 * 5} = e^{3.25} ~ 25.79 > 15, so the cap binds.
  CHECK(adversary.advantage_multiplier(1) == 15.0);
  CHECK(adversary.advantage_multiplier(2) ==
        doctest::Approx(std::exp(-0.65)).epsilon(1e-12));
}

TEST_CASE("multiplier is monotone in the score and bounded by the cap") {
  PromptAdversaryOptions options;
  double last = 0.0;
  bool first = true;
  for (double s = -12.0; s <= 12.0; s += 0.5) {
    const PromptAdversary adversary = with_scores({s, 0.0}, options);
    const double m = adversary.advantage_multiplier(0);
    CHECK(m <= options.weight_cap);
    if (!first) CHECK(m >= last);
    last = m;
    first = false;
  }
}

TEST_CASE("mixing with uniform cannot lower entropy below the softmax") {
  PromptAdversaryOptions options;
  options.exploration = 0.05;
  const PromptAdversary adversary =
      with_scores({4.0, 0.0, -2.0, 1.0}, options);
  const double h_mixed = entropy(adversary.bin_distribution());
  const double h_softmax = entropy(adversary.weight_distribution());
  CHECK(h_mixed >= h_softmax - 1e-12);
}

TEST_CASE("csv rows follow the documented column order") {
  PromptAdversaryOptions options;
  const PromptAdversary adversary = with_scores({0.0, 0.0}, options);
  std::stringstream out;
  adversary.append_csv(out, 7, std::vector<double>{0.5, 0.5},
                       {std::optional<double>(0.25), std::nullopt});
  CHECK(std::string(PromptAdversary::csv_header()) ==
        "step,bin,score,weight,q,share,mean_loss");
  std::string line;
  std::getline(out, line);
  CHECK(line == "7,0,0,1,0.5,0.5,0.25");
  std::getline(out, line);
  CHECK(line == "7,1,0,1,0.5,0.5,nan");
}
