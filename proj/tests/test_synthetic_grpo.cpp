#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gdro/synthetic_grpo.hpp"

using namespace gdro;

namespace {

TabularGrpoWorld make_world(GrpoOptions options = {},
                            std::vector<SyntheticPrompt> prompts = {}) {
  if (prompts.empty()) {
    prompts = {{0, 0, 0.0}, {1, 2, 1.5}, {2, 1, -2.0}, {3, 3, 4.0}};
  }
  return TabularGrpoWorld(std::move(prompts), options);
}

// Searches seeds until a sampled group has the requested number of correct
// rollouts.
RolloutGroup group_with_correct_count(const TabularGrpoWorld& world,
                                      PromptUid uid, int n, int want_correct) {
  for (std::uint64_t seed = 0; seed < 100000; ++seed) {
    Rng rng(seed);
    RolloutGroup g = world.sample_rollout_group(uid, n, rng);
    int correct = 0;
    for (double r : g.rewards)
      if (r > 0) ++correct;
    if (correct == want_correct) return g;
  }
  FAIL("no seed produced the requested reward pattern");
  return {};
}

// Central finite differences of prompt_loss with respect to the prompt's
// logits; the independent oracle for prompt_gradient.
std::vector<double> fd_gradient(TabularGrpoWorld& world,
                                const RolloutGroup& group, double h) {
  const std::size_t a =
      static_cast<std::size_t>(world.options().answer_count);
  std::vector<double> base(world.policy_logits(group.prompt_uid).begin(),
                           world.policy_logits(group.prompt_uid).end());
  std::vector<double> grad(a);
  for (std::size_t c = 0; c < a; ++c) {
    std::vector<double> theta = base;
    theta[c] += h;
    world.set_policy_logits(group.prompt_uid, theta);
    const double hi = world.prompt_loss(group);
    theta[c] -= 2 * h;
    world.set_policy_logits(group.prompt_uid, theta);
    const double lo = world.prompt_loss(group);
    grad[c] = (hi - lo) / (2 * h);
  }
  world.set_policy_logits(group.prompt_uid, base);
  return grad;
}

}  // namespace

TEST_CASE("world defaults carry the documented GRPO configuration") {
  const GrpoOptions options;
  CHECK(options.kl_coefficient == 0.001);
  CHECK(options.clip_low == 0.2);
  CHECK(options.clip_high == 0.28);
  CHECK(options.advantage_clip == 5.0);
  CHECK(options.reward_correct == 1.0);
  CHECK(options.reward_incorrect == -1.0);
}

TEST_CASE("softmax sums to one and is stable under large logits") {
  std::vector<double> logits = {1000.0, 1001.0, 999.0};
  const std::vector<double> p = softmax(logits);
  double sum = 0.0;
  for (double v : p) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[1] > p[0]);
  CHECK(p[0] > p[2]);
}

TEST_CASE("initial logits put -difficulty on the correct answer") {
  const SyntheticPrompt p{7, 2, 3.5};
  const std::vector<double> logits = initial_logits(p, 4);
  CHECK(logits == std::vector<double>{0.0, 0.0, -3.5, 0.0});
}

TEST_CASE("construction validates prompts and options") {
  CHECK_THROWS_AS(make_world({}, {{0, 9, 0.0}}), std::invalid_argument);
  CHECK_THROWS_AS(make_world({}, {{0, 0, 0.0}, {0, 1, 0.0}}),
                  std::invalid_argument);
  GrpoOptions bad;
  bad.advantage_epsilon = 0.0;
  CHECK_THROWS_AS(make_world(bad), std::invalid_argument);
  CHECK_THROWS_AS(make_world(GrpoOptions{.clip_low = -0.1}),
                  std::invalid_argument);
}

TEST_CASE("mixed half-correct group standardizes to +-0.999999") {
  GrpoOptions options;
  options.answer_count = 2;
  options.advantage_epsilon = 1e-6;
  TabularGrpoWorld world = make_world(options, {{0, 0, 0.0}});
  const RolloutGroup g = group_with_correct_count(world, 0, 4, 2);
  // rewards (1, 1, -1, -1) in some order: mu = 0, sigma = 1.
  const double expected = 1.0 / (1.0 + 1e-6);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(std::abs(g.advantages[j]) ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(g.advantages[j] * g.rewards[j] > 0);
  }
}

TEST_CASE("all-equal rewards produce zero advantages") {
  GrpoOptions options;
  options.answer_count = 2;
  TabularGrpoWorld world = make_world(options, {{0, 0, -4.0}});
  const RolloutGroup g = group_with_correct_count(world, 0, 4, 4);
  for (double a : g.advantages) CHECK(a == 0.0);
}

TEST_CASE("group advantages have zero mean when rewards are mixed") {
  TabularGrpoWorld world = make_world();
  Rng rng(11);
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const RolloutGroup g = world.sample_rollout_group(1, 6, rng);
    const bool mixed =
        std::any_of(g.rewards.begin(), g.rewards.end(),
                    [&](double r) { return r != g.rewards[0]; });
    if (!mixed) continue;
    double mean = 0.0;
    for (double a : g.advantages) mean += a;
    mean /= static_cast<double>(g.advantages.size());
    CHECK(std::abs(mean) < 1e-9);
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("sample_rollout_group rejects bad arguments") {
  TabularGrpoWorld world = make_world();
  Rng rng(0);
  CHECK_THROWS_AS(world.sample_rollout_group(99, 4, rng), std::out_of_range);
  CHECK_THROWS_AS(world.sample_rollout_group(0, 0, rng),
                  std::invalid_argument);
}

TEST_CASE("prompt_loss is the mean of per-rollout losses") {
  TabularGrpoWorld world = make_world();
  Rng rng(3);
  const RolloutGroup g = world.sample_rollout_group(2, 5, rng);
  double mean = 0.0;
  for (double l : g.per_rollout_losses) mean += l;
  mean /= static_cast<double>(g.per_rollout_losses.size());
  CHECK(std::abs(g.prompt_loss - mean) < 1e-12);
}

TEST_CASE("at the sampling snapshot the loss is -advantage plus KL") {
  GrpoOptions options;
  options.kl_coefficient = 0.0;
  TabularGrpoWorld world = make_world(options);
  Rng rng(5);
  const RolloutGroup g = world.sample_rollout_group(1, 4, rng);
  // theta == theta_old: ratios are 1, the clip is inactive.
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(g.per_rollout_losses[j] ==
          doctest::Approx(-g.advantages[j]).epsilon(1e-12));
}

TEST_CASE("clipped surrogate equals unclipped at theta == theta_old") {
  TabularGrpoWorld world = make_world();
  Rng rng(9);
  const RolloutGroup g = world.sample_rollout_group(3, 8, rng);
  double unclipped = 0.0;
  for (double a : g.advantages) unclipped -= a;
  unclipped /= static_cast<double>(g.advantages.size());
  const double kl = world.options().kl_coefficient * world.kl_to_reference(3);
  CHECK(world.prompt_loss(g) ==
        doctest::Approx(unclipped + kl).epsilon(1e-12));
}

TEST_CASE("KL to reference vanishes at the initial policy") {
  TabularGrpoWorld world = make_world();
  for (PromptUid uid = 0; uid < 4; ++uid)
    CHECK(world.kl_to_reference(uid) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("prompt_loss is invariant to rollout permutation") {
  TabularGrpoWorld world = make_world();
  Rng rng(17);
  RolloutGroup g = world.sample_rollout_group(1, 6, rng);
  const double before = world.prompt_loss(g);
  // Rotate all parallel arrays consistently.
  std::rotate(g.sampled_answers.begin(), g.sampled_answers.begin() + 2,
              g.sampled_answers.end());
  std::rotate(g.rewards.begin(), g.rewards.begin() + 2, g.rewards.end());
  std::rotate(g.advantages.begin(), g.advantages.begin() + 2,
              g.advantages.end());
  CHECK(world.prompt_loss(g) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("zero weight removes the surrogate component of the gradient") {
  GrpoOptions options;
  options.kl_coefficient = 0.0;
  TabularGrpoWorld world = make_world(options);
  Rng rng(23);
  const RolloutGroup g = world.sample_rollout_group(0, 4, rng);
  const std::vector<double> grad = world.prompt_gradient(g, 0.0);
  for (double v : grad) CHECK(v == 0.0);
}

TEST_CASE("all-equal rewards with zero KL give a zero gradient") {
  GrpoOptions options;
  options.answer_count = 2;
  options.kl_coefficient = 0.0;
  TabularGrpoWorld world = make_world(options, {{0, 0, -4.0}});
  const RolloutGroup g = group_with_correct_count(world, 0, 4, 4);
  const std::vector<double> grad = world.prompt_gradient(g, 1.0);
  for (double v : grad) CHECK(v == 0.0);
}

TEST_CASE("analytic gradient matches finite differences on random instances") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GrpoOptions options;
    options.answer_count = 5;
    options.kl_coefficient = seed % 2 == 0 ? 0.001 : 0.0;
    TabularGrpoWorld world =
        make_world(options, {{0, static_cast<int>(seed % 5), 1.0}});
    Rng rng(seed * 977 + 1);
    const RolloutGroup g = world.sample_rollout_group(0, 4, rng);

    // Move the policy off the behavior snapshot so ratios are not 1.
    std::vector<double> theta(world.policy_logits(0).begin(),
                              world.policy_logits(0).end());
    for (double& t : theta) t += 0.08 * (rng.next_double() - 0.5);
    world.set_policy_logits(0, theta);

    // Skip instances whose ratios sit within FD range of a clip kink.
    const std::vector<double> pi = world.policy_probs(0);
    const std::vector<double> mu = world.behavior_probs(0);
    bool near_kink = false;
    for (int a : g.sampled_answers) {
      const double rho = pi[static_cast<std::size_t>(a)] /
                         mu[static_cast<std::size_t>(a)];
      if (std::abs(rho - (1.0 - options.clip_low)) < 1e-3 ||
          std::abs(rho - (1.0 + options.clip_high)) < 1e-3)
        near_kink = true;
    }
    if (near_kink) continue;

    const std::vector<double> analytic = world.prompt_gradient(g, 1.0);
    const std::vector<double> numeric = fd_gradient(world, g, 1e-5);
    double err2 = 0.0, ref2 = 0.0;
    for (std::size_t c = 0; c < analytic.size(); ++c) {
      err2 += (analytic[c] - numeric[c]) * (analytic[c] - numeric[c]);
      ref2 += numeric[c] * numeric[c];
    }
    CHECK(std::sqrt(err2) <= 1e-6 * std::max(std::sqrt(ref2), 1e-3));
    ++checked;
  }
  CHECK(checked >= 90);
}

TEST_CASE("weight scales the surrogate gradient exactly, KL unscaled") {
  GrpoOptions options;
  options.kl_coefficient = 0.01;
  TabularGrpoWorld world = make_world(options);
  Rng rng(31);
  const RolloutGroup g = world.sample_rollout_group(1, 4, rng);
  std::vector<double> theta(world.policy_logits(1).begin(),
                            world.policy_logits(1).end());
  theta[0] += 0.05;
  world.set_policy_logits(1, theta);

  const std::vector<double> g0 = world.prompt_gradient(g, 0.0);  // KL only
  const std::vector<double> g1 = world.prompt_gradient(g, 1.0);
  const std::vector<double> g3 = world.prompt_gradient(g, 3.0);
  for (std::size_t c = 0; c < g1.size(); ++c) {
    const double surrogate = g1[c] - g0[c];
    CHECK(g3[c] - g0[c] == doctest::Approx(3.0 * surrogate).epsilon(1e-12));
  }
}

TEST_CASE("apply_update leaves the world unchanged on a zero gradient") {
  TabularGrpoWorld world = make_world();
  const std::vector<double> before(world.policy_logits(0).begin(),
                                   world.policy_logits(0).end());
  const std::vector<double> zero(before.size(), 0.0);
  world.apply_update(0, zero);
  for (std::size_t c = 0; c < before.size(); ++c)
    CHECK(world.policy_logits(0)[c] == before[c]);
}

TEST_CASE("zero learning rate freezes the policy") {
  GrpoOptions options;
  options.learning_rate = 0.0;
  TabularGrpoWorld world = make_world(options);
  const std::vector<double> before(world.policy_logits(1).begin(),
                                   world.policy_logits(1).end());
  std::vector<double> grad(before.size(), 2.5);
  world.apply_update(1, grad);
  for (std::size_t c = 0; c < before.size(); ++c)
    CHECK(world.policy_logits(1)[c] == before[c]);
}

TEST_CASE("non-finite gradients are rejected before mutation") {
  TabularGrpoWorld world = make_world();
  const std::vector<double> before(world.policy_logits(0).begin(),
                                   world.policy_logits(0).end());
  std::vector<double> grad(before.size(), 0.1);
  grad[2] = std::nan("");
  CHECK_THROWS_AS(world.apply_update(0, grad), std::runtime_error);
  std::vector<std::pair<PromptUid, std::vector<double>>> batch{
      {0, std::vector<double>(before.size(), 0.1)}, {1, grad}};
  CHECK_THROWS_AS(world.apply_updates(batch), std::runtime_error);
  for (std::size_t c = 0; c < before.size(); ++c)
    CHECK(world.policy_logits(0)[c] == before[c]);
}

TEST_CASE("one update step descends the sampled surrogate (step halving)") {
  TabularGrpoWorld world = make_world();
  const RolloutGroup g = group_with_correct_count(world, 1, 4, 2);
  const double before = world.prompt_loss(g);
  const std::vector<double> grad = world.prompt_gradient(g, 1.0);
  const std::vector<double> base(world.policy_logits(1).begin(),
                                 world.policy_logits(1).end());
  bool descended = false;
  for (double lr = 0.5; lr > 1e-6 && !descended; lr *= 0.5) {
    std::vector<double> theta = base;
    for (std::size_t c = 0; c < theta.size(); ++c) theta[c] -= lr * grad[c];
    world.set_policy_logits(1, theta);
    if (world.prompt_loss(g) < before) descended = true;
  }
  CHECK(descended);
}

TEST_CASE("behavior snapshot follows refresh_behavior") {
  TabularGrpoWorld world = make_world();
  std::vector<double> theta(world.policy_logits(0).begin(),
                            world.policy_logits(0).end());
  theta[0] += 1.0;
  world.set_policy_logits(0, theta);
  CHECK(world.behavior_logits(0)[0] != theta[0]);
  world.refresh_behavior();
  CHECK(world.behavior_logits(0)[0] == theta[0]);
  // Reference never moves.
  CHECK(world.reference_logits(0)[0] == 0.0);
}

TEST_CASE("exact pass@k follows the closed form") {
  GrpoOptions options;
  options.answer_count = 4;
  TabularGrpoWorld world = make_world(options, {{0, 1, 0.0}});
  const double p = world.policy_probs(0)[1];
  CHECK(world.exact_pass_at_k(0, 8) ==
        doctest::Approx(1.0 - std::pow(1.0 - p, 8)).epsilon(1e-12));
}

TEST_CASE("population round-trips through the line format") {
  TabularGrpoWorld world = make_world();
  std::stringstream buf;
  world.save_population(buf);
  GrpoOptions options;
  const TabularGrpoWorld loaded =
      TabularGrpoWorld::load_population(buf, options);
  REQUIRE(loaded.prompt_count() == world.prompt_count());
  for (std::size_t i = 0; i < world.prompt_count(); ++i) {
    CHECK(loaded.prompts()[i].uid == world.prompts()[i].uid);
    CHECK(loaded.prompts()[i].correct_answer ==
          world.prompts()[i].correct_answer);
    CHECK(loaded.prompts()[i].latent_difficulty ==
          world.prompts()[i].latent_difficulty);
  }
}

TEST_CASE("malformed population lines report the line number") {
  std::stringstream buf("0,1,0.5,8\nnot a line\n");
  GrpoOptions options;
  CHECK_THROWS_WITH_AS(TabularGrpoWorld::load_population(buf, options),
                       doctest::Contains("line 2"), std::runtime_error);
}
