#include <doctest.h>

#include <algorithm>
#include <random>

#include "flonet/bleu.hpp"
#include "flonet/error.hpp"
#include "flonet/text.hpp"

using namespace flonet;

// Reference values come from sacrebleu 2.6.0 with smooth_method="floor",
// smooth_value=0.1, effective_order=True, tokenize="none".

TEST_CASE("identity is 100, disjoint is 0") {
  const std::vector<std::string> refs = {"is the light on ?", "replace the fuse .", "thanks"};
  CHECK(corpus_bleu(refs, refs) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(corpus_bleu(refs, {"a b c d e", "x y z", "w"}) == 0.0);
  CHECK(sentence_bleu("", "the cat") == 0.0);
}

TEST_CASE("hand-derived fixture: the cat sat") {
  // p1 = p2 = p3 = 1, no 4-grams in the hypothesis, BP = exp(1 - 6/3)
  const double expected = 100.0 * std::exp(-1.0);
  CHECK(std::abs(sentence_bleu("the cat sat", "the cat sat on the mat") - expected) < 1e-6);
  CHECK(std::abs(sentence_bleu("the cat sat", "the cat sat on the mat") - 36.78794411714425) < 1e-6);
}

TEST_CASE("matches the reference implementation") {
  CHECK(std::abs(sentence_bleu("the mat sat on a cat", "the cat sat on the mat") - 12.909944487358057) < 1e-6);
  CHECK(std::abs(sentence_bleu("a cat is on the mat today", "the cat sat on the mat") - 17.56720523942793) < 1e-6);
  const std::vector<std::string> hyps = {"the cat sat", "press the power button for ten seconds",
                                         "is the light blinking ?"};
  const std::vector<std::string> refs = {"the cat sat on the mat", "hold the power button for ten seconds",
                                         "is the status light blinking ?"};
  CHECK(std::abs(corpus_bleu(refs, hyps) - 54.65396912560575) < 1e-6);
}

TEST_CASE("corpus bleu is permutation invariant and bounded") {
  std::vector<std::string> refs = {"is the light on ?", "replace the fuse now .", "check the cable", "call support"};
  std::vector<std::string> hyps = {"is the lamp on ?", "replace the fuse .", "check cable", "call the support line"};
  const double base = corpus_bleu(refs, hyps);
  CHECK(base > 0);
  CHECK(base < 100);
  std::vector<std::size_t> perm = {2, 0, 3, 1};
  std::vector<std::string> r2, h2;
  for (auto i : perm) {
    r2.push_back(refs[i]);
    h2.push_back(hyps[i]);
  }
  CHECK(corpus_bleu(r2, h2) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("bleu errors") {
  CHECK_THROWS_AS(corpus_bleu(std::vector<std::string>{"a"}, std::vector<std::string>{}), ValidationError);
  CHECK_THROWS_AS(corpus_bleu(std::vector<std::string>{}, std::vector<std::string>{}), ValidationError);
}

TEST_CASE("bleu is case-insensitive on string input") {
  CHECK(sentence_bleu("Is The Light ON?", "is the light on ?") == doctest::Approx(100.0));
}
