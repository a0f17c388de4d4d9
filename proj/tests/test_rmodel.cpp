#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dogerm/errors.hpp"
#include "dogerm/merge.hpp"
#include "dogerm/rmodel.hpp"
#include "testutil.hpp"

using namespace dogerm;
using testutil::Rng;

namespace {

ToyRMConfig small_config() {
  ToyRMConfig c;
  c.vocab_size = 11;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 12;
  c.seed = 42;
  return c;
}

// Central finite differences through the full model, anchored at h = 1e-3.
// Each difference divides by the realized spacing so float32 quantization
// of the step cancels, and the two step sizes are Richardson-combined to
// cancel the O(h^2) truncation term, which otherwise exceeds the gradient
// tolerance on curvy elements of this loss landscape.
double fd_gradient(const ToyRMConfig& config, const NamedTensorMap& params,
                   const std::string& name, size_t index,
                   const std::vector<PreferenceExample>& batch, double h = 1e-3) {
  auto eval_with = [&](float value) {
    NamedTensorMap copy;
    for (const auto& [n, t] : params) {
      Tensor patched = t;
      if (n == name) patched.data[index] = value;
      copy.add(n, std::move(patched));
    }
    ToyRM model = ToyRM::from_params(config, std::move(copy));
    double total = 0.0;
    for (const PreferenceExample& ex : batch) {
      total += pairwise_loss(model.score(concat_ids(ex.prompt, ex.chosen)),
                             model.score(concat_ids(ex.prompt, ex.rejected)));
    }
    return total / static_cast<double>(batch.size());
  };
  const float base = params.at(name).data[index];
  auto central = [&](double step) {
    const float plus = static_cast<float>(static_cast<double>(base) + step);
    const float minus = static_cast<float>(static_cast<double>(base) - step);
    const double spacing = static_cast<double>(plus) - static_cast<double>(minus);
    return (eval_with(plus) - eval_with(minus)) / spacing;
  };
  const double coarse = central(h);
  const double fine = central(h / 2.0);
  return (4.0 * fine - coarse) / 3.0;
}

std::vector<PreferenceExample> tiny_batch() {
  return {
      {{2, 3}, {4, 5}, {6}, "a"},
      {{7}, {8, 9, 2}, {3, 4}, "a"},
      {{5, 6, 7}, {10}, {2, 8}, "b"},
  };
}

ToyRM zero_head_model(float bias) {
  ToyRMConfig c = small_config();
  ToyRM seeded = ToyRM::init(c);
  NamedTensorMap params;
  for (const auto& [name, tensor] : seeded.params()) {
    Tensor t = tensor;
    if (name == "head.weight") std::fill(t.data.begin(), t.data.end(), 0.0f);
    if (name == "head.bias") t.data[0] = bias;
    params.add(name, std::move(t));
  }
  return ToyRM::from_params(c, std::move(params));
}

}  // namespace

TEST_SUITE("rmodel") {

TEST_CASE("config validation") {
  ToyRMConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.max_seq_len = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.d_model = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("zero head weight forces the reward to the bias") {
  ToyRM model = zero_head_model(0.75f);
  const std::vector<int32_t> a{2, 3, 4};
  const std::vector<int32_t> b{9};
  CHECK(model.score(a) == 0.75);
  CHECK(model.score(b) == 0.75);
}

TEST_CASE("scoring is bit-deterministic") {
  ToyRM model = ToyRM::init(small_config());
  const std::vector<int32_t> input{2, 9, 4, 1, 7};
  const double first = model.score(input);
  for (int i = 0; i < 100; ++i) {
    CHECK(model.score(input) == first);
  }
}

TEST_CASE("a distractor token changes the reward") {
  ToyRM model = ToyRM::init(small_config());
  const std::vector<int32_t> base{2, 3, 4};
  const std::vector<int32_t> longer{2, 3, 4, 5};
  // recorded on the seed-42 model at build time: appending a token moves
  // the reward
  CHECK(model.score(base) != model.score(longer));
}

TEST_CASE("score validates token ids and length") {
  ToyRM model = ToyRM::init(small_config());
  CHECK_THROWS_AS(model.score(std::vector<int32_t>{11}), TokenRangeError);
  CHECK_THROWS_AS(model.score(std::vector<int32_t>{-1}), TokenRangeError);
  CHECK_THROWS_AS(model.score(std::vector<int32_t>{}), LengthError);
  CHECK_THROWS_AS(model.score(std::vector<int32_t>(13, 2)), LengthError);
  CHECK_NOTHROW(model.score(std::vector<int32_t>(12, 2)));
}

TEST_CASE("from_params rejects malformed checkpoints") {
  ToyRMConfig c = small_config();
  ToyRM seeded = ToyRM::init(c);

  NamedTensorMap missing;
  for (const auto& [name, tensor] : seeded.params()) {
    if (name == "head.bias") continue;
    missing.add(name, tensor);
  }
  CHECK_THROWS_AS(ToyRM::from_params(c, std::move(missing)), ShapeMismatchError);

  NamedTensorMap bad_shape;
  for (const auto& [name, tensor] : seeded.params()) {
    Tensor t = tensor;
    if (name == "head.weight") t = Tensor::zeros({2, c.d_model});
    bad_shape.add(name, std::move(t));
  }
  CHECK_THROWS_AS(ToyRM::from_params(c, std::move(bad_shape)), ShapeMismatchError);

  NamedTensorMap nonfinite;
  for (const auto& [name, tensor] : seeded.params()) {
    Tensor t = tensor;
    if (name == "head.bias") t.data[0] = std::numeric_limits<float>::infinity();
    nonfinite.add(name, std::move(t));
  }
  CHECK_THROWS_AS(ToyRM::from_params(c, std::move(nonfinite)), NonFiniteError);
}

TEST_CASE("pairwise loss matches closed forms") {
  // sigma(0) = 1/2
  CHECK(pairwise_loss(1.25, 1.25) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  // high-precision oracle: ln(1 + e^-1)
  CHECK(pairwise_loss(1.0, 0.0) ==
        doctest::Approx(0.3132616875182228).epsilon(1e-12));
  // saturation: margin 50 decays to ~e^-50 without hitting zero
  const double tail = pairwise_loss(50.0, 0.0);
  CHECK(tail < 1e-20);
  CHECK(tail > 0.0);
  // huge negative margin must not overflow
  const double big = pairwise_loss(0.0, 1e6);
  CHECK(big == doctest::Approx(1e6).epsilon(1e-9));
}

TEST_CASE("pairwise loss is positive and decreasing in the margin") {
  Rng rng(3);
  double prev_margin = -40.0;
  double prev_loss = pairwise_loss(prev_margin, 0.0);
  for (int i = 0; i < 200; ++i) {
    const double margin = prev_margin + rng.uniform(1e-3, 0.5);
    const double loss = pairwise_loss(margin, 0.0);
    CHECK(loss > 0.0);
    CHECK(loss < prev_loss);
    prev_margin = margin;
    prev_loss = loss;
  }
}

TEST_CASE("loss symmetry identity") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(-30.0, 30.0);
    const double b = rng.uniform(-30.0, 30.0);
    const double sum = pairwise_loss(a, b) + pairwise_loss(b, a);
    CHECK(sum >= 2.0 * std::numbers::ln2 - 1e-12);
  }
  CHECK(pairwise_loss(0.7, 0.7) * 2.0 ==
        doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-12));
}

TEST_CASE("zero-initialized model has loss ln 2") {
  ToyRM model = zero_head_model(0.0f);
  auto [loss, grads] = loss_and_grad(model, tiny_batch());
  CHECK(loss == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  (void)grads;
}

TEST_CASE("loss_and_grad rejects an empty batch") {
  ToyRM model = ToyRM::init(small_config());
  CHECK_THROWS_AS(loss_and_grad(model, {}), EmptyBatchError);
}

TEST_CASE("analytic gradients match central finite differences") {
  const ToyRMConfig config = small_config();
  ToyRM model = ToyRM::init(config);
  const std::vector<PreferenceExample> batch = tiny_batch();
  auto [loss, grads] = loss_and_grad(model, batch);
  CHECK(std::isfinite(loss));

  Rng rng(2718);
  for (const auto& [name, grad] : grads) {
    // every element of small tensors, a sample of larger ones
    std::vector<size_t> indices;
    if (grad.data.size() <= 24) {
      for (size_t i = 0; i < grad.data.size(); ++i) indices.push_back(i);
    } else {
      for (int i = 0; i < 24; ++i) {
        indices.push_back(static_cast<size_t>(
            rng.range(0, static_cast<int64_t>(grad.data.size()) - 1)));
      }
    }
    for (size_t idx : indices) {
      const double analytic = grad.data[idx];
      const double numeric = fd_gradient(config, model.params(), name, idx, batch);
      const double err = std::fabs(analytic - numeric);
      const double bound = std::max(1e-6, 1e-4 * std::max(std::fabs(analytic),
                                                           std::fabs(numeric)));
      INFO("tensor ", name, " index ", idx, " analytic ", analytic, " numeric ",
           numeric);
      CHECK(err <= bound);
    }
  }
}

TEST_CASE("head bias gradient vanishes on swapped pairs") {
  // the margin is invariant to a shared bias, and the swapped batch makes
  // that visible: the finite-difference oracle agrees
  ToyRM model = ToyRM::init(small_config());
  const std::vector<PreferenceExample> batch = {
      {{2, 3}, {4, 5}, {6, 7}, "a"},
      {{2, 3}, {6, 7}, {4, 5}, "a"},
  };
  auto [loss, grads] = loss_and_grad(model, batch);
  (void)loss;
  CHECK(grads.at("head.bias").data[0] == 0.0f);
  const double numeric =
      fd_gradient(small_config(), model.params(), "head.bias", 0, batch);
  CHECK(std::fabs(numeric) <= 1e-6);
}

TEST_CASE("gradients of unused tokens are zero") {
  ToyRM model = ToyRM::init(small_config());
  const std::vector<PreferenceExample> batch = tiny_batch();
  auto [loss, grads] = loss_and_grad(model, batch);
  (void)loss;
  // token 0 never appears in the batch (ids used: 1..10)
  const Tensor& emb = grads.at("tok_emb.weight");
  for (int64_t c = 0; c < emb.cols(); ++c) {
    CHECK(emb.at2(0, c) == 0.0f);
  }
}

TEST_CASE("training reduces loss on a separable dataset") {
  testutil::ToyWorld world;
  Rng rng(7);
  const auto dataset = world.general_dataset(rng, 200);

  ToyRMConfig c;
  c.vocab_size = world.vocab_size();
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 16;
  c.seed = 7;

  ToyRM init = ToyRM::init(c);
  auto [initial_loss, g0] = loss_and_grad(init, dataset);
  (void)g0;

  ToyRM trained = train_toy(c, dataset, 300, 1e-2);
  auto [final_loss, g1] = loss_and_grad(trained, dataset);
  (void)g1;

  CHECK(final_loss < initial_loss);
  CHECK(final_loss < std::numbers::ln2);  // beats the zero-information baseline
}

TEST_CASE("zero training steps returns the seeded initialization") {
  testutil::ToyWorld world;
  Rng rng(8);
  const auto dataset = world.general_dataset(rng, 10);
  ToyRMConfig c;
  c.vocab_size = world.vocab_size();
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 16;
  c.seed = 123;
  ToyRM trained = train_toy(c, dataset, 0, 1e-2);
  CHECK(bit_equal(trained.params(), ToyRM::init(c).params()));
}

TEST_CASE("training is deterministic in the seed") {
  testutil::ToyWorld world;
  Rng rng_a(9), rng_b(9);
  const auto data_a = world.general_dataset(rng_a, 24);
  const auto data_b = world.general_dataset(rng_b, 24);
  ToyRMConfig c;
  c.vocab_size = world.vocab_size();
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 16;
  c.seed = 55;
  ToyRM a = train_toy(c, data_a, 20, 5e-2);
  ToyRM b = train_toy(c, data_b, 20, 5e-2);
  CHECK(bit_equal(a.params(), b.params()));
}

TEST_CASE("training validates arguments") {
  ToyRMConfig c = small_config();
  CHECK_THROWS_AS(train_toy(c, {}, 10, 1e-2), EmptyBatchError);
  CHECK_THROWS_AS(train_toy(c, tiny_batch(), 10, 0.0), RangeError);
}

TEST_CASE("absurd learning rates raise DivergenceError") {
  testutil::ToyWorld world;
  Rng rng(10);
  const auto dataset = world.general_dataset(rng, 16);
  ToyRMConfig c;
  c.vocab_size = world.vocab_size();
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 16;
  c.seed = 11;
  CHECK_THROWS_AS(train_toy(c, dataset, 8, 1e45), DivergenceError);
}

TEST_CASE("tokenizer maps unknown words to the reserved id") {
  Vocabulary vocab;
  vocab.token_to_id = {{"<unk>", 0}, {"a", 1}, {"b", 2}};
  CHECK(tokenize("", vocab).empty());
  CHECK(tokenize("a b", vocab) == std::vector<int32_t>{1, 2});
  CHECK(tokenize("a q", vocab) == std::vector<int32_t>{1, 0});
  CHECK(tokenize("  a \t b \n", vocab) == std::vector<int32_t>{1, 2});
}

TEST_CASE("concat joins with the separator token") {
  const std::vector<int32_t> p{2, 3};
  const std::vector<int32_t> r{4};
  CHECK(concat_ids(p, r) == std::vector<int32_t>{2, 3, kSeparatorTokenId, 4});
  CHECK(concat_ids({}, r) == std::vector<int32_t>{kSeparatorTokenId, 4});
}

TEST_CASE("toy checkpoints merge under the default rules") {
  // any two same-config checkpoints are mergeable
  ToyRMConfig c = small_config();
  ToyRM a = ToyRM::init(c);
  ToyRMConfig c2 = c;
  c2.seed = 43;
  ToyRM b = ToyRM::init(c2);
  dogerm::MergeSpec spec;
  spec.lambda = 0.35;
  spec.rules = dogerm::PartitionRules::toy_defaults();
  const NamedTensorMap merged = dogerm::merge(a.params(), b.params(), spec);
  CHECK_NOTHROW(ToyRM::from_params(c, merged));
}

}  // TEST_SUITE
