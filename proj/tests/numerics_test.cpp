#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "datforge/dten.hpp"
#include "datforge/grad_check.hpp"
#include "datforge/ops.hpp"
#include "datforge/rng.hpp"
#include "datforge/sgd.hpp"

using namespace datforge;
using namespace datforge::numerics;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, bool requires_grad = true, T scale = T(1)) {
  auto n = static_cast<std::size_t>(numel(shape));
  std::vector<T> data(n);
  for (auto& v : data) v = static_cast<T>(rng.normal()) * scale;
  return Tensor<T>::from(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
std::shared_ptr<const std::vector<T>> random_coeffs(std::int64_t n, Rng& rng) {
  std::vector<T> c(static_cast<std::size_t>(n));
  for (auto& v : c) v = static_cast<T>(rng.normal());
  return const_buffer(std::move(c));
}

}  // namespace

TEST_CASE("conv2d forward examples") {
  // all-ones 3x3 against all-ones 3x3 kernel sums to 9
  auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto b = Tensor<float>::zeros({1});
  auto y = conv2d<float>(nullptr, x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.scalar() == doctest::Approx(9.0f));

  // identity 1x1 kernel leaves input unchanged
  Rng rng(7);
  auto img = random_tensor<float>({2, 1, 4, 5}, rng, false);
  auto ident = Tensor<float>::full({1, 1, 1, 1}, 1.0f);
  auto out = conv2d<float>(nullptr, img, ident, Tensor<float>::zeros({1}), 1, 0);
  for (std::int64_t i = 0; i < img.size(); ++i) CHECK(out.data()[i] == img.data()[i]);
}

TEST_CASE("conv2d output geometry and errors") {
  Rng rng(3);
  auto x = random_tensor<float>({1, 3, 8, 6}, rng, false);
  auto w = random_tensor<float>({4, 3, 3, 3}, rng, false);
  auto b = Tensor<float>::zeros({4});
  auto y = conv2d<float>(nullptr, x, w, b, 2, 1);
  CHECK(y.shape() == Shape{1, 4, 4, 3});

  auto bad_w = random_tensor<float>({4, 2, 3, 3}, rng, false);
  CHECK_THROWS_WITH_AS(conv2d<float>(nullptr, x, bad_w, b, 1, 0),
                       doctest::Contains("in-channels"), Error);
  auto tall_w = random_tensor<float>({4, 3, 11, 3}, rng, false);
  CHECK_THROWS_AS(conv2d<float>(nullptr, x, tall_w, b, 1, 0), Error);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(11);
  ModelState<double> st;
  st.add("x", random_tensor<double>({1, 2, 5, 5}, rng));
  st.add("w", random_tensor<double>({3, 2, 3, 3}, rng));
  st.add("b", random_tensor<double>({3}, rng));
  auto coeffs = random_coeffs<double>(1 * 3 * 3 * 3, rng);
  auto f = [&](ModelState<double>& s, Tape<double>* tape) {
    auto y = conv2d(tape, s.at("x"), s.at("w"), s.at("b"), 1, 0);
    return dot_const(tape, y, coeffs);
  };
  CHECK(grad_check<double>(f, st, 1e-5) < 1e-6);
}

TEST_CASE("conv2d strided/padded gradients") {
  Rng rng(12);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      ModelState<double> st;
      st.add("x", random_tensor<double>({2, 3, 6, 5}, rng));
      st.add("w", random_tensor<double>({2, 3, 3, 3}, rng));
      st.add("b", random_tensor<double>({2}, rng));
      const int oh = (6 + 2 * pad - 3) / stride + 1;
      const int ow = (5 + 2 * pad - 3) / stride + 1;
      auto coeffs = random_coeffs<double>(2 * 2 * oh * ow, rng);
      auto f = [&](ModelState<double>& s, Tape<double>* tape) {
        auto y = conv2d(tape, s.at("x"), s.at("w"), s.at("b"), stride, pad);
        return dot_const(tape, y, coeffs);
      };
      CHECK(grad_check<double>(f, st, 1e-5) < 1e-6);
    }
  }
}

TEST_CASE("linear examples") {
  auto in = Tensor<float>::from({1, 2}, {1.0f, 2.0f});
  auto w = Tensor<float>::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  auto b = Tensor<float>::zeros({2});
  auto y = linear<float>(nullptr, in, w, b);
  CHECK(y.data()[0] == doctest::Approx(1.0f));
  CHECK(y.data()[1] == doctest::Approx(2.0f));

  auto in2 = Tensor<float>::from({1, 2}, {1.0f, 1.0f});
  auto w2 = Tensor<float>::from({2, 1}, {2.0f, 3.0f});
  auto b2 = Tensor<float>::from({1}, {1.0f});
  CHECK(linear<float>(nullptr, in2, w2, b2).scalar() == doctest::Approx(6.0f));

  auto bad = Tensor<float>::from({3, 1}, {1.0f, 2.0f, 3.0f});
  CHECK_THROWS_AS(linear<float>(nullptr, in2, bad, b2), Error);
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(13);
  ModelState<double> st;
  st.add("x", random_tensor<double>({4, 8}, rng));
  st.add("w", random_tensor<double>({8, 3}, rng));
  st.add("b", random_tensor<double>({3}, rng));
  auto coeffs = random_coeffs<double>(12, rng);
  auto f = [&](ModelState<double>& s, Tape<double>* tape) {
    return dot_const(tape, linear(tape, s.at("x"), s.at("w"), s.at("b")), coeffs);
  };
  CHECK(grad_check<double>(f, st, 1e-5) < 1e-6);
}

TEST_CASE("activation examples") {
  auto x = Tensor<float>::from({3}, {-1.0f, 0.0f, 2.0f});
  auto r = activate<float>(nullptr, x, Activation::relu);
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[1] == 0.0f);
  CHECK(r.data()[2] == 2.0f);

  CHECK(activate<float>(nullptr, Tensor<float>::zeros({1}), Activation::sigmoid).scalar() ==
        doctest::Approx(0.5f));

  auto logits = Tensor<double>::from(
      {3}, {std::log(2.0), std::log(1.0), std::log(1.0)});
  auto sm = activate<double>(nullptr, logits, Activation::softmax);
  CHECK(sm.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sm.data()[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sm.data()[2] == doctest::Approx(0.25).epsilon(1e-12));

  CHECK_THROWS_AS(activate<float>(nullptr, Tensor<float>::zeros({0}), Activation::relu), Error);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(17);
  auto x = random_tensor<float>({5, 7}, rng, false, 3.0f);
  auto y = activate<float>(nullptr, x, Activation::softmax);
  for (int r = 0; r < 5; ++r) {
    float sum = 0;
    for (int c = 0; c < 7; ++c) sum += y.data()[r * 7 + c];
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
  }
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(19);
  for (auto kind : {Activation::relu, Activation::sigmoid, Activation::softmax,
                    Activation::log_softmax}) {
    ModelState<double> st;
    // offset away from zero so relu's kink does not sit on the fd stencil
    auto t = random_tensor<double>({4, 6}, rng);
    for (auto& v : t.values())
      if (std::abs(v) < 1e-3) v += 0.01;
    st.add("x", t);
    auto coeffs = random_coeffs<double>(24, rng);
    auto f = [&](ModelState<double>& s, Tape<double>* tape) {
      return dot_const(tape, activate(tape, s.at("x"), kind), coeffs);
    };
    CHECK(grad_check<double>(f, st, 1e-5) < 1e-6);
  }
}

TEST_CASE("bilinear interpolation examples") {
  auto m = Tensor<double>::from({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto up = bilinear_interpolate<double>(nullptr, m, 3, 3);
  CHECK(up.data()[4] == doctest::Approx(2.5));  // center
  CHECK(up.data()[0] == doctest::Approx(1.0));  // corners preserved
  CHECK(up.data()[2] == doctest::Approx(2.0));
  CHECK(up.data()[6] == doctest::Approx(3.0));
  CHECK(up.data()[8] == doctest::Approx(4.0));

  Rng rng(23);
  auto x = random_tensor<float>({2, 3, 5, 4}, rng, false);
  auto same = bilinear_interpolate<float>(nullptr, x, 5, 4);
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(same.data()[i] - x.data()[i]) <= 1e-6f);

  auto c = Tensor<float>::full({1, 1, 3, 3}, 0.7f);
  auto cz = bilinear_interpolate<float>(nullptr, c, 7, 2);
  for (std::int64_t i = 0; i < cz.size(); ++i) CHECK(cz.data()[i] == doctest::Approx(0.7f));

  CHECK_THROWS_AS(bilinear_interpolate<float>(nullptr, x, 0, 4), Error);
}

TEST_CASE("bilinear gradients match finite differences") {
  Rng rng(29);
  for (auto [oh, ow] : {std::pair{7, 9}, std::pair{3, 2}, std::pair{5, 4}}) {
    ModelState<double> st;
    st.add("x", random_tensor<double>({1, 2, 5, 4}, rng));
    auto coeffs = random_coeffs<double>(2 * oh * ow, rng);
    auto f = [&, oh = oh, ow = ow](ModelState<double>& s, Tape<double>* tape) {
      return dot_const(tape, bilinear_interpolate(tape, s.at("x"), oh, ow), coeffs);
    };
    CHECK(grad_check<double>(f, st, 1e-5) < 1e-6);
  }
}

TEST_CASE("cosine map examples") {
  Rng rng(31);
  auto a = random_tensor<float>({1, 4, 2, 2}, rng, false);
  auto same = cosine_map<float>(nullptr, a, a, 1e-8f);
  for (std::int64_t i = 0; i < same.size(); ++i)
    CHECK(same.data()[i] == doctest::Approx(1.0f).epsilon(1e-5));

  auto u = Tensor<float>::from({1, 2, 1, 1}, {1.0f, 0.0f});
  auto v = Tensor<float>::from({1, 2, 1, 1}, {0.0f, 1.0f});
  CHECK(cosine_map<float>(nullptr, u, v, 1e-8f).scalar() == doctest::Approx(0.0f));

  auto neg = Tensor<float>::from({1, 2, 1, 1}, {-1.0f, 0.0f});
  CHECK(cosine_map<float>(nullptr, u, neg, 1e-8f).scalar() == doctest::Approx(-1.0f));

  auto b = random_tensor<float>({1, 4, 2, 3}, rng, false);
  CHECK_THROWS_WITH_AS(cosine_map<float>(nullptr, a, b, 1e-8f),
                       doctest::Contains("dimension"), Error);
}

TEST_CASE("cosine map output bounded") {
  Rng rng(37);
  for (int i = 0; i < 20; ++i) {
    auto a = random_tensor<float>({2, 3, 4, 4}, rng, false, 2.0f);
    auto b = random_tensor<float>({2, 3, 4, 4}, rng, false, 2.0f);
    auto c = cosine_map<float>(nullptr, a, b, 1e-8f);
    for (std::int64_t j = 0; j < c.size(); ++j) {
      CHECK(c.data()[j] >= -1.0f - 1e-6f);
      CHECK(c.data()[j] <= 1.0f + 1e-6f);
    }
  }
}

TEST_CASE("cosine map gradients match finite differences") {
  Rng rng(41);
  ModelState<double> st;
  st.add("a", random_tensor<double>({2, 3, 3, 2}, rng));
  auto b = random_tensor<double>({2, 3, 3, 2}, rng, false);
  auto coeffs = random_coeffs<double>(2 * 3 * 2, rng);
  auto f = [&](ModelState<double>& s, Tape<double>* tape) {
    return dot_const(tape, cosine_map(tape, s.at("a"), b, 1e-8), coeffs);
  };
  CHECK(grad_check<double>(f, st, 1e-6) < 1e-6);
}

TEST_CASE("fused loss gradients match finite differences") {
  Rng rng(43);
  {
    ModelState<double> st;
    st.add("z", random_tensor<double>({2, 1, 3, 3}, rng));
    std::vector<double> tvals(18);
    for (auto& t : tvals) t = rng.bernoulli(0.3) ? 1.0 : 0.0;
    auto targets = const_buffer(std::move(tvals));
    auto f = [&](ModelState<double>& s, Tape<double>* tape) {
      return bce_with_logits_mean(tape, s.at("z"), targets);
    };
    CHECK(grad_check<double>(f, st, 1e-5) < 1e-7);
  }
  {
    ModelState<double> st;
    st.add("p", random_tensor<double>({2, 4, 3, 3}, rng));
    std::vector<double> tg(2 * 4 * 9);
    for (auto& t : tg) t = rng.normal();
    auto target = const_buffer(std::move(tg));
    std::vector<double> mk(18, 0.0);
    int positives = 0;
    for (auto& m : mk)
      if (rng.bernoulli(0.4)) {
        m = 1.0;
        ++positives;
      }
    auto mask = const_buffer(std::move(mk));
    auto f = [&](ModelState<double>& s, Tape<double>* tape) {
      return smooth_l1_masked(tape, s.at("p"), target, mask,
                              static_cast<double>(std::max(1, positives)));
    };
    CHECK(grad_check<double>(f, st, 1e-6) < 1e-6);
  }
  {
    ModelState<double> st;
    st.add("l", random_tensor<double>({2, 5, 3, 3}, rng));
    std::vector<int> cvals(18, -1);
    int positives = 0;
    for (auto& c : cvals)
      if (rng.bernoulli(0.5)) {
        c = static_cast<int>(rng.uniform_int(5));
        ++positives;
      }
    auto cls = const_buffer(std::move(cvals));
    auto f = [&](ModelState<double>& s, Tape<double>* tape) {
      return cross_entropy_masked(tape, s.at("l"), cls,
                                  static_cast<double>(std::max(1, positives)));
    };
    CHECK(grad_check<double>(f, st, 1e-5) < 1e-7);
  }
}

TEST_CASE("sgd examples") {
  {
    ModelState<float> st;
    auto& t = st.add("w", Tensor<float>::from({1}, {1.0f}, true));
    t.ensure_grad();
    t.grad()[0] = 0.5f;
    SgdOptimizer<float> opt(0.0f);
    opt.step(st, 0.1f);
    CHECK(t.values()[0] == doctest::Approx(0.95f));
  }
  {
    ModelState<float> st;
    auto& t = st.add("w", Tensor<float>::from({1}, {0.3f}, true));
    t.ensure_grad();
    SgdOptimizer<float> opt(0.9f);
    opt.step(st, 0.5f);
    CHECK(t.values()[0] == doctest::Approx(0.3f));  // zero gradient, zero velocity
  }
  {
    // two momentum steps with constant unit gradient: theta = -(1 + 1.9)
    ModelState<float> st;
    auto& t = st.add("w", Tensor<float>::from({1}, {0.0f}, true));
    SgdOptimizer<float> opt(0.9f);
    for (int i = 0; i < 2; ++i) {
      t.drop_grad();
      t.ensure_grad();
      t.grad()[0] = 1.0f;
      opt.step(st, 1.0f);
    }
    CHECK(t.values()[0] == doctest::Approx(-2.9f));
  }
  {
    ModelState<float> st;
    st.add("naked", Tensor<float>::from({1}, {1.0f}, true));
    SgdOptimizer<float> opt(0.9f);
    CHECK_THROWS_WITH_AS(opt.step(st, 0.1f), doctest::Contains("naked"), Error);
  }
}

TEST_CASE("grad_check on analytic functions") {
  // f(theta) = theta^2 at theta = 3, composed as 72 * smoothL1(theta / 6):
  // |theta/6| = 0.5 stays in the quadratic region where sl1(d) = d^2 / 2, so
  // the whole chain is exactly theta^2 with derivative 2*theta = 6.
  {
    ModelState<double> st;
    st.add("theta", Tensor<double>::from({1, 1, 1, 1}, {3.0}, true));
    auto zero = const_buffer(std::vector<double>(1, 0.0));
    auto one = const_buffer(std::vector<double>(1, 1.0));
    auto f = [&](ModelState<double>& s, Tape<double>* tape) {
      auto scaled = affine(tape, s.at("theta"), 1.0 / 6.0, 0.0);
      auto half_sq = smooth_l1_masked(tape, scaled, zero, one, 1.0);
      return affine(tape, half_sq, 72.0, 0.0);
    };
    // central differences are exact on a quadratic; only round-off remains
    CHECK(grad_check<double>(f, st, 1e-3) < 1e-10);
  }
  // constant function: analytic and central gradients are both zero
  {
    ModelState<double> st;
    st.add("theta", Tensor<double>::from({2}, {1.0, -2.0}, true));
    auto f = [](ModelState<double>& s, Tape<double>* tape) {
      return dot_const(tape, s.at("theta"), const_buffer(std::vector<double>(2, 0.0)));
    };
    CHECK(grad_check<double>(f, st, 1e-5) == doctest::Approx(0.0));
  }
}

TEST_CASE("backward is deterministic") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    ModelState<float> st;
    st.add("x", random_tensor<float>({2, 3, 6, 6}, rng));
    st.add("w", random_tensor<float>({4, 3, 3, 3}, rng));
    st.add("b", random_tensor<float>({4}, rng));
    Tape<float> tape;
    auto y = conv2d(&tape, st.at("x"), st.at("w"), st.at("b"), 1, 1);
    auto act = relu(&tape, y);
    auto loss = mean_all(&tape, act);
    tape.backward(loss);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto& [name, t] : st) h = fnv1a64(t.grad().data(), t.grad().size() * sizeof(float), h);
    return h;
  };
  CHECK(run(99) == run(99));
}

TEST_CASE("tape backward visits ops in reverse and populates reachable grads") {
  Rng rng(53);
  ModelState<float> st;
  st.add("x", random_tensor<float>({1, 2, 4, 4}, rng));
  Tape<float> tape;
  auto a = relu(&tape, st.at("x"));
  auto b = affine(&tape, a, 2.0f, 0.1f);
  auto loss = mean_all(&tape, b);
  tape.backward(loss);
  CHECK(st.at("x").has_grad());
  CHECK(a.has_grad());
  CHECK(b.has_grad());
}

TEST_CASE("dten round trip and format errors") {
  Rng rng(61);
  auto t = random_tensor<float>({3, 4, 5}, rng, false);
  std::stringstream buf;
  write_dten(buf, t);
  auto back = read_dten<float>(buf);
  CHECK(back.shape() == t.shape());
  for (std::int64_t i = 0; i < t.size(); ++i) CHECK(back.data()[i] == t.data()[i]);

  auto td = random_tensor<double>({2, 2}, rng, false);
  std::stringstream bufd;
  write_dten(bufd, td);
  auto backd = read_dten<double>(bufd);
  for (std::int64_t i = 0; i < td.size(); ++i) CHECK(backd.data()[i] == td.data()[i]);

  {
    std::stringstream bad("XXXX");
    CHECK_THROWS_WITH_AS(read_dten<float>(bad), doctest::Contains("magic"), Error);
  }
  {
    std::stringstream buf2;
    write_dten(buf2, t);
    std::string s = buf2.str();
    std::stringstream truncated(s.substr(0, s.size() / 2));
    CHECK_THROWS_WITH_AS(read_dten<float>(truncated), doctest::Contains("truncated"), Error);
  }
  {
    std::stringstream buf3;
    write_dten(buf3, t);
    CHECK_THROWS_WITH_AS(read_dten<double>(buf3), doctest::Contains("dtype"), Error);
  }
}

TEST_CASE("model state bookkeeping") {
  ModelState<float> st;
  st.add("a", Tensor<float>::zeros({2, 2}, true));
  CHECK_THROWS_WITH_AS(st.add("a", Tensor<float>::zeros({1})), doctest::Contains("duplicate"),
                       Error);
  CHECK_THROWS_WITH_AS(st.at("zzz"), doctest::Contains("zzz"), Error);
  auto copy = st.clone();
  copy.at("a").values()[0] = 5.0f;
  CHECK(st.at("a").values()[0] == 0.0f);
  CHECK(st.content_hash() != copy.content_hash());
}
