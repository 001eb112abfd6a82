#include "test_util.hpp"

#include "eradiff/model.hpp"

#include <doctest.h>

using namespace eradiff;
using testutil::random_tensor;
using testutil::T;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.image_channels = 1;
  c.image_size = 8;
  c.widths = {2, 3};
  c.attention_resolution = 4;
  c.attention_dim = 3;
  c.time_dim = 4;
  c.output_init_scale = 1.0;
  return c;
}

Mask corner_mask(int size, int extent) {
  Mask m(size, size);
  for (int y = 0; y < extent; ++y)
    for (int x = 0; x < extent; ++x) m.at(y, x) = 1;
  return m;
}

// Reference rule for the extended mask, written independently of the library.
double rule(const MaskBits& m, int i, int j) {
  return (m(i) == 0 || m(j) == 0) ? 1.0 : -std::numeric_limits<double>::infinity();
}

}  // namespace

TEST_CASE("extended mask matches the pairwise rule exhaustively up to length 12") {
  for (int len = 1; len <= 12; ++len) {
    for (std::uint32_t bits = 0; bits < (1u << len); ++bits) {
      MaskBits m(len);
      for (int i = 0; i < len; ++i) m(i) = (bits >> i) & 1u;
      if (bits == (1u << len) - 1) {
        CHECK_THROWS_AS(extended_mask_from_tokens(m), std::domain_error);
        continue;
      }
      const ExtendedMask e = extended_mask_from_tokens(m);
      for (int i = 0; i < len; ++i)
        for (int j = 0; j < len; ++j) REQUIRE(e.m_prime(i, j) == rule(m, i, j));
    }
  }
}

TEST_CASE("extended mask examples") {
  MaskBits zeros = MaskBits::Zero(5);
  CHECK((extended_mask_from_tokens(zeros).m_prime == 1.0).all());
  MaskBits m(2);
  m << 0, 1;
  const ExtendedMask e = extended_mask_from_tokens(m);
  CHECK(e.m_prime(0, 0) == 1.0);
  CHECK(e.m_prime(0, 1) == 1.0);
  CHECK(e.m_prime(1, 0) == 1.0);
  CHECK(std::isinf(e.m_prime(1, 1)));
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    MaskBits r(9);
    for (int i = 0; i < 9; ++i) r(i) = rng.uniform() < 0.5;
    r(0) = 0;
    const ExtendedMask x = extended_mask_from_tokens(r);
    CHECK((x.m_prime == x.m_prime.transpose()).all());
    for (int i = 0; i < 9; ++i)
      if (r(i) == 0) CHECK((x.m_prime.row(i) == 1.0).all());
  }
}

TEST_CASE("mask downsampling is a max-pool") {
  Mask m(8, 8);
  m.at(5, 2) = 1;  // one pixel in token (2, 1) of a 4x4 grid
  const ExtendedMask e = extended_mask(m, 4, 4);
  CHECK(e.m.cast<int>().sum() == 1);
  CHECK(e.m(2 * 4 + 1) == 1);
  CHECK_THROWS_AS(extended_mask(m, 3, 3), std::invalid_argument);
  CHECK_THROWS_AS(extended_mask(Mask(8, 8, 1), 4, 4), std::domain_error);
}

TEST_CASE("SRA algebra") {
  Rng rng(11);
  const int L = 9, d = 4;
  SUBCASE("all-background mask is standard attention bit for bit") {
    const T q = random_tensor(rng, {L, d}), k = random_tensor(rng, {L, d}), v = random_tensor(rng, {L, d});
    const T a = sra_attention(q, k, v, extended_mask_from_tokens(MaskBits::Zero(L)));
    const T b = attention(q, k, v);
    CHECK((a.values() == b.values()).all());
  }
  SUBCASE("hole-to-hole weights vanish and background rows are untouched") {
    for (int trial = 0; trial < 50; ++trial) {
      const T q = random_tensor(rng, {L, d}, false, 3.0), k = random_tensor(rng, {L, d}, false, 3.0),
              v = random_tensor(rng, {L, d}, false);
      MaskBits m(L);
      for (int i = 0; i < L; ++i) m(i) = rng.uniform() < 0.6;
      m(static_cast<int>(rng.uniform_int(0, L - 1))) = 0;
      T w_sra, w_std;
      const T a = sra_attention(q, k, v, extended_mask_from_tokens(m), &w_sra);
      const T b = attention(q, k, v, nullptr, &w_std);
      for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j)
          if (m(i) && m(j)) CHECK(w_sra[i * L + j] <= 1e-12);
        CHECK(std::abs(w_sra.values().segment(i * L, L).sum() - 1.0) <= 1e-12);
        if (!m(i)) CHECK((a.values().segment(i * d, d) - b.values().segment(i * d, d)).abs().maxCoeff() <= 1e-12);
      }
    }
  }
  SUBCASE("a hole query with one background key returns that key's value") {
    const T q = random_tensor(rng, {L, d}), k = random_tensor(rng, {L, d}), v = random_tensor(rng, {L, d});
    MaskBits m = MaskBits::Ones(L);
    m(4) = 0;
    const T a = sra_attention(q, k, v, extended_mask_from_tokens(m));
    for (int i = 0; i < L; ++i)
      if (i != 4) CHECK((a.values().segment(i * d, d) - v.values().segment(4 * d, d)).abs().maxCoeff() <= 1e-12);
  }
  SUBCASE("fully suppressed rows are an error") {
    const T q = random_tensor(rng, {2, d}), k = random_tensor(rng, {2, d}), v = random_tensor(rng, {2, d});
    MaskBits s = MaskBits::Ones(4);
    CHECK_THROWS_AS(attention(q, k, v, &s), std::domain_error);
  }
}

TEST_CASE("build_denoiser") {
  const DenoiserConfig cfg;
  const auto a = build_denoiser<float>(cfg, 5), b = build_denoiser<float>(cfg, 5), c = build_denoiser<float>(cfg, 6);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK((a.parameters()[i].values() == b.parameters()[i].values()).all());
    differs |= !(a.parameters()[i].values() == c.parameters()[i].values()).all();
  }
  CHECK(differs);
  CHECK(a.parameter_count() < 500000);
  CHECK(a.config().input_channels() == 7);

  DenoiserConfig flat = cfg;
  flat.widths = {16};
  CHECK_THROWS_AS(build_denoiser<float>(flat, 0), std::invalid_argument);
  DenoiserConfig unreachable = cfg;
  unreachable.attention_resolution = 4;
  CHECK_THROWS_AS(build_denoiser<float>(unreachable, 0), std::invalid_argument);
}

TEST_CASE("condition_input") {
  Rng rng(2);
  const T x = random_tensor(rng, {2, 3, 8, 8}, false), img = random_tensor(rng, {2, 3, 8, 8}, false);
  const T m = mask_tensor<double>({corner_mask(8, 3), Mask(8, 8)});
  const T c = condition_input(x, m, img);
  CHECK(c.shape() == Shape{2, 7, 8, 8});
  const T bad = T::constant({2, 1, 8, 8}, 0.5);
  CHECK_THROWS_AS(condition_input(x, bad, img), std::invalid_argument);
  CHECK_THROWS_AS(condition_input(x, T::zeros({2, 1, 4, 4}), img), ShapeError);
}

TEST_CASE("an all-zero mask leaves the masked image equal to the full image") {
  Rng rng(8);
  Image full(3, 8, 8);
  for (Eigen::Index i = 0; i < full.data.size(); ++i) full.data(i) = rng.uniform();
  const Mask none(8, 8);
  CHECK(((full.data * (1.0 - none.broadcast(3))) == full.data).all());
}

TEST_CASE("predict_eps shape, determinism and SRA toggle") {
  Rng rng(4);
  const DenoiserConfig cfg = tiny_config();
  const auto model = build_denoiser<double>(cfg, 1);
  const T x = random_tensor(rng, {2, 1, 8, 8}, false), img = random_tensor(rng, {2, 1, 8, 8}, false);
  const std::vector<Mask> masks{corner_mask(8, 3), Mask(8, 8)};
  const T e1 = predict_eps(model, x, masks, img, {5, 90});
  CHECK(e1.shape() == x.shape());
  CHECK((e1.values() == predict_eps(model, x, masks, img, {5, 90}).values()).all());

  const std::vector<Mask> clear{Mask(8, 8), Mask(8, 8)};
  CHECK((predict_eps(model, x, clear, img, {3, 4}, true).values() ==
         predict_eps(model, x, clear, img, {3, 4}, false).values())
            .all());
  CHECK_FALSE((predict_eps(model, x, masks, img, {5, 90}, true).values() ==
               predict_eps(model, x, masks, img, {5, 90}, false).values())
                  .all());

  CHECK_THROWS_AS(predict_eps(model, x, {Mask(8, 8, 1), Mask(8, 8)}, img, {1, 1}), std::domain_error);
  CHECK_THROWS_AS(predict_eps(model, x, masks, img, {0, 1}), std::out_of_range);
}

TEST_CASE("predict_eps weight gradients match finite differences") {
  Rng rng(6);
  auto model = build_denoiser<double>(tiny_config(), 3);
  const T x = random_tensor(rng, {2, 1, 8, 8}, false), img = random_tensor(rng, {2, 1, 8, 8}, false);
  const std::vector<Mask> masks{corner_mask(8, 5), corner_mask(8, 2)};
  const std::vector<int> t{7, 150};
  model.zero_grad();
  backward(mean(predict_eps(model, x, masks, img, t)));
  double worst = 0.0;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    std::function<double(const T&)> f = [&](const T& w) {
      auto copy = model;
      copy.parameters()[i] = w;
      return mean(predict_eps(copy, x, masks, img, t)).item();
    };
    const T fd = finite_difference_gradient(f, model.parameters()[i], 1e-5);
    const T::Array g = model.parameters()[i].has_grad() ? model.parameters()[i].grad() : T::Array::Zero(fd.size());
    INFO(model.names()[i]);
    const double err = relative_error(g, fd.values(), 1e-7);
    CHECK(err < 1e-4);
    worst = std::max(worst, err);
  }
  MESSAGE("worst relative error " << worst);
}
