#include "doctest.h"
#include "srma/gradcheck.hpp"

using namespace srma::net;

TEST_CASE("every loss passes its gradient check") {
  for (LossSelector loss : all_losses()) {
    const auto r = gradcheck(loss, 3, 4, 10, 7);
    INFO(loss_name(loss));
    CHECK(r.trials == 10);
    CHECK(r.max_rel_error < 1e-6);
    CHECK(r.max_grad_norm > 0.0);
  }
}

TEST_CASE("relative error") {
  CHECK(relative_error({1.0, 0.0}, {1.0, 0.0}) == 0.0);
  CHECK(relative_error({2.0}, {1.0}) == doctest::Approx(0.5));
  CHECK(relative_error({0.0}, {1e-12}) == doctest::Approx(1e-12));
  CHECK(parse_loss("local") == LossSelector::local);
  CHECK_FALSE(parse_loss("nope").has_value());
}
