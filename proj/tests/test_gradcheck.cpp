#include <doctest.h>

#include "gradcheck.hpp"

static_assert(sizeof(cmems::real) == sizeof(double), "gradient check needs the double-precision core");

TEST_CASE("total-loss gradients match central differences with a small step") {
    const auto r = gradcheck::run(200, 1e-6);
    MESSAGE("max relative error " << r.max_rel_error);
    CHECK(r.failures == 0);
    CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("total-loss gradients of the linearised network") {
    // Without activation kinks the central difference is second-order accurate.
    const auto r = gradcheck::run(200, 1e-4, 1e-4, 3, 1.0);
    MESSAGE("max relative error " << r.max_rel_error);
    CHECK(r.failures == 0);
}

TEST_CASE("central-difference error shrinks with the step") {
    const auto coarse = gradcheck::run(40, 1e-4);
    const auto fine = gradcheck::run(40, 1e-6);
    CHECK(fine.max_rel_error < coarse.max_rel_error);
}
