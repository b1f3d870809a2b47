// Small-time behaviour of the convex score combination: the deviation from
// the geometric-mixture score decays linearly in the kernel time.
#include <cstdio>

#include "sbdot/mixture.hpp"

using namespace sbdot;

int main() {
    const Gaussian1D p1{0.0, 1.0}, p2{1.0, 2.0};
    const double alpha = 0.5, x = 0.3;
    std::vector<double> ts;
    for (double t = 0.8; t > 0.003; t *= 0.5) ts.push_back(t);
    std::printf("%10s %14s %10s\n", "t", "error", "error/t");
    for (const auto& e : mixture_rate_check(p1, p2, alpha, x, ts))
        std::printf("%10.4f %14.6e %10.5f\n", e.t, e.error, e.error / e.t);
    return 0;
}
