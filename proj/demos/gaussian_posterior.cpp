// Analytic Gaussian inversion on a toy deblurring problem: build an
// exponential-kernel prior, condition on noisy data, draw posterior samples
// and print the pixelwise mean and spread.
#include <cstdio>

#include "sbdot/gaussian.hpp"
#include "sbdot/stats.hpp"

using namespace sbdot;

int main() {
    const Grid grid{8, 40.0};
    const FieldShape shape{1, grid.n, grid.n};
    auto prior_cov = ou_covariance(grid, 0.5, 10.0);
    Field prior_mean(shape);

    // forward map: local 2x2 box average, one reading per interior pixel
    const std::size_t m = (grid.n - 1) * (grid.n - 1);
    std::vector<double> entries(m * shape.size(), 0.0);
    std::size_t row = 0;
    for (std::size_t i = 0; i + 1 < grid.n; ++i)
        for (std::size_t j = 0; j + 1 < grid.n; ++j, ++row)
            for (std::size_t di = 0; di < 2; ++di)
                for (std::size_t dj = 0; dj < 2; ++dj)
                    entries[row * shape.size() + (i + di) * grid.n + (j + dj)] = 0.25;
    DenseMatrixOperator A(shape, m, entries);
    auto gamma_obs = CovarianceOperator::diagonal(std::vector<double>(m, 0.02 * 0.02));

    // synthetic truth: one warm square
    Field truth(shape);
    for (std::size_t i = 2; i < 6; ++i)
        for (std::size_t j = 3; j < 7; ++j) truth.at(0, i, j) = 1.0;
    RngStream noise(3);
    auto y = A.apply(truth);
    for (auto& v : y) v += 0.02 * noise.normal();

    GaussianPosterior post = analytic_posterior(A, gamma_obs, prior_mean, prior_cov, y);
    SampleEnsemble ens;
    ens.method = "gaussian";
    for (std::size_t k = 0; k < 200; ++k) {
        RngStream rng = derive_stream(17, k);
        ens.samples.push_back(sample_gaussian(post.mean, post.covariance, rng));
    }
    EnsembleStats st = ensemble_stats(ens, &truth);

    std::printf("posterior mean / std / truth at row 4:\n");
    for (std::size_t j = 0; j < grid.n; ++j)
        std::printf("  col %zu: %+0.3f  %0.3f  %+0.3f\n", j, st.mean.at(0, 4, j),
                    st.std.at(0, 4, j), truth.at(0, 4, j));
    return 0;
}
