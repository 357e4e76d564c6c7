#include "unremix/fixtures.hpp"

#include <numeric>

namespace unremix {

EncoderParams identity_encoder(std::size_t dim) {
    EncoderParams p;
    p.dims = {dim, dim};
    p.last = Matrix::identity(dim);
    return p;
}

AdversarialFixture adversarial_fixture() {
    Matrix x = Matrix::from_rows({
        {0.50, -0.20, 0.30},
        {0.44, -0.24, 0.28},
        {-0.90, -0.70, -1.00},
        {0.00, 1.40, 0.10},
        {-0.80, -0.20, 1.50},
        {1.90, 0.70, -1.40},
    });
    std::vector<int> labels{0, 0, 1, 2, 3, 4};

    AdversarialFixture f;
    f.params = identity_encoder(3);
    f.batch.anchor_view = x;
    f.batch.second_view = x;
    f.batch.source_indices.resize(x.rows());
    std::iota(f.batch.source_indices.begin(), f.batch.source_indices.end(), std::size_t{0});
    f.batch.set_labels(labels);
    f.data = Dataset(std::move(x), std::move(labels), 5);
    return f;
}

} // namespace unremix
