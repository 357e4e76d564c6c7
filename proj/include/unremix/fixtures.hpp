#pragma once

#include "unremix/data.hpp"
#include "unremix/encoder.hpp"

#include <cstddef>

namespace unremix {

/// A hand-built six-sample batch under an identity encoder (3 -> 3). Sample 1
/// is a same-class near-duplicate of anchor 0 with the most confident
/// pseudo-posterior in the batch; sample 2 sits between classes with the
/// flattest posterior. Both views are identical.
struct AdversarialFixture {
    EncoderParams params;
    Dataset data;
    BatchPair batch;
    std::size_t anchor = 0;
    std::size_t near_duplicate = 1;
    std::size_t boundary = 2;
};

AdversarialFixture adversarial_fixture();

/// Encoder whose single layer is the identity, so H = Z = X.
EncoderParams identity_encoder(std::size_t dim);

} // namespace unremix
