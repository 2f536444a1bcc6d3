#pragma once

#include <cstddef>

#include "fedlws/tensor.hpp"

namespace fedlws {

/// What a client uploads after local training.
struct ClientUpdate {
    std::size_t client_id = 0;
    ModelParams params;
    std::size_t num_samples = 0;
    double final_local_loss = 0.0;
};

}  // namespace fedlws
