#pragma once

// Thread control for the OpenMP kernels. Every parallel loop in the library
// writes to disjoint output slots and keeps each reduction in a fixed order,
// so results are bit-identical for any thread count.

namespace fpanel {

/// Cap on worker threads; n <= 0 restores the OpenMP default.
void set_num_threads(int n);
int num_threads();

}  // namespace fpanel
