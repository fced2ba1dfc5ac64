#pragma once

#include <cstdint>
#include <functional>

namespace stripmlp {

//! Requested worker count for kernels. The STRIP_MLP_THREADS environment
//! variable, when set, overrides this value; 0 means serial execution.
void set_worker_count(int workers);
int worker_count();

//! Split [0, n) into contiguous chunks and run them on worker threads.
//!
//! Every index is processed by exactly one worker and each chunk runs its
//! own serial loop, so results are bitwise identical for any worker count
//! as long as the body writes only to its own indices.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace stripmlp
