#pragma once

#include <cstddef>
#include <span>

namespace ikno {

/// Selects between the OpenMP kernel and the serial reference loop. Both
/// paths reduce in the same order, so results are bit-identical.
enum class Exec { Parallel, Serial };

/// Threads used by parallel kernels (OpenMP max threads).
int thread_count();

/// Caps parallelism; values < 1 reset to the hardware count.
void set_thread_count(int n);

/// Applies the IKNO_THREADS environment variable, if set.
void configure_threads_from_env();

/// Dot product with a fixed chunking that does not depend on the thread
/// count, so the result is reproducible bit-for-bit.
double deterministic_dot(std::span<const double> a, std::span<const double> b);

}  // namespace ikno
