#pragma once

#include <fftw3.h>

namespace sqz::detail {

// Unaligned r2c/c2r plans for size n, created once under a lock. Use only
// with fftw_execute_dft_r2c / fftw_execute_dft_c2r (the new-array API).
struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const FftPlans& fft_plans(int n);

}  // namespace sqz::detail
