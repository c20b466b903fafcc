#pragma once

#include "lns/simd/gemm_ref.hpp"
#include "lns/simd/kernels.hpp"

namespace lns::simd::detail {

extern const Kernels kScalarKernels;

#if defined(LNS_HAVE_AVX2)
extern const Kernels kAvx2Kernels;
#endif

}  // namespace lns::simd::detail
