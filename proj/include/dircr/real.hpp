#pragma once

namespace dircr {

// Scalar type for every tensor in the library. The default build uses 32-bit
// floats; the `dircr_f64` target recompiles the same sources in double
// precision for tighter numerical checks.
#ifdef DIRCR_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace dircr
