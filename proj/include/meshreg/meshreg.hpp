#pragma once

// meshreg: non-rigid 3D shape registration with adaptive templates.
// Umbrella header.

#include "meshreg/config.hpp"
#include "meshreg/cpd.hpp"
#include "meshreg/deform.hpp"
#include "meshreg/errors.hpp"
#include "meshreg/gp.hpp"
#include "meshreg/icpd.hpp"
#include "meshreg/laplacian.hpp"
#include "meshreg/mesh.hpp"
#include "meshreg/nearest.hpp"
#include "meshreg/obj_io.hpp"
#include "meshreg/pipeline.hpp"
#include "meshreg/rigid.hpp"
#include "meshreg/synthetic.hpp"

namespace meshreg {
inline constexpr const char* kVersion = "0.1.0";
}
