// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/common.hpp"
#include "canonsplat/evalset.hpp"
#include "canonsplat/image_io.hpp"
#include "canonsplat/lifting.hpp"
#include "canonsplat/metrics.hpp"
#include "canonsplat/parallel.hpp"
#include "canonsplat/ply.hpp"
#include "canonsplat/pnp.hpp"
#include "canonsplat/predictor.hpp"
#include "canonsplat/rasterizer.hpp"
#include "canonsplat/records.hpp"
#include "canonsplat/refine.hpp"
#include "canonsplat/scene.hpp"
#include "canonsplat/sh.hpp"
#include "canonsplat/so3.hpp"
#include "canonsplat/synthetic.hpp"
