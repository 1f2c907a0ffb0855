#pragma once

#include "glnet/tensor.hpp"
#include "glnet/tiling.hpp"
#include "glnet/ops.hpp"
#include "glnet/layers.hpp"
#include "glnet/branch.hpp"
#include "glnet/sharing.hpp"
#include "glnet/model.hpp"
#include "glnet/losses.hpp"
#include "glnet/optim.hpp"
#include "glnet/image_io.hpp"
#include "glnet/data.hpp"
#include "glnet/training.hpp"
#include "glnet/inference.hpp"
#include "glnet/coarse2fine.hpp"
#include "glnet/metrics.hpp"
#include "glnet/checkpoint.hpp"
#include "glnet/config.hpp"
#include "glnet/evalprof.hpp"
#include "glnet/pipeline.hpp"
