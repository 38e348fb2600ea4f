#pragma once

#include "hrrformer/attention.hpp"
#include "hrrformer/bench.hpp"
#include "hrrformer/checkpoint.hpp"
#include "hrrformer/encoder.hpp"
#include "hrrformer/error.hpp"
#include "hrrformer/fft.hpp"
#include "hrrformer/hrr.hpp"
#include "hrrformer/memory.hpp"
#include "hrrformer/ops.hpp"
#include "hrrformer/optim.hpp"
#include "hrrformer/rng.hpp"
#include "hrrformer/selftest.hpp"
#include "hrrformer/tasks.hpp"
#include "hrrformer/tensor.hpp"
#include "hrrformer/train.hpp"
#include "hrrformer/viz.hpp"
