#pragma once

#include "dpn/adam.hpp"
#include "dpn/checkpoint.hpp"
#include "dpn/config.hpp"
#include "dpn/data.hpp"
#include "dpn/error.hpp"
#include "dpn/eval.hpp"
#include "dpn/image_io.hpp"
#include "dpn/kernels.hpp"
#include "dpn/model.hpp"
#include "dpn/param_store.hpp"
#include "dpn/rng.hpp"
#include "dpn/tensor.hpp"
#include "dpn/train.hpp"
