#pragma once

#include "amom/error.hpp"
#include "amom/rng.hpp"
#include "amom/kernels.hpp"
#include "amom/tensor.hpp"
#include "amom/ops.hpp"
#include "amom/gradcheck.hpp"
#include "amom/optim.hpp"
#include "amom/data.hpp"
#include "amom/model.hpp"
#include "amom/checkpoint.hpp"
#include "amom/masking.hpp"
#include "amom/inference.hpp"
#include "amom/eval.hpp"
#include "amom/training.hpp"
#include "amom/config.hpp"
#include "amom/commands.hpp"
