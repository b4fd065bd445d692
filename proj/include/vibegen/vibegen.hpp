#pragma once

#include "vibegen/checkpoint.hpp"
#include "vibegen/config.hpp"
#include "vibegen/csv.hpp"
#include "vibegen/data.hpp"
#include "vibegen/errors.hpp"
#include "vibegen/eval.hpp"
#include "vibegen/gradcheck.hpp"
#include "vibegen/gradcheck_suite.hpp"
#include "vibegen/kernels.hpp"
#include "vibegen/model.hpp"
#include "vibegen/optim.hpp"
#include "vibegen/parallel.hpp"
#include "vibegen/runtime.hpp"
#include "vibegen/tensor.hpp"
#include "vibegen/training.hpp"
