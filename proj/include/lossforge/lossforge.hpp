#pragma once

#include "lossforge/checkpoint.hpp"
#include "lossforge/controller.hpp"
#include "lossforge/data.hpp"
#include "lossforge/errors.hpp"
#include "lossforge/expr.hpp"
#include "lossforge/metrics.hpp"
#include "lossforge/models.hpp"
#include "lossforge/optim.hpp"
#include "lossforge/run_config.hpp"
#include "lossforge/search.hpp"
#include "lossforge/tensor.hpp"
#include "lossforge/zoo.hpp"
