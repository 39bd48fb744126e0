#pragma once

#include "glue/analysis.hpp"
#include "glue/baselines.hpp"
#include "glue/blend.hpp"
#include "glue/checkpoint.hpp"
#include "glue/data.hpp"
#include "glue/experiment.hpp"
#include "glue/nn.hpp"
#include "glue/spsa.hpp"
#include "glue/train.hpp"
