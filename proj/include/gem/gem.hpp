#pragma once

#include "gem/allocation.hpp"
#include "gem/error.hpp"
#include "gem/harness.hpp"
#include "gem/layer_mask.hpp"
#include "gem/mask_engine.hpp"
#include "gem/mask_set.hpp"
#include "gem/model_store.hpp"
#include "gem/optimizer.hpp"
#include "gem/report.hpp"
#include "gem/scoring.hpp"
#include "gem/strategies.hpp"
#include "gem/tasks.hpp"
#include "gem/topk.hpp"
#include "gem/toy_models.hpp"
#include "gem/training.hpp"
