#pragma once

#include "causefs/balance.hpp"
#include "causefs/common.hpp"
#include "causefs/dataset.hpp"
#include "causefs/embedding.hpp"
#include "causefs/eval.hpp"
#include "causefs/granularity.hpp"
#include "causefs/graphs.hpp"
#include "causefs/io.hpp"
#include "causefs/regression.hpp"
#include "causefs/solver.hpp"
