#pragma once

#include "dntm/addressing.hpp"
#include "dntm/array.hpp"
#include "dntm/autodiff.hpp"
#include "dntm/checkpoint.hpp"
#include "dntm/config.hpp"
#include "dntm/controller.hpp"
#include "dntm/memory.hpp"
#include "dntm/parameters.hpp"
#include "dntm/rng.hpp"
#include "dntm/run.hpp"
#include "dntm/tasks.hpp"
#include "dntm/training.hpp"
