#pragma once

#include "bodyslam/errors.hpp"
#include "bodyslam/random.hpp"
#include "bodyslam/liegeom.hpp"
#include "bodyslam/camera.hpp"
#include "bodyslam/bodymodel.hpp"
#include "bodyslam/json_io.hpp"
#include "bodyslam/state.hpp"
#include "bodyslam/simulator.hpp"
#include "bodyslam/motionmodel.hpp"
#include "bodyslam/factors.hpp"
#include "bodyslam/solver.hpp"
#include "bodyslam/metrics.hpp"
#include "bodyslam/experiments.hpp"
