#pragma once

// Everything in one include.

#include "hiercomp/assignment.hpp"
#include "hiercomp/composability.hpp"
#include "hiercomp/enumerate.hpp"
#include "hiercomp/errors.hpp"
#include "hiercomp/hierdiff.hpp"
#include "hiercomp/identifiability.hpp"
#include "hiercomp/mechanisms.hpp"
#include "hiercomp/model.hpp"
#include "hiercomp/model_io.hpp"
#include "hiercomp/report.hpp"
#include "hiercomp/rng.hpp"
#include "hiercomp/sampler.hpp"
#include "hiercomp/stats.hpp"
#include "hiercomp/structure.hpp"
#include "hiercomp/toy_model.hpp"
#include "hiercomp/toy_scene.hpp"
#include "hiercomp/toy_train.hpp"
