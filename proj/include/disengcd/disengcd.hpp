#pragma once

#include "disengcd/error.hpp"
#include "disengcd/rng.hpp"
#include "disengcd/numeric/matrix.hpp"
#include "disengcd/numeric/expression.hpp"
#include "disengcd/numeric/adam.hpp"
#include "disengcd/numeric/gradcheck.hpp"
#include "disengcd/dataset.hpp"
#include "disengcd/graphs.hpp"
#include "disengcd/student_meta.hpp"
#include "disengcd/gat.hpp"
#include "disengcd/diagnosis.hpp"
#include "disengcd/model.hpp"
#include "disengcd/metrics.hpp"
#include "disengcd/trainer.hpp"
#include "disengcd/evaluation.hpp"
