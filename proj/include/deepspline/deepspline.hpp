#pragma once

#include "deepspline/data_io.hpp"
#include "deepspline/dataset.hpp"
#include "deepspline/error.hpp"
#include "deepspline/linear_spline.hpp"
#include "deepspline/native_space.hpp"
#include "deepspline/network.hpp"
#include "deepspline/random.hpp"
#include "deepspline/simplex.hpp"
#include "deepspline/training.hpp"
#include "deepspline/variational_1d.hpp"
